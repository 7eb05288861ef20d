#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace gala {

using Mat = Eigen::MatrixXd;

// Reverse-mode autodiff over dense matrices. A fresh tape is built per
// forward pass; leaves are copied in and gradients read back after backward().
class Tape {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Var leaf(Mat value) {
        nodes_.push_back({std::move(value), Mat(), nullptr});
        return {static_cast<int>(nodes_.size()) - 1};
    }

    // Generic op: value plus a closure that routes grad(out) to the inputs.
    Var make_node(Mat value, std::function<void(Tape&, Var)> backward) {
        nodes_.push_back({std::move(value), Mat(), std::move(backward)});
        return {static_cast<int>(nodes_.size()) - 1};
    }

    const Mat& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

    Mat& grad(Var v) {
        Node& n = nodes_[static_cast<std::size_t>(v.id)];
        if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    void backward(Var loss) {
        const Mat& l = val(loss);
        if (l.rows() != 1 || l.cols() != 1)
            throw std::invalid_argument("backward expects a scalar loss");
        grad(loss)(0, 0) = 1.0;
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.backward && n.grad.size() != 0) n.backward(*this, Var{i});
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void(Tape&, Var)> backward;
    };
    std::vector<Node> nodes_;
};

namespace ops {

inline Tape::Var matmul(Tape& t, Tape::Var a, Tape::Var b) {
    Mat out = t.val(a) * t.val(b);
    return t.make_node(std::move(out), [a, b](Tape& tp, Tape::Var o) {
        tp.grad(a) += tp.grad(o) * tp.val(b).transpose();
        tp.grad(b) += tp.val(a).transpose() * tp.grad(o);
    });
}

inline Tape::Var add(Tape& t, Tape::Var a, Tape::Var b) {
    Mat out = t.val(a) + t.val(b);
    return t.make_node(std::move(out), [a, b](Tape& tp, Tape::Var o) {
        tp.grad(a) += tp.grad(o);
        tp.grad(b) += tp.grad(o);
    });
}

// broadcast a 1 x d bias over every row
inline Tape::Var add_rowvec(Tape& t, Tape::Var a, Tape::Var bias) {
    Mat out = t.val(a).rowwise() + t.val(bias).row(0);
    return t.make_node(std::move(out), [a, bias](Tape& tp, Tape::Var o) {
        tp.grad(a) += tp.grad(o);
        tp.grad(bias).row(0) += tp.grad(o).colwise().sum();
    });
}

inline Tape::Var scale(Tape& t, Tape::Var a, double c) {
    Mat out = t.val(a) * c;
    return t.make_node(std::move(out), [a, c](Tape& tp, Tape::Var o) {
        tp.grad(a) += tp.grad(o) * c;
    });
}

inline Tape::Var relu(Tape& t, Tape::Var a) {
    Mat out = t.val(a).cwiseMax(0.0);
    return t.make_node(std::move(out), [a](Tape& tp, Tape::Var o) {
        tp.grad(a) += (tp.val(a).array() > 0.0).cast<double>().matrix().cwiseProduct(tp.grad(o));
    });
}

inline Tape::Var sigmoid(Tape& t, Tape::Var a) {
    Mat out = (1.0 / (1.0 + (-t.val(a).array()).exp())).matrix();
    return t.make_node(std::move(out), [a](Tape& tp, Tape::Var o) {
        const Mat& y = tp.val(o);
        tp.grad(a) += (y.array() * (1.0 - y.array())).matrix().cwiseProduct(tp.grad(o));
    });
}

inline Tape::Var gather_rows(Tape& t, Tape::Var a, std::vector<int> idx) {
    Mat out(static_cast<Eigen::Index>(idx.size()), t.val(a).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = t.val(a).row(idx[i]);
    return t.make_node(std::move(out), [a, idx = std::move(idx)](Tape& tp, Tape::Var o) {
        Mat& g = tp.grad(a);
        for (std::size_t i = 0; i < idx.size(); ++i)
            g.row(idx[i]) += tp.grad(o).row(static_cast<Eigen::Index>(i));
    });
}

// out.row(dst[e]) += w(e) * msgs.row(e); `weights` may be invalid (all-ones).
inline Tape::Var scatter_weighted(Tape& t, Tape::Var msgs, Tape::Var weights,
                                  std::vector<int> dst, int num_out) {
    const Mat& m = t.val(msgs);
    Mat out = Mat::Zero(num_out, m.cols());
    for (std::size_t e = 0; e < dst.size(); ++e) {
        const double w = weights.valid() ? t.val(weights)(static_cast<Eigen::Index>(e), 0) : 1.0;
        out.row(dst[e]) += w * m.row(static_cast<Eigen::Index>(e));
    }
    return t.make_node(std::move(out), [msgs, weights, dst = std::move(dst)](Tape& tp, Tape::Var o) {
        const Mat& go = tp.grad(o);
        Mat& gm = tp.grad(msgs);
        for (std::size_t e = 0; e < dst.size(); ++e) {
            const Eigen::Index ei = static_cast<Eigen::Index>(e);
            const double w = weights.valid() ? tp.val(weights)(ei, 0) : 1.0;
            gm.row(ei) += w * go.row(dst[e]);
            if (weights.valid())
                tp.grad(weights)(ei, 0) += tp.val(msgs).row(ei).dot(go.row(dst[e]));
        }
    });
}

// (1 + eps) * h + agg, with eps a learnable 1x1 parameter
inline Tape::Var self_plus(Tape& t, Tape::Var h, Tape::Var agg, Tape::Var eps) {
    const double e = t.val(eps)(0, 0);
    Mat out = (1.0 + e) * t.val(h) + t.val(agg);
    return t.make_node(std::move(out), [h, agg, eps](Tape& tp, Tape::Var o) {
        const double e = tp.val(eps)(0, 0);
        tp.grad(h) += (1.0 + e) * tp.grad(o);
        tp.grad(agg) += tp.grad(o);
        tp.grad(eps)(0, 0) += tp.val(h).cwiseProduct(tp.grad(o)).sum();
    });
}

// per-graph mean over node rows; graph_of[i] maps node row -> graph index
inline Tape::Var segment_mean(Tape& t, Tape::Var nodes, std::vector<int> graph_of, int num_graphs) {
    std::vector<double> counts(static_cast<std::size_t>(num_graphs), 0.0);
    for (int gid : graph_of) counts[static_cast<std::size_t>(gid)] += 1.0;
    Mat out = Mat::Zero(num_graphs, t.val(nodes).cols());
    for (std::size_t i = 0; i < graph_of.size(); ++i)
        out.row(graph_of[i]) += t.val(nodes).row(static_cast<Eigen::Index>(i)) /
                                counts[static_cast<std::size_t>(graph_of[i])];
    return t.make_node(std::move(out),
                       [nodes, graph_of = std::move(graph_of), counts = std::move(counts)](
                           Tape& tp, Tape::Var o) {
                           Mat& g = tp.grad(nodes);
                           for (std::size_t i = 0; i < graph_of.size(); ++i)
                               g.row(static_cast<Eigen::Index>(i)) +=
                                   tp.grad(o).row(graph_of[i]) /
                                   counts[static_cast<std::size_t>(graph_of[i])];
                       });
}

inline Tape::Var segment_sum(Tape& t, Tape::Var nodes, std::vector<int> graph_of, int num_graphs) {
    Mat out = Mat::Zero(num_graphs, t.val(nodes).cols());
    for (std::size_t i = 0; i < graph_of.size(); ++i)
        out.row(graph_of[i]) += t.val(nodes).row(static_cast<Eigen::Index>(i));
    return t.make_node(std::move(out), [nodes, graph_of = std::move(graph_of)](Tape& tp, Tape::Var o) {
        Mat& g = tp.grad(nodes);
        for (std::size_t i = 0; i < graph_of.size(); ++i)
            g.row(static_cast<Eigen::Index>(i)) += tp.grad(o).row(graph_of[i]);
    });
}

inline Tape::Var concat_cols(Tape& t, Tape::Var a, Tape::Var b) {
    const Eigen::Index ca = t.val(a).cols(), cb = t.val(b).cols();
    Mat out(t.val(a).rows(), ca + cb);
    out.leftCols(ca) = t.val(a);
    out.rightCols(cb) = t.val(b);
    return t.make_node(std::move(out), [a, b, ca, cb](Tape& tp, Tape::Var o) {
        tp.grad(a) += tp.grad(o).leftCols(ca);
        tp.grad(b) += tp.grad(o).rightCols(cb);
    });
}

// rowwise layer normalization with learnable gain/bias (1 x d each)
inline Tape::Var layernorm(Tape& t, Tape::Var x, Tape::Var gamma, Tape::Var beta,
                           double eps = 1e-5) {
    const Mat& v = t.val(x);
    const Eigen::Index n = v.rows(), d = v.cols();
    Mat xhat(n, d);
    std::vector<double> inv_sd(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = v.row(i).mean();
        const double var = (v.row(i).array() - mu).square().mean();
        const double s = 1.0 / std::sqrt(var + eps);
        inv_sd[static_cast<std::size_t>(i)] = s;
        xhat.row(i) = (v.row(i).array() - mu) * s;
    }
    Mat out = (xhat.array().rowwise() * t.val(gamma).row(0).array()).matrix().rowwise() +
              t.val(beta).row(0);
    return t.make_node(
        std::move(out), [x, gamma, beta, xhat = std::move(xhat), inv_sd = std::move(inv_sd), d](
                            Tape& tp, Tape::Var o) {
            const Mat& go = tp.grad(o);
            const auto g = tp.val(gamma).row(0).array();
            tp.grad(beta).row(0) += go.colwise().sum();
            tp.grad(gamma).row(0) += xhat.cwiseProduct(go).colwise().sum();
            Mat& gx = tp.grad(x);
            const double dd = static_cast<double>(d);
            for (Eigen::Index i = 0; i < go.rows(); ++i) {
                const Eigen::ArrayXd dxhat = go.row(i).transpose().array() * g.transpose();
                const double s1 = dxhat.sum();
                const double s2 = (dxhat * xhat.row(i).transpose().array()).sum();
                gx.row(i) += (inv_sd[static_cast<std::size_t>(i)] / dd *
                              (dd * dxhat - s1 - xhat.row(i).transpose().array() * s2))
                                 .matrix()
                                 .transpose();
            }
        });
}

// rowwise L2 normalization
inline Tape::Var l2_normalize_rows(Tape& t, Tape::Var x, double eps = 1e-12) {
    const Mat& v = t.val(x);
    Mat out(v.rows(), v.cols());
    std::vector<double> norms(static_cast<std::size_t>(v.rows()));
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double n = std::max(v.row(i).norm(), eps);
        norms[static_cast<std::size_t>(i)] = n;
        out.row(i) = v.row(i) / n;
    }
    return t.make_node(std::move(out), [x, norms = std::move(norms)](Tape& tp, Tape::Var o) {
        const Mat& y = tp.val(o);
        const Mat& go = tp.grad(o);
        Mat& gx = tp.grad(x);
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            const double n = norms[static_cast<std::size_t>(i)];
            gx.row(i) += (go.row(i) - y.row(i) * y.row(i).dot(go.row(i))) / n;
        }
    });
}

// subtracts the per-column mean over rows: removes the direction shared by
// the whole batch, which otherwise dominates cosine similarities between
// nonnegative (post-relu) embeddings
inline Tape::Var batch_center(Tape& t, Tape::Var x) {
    const Mat& v = t.val(x);
    const Eigen::RowVectorXd mean = v.colwise().mean();
    Mat out = v.rowwise() - mean;
    return t.make_node(std::move(out), [x](Tape& tp, Tape::Var o) {
        const Mat& go = tp.grad(o);
        const Eigen::RowVectorXd gmean = go.colwise().mean();
        tp.grad(x) += go.rowwise() - gmean;
    });
}

// mean softmax cross-entropy over rows; returns a 1x1 scalar
inline Tape::Var softmax_cross_entropy(Tape& t, Tape::Var logits, std::vector<int> labels) {
    const Mat& z = t.val(logits);
    if (static_cast<std::size_t>(z.rows()) != labels.size())
        throw std::invalid_argument("logits/labels row mismatch");
    Mat probs(z.rows(), z.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double m = z.row(i).maxCoeff();
        const Eigen::ArrayXd e = (z.row(i).array() - m).exp();
        const double s = e.sum();
        probs.row(i) = (e / s).matrix().transpose();
        loss -= std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]), 1e-300));
    }
    loss /= static_cast<double>(z.rows());
    Mat out(1, 1);
    out(0, 0) = loss;
    return t.make_node(std::move(out), [logits, probs = std::move(probs),
                                        labels = std::move(labels)](Tape& tp, Tape::Var o) {
        const double g = tp.grad(o)(0, 0) / static_cast<double>(probs.rows());
        Mat d = probs;
        for (Eigen::Index i = 0; i < d.rows(); ++i)
            d(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
        tp.grad(logits) += g * d;
    });
}

inline Tape::Var add_scalar(Tape& t, Tape::Var a, Tape::Var b) {
    Mat out(1, 1);
    out(0, 0) = t.val(a)(0, 0) + t.val(b)(0, 0);
    return t.make_node(std::move(out), [a, b](Tape& tp, Tape::Var o) {
        tp.grad(a)(0, 0) += tp.grad(o)(0, 0);
        tp.grad(b)(0, 0) += tp.grad(o)(0, 0);
    });
}

}  // namespace ops

}  // namespace gala
