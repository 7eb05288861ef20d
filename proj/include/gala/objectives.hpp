#pragma once

#include <stdexcept>
#include <vector>

#include "gala/tape.hpp"

namespace gala {

struct ContrastConfig {
    double penalty_weight = 1.0;  // lambda
    double temperature = 1.0;
    enum class Similarity { dot, cosine } similarity = Similarity::cosine;
    bool one_side = true;        // anchors only from the assistant-incorrect set
    int max_negatives = -1;      // < 0: all in batch
    bool restrict_negatives = true;  // negatives share the anchor's assistant prediction
    // Center embeddings across the batch before measuring similarity. Without
    // this, relu-positive embeddings share one dominant direction, every
    // cosine saturates near 1, and the loss plateaus at its collapse value.
    bool batch_center = true;

    void validate() const {
        if (penalty_weight < 0.0) throw std::invalid_argument("penalty_weight must be >= 0");
        if (temperature <= 0.0) throw std::invalid_argument("temperature must be > 0");
    }
};

struct PairAssignment {
    std::vector<int> anchors;
    std::vector<std::vector<int>> positives;  // per anchor
    std::vector<std::vector<int>> negatives;  // per anchor
    int dropped_anchors = 0;  // anchors with no positive available
    bool negatives_missing = false;

    bool empty() const { return anchors.empty(); }
    std::size_t pair_count() const {
        std::size_t n = 0;
        for (const auto& p : positives) n += p.size();
        return n;
    }
};

// Cell assignment of each training graph by assistant correctness.
struct BatchPartition {
    std::vector<std::uint8_t> correct;  // per batch item
    std::vector<int> proxy;             // assistant prediction (label or cluster id)
};

inline Tape::Var classification_loss(Tape& t, Tape::Var logits, const std::vector<int>& labels) {
    return ops::softmax_cross_entropy(t, logits, labels);
}

// Cross-partition sampling: positives share the label and come from the
// opposite partition cell; negatives differ in label (and, by default, share
// the anchor's assistant prediction). Anchors with no positive are dropped.
inline PairAssignment sample_pairs_gala(const std::vector<int>& labels,
                                        const BatchPartition& partition, bool one_side,
                                        bool restrict_negatives = true,
                                        bool cross_partition = true) {
    const std::size_t n = labels.size();
    if (partition.correct.size() != n || partition.proxy.size() != n)
        throw std::invalid_argument("partition does not cover the batch");
    PairAssignment out;
    for (std::size_t a = 0; a < n; ++a) {
        if (one_side && partition.correct[a]) continue;
        std::vector<int> pos, neg;
        for (std::size_t i = 0; i < n; ++i) {
            if (i == a) continue;
            if (labels[i] == labels[a]) {
                if (!cross_partition || partition.correct[i] != partition.correct[a])
                    pos.push_back(static_cast<int>(i));
            } else {
                if (!restrict_negatives || partition.proxy[i] == partition.proxy[a])
                    neg.push_back(static_cast<int>(i));
            }
        }
        if (pos.empty()) {
            ++out.dropped_anchors;
            continue;
        }
        if (neg.empty()) out.negatives_missing = true;
        out.anchors.push_back(static_cast<int>(a));
        out.positives.push_back(std::move(pos));
        out.negatives.push_back(std::move(neg));
    }
    return out;
}

// Intra-class sampling: anchors all, positives same-label, negatives
// different-label.
inline PairAssignment sample_pairs_ciga(const std::vector<int>& labels) {
    const std::size_t n = labels.size();
    PairAssignment out;
    for (std::size_t a = 0; a < n; ++a) {
        std::vector<int> pos, neg;
        for (std::size_t i = 0; i < n; ++i) {
            if (i == a) continue;
            (labels[i] == labels[a] ? pos : neg).push_back(static_cast<int>(i));
        }
        if (pos.empty()) {
            ++out.dropped_anchors;
            continue;
        }
        if (neg.empty()) out.negatives_missing = true;
        out.anchors.push_back(static_cast<int>(a));
        out.positives.push_back(std::move(pos));
        out.negatives.push_back(std::move(neg));
    }
    return out;
}

// InfoNCE over the assignment:
//   -mean_{(a,p)} log[ exp(phi_ap) / (exp(phi_ap) + sum_neg exp(phi_an)) ]
// phi = (normalized) dot product / temperature.
inline Tape::Var contrastive_loss(Tape& t, Tape::Var embeddings, const PairAssignment& assignment,
                                  const ContrastConfig& config) {
    config.validate();
    if (assignment.empty()) throw std::invalid_argument("empty pair assignment");
    const Tape::Var centered =
        config.batch_center ? ops::batch_center(t, embeddings) : embeddings;
    const Tape::Var z = config.similarity == ContrastConfig::Similarity::cosine
                            ? ops::l2_normalize_rows(t, centered)
                            : centered;
    const Mat& e = t.val(z);
    const double tau = config.temperature;

    struct PairGrad {
        int a, p;
        double coeff_ap;                 // d loss / d phi_ap (per-pair, pre-mean)
        std::vector<int> negs;
        std::vector<double> coeff_neg;   // d loss / d phi_an
    };
    std::vector<PairGrad> pairs;
    double loss = 0.0;
    for (std::size_t ai = 0; ai < assignment.anchors.size(); ++ai) {
        const int a = assignment.anchors[ai];
        std::vector<int> negs = assignment.negatives[ai];
        if (config.max_negatives >= 0 &&
            negs.size() > static_cast<std::size_t>(config.max_negatives))
            negs.resize(static_cast<std::size_t>(config.max_negatives));
        std::vector<double> exp_neg(negs.size());
        for (std::size_t i = 0; i < negs.size(); ++i)
            exp_neg[i] = std::exp(e.row(a).dot(e.row(negs[i])) / tau);
        for (int p : assignment.positives[ai]) {
            const double phi_ap = e.row(a).dot(e.row(p)) / tau;
            const double exp_ap = std::exp(phi_ap);
            double denom = exp_ap;
            for (double x : exp_neg) denom += x;
            loss += -phi_ap + std::log(denom);
            PairGrad pg;
            pg.a = a;
            pg.p = p;
            pg.coeff_ap = -1.0 + exp_ap / denom;
            pg.negs = negs;
            pg.coeff_neg.resize(negs.size());
            for (std::size_t i = 0; i < negs.size(); ++i) pg.coeff_neg[i] = exp_neg[i] / denom;
            pairs.push_back(std::move(pg));
        }
    }
    const double n_pairs = static_cast<double>(pairs.size());
    Mat out(1, 1);
    out(0, 0) = loss / n_pairs;
    return t.make_node(std::move(out), [z, tau, n_pairs, pairs = std::move(pairs)](Tape& tp,
                                                                                   Tape::Var o) {
        const double g0 = tp.grad(o)(0, 0) / (n_pairs * tau);
        const Mat& e = tp.val(z);
        Mat& gz = tp.grad(z);
        for (const auto& pg : pairs) {
            gz.row(pg.a) += g0 * pg.coeff_ap * e.row(pg.p);
            gz.row(pg.p) += g0 * pg.coeff_ap * e.row(pg.a);
            for (std::size_t i = 0; i < pg.negs.size(); ++i) {
                gz.row(pg.a) += g0 * pg.coeff_neg[i] * e.row(pg.negs[i]);
                gz.row(pg.negs[i]) += g0 * pg.coeff_neg[i] * e.row(pg.a);
            }
        }
    });
}

inline Tape::Var total_loss(Tape& t, Tape::Var cls, Tape::Var contrast, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
    if (!contrast.valid() || lambda == 0.0) return cls;
    return ops::add_scalar(t, cls, ops::scale(t, contrast, lambda));
}

}  // namespace gala
