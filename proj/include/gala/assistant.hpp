#pragma once

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "gala/model.hpp"
#include "gala/objectives.hpp"
#include "gala/optim.hpp"

namespace gala {

struct Partition {
    std::vector<int> positive_idx;  // assistant-correct ({G^p})
    std::vector<int> negative_idx;  // assistant-incorrect ({G^n})
    std::vector<int> proxy;         // per train graph: predicted label or cluster id
    std::vector<std::uint8_t> correct;  // per train graph

    double negative_fraction() const {
        const double n = static_cast<double>(positive_idx.size() + negative_idx.size());
        return n == 0.0 ? 0.0 : static_cast<double>(negative_idx.size()) / n;
    }
};

struct AssistantConfig {
    enum class Backbone { vanilla_encoder, interpretable_backbone } backbone =
        Backbone::vanilla_encoder;
    enum class Selection { best_train, best_val } selection = Selection::best_train;
    // The partition is only informative once the assistant has converged onto
    // the dominant (spurious) correlate; with this architecture and data scale
    // that takes on the order of 150 epochs.
    int epochs = 160;
    std::optional<int> cluster_k;
    double lr = 1e-3;
    int batch_size = 128;
    EncoderConfig encoder;

    void validate() const {
        if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
        if (cluster_k && *cluster_k < 2) throw std::invalid_argument("cluster_k must be >= 2");
        encoder.validate();
    }
};

namespace detail {

inline std::vector<std::vector<int>> shuffled_batches(std::size_t n, int batch_size, Rng& rng) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_index(static_cast<int>(i)))]);
    std::vector<std::vector<int>> batches;
    for (std::size_t s = 0; s < n; s += static_cast<std::size_t>(batch_size))
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                             order.begin() + static_cast<std::ptrdiff_t>(
                                                 std::min(n, s + static_cast<std::size_t>(batch_size))));
    return batches;
}

}  // namespace detail

// argmax predictions of a vanilla encoder + head over a list of graphs
inline std::vector<int> predict_labels(ParamStore& params, const EncoderConfig& cfg,
                                       const std::vector<SyntheticGraph>& graphs,
                                       int batch_size = 256) {
    std::vector<int> preds;
    preds.reserve(graphs.size());
    for (std::size_t s = 0; s < graphs.size(); s += static_cast<std::size_t>(batch_size)) {
        std::vector<int> idx;
        for (std::size_t i = s; i < std::min(graphs.size(), s + static_cast<std::size_t>(batch_size)); ++i)
            idx.push_back(static_cast<int>(i));
        const GraphBatch batch = make_batch(graphs, idx);
        FwdCtx ctx(params);
        auto [_, emb] = encode(ctx, batch, "enc", cfg);
        const Tape::Var logits =
            ops::add_rowvec(ctx.tape, ops::matmul(ctx.tape, emb, ctx.p("head.W")), ctx.p("head.b"));
        const Mat& z = ctx.tape.val(logits);
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
            Eigen::Index best;
            z.row(i).maxCoeff(&best);
            preds.push_back(static_cast<int>(best));
        }
    }
    return preds;
}

inline double accuracy_against(const std::vector<int>& preds,
                               const std::vector<SyntheticGraph>& graphs) {
    if (preds.size() != graphs.size()) throw std::invalid_argument("prediction count mismatch");
    if (graphs.empty()) return 0.0;
    double hits = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == graphs[i].label) hits += 1.0;
    return hits / static_cast<double>(graphs.size());
}

// Plain ERM training of the assistant; checkpoint selected by the configured
// criterion (default best training accuracy).
inline ParamStore train_assistant(const DatasetSplit& split, const AssistantConfig& config,
                                  std::uint64_t seed) {
    config.validate();
    EncoderConfig enc = config.encoder;
    enc.num_classes = split.num_classes;
    ParamStore params = init_vanilla_params(enc, derive_seed(seed, 900));
    if (config.epochs == 0) return params;

    Adam opt;
    opt.lr = config.lr;
    Rng shuffle_rng(derive_seed(seed, 901));
    ParamStore best = params;
    double best_metric = -1.0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (const auto& idx : detail::shuffled_batches(split.train.size(), config.batch_size,
                                                        shuffle_rng)) {
            const GraphBatch batch = make_batch(split.train, idx);
            FwdCtx ctx(params);
            auto [_, emb] = encode(ctx, batch, "enc", enc);
            const Tape::Var logits = ops::add_rowvec(
                ctx.tape, ops::matmul(ctx.tape, emb, ctx.p("head.W")), ctx.p("head.b"));
            const Tape::Var loss = classification_loss(ctx.tape, logits, batch.labels);
            if (!std::isfinite(ctx.tape.val(loss)(0, 0)))
                throw std::runtime_error("assistant training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch));
            ctx.tape.backward(loss);
            ParamStore grads;
            ctx.collect_grads(grads);
            opt.step(params, grads);
        }
        const auto& eval_set =
            config.selection == AssistantConfig::Selection::best_train ? split.train : split.val;
        const double metric = accuracy_against(predict_labels(params, enc, eval_set), eval_set);
        if (metric > best_metric) {
            best_metric = metric;
            best = params;
        }
    }
    return best;
}

// Eq.-6 partition: a graph is positive iff the assistant predicts its label.
inline Partition partition_by_prediction(ParamStore& assistant, const EncoderConfig& cfg,
                                         const DatasetSplit& split) {
    const std::vector<int> preds = predict_labels(assistant, cfg, split.train);
    Partition part;
    part.proxy = preds;
    part.correct.resize(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool ok = preds[i] == split.train[i].label;
        part.correct[i] = ok ? 1 : 0;
        (ok ? part.positive_idx : part.negative_idx).push_back(static_cast<int>(i));
    }
    return part;
}

namespace detail {

struct KMeansResult {
    std::vector<int> assignment;
    int effective_k = 0;
};

inline KMeansResult kmeans(const Mat& points, int k, std::uint64_t seed, int max_iters = 300) {
    const Eigen::Index n = points.rows();
    auto run_once = [&](std::uint64_t s, bool& had_empty) {
        Rng rng(s);
        // farthest-point init: random first center, then maximize the distance
        // to the nearest chosen center (ties toward the lower index)
        Mat centers(k, points.cols());
        centers.row(0) = points.row(rng.uniform_index(static_cast<int>(n)));
        for (int c = 1; c < k; ++c) {
            Eigen::Index far = 0;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                double nearest = std::numeric_limits<double>::infinity();
                for (int cc = 0; cc < c; ++cc)
                    nearest = std::min(nearest, (points.row(i) - centers.row(cc)).squaredNorm());
                if (nearest > far_d) {
                    far_d = nearest;
                    far = i;
                }
            }
            centers.row(c) = points.row(far);
        }
        std::vector<int> assign(static_cast<std::size_t>(n), 0);
        had_empty = false;
        for (int it = 0; it < max_iters; ++it) {
            bool changed = false;
            for (Eigen::Index i = 0; i < n; ++i) {
                int best = 0;
                double best_d = std::numeric_limits<double>::infinity();
                for (int c = 0; c < k; ++c) {
                    const double d = (points.row(i) - centers.row(c)).squaredNorm();
                    if (d < best_d) {
                        best_d = d;
                        best = c;
                    }
                }
                if (assign[static_cast<std::size_t>(i)] != best) {
                    assign[static_cast<std::size_t>(i)] = best;
                    changed = true;
                }
            }
            Mat sums = Mat::Zero(k, points.cols());
            std::vector<int> counts(static_cast<std::size_t>(k), 0);
            for (Eigen::Index i = 0; i < n; ++i) {
                sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
                ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
            }
            for (int c = 0; c < k; ++c) {
                if (counts[static_cast<std::size_t>(c)] == 0)
                    had_empty = true;
                else
                    centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
            }
            if (!changed) break;
        }
        return assign;
    };

    bool had_empty = false;
    std::vector<int> assign = run_once(derive_seed(seed, 1), had_empty);
    if (had_empty) assign = run_once(derive_seed(seed, 2), had_empty);  // re-seed once, then accept
    std::vector<char> used(static_cast<std::size_t>(k), 0);
    for (int a : assign) used[static_cast<std::size_t>(a)] = 1;
    KMeansResult res;
    res.assignment = std::move(assign);
    res.effective_k = static_cast<int>(std::count(used.begin(), used.end(), 1));
    return res;
}

}  // namespace detail

// Clustering partition from an embedding matrix: each k-means cluster takes
// its majority label; a graph is positive iff its cluster's majority label
// matches its own. proxy = cluster id.
inline Partition partition_from_embeddings(const Mat& emb, const std::vector<int>& labels,
                                           int num_classes, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("cluster count must be >= 2");
    if (static_cast<std::size_t>(emb.rows()) != labels.size())
        throw std::invalid_argument("embedding/label count mismatch");
    const std::size_t n = labels.size();
    const detail::KMeansResult km = detail::kmeans(emb, k, seed);

    std::vector<std::vector<int>> label_counts(
        static_cast<std::size_t>(k), std::vector<int>(static_cast<std::size_t>(num_classes), 0));
    for (std::size_t i = 0; i < n; ++i)
        ++label_counts[static_cast<std::size_t>(km.assignment[i])]
                      [static_cast<std::size_t>(labels[i])];
    std::vector<int> majority(static_cast<std::size_t>(k), 0);
    for (int c = 0; c < k; ++c) {
        const auto& counts = label_counts[static_cast<std::size_t>(c)];
        majority[static_cast<std::size_t>(c)] =
            static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    }

    Partition part;
    part.proxy = km.assignment;
    part.correct.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool ok = majority[static_cast<std::size_t>(km.assignment[i])] == labels[i];
        part.correct[i] = ok ? 1 : 0;
        (ok ? part.positive_idx : part.negative_idx).push_back(static_cast<int>(i));
    }
    return part;
}

// k-means on assistant graph embeddings (Euclidean, k defaults to the class
// count at the call site).
inline Partition partition_by_clustering(ParamStore& assistant, const EncoderConfig& cfg,
                                         const DatasetSplit& split, int k,
                                         std::uint64_t seed = 12345) {
    if (k < 2) throw std::invalid_argument("cluster count must be >= 2");
    const std::size_t n = split.train.size();
    Mat emb(static_cast<Eigen::Index>(n), cfg.hidden_dim);
    constexpr int kChunk = 256;
    for (std::size_t s = 0; s < n; s += kChunk) {
        std::vector<int> idx;
        for (std::size_t i = s; i < std::min(n, s + kChunk); ++i) idx.push_back(static_cast<int>(i));
        const GraphBatch batch = make_batch(split.train, idx);
        FwdCtx ctx(assistant);
        auto [_, graph_emb] = encode(ctx, batch, "enc", cfg);
        emb.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(idx.size())) =
            ctx.tape.val(graph_emb);
    }
    std::vector<int> labels;
    labels.reserve(n);
    for (const auto& g : split.train) labels.push_back(g.label);
    return partition_from_embeddings(emb, labels, split.num_classes, k, seed);
}

// Training pool: every index once, with the minority cell repeated k times in
// total (ties count the negative cell as minority).
inline std::vector<int> upsample_minority(const Partition& partition, int k) {
    if (k < 1 || k > 4) throw std::invalid_argument("upsample factor must be in {1,2,3,4}");
    const bool negative_minority =
        partition.negative_idx.size() <= partition.positive_idx.size();
    const std::vector<int>& minority =
        negative_minority ? partition.negative_idx : partition.positive_idx;
    std::vector<int> pool;
    pool.reserve(partition.positive_idx.size() + partition.negative_idx.size() +
                 minority.size() * static_cast<std::size_t>(k - 1));
    pool.insert(pool.end(), partition.positive_idx.begin(), partition.positive_idx.end());
    pool.insert(pool.end(), partition.negative_idx.begin(), partition.negative_idx.end());
    for (int rep = 1; rep < k; ++rep) pool.insert(pool.end(), minority.begin(), minority.end());
    std::sort(pool.begin(), pool.end());
    return pool;
}

// audit export: per-graph index, proxy, cell
inline void export_partition(const Partition& partition, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "index,proxy,cell\n";
    for (std::size_t i = 0; i < partition.correct.size(); ++i)
        f << i << "," << partition.proxy[i] << ","
          << (partition.correct[i] ? "positive" : "negative") << "\n";
}

}  // namespace gala
