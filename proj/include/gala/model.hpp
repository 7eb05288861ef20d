#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gala/rng.hpp"
#include "gala/synth.hpp"
#include "gala/tape.hpp"

namespace gala {

constexpr int kCheckpointFormatVersion = 1;

struct EncoderConfig {
    int num_layers = 3;
    int hidden_dim = 32;
    enum class Readout { mean, sum } readout = Readout::mean;
    double dropout = 0.0;  // kept 0 for two-piece data
    int feat_dim = 1;
    int num_classes = 3;

    void validate() const {
        if (num_layers < 1) throw std::invalid_argument("num_layers must be >= 1");
        if (hidden_dim < 1) throw std::invalid_argument("hidden_dim must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout outside [0,1)");
    }
};

struct ParamStore {
    std::map<std::string, Mat> values;  // ordered: deterministic iteration

    Mat& at(const std::string& name) {
        auto it = values.find(name);
        if (it == values.end()) throw std::out_of_range("unknown parameter: " + name);
        return it->second;
    }
    const Mat& at(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end()) throw std::out_of_range("unknown parameter: " + name);
        return it->second;
    }
    bool finite() const {
        for (const auto& [_, v] : values)
            if (!v.allFinite()) return false;
        return true;
    }
};

// Flattened batch of graphs. Directed edges list both orientations of every
// undirected edge; `edge_undirected` maps a directed edge back to its slot.
struct GraphBatch {
    Mat x;  // num_nodes x feat_dim
    std::vector<int> src, dst;
    std::vector<int> edge_undirected;
    std::vector<int> graph_of_node;
    std::vector<int> graph_of_edge;  // per undirected edge
    std::vector<int> labels;
    std::vector<std::uint8_t> inv_mask;  // per undirected edge
    int num_graphs = 0;
    int num_undirected = 0;
};

inline GraphBatch make_batch(const std::vector<SyntheticGraph>& graphs,
                             const std::vector<int>& indices) {
    GraphBatch b;
    b.num_graphs = static_cast<int>(indices.size());
    int node_off = 0;
    std::size_t total_nodes = 0, total_edges = 0;
    for (int gi : indices) {
        total_nodes += static_cast<std::size_t>(graphs[static_cast<std::size_t>(gi)].num_nodes);
        total_edges += graphs[static_cast<std::size_t>(gi)].edges.size();
    }
    const int feat_dim =
        graphs.empty() || indices.empty() || graphs[static_cast<std::size_t>(indices[0])].node_features.empty()
            ? 1
            : static_cast<int>(graphs[static_cast<std::size_t>(indices[0])].node_features[0].size());
    b.x = Mat(static_cast<Eigen::Index>(total_nodes), feat_dim);
    b.src.reserve(total_edges * 2);
    b.dst.reserve(total_edges * 2);
    b.edge_undirected.reserve(total_edges * 2);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const SyntheticGraph& g = graphs[static_cast<std::size_t>(indices[k])];
        for (int i = 0; i < g.num_nodes; ++i) {
            for (int d = 0; d < feat_dim; ++d)
                b.x(node_off + i, d) = g.node_features[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)];
            b.graph_of_node.push_back(static_cast<int>(k));
        }
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            const int u = node_off + g.edges[e].first, v = node_off + g.edges[e].second;
            const int ue = b.num_undirected++;
            b.src.push_back(u);
            b.dst.push_back(v);
            b.edge_undirected.push_back(ue);
            b.src.push_back(v);
            b.dst.push_back(u);
            b.edge_undirected.push_back(ue);
            b.graph_of_edge.push_back(static_cast<int>(k));
            b.inv_mask.push_back(g.inv_edge_mask.empty() ? 0 : g.inv_edge_mask[e]);
        }
        b.labels.push_back(g.label);
        node_off += g.num_nodes;
    }
    return b;
}

// Forward-pass context: one tape plus lazily created parameter leaves.
struct FwdCtx {
    Tape tape;
    ParamStore* params = nullptr;
    std::map<std::string, Tape::Var> leaves;

    explicit FwdCtx(ParamStore& p) : params(&p) {}

    Tape::Var p(const std::string& name) {
        auto it = leaves.find(name);
        if (it != leaves.end()) return it->second;
        const Tape::Var v = tape.leaf(params->at(name));
        leaves.emplace(name, v);
        return v;
    }

    // accumulate d(loss)/d(param) into `grads` after tape.backward()
    void collect_grads(ParamStore& grads) {
        for (const auto& [name, var] : leaves) {
            Mat g = tape.grad(var);
            auto it = grads.values.find(name);
            if (it == grads.values.end())
                grads.values.emplace(name, std::move(g));
            else
                it->second += g;
        }
    }
};

namespace detail {

inline Mat fan_in_init(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
    return m;
}

inline void init_encoder(ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg,
                         Rng& rng) {
    for (int l = 0; l < cfg.num_layers; ++l) {
        // layer 0 sees the raw features plus the (weighted) degree column
        const int d_in = (l == 0) ? cfg.feat_dim + 1 : cfg.hidden_dim;
        const std::string base = prefix + ".l" + std::to_string(l);
        ps.values[base + ".W1"] = fan_in_init(d_in, cfg.hidden_dim, rng);
        ps.values[base + ".b1"] = Mat::Zero(1, cfg.hidden_dim);
        ps.values[base + ".W2"] = fan_in_init(cfg.hidden_dim, cfg.hidden_dim, rng);
        ps.values[base + ".b2"] = Mat::Zero(1, cfg.hidden_dim);
        ps.values[base + ".eps"] = Mat::Zero(1, 1);
        ps.values[base + ".ln.gamma"] = Mat::Ones(1, cfg.hidden_dim);
        ps.values[base + ".ln.beta"] = Mat::Zero(1, cfg.hidden_dim);
    }
}

}  // namespace detail

// vanilla encoder + linear head (assistant / plain ERM)
inline ParamStore init_vanilla_params(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, 101));
    ParamStore ps;
    detail::init_encoder(ps, "enc", cfg, rng);
    ps.values["head.W"] = detail::fan_in_init(cfg.hidden_dim, cfg.num_classes, rng);
    ps.values["head.b"] = Mat::Zero(1, cfg.num_classes);
    return ps;
}

// interpretable backbone: featurizer encoder + edge scorer + classifier
// encoder + linear head (unshared encoder weights)
inline ParamStore init_backbone_params(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, 202));
    ParamStore ps;
    detail::init_encoder(ps, "feat", cfg, rng);
    ps.values["feat.ln.gamma"] = Mat::Ones(1, cfg.hidden_dim);
    ps.values["feat.ln.beta"] = Mat::Zero(1, cfg.hidden_dim);
    ps.values["score.W1"] = detail::fan_in_init(2 * cfg.hidden_dim, cfg.hidden_dim, rng);
    ps.values["score.b1"] = Mat::Zero(1, cfg.hidden_dim);
    ps.values["score.W2"] = detail::fan_in_init(cfg.hidden_dim, 1, rng);
    ps.values["score.b2"] = Mat::Zero(1, 1);
    detail::init_encoder(ps, "cls", cfg, rng);
    ps.values["head.W"] = detail::fan_in_init(cfg.hidden_dim, cfg.num_classes, rng);
    ps.values["head.b"] = Mat::Zero(1, cfg.num_classes);
    return ps;
}

namespace detail {

inline Tape::Var gin_mlp(FwdCtx& ctx, Tape::Var z, const std::string& base) {
    using namespace ops;
    Tape::Var h = add_rowvec(ctx.tape, matmul(ctx.tape, z, ctx.p(base + ".W1")), ctx.p(base + ".b1"));
    h = relu(ctx.tape, h);
    return add_rowvec(ctx.tape, matmul(ctx.tape, h, ctx.p(base + ".W2")), ctx.p(base + ".b2"));
}

}  // namespace detail

// GIN-style encoder: sum aggregation with a learnable self-term, 2-layer MLP
// per layer, jump-connection residual at the last layer. Optional per-directed
// -edge weights multiply incoming messages. Returns (node, graph) embeddings.
inline std::pair<Tape::Var, Tape::Var> encode(FwdCtx& ctx, const GraphBatch& batch,
                                              const std::string& prefix, const EncoderConfig& cfg,
                                              Tape::Var edge_weights = {}) {
    using namespace ops;
    cfg.validate();
    const int n = static_cast<int>(batch.x.rows());
    // Node features are often uninformative on synthetic graphs, and the
    // per-layer normalization removes embedding scale, so the (weighted)
    // degree is appended as an explicit input column; it is differentiable
    // through the edge weights.
    const Tape::Var ones =
        ctx.tape.leaf(Mat::Ones(static_cast<Eigen::Index>(batch.src.size()), 1));
    const Tape::Var degree = scatter_weighted(ctx.tape, ones, edge_weights, batch.dst, n);
    Tape::Var h = concat_cols(ctx.tape, ctx.tape.leaf(batch.x), degree);
    Tape::Var prev{};
    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::string base = prefix + ".l" + std::to_string(l);
        const Tape::Var msgs = gather_rows(ctx.tape, h, batch.src);
        const Tape::Var agg = scatter_weighted(ctx.tape, msgs, edge_weights, batch.dst, n);
        const Tape::Var z = self_plus(ctx.tape, h, agg, ctx.p(base + ".eps"));
        Tape::Var out = detail::gin_mlp(ctx, z, base);
        // per-layer normalization: keeps feature scale bounded so deep sums
        // cannot concentrate all embeddings onto one direction
        out = layernorm(ctx.tape, out, ctx.p(base + ".ln.gamma"), ctx.p(base + ".ln.beta"));
        if (l == cfg.num_layers - 1) {
            if (prev.valid()) out = add(ctx.tape, out, prev);  // jump connection
            h = out;
        } else {
            h = relu(ctx.tape, out);
            prev = h;
        }
    }
    const Tape::Var graph_emb =
        cfg.readout == EncoderConfig::Readout::mean
            ? segment_mean(ctx.tape, h, batch.graph_of_node, batch.num_graphs)
            : segment_sum(ctx.tape, h, batch.graph_of_node, batch.num_graphs);
    return {h, graph_emb};
}

namespace detail {

// out(i) = 0.5 * (in(i) + in(i + half)) for i < half
inline Tape::Var average_halves(Tape& t, Tape::Var a) {
    const Eigen::Index half = t.val(a).rows() / 2;
    Mat out = 0.5 * (t.val(a).topRows(half) + t.val(a).bottomRows(half));
    return t.make_node(std::move(out), [a, half](Tape& tp, Tape::Var o) {
        tp.grad(a).topRows(half) += 0.5 * tp.grad(o);
        tp.grad(a).bottomRows(half) += 0.5 * tp.grad(o);
    });
}

}  // namespace detail

// Edge scores in [0,1], one per undirected edge, symmetric by construction:
// the directional MLP scores are sigmoid-squashed and averaged.
inline Tape::Var featurize(FwdCtx& ctx, const GraphBatch& batch, const EncoderConfig& cfg) {
    using namespace ops;
    auto [nodes, _] = encode(ctx, batch, "feat", cfg);
    const Tape::Var z =
        layernorm(ctx.tape, nodes, ctx.p("feat.ln.gamma"), ctx.p("feat.ln.beta"));

    // undirected edge endpoints, both orders stacked
    std::vector<int> firsts, seconds;
    firsts.reserve(static_cast<std::size_t>(batch.num_undirected) * 2);
    seconds.reserve(firsts.capacity());
    std::vector<std::pair<int, int>> undirected(static_cast<std::size_t>(batch.num_undirected));
    for (std::size_t e = 0; e < batch.src.size(); e += 2)
        undirected[static_cast<std::size_t>(batch.edge_undirected[e])] = {batch.src[e], batch.dst[e]};
    for (const auto& [u, v] : undirected) {
        firsts.push_back(u);
        seconds.push_back(v);
    }
    for (const auto& [u, v] : undirected) {
        firsts.push_back(v);
        seconds.push_back(u);
    }
    const Tape::Var pair_emb = concat_cols(ctx.tape, gather_rows(ctx.tape, z, firsts),
                                           gather_rows(ctx.tape, z, seconds));
    Tape::Var s = add_rowvec(ctx.tape, matmul(ctx.tape, pair_emb, ctx.p("score.W1")),
                             ctx.p("score.b1"));
    s = relu(ctx.tape, s);
    s = add_rowvec(ctx.tape, matmul(ctx.tape, s, ctx.p("score.W2")), ctx.p("score.b2"));
    s = sigmoid(ctx.tape, s);
    return detail::average_halves(ctx.tape, s);
}

struct ClassifyOut {
    Tape::Var logits;
    Tape::Var graph_emb;  // pre-head subgraph embedding, used by the contrastive loss
};

// Classifier encoder with messages reweighted by the edge scores. Passing an
// invalid scores Var runs the plain (unweighted) encoder.
inline ClassifyOut classify(FwdCtx& ctx, const GraphBatch& batch, Tape::Var scores,
                            const EncoderConfig& cfg, const std::string& prefix = "cls") {
    using namespace ops;
    Tape::Var directed_weights{};
    if (scores.valid())
        directed_weights = gather_rows(ctx.tape, scores, batch.edge_undirected);
    auto [nodes, graph_emb] = encode(ctx, batch, prefix, cfg, directed_weights);
    const Tape::Var logits =
        add_rowvec(ctx.tape, matmul(ctx.tape, graph_emb, ctx.p("head.W")), ctx.p("head.b"));
    return {logits, graph_emb};
}

// Per graph, keeps the ceil(r * |E|) highest-scoring undirected edges;
// ties at the cutoff break toward the lower edge index.
inline std::vector<std::uint8_t> topk_edge_mask(const std::vector<double>& scores,
                                                const std::vector<int>& graph_of_edge,
                                                int num_graphs, double ratio) {
    if (ratio <= 0.0 || ratio > 1.0) throw std::invalid_argument("ratio outside (0,1]");
    std::vector<std::vector<int>> per_graph(static_cast<std::size_t>(num_graphs));
    for (std::size_t e = 0; e < scores.size(); ++e)
        per_graph[static_cast<std::size_t>(graph_of_edge[e])].push_back(static_cast<int>(e));
    std::vector<std::uint8_t> mask(scores.size(), 0);
    for (auto& edges : per_graph) {
        const std::size_t keep =
            static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(edges.size())));
        std::stable_sort(edges.begin(), edges.end(), [&](int a, int b) {
            if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
                return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
            return a < b;
        });
        for (std::size_t i = 0; i < keep && i < edges.size(); ++i)
            mask[static_cast<std::size_t>(edges[i])] = 1;
    }
    return mask;
}

// ---- checkpointing ----

struct Checkpoint {
    EncoderConfig config;
    ParamStore params;
    std::string rng_state;
    nlohmann::json metadata;
};

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    nlohmann::json weights = nlohmann::json::object();
    for (const auto& [name, m] : ck.params.values) {
        std::vector<double> data(m.data(), m.data() + m.size());
        weights[name] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
    }
    const nlohmann::json j = {{"format_version", kCheckpointFormatVersion},
                              {"config",
                               {{"num_layers", ck.config.num_layers},
                                {"hidden_dim", ck.config.hidden_dim},
                                {"readout", ck.config.readout == EncoderConfig::Readout::mean
                                                ? "mean"
                                                : "sum"},
                                {"dropout", ck.config.dropout},
                                {"feat_dim", ck.config.feat_dim},
                                {"num_classes", ck.config.num_classes}}},
                              {"weights", weights},
                              {"rng_state", ck.rng_state},
                              {"metadata", ck.metadata}};
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << j.dump();
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception&) {
        throw CorruptionError("unparseable checkpoint");
    }
    const int version = j.value("format_version", -1);
    if (version < 0) throw CorruptionError("checkpoint lacks format_version");
    if (version > kCheckpointFormatVersion) throw VersionError("checkpoint from a newer format");
    Checkpoint ck;
    const auto& c = j.at("config");
    ck.config.num_layers = c.at("num_layers").get<int>();
    ck.config.hidden_dim = c.at("hidden_dim").get<int>();
    ck.config.readout = c.at("readout").get<std::string>() == "sum" ? EncoderConfig::Readout::sum
                                                                    : EncoderConfig::Readout::mean;
    ck.config.dropout = c.at("dropout").get<double>();
    ck.config.feat_dim = c.at("feat_dim").get<int>();
    ck.config.num_classes = c.at("num_classes").get<int>();
    for (const auto& [name, w] : j.at("weights").items()) {
        const auto data = w.at("data").get<std::vector<double>>();
        Mat m(w.at("rows").get<Eigen::Index>(), w.at("cols").get<Eigen::Index>());
        std::copy(data.begin(), data.end(), m.data());
        ck.params.values[name] = std::move(m);
    }
    ck.rng_state = j.at("rng_state").get<std::string>();
    ck.metadata = j.at("metadata");
    return ck;
}

}  // namespace gala
