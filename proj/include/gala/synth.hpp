#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gala/motifs.hpp"
#include "gala/rng.hpp"
#include "gala/scm.hpp"

namespace gala {

constexpr int kDatasetFormatVersion = 1;

struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CorruptionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SyntheticGraph {
    int num_nodes = 0;
    std::vector<std::pair<int, int>> edges;  // undirected, u < v
    std::vector<std::vector<double>> node_features;
    int label = 0;
    std::vector<std::uint8_t> inv_edge_mask;  // per edge, internal invariant-motif edges
    BitRecord bits;
    int env_id = 0;
};

struct SplitParams {
    double a = 0.0;       // train invariant strength
    double b = 0.0;       // train spurious strength
    double b_val = 0.0;   // max(1/3, b - 0.2)
    double b_test = 0.0;  // 1/3
};

struct DatasetSplit {
    std::vector<SyntheticGraph> train, val, test;
    SplitParams params;
    int per_class = 0;
    std::uint64_t seed = 0;
    int num_classes = 3;
};

struct AssemblyConfig {
    int base_nodes = 12;  // preferential-attachment base, degree-1 attachment
    int feat_dim = 1;
};

// y with probability `strength`, otherwise uniform over the other classes.
inline int sample_class_bit(int y, double strength, Rng& rng, int num_classes = 3) {
    if (strength < 1.0 / num_classes - kProbTol || strength > 1.0 + kProbTol)
        throw std::invalid_argument("strength outside [1/num_classes, 1]");
    if (rng.uniform() < strength) return y;
    const int other = rng.uniform_index(num_classes - 1);
    return other >= y ? other + 1 : other;
}

namespace detail {

inline void add_edge(SyntheticGraph& g, int u, int v, bool invariant) {
    if (u > v) std::swap(u, v);
    g.edges.emplace_back(u, v);
    g.inv_edge_mask.push_back(invariant ? 1 : 0);
}

}  // namespace detail

// Preferential-attachment base graph + one motif per bit, each bridged to the
// base by a single random edge. The mask covers exactly the invariant motif's
// internal edges.
inline SyntheticGraph assemble_graph(const BitRecord& bits, Rng& rng,
                                     const AssemblyConfig& cfg = {}) {
    const Motif& inv = invariant_motifs()[static_cast<std::size_t>(bits.c_bit)];
    const Motif& spu = spurious_motifs()[static_cast<std::size_t>(bits.s_bit)];

    SyntheticGraph g;
    g.label = bits.y;
    g.bits = bits;
    g.num_nodes = cfg.base_nodes + inv.num_nodes + spu.num_nodes;

    // base: start from a single edge, attach each new node to an endpoint of
    // a uniformly random existing edge slot (degree-proportional)
    std::vector<int> endpoints;
    detail::add_edge(g, 0, 1, false);
    endpoints.insert(endpoints.end(), {0, 1});
    for (int i = 2; i < cfg.base_nodes; ++i) {
        const int target = endpoints[static_cast<std::size_t>(rng.uniform_index(
            static_cast<int>(endpoints.size())))];
        detail::add_edge(g, i, target, false);
        endpoints.insert(endpoints.end(), {i, target});
    }

    const int inv_off = cfg.base_nodes;
    for (auto [u, v] : inv.edges) detail::add_edge(g, inv_off + u, inv_off + v, true);
    detail::add_edge(g, inv_off + rng.uniform_index(inv.num_nodes),
                     rng.uniform_index(cfg.base_nodes), false);

    const int spu_off = cfg.base_nodes + inv.num_nodes;
    for (auto [u, v] : spu.edges) detail::add_edge(g, spu_off + u, spu_off + v, false);
    detail::add_edge(g, spu_off + rng.uniform_index(spu.num_nodes),
                     rng.uniform_index(cfg.base_nodes), false);

    g.node_features.assign(static_cast<std::size_t>(g.num_nodes),
                           std::vector<double>(static_cast<std::size_t>(cfg.feat_dim), 1.0));
    return g;
}

namespace detail {

inline std::vector<SyntheticGraph> build_one_split(double a, double b, int per_class,
                                                   std::uint64_t seed, std::uint64_t split_id,
                                                   int num_classes, const AssemblyConfig& cfg) {
    std::vector<SyntheticGraph> out;
    out.reserve(static_cast<std::size_t>(per_class) * num_classes);
    for (int y = 0; y < num_classes; ++y)
        for (int i = 0; i < per_class; ++i) {
            const std::uint64_t stream =
                derive_seed(seed, (split_id * 1000003ULL + static_cast<std::uint64_t>(y)) *
                                          1000003ULL +
                                      static_cast<std::uint64_t>(i));
            Rng rng(stream);
            BitRecord bits;
            bits.y = y;
            bits.c_bit = sample_class_bit(y, a, rng, num_classes);
            bits.s_bit = sample_class_bit(y, b, rng, num_classes);
            out.push_back(assemble_graph(bits, rng, cfg));
        }
    return out;
}

}  // namespace detail

inline DatasetSplit build_splits(double a, double b, int per_class, std::uint64_t seed,
                                 const AssemblyConfig& cfg = {}) {
    const int k = 3;
    if (a <= 1.0 / k) throw std::invalid_argument("invariant strength must exceed 1/num_classes");
    if (a > 1.0 || b < 1.0 / k - kProbTol || b > 1.0)
        throw std::invalid_argument("strengths outside valid range");
    if (per_class < 1) throw std::invalid_argument("per_class must be positive");

    DatasetSplit split;
    split.params = {a, b, std::max(1.0 / k, b - 0.2), 1.0 / k};
    split.per_class = per_class;
    split.seed = seed;
    split.num_classes = k;
    const int eval_per_class = std::max(1, (per_class + 1) / 3);
    split.train = detail::build_one_split(a, b, per_class, seed, 0, k, cfg);
    split.val = detail::build_one_split(a, split.params.b_val, eval_per_class, seed, 1, k, cfg);
    split.test = detail::build_one_split(a, split.params.b_test, eval_per_class, seed, 2, k, cfg);
    return split;
}

// Empirical (P(c=Y), P(s=Y)) over a list of graphs.
inline std::pair<double, double> empirical_strengths(const std::vector<SyntheticGraph>& graphs) {
    if (graphs.empty()) throw std::invalid_argument("empty graph list");
    double inv = 0.0, spu = 0.0;
    for (const auto& g : graphs) {
        if (g.bits.c_bit == g.label) inv += 1.0;
        if (g.bits.s_bit == g.label) spu += 1.0;
    }
    return {inv / static_cast<double>(graphs.size()), spu / static_cast<double>(graphs.size())};
}

namespace detail {

inline nlohmann::json graph_to_json(const SyntheticGraph& g, const char* split_name) {
    nlohmann::json edges = nlohmann::json::array();
    for (auto [u, v] : g.edges) edges.push_back({u, v});
    return {{"split", split_name},
            {"n", g.num_nodes},
            {"edges", edges},
            {"x", g.node_features},
            {"label", g.label},
            {"inv_mask", g.inv_edge_mask},
            {"bits", {g.bits.y, g.bits.c_bit, g.bits.s_bit}},
            {"env", g.env_id}};
}

inline SyntheticGraph graph_from_json(const nlohmann::json& j) {
    SyntheticGraph g;
    g.num_nodes = j.at("n").get<int>();
    for (const auto& e : j.at("edges")) g.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    g.node_features = j.at("x").get<std::vector<std::vector<double>>>();
    g.label = j.at("label").get<int>();
    g.inv_edge_mask = j.at("inv_mask").get<std::vector<std::uint8_t>>();
    const auto& b = j.at("bits");
    g.bits = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>()};
    g.env_id = j.at("env").get<int>();
    if (g.inv_edge_mask.size() != g.edges.size())
        throw CorruptionError("edge mask length does not match edge count");
    return g;
}

}  // namespace detail

inline void serialize_dataset(const DatasetSplit& split, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    const nlohmann::json header = {{"format_version", kDatasetFormatVersion},
                                   {"a", split.params.a},
                                   {"b", split.params.b},
                                   {"b_val", split.params.b_val},
                                   {"b_test", split.params.b_test},
                                   {"per_class", split.per_class},
                                   {"seed", split.seed},
                                   {"num_classes", split.num_classes},
                                   {"counts", {split.train.size(), split.val.size(), split.test.size()}}};
    f << header.dump() << "\n";
    for (const auto& g : split.train) f << detail::graph_to_json(g, "train").dump() << "\n";
    for (const auto& g : split.val) f << detail::graph_to_json(g, "val").dump() << "\n";
    for (const auto& g : split.test) f << detail::graph_to_json(g, "test").dump() << "\n";
}

inline DatasetSplit load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(f, line)) throw CorruptionError("missing header line");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
        throw CorruptionError("unparseable header");
    }
    const int version = header.value("format_version", -1);
    if (version < 0) throw CorruptionError("header lacks format_version");
    if (version > kDatasetFormatVersion)
        throw VersionError("dataset format version " + std::to_string(version) +
                           " is newer than supported " + std::to_string(kDatasetFormatVersion));

    DatasetSplit split;
    try {
        split.params = {header.at("a").get<double>(), header.at("b").get<double>(),
                        header.at("b_val").get<double>(), header.at("b_test").get<double>()};
        split.per_class = header.at("per_class").get<int>();
        split.seed = header.at("seed").get<std::uint64_t>();
        split.num_classes = header.at("num_classes").get<int>();
    } catch (const nlohmann::json::exception&) {
        throw CorruptionError("malformed header fields");
    }

    std::size_t expected[3] = {header.at("counts").at(0).get<std::size_t>(),
                               header.at("counts").at(1).get<std::size_t>(),
                               header.at("counts").at(2).get<std::size_t>()};
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            throw CorruptionError("unparseable graph record");
        }
        SyntheticGraph g;
        std::string which;
        try {
            which = j.at("split").get<std::string>();
            g = detail::graph_from_json(j);
        } catch (const nlohmann::json::exception&) {
            throw CorruptionError("malformed graph record");
        }
        if (which == "train")
            split.train.push_back(std::move(g));
        else if (which == "val")
            split.val.push_back(std::move(g));
        else if (which == "test")
            split.test.push_back(std::move(g));
        else
            throw CorruptionError("unknown split tag: " + which);
    }
    if (split.train.size() != expected[0] || split.val.size() != expected[1] ||
        split.test.size() != expected[2])
        throw CorruptionError("record counts do not match header (truncated file?)");
    return split;
}

}  // namespace gala
