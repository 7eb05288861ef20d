// Acceptance gate: five checks over the theory oracles, the trained methods,
// the assistant partition, the robustness sweep, and numerical hygiene.
// Prints one [PASS]/[FAIL] line per criterion; the exit code is the number of
// failures. The training criteria run at desk scale (per_class = 1000, seeds
// {1,2,3}) and take a few hours on one core.

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "gala/eval.hpp"
#include "gala/theory.hpp"

using namespace gala;

namespace {

struct Gate {
    int failures = 0;
    void line(int criterion, const char* name, bool pass, const std::string& detail) {
        std::printf("[%s] criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", criterion, name,
                    detail.c_str());
        std::fflush(stdout);
        if (!pass) ++failures;
    }
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

// ---- criterion 1: exact-oracle suite ----

bool check_theory(std::string& detail) {
    bool ok = true;

    const EnvParams swapped = swap_augmentation({0.25, 0.15, 2});
    ok &= std::abs(swapped.alpha - 0.5) < 1e-12 && std::abs(swapped.beta - 0.15) < 1e-12;

    EnvironmentSet set;
    set.envs = {{0.2, 0.1, 2}, {0.2, 0.3, 2}};
    const EnvironmentSet twin = construct_twin(set);
    const JointTable orig = mixture_joint(set), tw = mixture_joint(twin);
    const JointTable mixed = exact_joint({0.2, 0.2, 2});
    double twin_err = 0.0;
    for (int y = 0; y < 2; ++y)
        for (int c = 0; c < 2; ++c)
            for (int s = 0; s < 2; ++s) {
                // the twin exchanges the invariant/spurious roles
                twin_err = std::max(twin_err, std::abs(orig.at(y, c, s) - tw.at(y, s, c)));
                twin_err = std::max(twin_err, std::abs(orig.at(y, c, s) - mixed.at(y, c, s)));
            }
    ok &= twin_err < 1e-12;

    std::vector<std::pair<double, double>> grid;
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j) grid.emplace_back(0.4 + 0.06875 * i, 0.4 + 0.06875 * j);
    const ScanReport report = identifiability_scan(grid);
    ok &= report.gala_identifies_invariant && report.ciga_prefers_dominant &&
          report.ties_only_on_diagonal;

    detail = fmt("swap=(%.3f,%.3f) twin_err=%.2e scan[inv=%d dom=%d diag=%d]", swapped.alpha,
                 swapped.beta, twin_err, report.gala_identifies_invariant,
                 report.ciga_prefers_dominant, report.ties_only_on_diagonal);
    return ok;
}

// ---- criteria 2-4: trained methods ----

struct CellKey {
    double a, b;
    Method method;
    std::uint64_t seed;
    bool operator<(const CellKey& o) const {
        return std::tie(a, b, method, seed) < std::tie(o.a, o.b, o.method, o.seed);
    }
};

struct Bench {
    std::map<std::pair<double, double>, DatasetSplit> splits;
    std::map<CellKey, double> acc;

    const DatasetSplit& split(double a, double b) {
        const auto key = std::make_pair(a, b);
        auto it = splits.find(key);
        if (it == splits.end()) {
            std::printf("  .. generating dataset (%.1f, %.1f)\n", a, b);
            std::fflush(stdout);
            it = splits.emplace(key, build_splits(a, b, 1000, detail::dataset_seed(a, b))).first;
        }
        return it->second;
    }

    double cell(double a, double b, Method m, std::uint64_t seed,
                const Partition* fixed = nullptr) {
        const CellKey key{a, b, m, seed};
        const auto it = acc.find(key);
        if (it != acc.end()) return it->second;
        TrainConfig cfg;
        cfg.method = m;
        cfg.seed = seed;
        const RunResult r = run(split(a, b), cfg, fixed);
        std::printf("  .. %s (%.1f,%.1f) seed %llu: test %.4f (%.0fs, epoch %d)\n", method_name(m),
                    a, b, static_cast<unsigned long long>(seed), r.test_acc, r.wall_seconds,
                    r.selected_epoch);
        std::fflush(stdout);
        acc[key] = r.test_acc;
        return r.test_acc;
    }

    double mean3(double a, double b, Method m, const Partition* seed1_fixed = nullptr) {
        double s = 0.0;
        for (std::uint64_t seed : {1ull, 2ull, 3ull})
            s += cell(a, b, m, seed, seed == 1 ? seed1_fixed : nullptr);
        return s / 3.0;
    }
};

// Reproduce the partition a seed-1 gala run would train, so it can be shared
// across every seed-1 run on the same dataset.
Partition seed1_partition(const DatasetSplit& split) {
    const std::uint64_t base = derive_seed(global_seed(), 1);
    AssistantConfig acfg;
    acfg.encoder.num_classes = split.num_classes;
    ParamStore assistant = train_assistant(split, acfg, derive_seed(base, 7));
    return partition_by_prediction(assistant, acfg.encoder, split);
}

// ---- criterion 5: numerical hygiene (compact re-checks of the unit suite) ----

std::vector<SyntheticGraph> hygiene_graphs(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<SyntheticGraph> out;
    for (int i = 0; i < n; ++i)
        out.push_back(assemble_graph({i % 3, rng.uniform_index(3), rng.uniform_index(3)}, rng));
    return out;
}

double hygiene_loss(ParamStore& params, const GraphBatch& batch, const EncoderConfig& cfg,
                    ParamStore* grads) {
    FwdCtx ctx(params);
    const Tape::Var scores = featurize(ctx, batch, cfg);
    const ClassifyOut out = classify(ctx, batch, scores, cfg);
    const Tape::Var cls = classification_loss(ctx.tape, out.logits, batch.labels);
    const PairAssignment pairs = sample_pairs_ciga(batch.labels);
    ContrastConfig cc;
    const Tape::Var con = contrastive_loss(ctx.tape, out.graph_emb, pairs, cc);
    const Tape::Var loss = total_loss(ctx.tape, cls, con, 2.0);
    if (grads) {
        ctx.tape.backward(loss);
        ctx.collect_grads(*grads);
    }
    return ctx.tape.val(loss)(0, 0);
}

bool check_hygiene(std::string& detail) {
    bool ok = true;

    // gradient vs Richardson-extrapolated central differences, <= 1e-4 relative
    double fd_worst = 0.0;
    {
        const std::vector<SyntheticGraph> graphs = hygiene_graphs(5, 31);
        std::vector<int> idx(graphs.size());
        std::iota(idx.begin(), idx.end(), 0);
        const GraphBatch batch = make_batch(graphs, idx);
        EncoderConfig cfg;
        ParamStore params = init_backbone_params(cfg, 37);
        ParamStore grads;
        hygiene_loss(params, batch, cfg, &grads);
        Rng rng(41);
        const double h = 1e-6;
        auto central = [&](Mat& w, Eigen::Index i, Eigen::Index j, double step) {
            const double orig = w(i, j);
            w(i, j) = orig + step;
            const double up = hygiene_loss(params, batch, cfg, nullptr);
            w(i, j) = orig - step;
            const double down = hygiene_loss(params, batch, cfg, nullptr);
            w(i, j) = orig;
            return (up - down) / (2.0 * step);
        };
        std::vector<std::string> names;
        for (const auto& [name, _] : params.values) names.push_back(name);
        int checked = 0;
        while (checked < 12) {
            const std::string& name = names[static_cast<std::size_t>(
                rng.uniform_index(static_cast<int>(names.size())))];
            Mat& w = params.at(name);
            const Eigen::Index i = rng.uniform_index(static_cast<int>(w.rows()));
            const Eigen::Index j = rng.uniform_index(static_cast<int>(w.cols()));
            const double analytic = grads.at(name)(i, j);
            if (std::abs(analytic) <= 1e-4) continue;
            const double fd = (4.0 * central(w, i, j, h / 2.0) - central(w, i, j, h)) / 3.0;
            fd_worst = std::max(fd_worst, std::abs(analytic - fd) / std::max(std::abs(fd), 1e-8));
            ++checked;
        }
        ok &= fd_worst <= 1e-4;
    }

    // readout permutation invariance, <= 1e-6
    double perm_err = 0.0;
    {
        Rng rng(5);
        const SyntheticGraph g = assemble_graph({1, 0, 2}, rng);
        std::vector<int> perm(static_cast<std::size_t>(g.num_nodes));
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = perm.size(); i > 1; --i)
            std::swap(perm[i - 1],
                      perm[static_cast<std::size_t>(rng.uniform_index(static_cast<int>(i)))]);
        SyntheticGraph h = g;
        for (auto& [u, v] : h.edges) {
            u = perm[static_cast<std::size_t>(u)];
            v = perm[static_cast<std::size_t>(v)];
            if (u > v) std::swap(u, v);
        }
        EncoderConfig cfg;
        ParamStore params = init_vanilla_params(cfg, 11);
        FwdCtx c1(params), c2(params);
        const Mat e1 = c1.tape.val(encode(c1, make_batch({g}, {0}), "enc", cfg).second);
        const Mat e2 = c2.tape.val(encode(c2, make_batch({h}, {0}), "enc", cfg).second);
        perm_err = (e1 - e2).cwiseAbs().maxCoeff();
        ok &= perm_err <= 1e-6;
    }

    // contrastive closed forms (uncentered similarities)
    double cf_err = 0.0;
    {
        Tape t;
        Mat e(4, 2);
        e << 1, 0, 1, 0, 1, 0, 1, 0;  // all identical -> every similarity equal
        const Tape::Var z = t.leaf(std::move(e));
        ContrastConfig cc;
        cc.batch_center = false;
        PairAssignment no_neg;
        no_neg.anchors = {0};
        no_neg.positives = {{1}};
        no_neg.negatives = {{}};
        cf_err = std::max(cf_err, std::abs(t.val(contrastive_loss(t, z, no_neg, cc))(0, 0)));
        PairAssignment eq;
        eq.anchors = {0};
        eq.positives = {{1}};
        eq.negatives = {{2, 3}};  // M = 2 equal-similarity negatives
        cf_err = std::max(cf_err, std::abs(t.val(contrastive_loss(t, z, eq, cc))(0, 0) -
                                           std::log(3.0)));
        ok &= cf_err <= 1e-12;
    }

    // SCM joint normalization and conditional independence, <= 1e-12
    double scm_err = 0.0;
    {
        const JointTable t = exact_joint({0.45, 0.15, 3});
        scm_err = std::max(scm_err, std::abs(t.total_mass() - 1.0));
        for (int y = 0; y < 3; ++y) {
            double py = 0.0;
            for (int c = 0; c < 3; ++c)
                for (int s = 0; s < 3; ++s) py += t.at(y, c, s);
            for (int c = 0; c < 3; ++c)
                for (int s = 0; s < 3; ++s) {
                    double pc = 0.0, ps = 0.0;
                    for (int s2 = 0; s2 < 3; ++s2) pc += t.at(y, c, s2);
                    for (int c2 = 0; c2 < 3; ++c2) ps += t.at(y, c2, s);
                    scm_err = std::max(scm_err, std::abs(t.at(y, c, s) - pc * ps / py));
                }
        }
        ok &= scm_err <= 1e-12;
    }

    // dataset round-trip determinism
    bool roundtrip = true;
    {
        const DatasetSplit s1 = build_splits(0.8, 0.9, 8, 123);
        const DatasetSplit s2 = build_splits(0.8, 0.9, 8, 123);
        auto same = [](const std::vector<SyntheticGraph>& x, const std::vector<SyntheticGraph>& y) {
            if (x.size() != y.size()) return false;
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (x[i].label != y[i].label || x[i].edges != y[i].edges ||
                    x[i].node_features != y[i].node_features)
                    return false;
            }
            return true;
        };
        roundtrip &= same(s1.train, s2.train) && same(s1.val, s2.val) && same(s1.test, s2.test);
        const std::string path = "acceptance_roundtrip.jsonl";
        serialize_dataset(s1, path);
        const DatasetSplit s3 = load_dataset(path);
        roundtrip &= same(s1.train, s3.train) && same(s1.val, s3.val) && same(s1.test, s3.test);
        std::remove(path.c_str());
        ok &= roundtrip;
    }

    detail = fmt("fd_rel=%.2e perm=%.2e closed_form=%.2e scm=%.2e roundtrip=%d", fd_worst,
                 perm_err, cf_err, scm_err, roundtrip ? 1 : 0);
    return ok;
}

}  // namespace

int main() {
    Gate gate;

    {
        std::string detail;
        const bool pass = check_theory(detail);
        gate.line(1, "exact-oracle suite", pass, detail);
    }

    {
        std::string detail;
        const bool pass = check_hygiene(detail);
        gate.line(5, "numerical hygiene", pass, detail);
    }

    Bench bench;

    // criterion 3: assistant partition audit on (0.7, 0.9). A larger sample
    // (per_class = 4000 -> 12000 training graphs) keeps the binomial noise on
    // the invariant gap well inside the 0.05 budget.
    {
        std::printf("  .. training the partition-audit assistant (n = 12000)\n");
        std::fflush(stdout);
        const DatasetSplit big = build_splits(0.7, 0.9, 4000, detail::dataset_seed(0.7, 0.9));
        const Partition part = seed1_partition(big);
        const CooccurrenceCurves c = cooccurrence_curves(part, big.train);
        const double spu_gap = std::abs(c.spurious_positive - c.spurious_negative);
        const double inv_gap = std::abs(c.invariant_positive - c.invariant_negative);
        const bool pass = spu_gap >= 0.9 && inv_gap <= 0.05;
        gate.line(3, "partition co-occurrence audit", pass,
                  fmt("spurious_gap=%.4f (>=0.9) invariant_gap=%.4f (<=0.05) nf=%.4f n=%zu",
                      spu_gap, inv_gap, part.negative_fraction(), big.train.size()));
    }

    // shared seed-1 partition for the (0.7, 0.9) benchmark dataset
    const Partition part79 = seed1_partition(bench.split(0.7, 0.9));

    // criterion 4: robustness sweep on (0.7, 0.9), seed 1, shared partition
    {
        const std::vector<double> lambdas = {0.5, 1, 2, 4, 8, 16, 32};
        double best = 0.0, worst = 1.0;
        std::string sweep;
        for (double lam : lambdas) {
            TrainConfig cfg;
            cfg.method = Method::gala;
            cfg.seed = 1;
            cfg.penalty_weight = lam;
            const RunResult r = run(bench.split(0.7, 0.9), cfg, &part79);
            std::printf("  .. gala lambda %.1f: test %.4f (%.0fs)\n", lam, r.test_acc,
                        r.wall_seconds);
            std::fflush(stdout);
            best = std::max(best, r.test_acc);
            worst = std::min(worst, r.test_acc);
            sweep += fmt("%.2f ", r.test_acc);
            if (lam == 4.0) bench.acc[{0.7, 0.9, Method::gala, 1}] = r.test_acc;
        }
        TrainConfig off;
        off.method = Method::gala;
        off.seed = 1;
        off.penalty_weight = 0.0;
        const double acc_off = run(bench.split(0.7, 0.9), off, &part79).test_acc;
        TrainConfig k1;
        k1.method = Method::gala;
        k1.seed = 1;
        k1.upsample_k = 1;
        const double acc_k1 = run(bench.split(0.7, 0.9), k1, &part79).test_acc;
        const bool pass =
            (best - worst) <= 0.12 && (best - acc_off) >= 0.10 && (best - acc_k1) >= 0.10;
        gate.line(4, "penalty/upsampling robustness", pass,
                  fmt("sweep=[%s] spread=%.4f (<=0.12) lambda0=%.4f k1=%.4f (both >=0.10 below "
                      "best %.4f)",
                      sweep.c_str(), best - worst, acc_off, acc_k1, best));
    }

    // criterion 2: Table-1 orderings at desk scale
    {
        const double g79 = bench.mean3(0.7, 0.9, Method::gala, &part79);
        const double e79 = bench.mean3(0.7, 0.9, Method::erm);
        const double c79 = bench.mean3(0.7, 0.9, Method::ciga_contrast);
        const double g89 = bench.mean3(0.8, 0.9, Method::gala);
        const double c89 = bench.mean3(0.8, 0.9, Method::ciga_contrast);
        const double g86 = bench.mean3(0.8, 0.6, Method::gala);
        const double c86 = bench.mean3(0.8, 0.6, Method::ciga_contrast);
        const double o86 = bench.mean3(0.8, 0.6, Method::oracle_groundtruth);
        const double g87 = bench.mean3(0.8, 0.7, Method::gala);
        const double c87 = bench.mean3(0.8, 0.7, Method::ciga_contrast);
        const double o87 = bench.mean3(0.8, 0.7, Method::oracle_groundtruth);

        const bool p79 = g79 >= 0.62 && g79 - e79 >= 0.08 && g79 - c79 >= 0.08;
        const bool p89 = g89 >= 0.65 && g89 - c89 >= 0.08;
        const bool p86 = g86 >= c86 - 0.03 && g86 >= o86 - 0.06;
        const bool p87 = g87 >= c87 - 0.03 && g87 >= o87 - 0.06;
        gate.line(2, "benchmark ordering", p79 && p89 && p86 && p87,
                  fmt("(.7,.9) g=%.3f e=%.3f c=%.3f | (.8,.9) g=%.3f c=%.3f | (.8,.6) g=%.3f "
                      "c=%.3f o=%.3f | (.8,.7) g=%.3f c=%.3f o=%.3f",
                      g79, e79, c79, g89, c89, g86, c86, o86, g87, c87, o87));
    }

    std::printf("acceptance: %d of 5 criteria failing\n", gate.failures);
    return gate.failures;
}
