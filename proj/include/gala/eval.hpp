#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gala/trainer.hpp"

namespace gala {

inline double eval_accuracy(ParamStore& params, const EncoderConfig& enc, Method method,
                            const std::vector<SyntheticGraph>& graphs) {
    return accuracy_against(predict_method(params, enc, method, graphs), graphs);
}

// Mean F1 between the per-graph top-k edges (k = ground-truth motif edge
// count) and the invariant mask. With equal budgets F1 reduces to tp / k.
inline double identification_f1(const std::vector<double>& scores,
                                const std::vector<int>& graph_of_edge,
                                const std::vector<std::uint8_t>& inv_mask, int num_graphs) {
    if (scores.size() != inv_mask.size() || scores.size() != graph_of_edge.size())
        throw std::invalid_argument("scores/mask/graph size mismatch");
    std::vector<int> k_true(static_cast<std::size_t>(num_graphs), 0);
    for (std::size_t e = 0; e < inv_mask.size(); ++e)
        if (inv_mask[e]) ++k_true[static_cast<std::size_t>(graph_of_edge[e])];
    std::vector<std::vector<int>> per_graph(static_cast<std::size_t>(num_graphs));
    for (std::size_t e = 0; e < scores.size(); ++e)
        per_graph[static_cast<std::size_t>(graph_of_edge[e])].push_back(static_cast<int>(e));
    double total = 0.0;
    int counted = 0;
    for (int g = 0; g < num_graphs; ++g) {
        const int k = k_true[static_cast<std::size_t>(g)];
        if (k == 0) continue;
        auto& edges = per_graph[static_cast<std::size_t>(g)];
        std::stable_sort(edges.begin(), edges.end(), [&](int a, int b) {
            if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
                return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
            return a < b;
        });
        int tp = 0;
        for (int i = 0; i < k && i < static_cast<int>(edges.size()); ++i)
            if (inv_mask[static_cast<std::size_t>(edges[static_cast<std::size_t>(i)])]) ++tp;
        total += static_cast<double>(tp) / k;
        ++counted;
    }
    return counted ? total / counted : 0.0;
}

// featurizer scores over a graph list, for identification audits
inline double identification_f1_of_model(ParamStore& params, const EncoderConfig& enc,
                                         const std::vector<SyntheticGraph>& graphs,
                                         int batch_size = 256) {
    double total = 0.0;
    int batches = 0;
    for (std::size_t s = 0; s < graphs.size(); s += static_cast<std::size_t>(batch_size)) {
        std::vector<int> idx;
        for (std::size_t i = s; i < std::min(graphs.size(), s + static_cast<std::size_t>(batch_size));
             ++i)
            idx.push_back(static_cast<int>(i));
        const GraphBatch batch = make_batch(graphs, idx);
        FwdCtx ctx(params);
        const Mat& sc = ctx.tape.val(featurize(ctx, batch, enc));
        std::vector<double> scores(sc.data(), sc.data() + sc.size());
        total += identification_f1(scores, batch.graph_of_edge, batch.inv_mask, batch.num_graphs) *
                 static_cast<double>(batch.num_graphs);
        ++batches;
    }
    return graphs.empty() ? 0.0 : total / static_cast<double>(graphs.size());
}

// Fig.-4a style audit: per partition cell, P(invariant motif = label) and
// P(spurious motif = label), from the ground-truth bits.
struct CooccurrenceCurves {
    double invariant_positive = 0.0, invariant_negative = 0.0;
    double spurious_positive = 0.0, spurious_negative = 0.0;
};

inline CooccurrenceCurves cooccurrence_curves(const Partition& partition,
                                              const std::vector<SyntheticGraph>& graphs) {
    if (partition.correct.size() != graphs.size())
        throw std::invalid_argument("partition does not cover the graph list");
    CooccurrenceCurves c;
    double np = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        const bool inv_hit = graphs[i].bits.c_bit == graphs[i].label;
        const bool spu_hit = graphs[i].bits.s_bit == graphs[i].label;
        if (partition.correct[i]) {
            np += 1.0;
            c.invariant_positive += inv_hit;
            c.spurious_positive += spu_hit;
        } else {
            nn += 1.0;
            c.invariant_negative += inv_hit;
            c.spurious_negative += spu_hit;
        }
    }
    if (np > 0.0) {
        c.invariant_positive /= np;
        c.spurious_positive /= np;
    }
    if (nn > 0.0) {
        c.invariant_negative /= nn;
        c.spurious_negative /= nn;
    }
    return c;
}

// ---- suite ----

struct ExperimentSpec {
    std::vector<std::pair<double, double>> datasets;  // (a, b) strengths
    std::vector<Method> methods;
    std::vector<std::uint64_t> seeds;
    int per_class = 1000;
    std::vector<double> lambda_grid;  // optional gala sweep
    std::vector<int> upsample_grid;   // optional gala sweep
    TrainConfig base;
    std::string out_dir = "suite_out";

    void validate() const {
        if (datasets.empty()) throw std::invalid_argument("no datasets in spec");
        if (methods.empty()) throw std::invalid_argument("no methods in spec");
        if (seeds.empty()) throw std::invalid_argument("no seeds in spec");
        if (per_class < 1) throw std::invalid_argument("per_class must be >= 1");
        base.validate();
    }
};

struct CellResult {
    std::string kind;  // "method" | "lambda" | "upsample"
    Method method = Method::gala;
    double a = 0.0, b = 0.0;
    std::uint64_t seed = 0;
    double lambda = -1.0;
    int upsample_k = -1;
    double test_acc = 0.0;
    double id_f1 = -1.0;
    double negative_fraction = -1.0;
    double wall_seconds = 0.0;
    std::string error;
};

struct ReportRow {
    std::string label;
    double a = 0.0, b = 0.0;
    double mean = 0.0;
    double stddev = 0.0;
    bool single_seed = false;
    double mean_id_f1 = -1.0;
    double mean_negative_fraction = -1.0;
};

inline int suite_worker_count() {
    const char* env = std::getenv("GALA_WORKERS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

namespace detail {

inline std::uint64_t dataset_seed(double a, double b) {
    return derive_seed(0xD5ULL, static_cast<std::uint64_t>(a * 1e6) * 2000003ULL +
                                    static_cast<std::uint64_t>(b * 1e6));
}

inline void aggregate(const std::vector<const CellResult*>& cells, ReportRow& row) {
    double sum = 0.0, f1 = 0.0, nf = 0.0;
    int n = 0, nf_n = 0, f1_n = 0;
    for (const CellResult* c : cells) {
        if (!c->error.empty()) continue;
        sum += c->test_acc;
        ++n;
        if (c->id_f1 >= 0.0) {
            f1 += c->id_f1;
            ++f1_n;
        }
        if (c->negative_fraction >= 0.0) {
            nf += c->negative_fraction;
            ++nf_n;
        }
    }
    if (n == 0) return;
    row.mean = sum / n;
    row.single_seed = n < 2;
    if (n >= 2) {
        double sq = 0.0;
        for (const CellResult* c : cells)
            if (c->error.empty()) sq += (c->test_acc - row.mean) * (c->test_acc - row.mean);
        row.stddev = std::sqrt(sq / (n - 1));
    }
    if (f1_n) row.mean_id_f1 = f1 / f1_n;
    if (nf_n) row.mean_negative_fraction = nf / nf_n;
}

}  // namespace detail

struct SuiteOutput {
    std::vector<CellResult> cells;
    std::vector<ReportRow> rows;
};

inline SuiteOutput run_suite(const ExperimentSpec& spec) {
    spec.validate();
    std::filesystem::create_directories(spec.out_dir);

    // materialize datasets once per strength pair
    std::vector<DatasetSplit> splits;
    for (auto [a, b] : spec.datasets)
        splits.push_back(build_splits(a, b, spec.per_class, detail::dataset_seed(a, b)));

    // enumerate cells
    struct Job {
        std::size_t dataset;
        CellResult cell;
    };
    std::vector<Job> jobs;
    for (std::size_t d = 0; d < splits.size(); ++d) {
        for (Method m : spec.methods)
            for (std::uint64_t seed : spec.seeds) {
                CellResult c;
                c.kind = "method";
                c.method = m;
                c.a = spec.datasets[d].first;
                c.b = spec.datasets[d].second;
                c.seed = seed;
                jobs.push_back({d, c});
            }
        for (double lambda : spec.lambda_grid)
            for (std::uint64_t seed : spec.seeds) {
                CellResult c;
                c.kind = "lambda";
                c.method = Method::gala;
                c.a = spec.datasets[d].first;
                c.b = spec.datasets[d].second;
                c.seed = seed;
                c.lambda = lambda;
                jobs.push_back({d, c});
            }
        for (int k : spec.upsample_grid)
            for (std::uint64_t seed : spec.seeds) {
                CellResult c;
                c.kind = "upsample";
                c.method = Method::gala;
                c.a = spec.datasets[d].first;
                c.b = spec.datasets[d].second;
                c.seed = seed;
                c.upsample_k = k;
                jobs.push_back({d, c});
            }
    }

    const int workers = suite_worker_count();
    std::mutex next_mutex;
    std::size_t next = 0;
    auto worker = [&]() {
        for (;;) {
            std::size_t j;
            {
                std::lock_guard<std::mutex> lock(next_mutex);
                if (next >= jobs.size()) return;
                j = next++;
            }
            Job& job = jobs[j];
            try {
                TrainConfig cfg = spec.base;
                cfg.method = job.cell.method;
                cfg.seed = job.cell.seed;
                if (job.cell.lambda >= 0.0) cfg.penalty_weight = job.cell.lambda;
                if (job.cell.upsample_k >= 1) cfg.upsample_k = job.cell.upsample_k;
                const RunResult r = run(splits[job.dataset], cfg);
                job.cell.test_acc = r.test_acc;
                job.cell.negative_fraction = r.partition_negative_fraction;
                job.cell.wall_seconds = r.wall_seconds;
                if (detail::uses_backbone(cfg.method)) {
                    ParamStore params = r.best_params;
                    job.cell.id_f1 =
                        identification_f1_of_model(params, r.encoder, splits[job.dataset].test);
                }
            } catch (const std::exception& e) {
                job.cell.error = e.what();  // partial failure: record and continue
            }
        }
    };
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    SuiteOutput out;
    for (const Job& j : jobs) out.cells.push_back(j.cell);

    // aggregate per (kind, label, dataset)
    auto key_of = [](const CellResult& c) {
        std::ostringstream k;
        k << c.kind << "|";
        if (c.kind == "method")
            k << method_name(c.method);
        else if (c.kind == "lambda")
            k << "lambda=" << c.lambda;
        else
            k << "k=" << c.upsample_k;
        k << "|" << c.a << "|" << c.b;
        return k.str();
    };
    std::vector<std::string> order;
    std::map<std::string, std::vector<const CellResult*>> groups;
    for (const CellResult& c : out.cells) {
        const std::string k = key_of(c);
        if (!groups.count(k)) order.push_back(k);
        groups[k].push_back(&c);
    }
    for (const std::string& k : order) {
        ReportRow row;
        const CellResult& first = *groups[k].front();
        row.a = first.a;
        row.b = first.b;
        row.label = k.substr(k.find('|') + 1, k.find('|', k.find('|') + 1) - k.find('|') - 1);
        detail::aggregate(groups[k], row);
        out.rows.push_back(row);
    }
    return out;
}

inline void write_results_csv(const SuiteOutput& out, const std::string& path) {
    std::ofstream f(path);
    f << "kind,label,a,b,seed,test_acc,id_f1,negative_fraction,wall_seconds,error\n";
    for (const CellResult& c : out.cells) {
        std::string label = method_name(c.method);
        if (c.kind == "lambda") label = "lambda=" + std::to_string(c.lambda);
        if (c.kind == "upsample") label = "k=" + std::to_string(c.upsample_k);
        f << c.kind << "," << label << "," << c.a << "," << c.b << "," << c.seed << ","
          << c.test_acc << "," << c.id_f1 << "," << c.negative_fraction << "," << c.wall_seconds
          << "," << c.error << "\n";
    }
}

inline void write_table_csv(const SuiteOutput& out, const std::string& path) {
    std::ofstream f(path);
    f << "label,a,b,mean,std,single_seed,id_f1,negative_fraction\n";
    for (const ReportRow& r : out.rows)
        f << r.label << "," << r.a << "," << r.b << "," << r.mean << "," << r.stddev << ","
          << (r.single_seed ? 1 : 0) << "," << r.mean_id_f1 << "," << r.mean_negative_fraction
          << "\n";
}

// minimal static bar chart: one bar per row, labeled, value in [0,1]
inline void write_bar_svg(const std::vector<std::pair<std::string, double>>& bars,
                          const std::string& title, const std::string& path) {
    const int bar_w = 60, gap = 30, h = 300, base = 260;
    const int w = gap + static_cast<int>(bars.size()) * (bar_w + gap);
    std::ofstream f(path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << std::max(w, 320)
      << "\" height=\"" << h + 40 << "\">\n";
    f << "<text x=\"10\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
    int x = gap;
    for (const auto& [label, value] : bars) {
        const int bh = static_cast<int>(value * 200.0);
        f << "<rect x=\"" << x << "\" y=\"" << base - bh << "\" width=\"" << bar_w
          << "\" height=\"" << bh << "\" fill=\"#4878a8\"/>\n";
        f << "<text x=\"" << x << "\" y=\"" << base + 16 << "\" font-size=\"10\">" << label
          << "</text>\n";
        std::ostringstream v;
        v.precision(3);
        v << value;
        f << "<text x=\"" << x << "\" y=\"" << base - bh - 4 << "\" font-size=\"10\">" << v.str()
          << "</text>\n";
        x += bar_w + gap;
    }
    f << "</svg>\n";
}

}  // namespace gala
