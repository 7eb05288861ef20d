#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gala/eval.hpp"
#include "gala/theory.hpp"

using nlohmann::json;

namespace {

int run_verify(const std::string& out_path) {
    using namespace gala;
    json results = json::array();
    bool ok = true;
    auto record = [&](const std::string& name, bool pass, json detail) {
        detail["check"] = name;
        detail["pass"] = pass;
        results.push_back(detail);
        std::printf("[%s] %s\n", pass ? "PASS" : "FAIL", name.c_str());
        ok = ok && pass;
    };

    {
        const EnvParams out = swap_augmentation({0.25, 0.15, 2});
        const bool pass = std::abs(out.alpha - 0.5) < 1e-12 && std::abs(out.beta - 0.15) < 1e-12;
        record("swap_augmentation destroys the invariant correlation", pass,
               {{"alpha", out.alpha}, {"beta", out.beta}});
    }
    {
        EnvironmentSet set;
        set.envs = {{0.2, 0.1, 2}, {0.2, 0.3, 2}};
        const EnvironmentSet twin = construct_twin(set);
        const JointTable a = mixture_joint(set), b = mixture_joint(twin);
        const JointTable mixed = exact_joint({0.2, 0.2, 2});
        double err = 0.0;
        for (std::size_t i = 0; i < a.probs.size(); ++i) {
            err = std::max(err, std::abs(a.probs[i] - b.probs[i]));
            err = std::max(err, std::abs(a.probs[i] - mixed.probs[i]));
        }
        record("twin environments are joint-indistinguishable", err < 1e-12, {{"max_abs_err", err}});
    }
    {
        std::vector<std::pair<double, double>> grid;
        for (int i = 0; i < 9; ++i)
            for (int j = 0; j < 9; ++j)
                grid.emplace_back(0.4 + 0.06875 * i, 0.4 + 0.06875 * j);
        const ScanReport report = identifiability_scan(grid);
        record("cross-partition sampling identifies the invariant bit on the 9x9 grid",
               report.gala_identifies_invariant, {{"points", report.points.size()}});
        record("intra-class sampling follows the dominant bit", report.ciga_prefers_dominant, {});
        record("ties occur exactly on the a=b diagonal", report.ties_only_on_diagonal, {});
        for (const auto& pt : report.points) {
            results.push_back({{"check", "grid_point"},
                               {"a", pt.a},
                               {"b", pt.b},
                               {"gala_invariant", pt.gala_value[0]},
                               {"gala_spurious", pt.gala_value[1]},
                               {"gala_both", pt.gala_value[2]},
                               {"ciga_invariant", pt.ciga_value[0]},
                               {"ciga_spurious", pt.ciga_value[1]},
                               {"ciga_both", pt.ciga_value[2]},
                               {"gala_winner", selector_name(pt.gala_winner)},
                               {"ciga_winner", selector_name(pt.ciga_winner)},
                               {"gala_margin", pt.gala_margin},
                               {"ciga_margin", pt.ciga_margin},
                               {"pass", true}});
        }
    }

    if (!out_path.empty()) {
        std::ofstream f(out_path);
        for (const auto& r : results) f << r.dump() << "\n";
    }
    std::printf("verify: %s\n", ok ? "all checks passed" : "FAILURES present");
    return ok ? 0 : 1;
}

gala::ExperimentSpec spec_from_json(const json& j) {
    gala::ExperimentSpec spec;
    for (const auto& d : j.at("datasets"))
        spec.datasets.emplace_back(d.at(0).get<double>(), d.at(1).get<double>());
    for (const auto& m : j.at("methods"))
        spec.methods.push_back(gala::method_from_name(m.get<std::string>()));
    for (const auto& s : j.at("seeds")) spec.seeds.push_back(s.get<std::uint64_t>());
    spec.per_class = j.value("per_class", 1000);
    if (j.contains("lambda_grid"))
        spec.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
    if (j.contains("upsample_grid"))
        spec.upsample_grid = j.at("upsample_grid").get<std::vector<int>>();
    spec.out_dir = j.value("out_dir", std::string("suite_out"));

    gala::TrainConfig& b = spec.base;
    b.lr = j.value("lr", b.lr);
    b.batch_size = j.value("batch_size", b.batch_size);
    b.pretrain_epochs = j.value("pretrain_epochs", b.pretrain_epochs);
    b.max_epochs = j.value("max_epochs", b.max_epochs);
    b.early_stop_patience = j.value("early_stop_patience", b.early_stop_patience);
    b.penalty_weight = j.value("lambda", b.penalty_weight);
    b.upsample_k = j.value("upsample_k", b.upsample_k);
    b.assistant.epochs = j.value("assistant_epochs", b.assistant.epochs);
    return spec;
}

void write_suite_artifacts(const gala::SuiteOutput& out, const gala::ExperimentSpec& spec,
                           const json& provenance_extra) {
    namespace fs = std::filesystem;
    fs::create_directories(spec.out_dir);
    gala::write_results_csv(out, spec.out_dir + "/results.csv");
    gala::write_table_csv(out, spec.out_dir + "/table.csv");

    // one accuracy bar chart per dataset over method rows
    for (auto [a, b] : spec.datasets) {
        std::vector<std::pair<std::string, double>> bars;
        for (const auto& r : out.rows)
            if (r.a == a && r.b == b && r.label.find('=') == std::string::npos)
                bars.emplace_back(r.label, r.mean);
        if (!bars.empty()) {
            std::ostringstream name;
            name << spec.out_dir << "/acc_a" << a << "_b" << b << ".svg";
            std::ostringstream title;
            title << "test accuracy, a=" << a << " b=" << b;
            gala::write_bar_svg(bars, title.str(), name.str());
        }
        std::vector<std::pair<std::string, double>> sweep;
        for (const auto& r : out.rows)
            if (r.a == a && r.b == b && r.label.find('=') != std::string::npos)
                sweep.emplace_back(r.label, r.mean);
        if (!sweep.empty()) {
            std::ostringstream name;
            name << spec.out_dir << "/sweep_a" << a << "_b" << b << ".svg";
            gala::write_bar_svg(sweep, "gala sweep", name.str());
        }
    }

    json provenance = {{"dataset_format_version", gala::kDatasetFormatVersion},
                       {"checkpoint_format_version", gala::kCheckpointFormatVersion},
                       {"per_class", spec.per_class},
                       {"workers", gala::suite_worker_count()},
                       {"seeds", spec.seeds}};
    json methods = json::array();
    for (gala::Method m : spec.methods) methods.push_back(gala::method_name(m));
    provenance["methods"] = methods;
    for (auto it = provenance_extra.begin(); it != provenance_extra.end(); ++it)
        provenance[it.key()] = it.value();
    std::ofstream f(spec.out_dir + "/provenance.json");
    f << provenance.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-piece graph invariance laboratory"};
    app.require_subcommand(1);

    // verify
    auto* verify = app.add_subcommand("verify", "run the exact theory checks");
    std::string verify_out = "verify_results.jsonl";
    verify->add_option("-o,--output", verify_out, "machine-readable results file (jsonl)");

    // generate
    auto* generate = app.add_subcommand("generate", "synthesize a dataset split");
    double gen_a = 0.8, gen_b = 0.9;
    int gen_per_class = 1000;
    std::uint64_t gen_seed = 1;
    std::string gen_out = "dataset.jsonl";
    generate->add_option("--a", gen_a, "invariant strength")->required();
    generate->add_option("--b", gen_b, "spurious strength")->required();
    generate->add_option("--per-class", gen_per_class, "training graphs per class");
    generate->add_option("--seed", gen_seed, "dataset seed");
    generate->add_option("-o,--output", gen_out, "output path (jsonl)");

    // train
    auto* train = app.add_subcommand("train", "train a single model");
    std::string train_data, train_method = "gala", ckpt_out, result_out;
    gala::TrainConfig tc;
    train->add_option("--data", train_data, "dataset file from `generate`")->required();
    train->add_option("--method", train_method,
                      "gala | erm | erm_interpretable | ciga_contrast | oracle_groundtruth");
    train->add_option("--lr", tc.lr, "learning rate");
    train->add_option("--batch-size", tc.batch_size, "batch size");
    train->add_option("--pretrain-epochs", tc.pretrain_epochs, "classification-only epochs");
    train->add_option("--max-epochs", tc.max_epochs, "total epoch budget");
    train->add_option("--patience", tc.early_stop_patience, "early-stop patience");
    train->add_option("--lambda", tc.penalty_weight, "contrastive penalty weight");
    train->add_option("--upsample-k", tc.upsample_k, "minority upsampling factor");
    train->add_option("--seed", tc.seed, "training seed");
    train->add_option("--assistant-epochs", tc.assistant.epochs, "assistant ERM epochs");
    train->add_option("--checkpoint", ckpt_out, "checkpoint output path");
    train->add_option("--result", result_out, "run-result record output path (json)");

    // suite
    auto* suite = app.add_subcommand("suite", "run a full experiment suite");
    std::string suite_config, suite_out_dir;
    suite->add_option("--config", suite_config, "experiment spec (json)")->required();
    suite->add_option("--out", suite_out_dir, "override the spec's output directory");

    // report
    auto* report = app.add_subcommand("report", "render the table and plots from suite results");
    std::string report_dir;
    report->add_option("--dir", report_dir, "suite output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed()) return run_verify(verify_out);

        if (generate->parsed()) {
            const gala::DatasetSplit split =
                gala::build_splits(gen_a, gen_b, gen_per_class, gen_seed);
            gala::serialize_dataset(split, gen_out);
            std::printf("wrote %zu train / %zu val / %zu test graphs to %s\n", split.train.size(),
                        split.val.size(), split.test.size(), gen_out.c_str());
            return 0;
        }

        if (train->parsed()) {
            tc.method = gala::method_from_name(train_method);
            const gala::DatasetSplit split = gala::load_dataset(train_data);
            const gala::RunResult r = gala::run(split, tc);
            std::printf("%s: test acc %.4f (val %.4f @ epoch %d, %.1fs)%s\n",
                        gala::method_name(r.method), r.test_acc, r.best_val_acc, r.selected_epoch,
                        r.wall_seconds, r.used_intraclass_pairs ? " [intra-class pairs]" : "");
            if (!result_out.empty()) {
                json h = json::array();
                for (const auto& e : r.history)
                    h.push_back({{"epoch", e.epoch},
                                 {"train_loss", e.train_loss},
                                 {"val_acc", e.val_acc}});
                const json rec = {{"method", gala::method_name(r.method)},
                                  {"test_acc", r.test_acc},
                                  {"best_val_acc", r.best_val_acc},
                                  {"selected_epoch", r.selected_epoch},
                                  {"negative_fraction", r.partition_negative_fraction},
                                  {"used_intraclass_pairs", r.used_intraclass_pairs},
                                  {"wall_seconds", r.wall_seconds},
                                  {"history", h}};
                std::ofstream f(result_out);
                f << rec.dump(2) << "\n";
            }
            if (!ckpt_out.empty()) {
                gala::Checkpoint ck;
                ck.config = r.encoder;
                ck.params = r.best_params;
                gala::Rng rng(tc.seed);
                ck.rng_state = rng.save_state();
                ck.metadata = {{"method", gala::method_name(r.method)},
                               {"selected_epoch", r.selected_epoch},
                               {"test_acc", r.test_acc}};
                gala::save_checkpoint(ck, ckpt_out);
            }
            return 0;
        }

        if (suite->parsed()) {
            std::ifstream f(suite_config);
            if (!f) throw std::runtime_error("cannot read config: " + suite_config);
            json j;
            f >> j;
            gala::ExperimentSpec spec = spec_from_json(j);
            if (!suite_out_dir.empty()) spec.out_dir = suite_out_dir;
            const gala::SuiteOutput out = gala::run_suite(spec);
            write_suite_artifacts(out, spec, {{"config_file", suite_config}});
            int failures = 0;
            for (const auto& c : out.cells)
                if (!c.error.empty()) ++failures;
            std::printf("suite: %zu cells, %d failed; artifacts in %s\n", out.cells.size(),
                        failures, spec.out_dir.c_str());
            return 0;  // per-cell failures are recorded, not fatal
        }

        if (report->parsed()) {
            // rebuild the aggregate table and plots from a results.csv
            std::ifstream f(report_dir + "/results.csv");
            if (!f) throw std::runtime_error("no results.csv in " + report_dir);
            std::string line;
            std::getline(f, line);  // header
            std::map<std::string, std::vector<double>> acc;
            std::vector<std::string> order;
            while (std::getline(f, line)) {
                std::stringstream ss(line);
                std::string kind, label, a, b, seed, test_acc;
                std::getline(ss, kind, ',');
                std::getline(ss, label, ',');
                std::getline(ss, a, ',');
                std::getline(ss, b, ',');
                std::getline(ss, seed, ',');
                std::getline(ss, test_acc, ',');
                const std::string key = label + " (a=" + a + ",b=" + b + ")";
                if (!acc.count(key)) order.push_back(key);
                acc[key].push_back(std::stod(test_acc));
            }
            std::vector<std::pair<std::string, double>> bars;
            std::printf("%-48s %8s %8s\n", "cell", "mean", "std");
            for (const std::string& key : order) {
                const auto& v = acc[key];
                double mean = 0.0;
                for (double x : v) mean += x;
                mean /= static_cast<double>(v.size());
                double sq = 0.0;
                for (double x : v) sq += (x - mean) * (x - mean);
                const double sd = v.size() > 1 ? std::sqrt(sq / (static_cast<double>(v.size()) - 1)) : 0.0;
                std::printf("%-48s %8.4f %8.4f\n", key.c_str(), mean, sd);
                bars.emplace_back(key, mean);
            }
            gala::write_bar_svg(bars, "test accuracy by cell", report_dir + "/report.svg");
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
