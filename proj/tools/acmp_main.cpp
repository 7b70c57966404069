// Command-line front end: train reference models, compress them, evaluate
// reference/compressed misalignment, compare reports, and sweep loss x scheme
// grids. See README.md for config examples.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "acmp/checkpoint.hpp"
#include "acmp/config.hpp"
#include "acmp/experiment.hpp"
#include "acmp/metrics.hpp"

namespace fs = std::filesystem;

namespace {

struct GlobalFlags {
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
    std::string format = "json";
};

acmp::ExperimentConfig load_with_overrides(const std::string& config_path, const GlobalFlags& g,
                                           const std::string& out_override) {
    acmp::ExperimentConfig cfg = acmp::load_config(config_path);
    if (g.seed_set) {
        cfg.seed = g.seed;
        cfg.dataset.seed = g.seed;
    }
    if (!out_override.empty())
        cfg.out_dir = out_override;
    return cfg;
}

nlohmann::json report_brief(const acmp::MisalignmentReport& r) {
    nlohmann::json j;
    j["accuracy_ref"] = r.accuracy_ref;
    j["accuracy_comp"] = r.accuracy_comp;
    j["cie"] = r.cie_count;
    j["cie_u"] = r.cie_u_count;
    j["cip"] = r.cip_count;
    j["gap_comp"] = r.max_min_gap_comp;
    j["mean_attr_iou"] = r.mean_attr_iou;
    j["dice_comp"] = r.dice_comp;
    j["sparsity"] = r.sparsity;
    return j;
}

void print_brief(const acmp::MisalignmentReport& r, const std::string& format) {
    if (format == "csv") {
        acmp::CsvTable t;
        const nlohmann::json j = report_brief(r);
        for (const auto& [key, value] : j.items()) {
            t.header.push_back(key);
            t.rows.resize(1);
            t.rows[0].push_back(value.dump());
        }
        acmp::write_csv(std::cout, t);
    } else {
        std::cout << report_brief(r).dump(2) << "\n";
    }
}

int cmd_train(const std::string& config_path, const GlobalFlags& g, const std::string& out) {
    const acmp::ExperimentConfig cfg = load_with_overrides(config_path, g, out);
    const fs::path root = fs::path(cfg.out_dir) / cfg.experiment;
    fs::create_directories(root);
    const acmp::Dataset ds = acmp::make_dataset(cfg.dataset);
    const acmp::ReferenceResult ref = acmp::train_reference(cfg, ds);
    acmp::save_checkpoint(ref.net, (root / "reference.ckpt").string());
    acmp::write_csv((root / "reference_log.csv").string(),
                    acmp::train_log_to_csv(ref.log, ds.segmentation));
    std::cout << "reference checkpoint: " << (root / "reference.ckpt").string() << "\n";
    if (!ref.log.empty())
        std::cout << (ds.segmentation ? "eval dice: " : "eval accuracy: ")
                  << ref.log.back().eval_metric << "\n";
    return 0;
}

int cmd_compress(const std::string& config_path, const std::string& reference_path,
                 const GlobalFlags& g, const std::string& out) {
    const acmp::ExperimentConfig cfg = load_with_overrides(config_path, g, out);
    const fs::path root = fs::path(cfg.out_dir) / cfg.experiment;
    fs::create_directories(root);
    const acmp::Network reference = acmp::load_checkpoint(reference_path);
    const acmp::Dataset ds = acmp::make_dataset(cfg.dataset);
    const std::uint64_t seed = g.seed_set ? g.seed : cfg.seeds.front();
    acmp::CompressionResult res = acmp::compress(reference, cfg.compression, cfg.loss,
                                                 cfg.weighting, cfg.train, ds, seed);
    acmp::save_checkpoint(res.net, (root / "compressed.ckpt").string());
    acmp::write_csv((root / "steps.csv").string(), acmp::steps_to_csv(res.steps));
    const acmp::MisalignmentReport rep = acmp::build_report(reference, res.net, ds);
    acmp::save_report(rep, (root / "report.json").string());
    std::cout << "compressed checkpoint: " << (root / "compressed.ckpt").string() << "\n";
    print_brief(rep, g.format);
    return 0;
}

int cmd_evaluate(const std::string& reference_path, const std::string& compressed_path,
                 const std::string& dataset_path, const GlobalFlags& g, const std::string& out,
                 int dump_attributions) {
    std::ifstream is(dataset_path);
    if (!is)
        throw acmp::IoError("cannot read dataset spec: " + dataset_path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw acmp::ConfigError("malformed dataset spec: " + std::string(e.what()));
    }
    acmp::DatasetSpec spec = acmp::parse_dataset_spec(j);
    if (g.seed_set)
        spec.seed = g.seed;
    const acmp::Dataset ds = acmp::make_dataset(spec);
    const acmp::Network reference = acmp::load_checkpoint(reference_path);
    const acmp::Network compressed = acmp::load_checkpoint(compressed_path);
    const acmp::MisalignmentReport rep = acmp::build_report(reference, compressed, ds);
    fs::create_directories(out);
    acmp::save_report(rep, (fs::path(out) / "report.json").string());
    if (dump_attributions > 0) {
        const fs::path dir = fs::path(out) / "attributions";
        fs::create_directories(dir);
        const std::size_t per = ds.eval_inputs.size() / std::max<std::size_t>(ds.eval_size(), 1);
        const std::size_t n =
            std::min<std::size_t>(static_cast<std::size_t>(dump_attributions), ds.eval_size());
        for (std::size_t i = 0; i < n; ++i) {
            acmp::Tensor one;
            one.shape = ds.eval_inputs.shape;
            one.shape[0] = 1;
            one.data.assign(ds.eval_inputs.data.begin() + static_cast<long>(i * per),
                            ds.eval_inputs.data.begin() + static_cast<long>((i + 1) * per));
            acmp::write_pgm(acmp::saliency(reference, one),
                            (dir / ("img" + std::to_string(i) + "_reference.pgm")).string());
            acmp::write_pgm(acmp::saliency(compressed, one),
                            (dir / ("img" + std::to_string(i) + "_compressed.pgm")).string());
        }
    }
    std::cout << "report: " << (fs::path(out) / "report.json").string() << "\n";
    print_brief(rep, g.format);
    return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path, const GlobalFlags& g) {
    const acmp::MisalignmentReport a = acmp::load_report(a_path);
    const acmp::MisalignmentReport b = acmp::load_report(b_path);
    const acmp::DeltaSummary d = acmp::compare_reports(a, b);
    if (g.format == "csv")
        acmp::write_csv(std::cout, acmp::delta_to_csv(d));
    else
        std::cout << acmp::delta_to_json(d).dump(2) << "\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const GlobalFlags& g, const std::string& out,
              int seeds_override) {
    acmp::ExperimentConfig cfg = load_with_overrides(config_path, g, out);
    if (seeds_override > 0) {
        cfg.seeds.clear();
        for (int i = 1; i <= seeds_override; ++i)
            cfg.seeds.push_back(static_cast<std::uint64_t>(i));
    }
    const std::vector<acmp::CellOutcome> outcomes = acmp::run_experiment(cfg, g.threads);
    int failures = 0;
    for (const acmp::CellOutcome& o : outcomes)
        if (o.status != "ok")
            ++failures;
    const fs::path root = fs::path(cfg.out_dir) / cfg.experiment;
    std::cout << "cells: " << outcomes.size() << ", failed: " << failures << "\n"
              << "summary: " << (root / "summary.csv").string() << "\n"
              << "aggregate: " << (root / "aggregate.csv").string() << "\n";
    return failures == 0 ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"alignment-preserving model compression toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalFlags g;
    app.add_option("--seed", g.seed, "override the config seed")->each([&g](const std::string&) {
        g.seed_set = true;
    });
    app.add_option("--threads", g.threads, "worker threads for grid sweeps")
        ->check(CLI::PositiveNumber);
    app.add_option("--format", g.format, "stdout format")
        ->check(CLI::IsMember({"json", "csv"}));

    std::string config_path, out_dir, reference_path, compressed_path, dataset_path;
    std::string a_path, b_path;
    int dump_attributions = 0;
    int seeds_override = 0;

    CLI::App* train = app.add_subcommand("train", "train a reference model");
    train->add_option("--config", config_path, "experiment config json")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--out", out_dir, "output directory (overrides config)");

    CLI::App* compress = app.add_subcommand("compress", "compress a trained reference");
    compress->add_option("--config", config_path, "experiment config json")
        ->required()
        ->check(CLI::ExistingFile);
    compress->add_option("--reference", reference_path, "reference checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    compress->add_option("--out", out_dir, "output directory (overrides config)");

    CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate misalignment metrics");
    evaluate->add_option("--reference", reference_path, "reference checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    evaluate->add_option("--compressed", compressed_path, "compressed checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    evaluate->add_option("--dataset", dataset_path, "dataset spec json")
        ->required()
        ->check(CLI::ExistingFile);
    evaluate->add_option("--out", out_dir, "output directory")->required();
    evaluate->add_option("--dump-attributions", dump_attributions,
                         "write the first N attribution pairs as PGM images");

    CLI::App* compare = app.add_subcommand("compare", "compare two reports");
    compare->add_option("--a", a_path, "first report.json")->required()->check(CLI::ExistingFile);
    compare->add_option("--b", b_path, "second report.json")->required()->check(CLI::ExistingFile);

    CLI::App* sweep = app.add_subcommand("sweep", "run the full loss x scheme grid");
    sweep->add_option("--config", config_path, "experiment config json")
        ->required()
        ->check(CLI::ExistingFile);
    sweep->add_option("--out", out_dir, "output directory (overrides config)");
    sweep->add_option("--seeds", seeds_override, "run seeds 1..N (overrides config seeds)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed())
            return cmd_train(config_path, g, out_dir);
        if (compress->parsed())
            return cmd_compress(config_path, reference_path, g, out_dir);
        if (evaluate->parsed())
            return cmd_evaluate(reference_path, compressed_path, dataset_path, g, out_dir,
                                dump_attributions);
        if (compare->parsed())
            return cmd_compare(a_path, b_path, g);
        if (sweep->parsed())
            return cmd_sweep(config_path, g, out_dir, seeds_override);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
