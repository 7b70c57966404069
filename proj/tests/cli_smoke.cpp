// End-to-end drive of the CLI binary: train -> compress -> evaluate ->
// compare -> sweep, checking exit codes and that every emitted CSV parses
// back. The binary path arrives as argv[1].

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <json.hpp>

#include "acmp/csv.hpp"
#include "acmp/metrics.hpp"

namespace fs = std::filesystem;

namespace {

int failures = 0;

void check(bool ok, const std::string& what) {
    std::cout << (ok ? "[ok] " : "[FAIL] ") << what << "\n";
    if (!ok)
        ++failures;
}

int run(const std::string& cmd) {
    const int rc = std::system(cmd.c_str());
    return rc;
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: cli_smoke <path-to-acmp-binary>\n";
        return 2;
    }
    const std::string cli = argv[1];
    const fs::path work = fs::temp_directory_path() / "acmp_cli_smoke";
    fs::remove_all(work);
    fs::create_directories(work);

    const nlohmann::json cfg{
        {"experiment", "smoke"},
        {"seed", 3},
        {"out_dir", (work / "out").string()},
        {"dataset",
         {{"kind", "blobs"}, {"classes", 3}, {"dim", 2}, {"train_per_class", 20},
          {"eval_per_class", 20}, {"spread", 0.25}}},
        {"model", {{"kind", "mlp"}, {"hidden", {10}}}},
        {"train", {{"epochs", 12}, {"lr", 0.1}, {"batch_size", 16}}},
        {"compression",
         {{"method", "magnitude"}, {"per_step_fraction", 0.2}, {"num_steps", 2},
          {"finetune_epochs_per_step", 4}}},
        {"loss", {{"terms", {"ce", "mse"}}}},
        {"weighting", {{"scheme", "uniform"}}},
        {"grid",
         {{"subsets", {{"ce"}, {"ce", "mse"}}}, {"schemes", {"uniform", "round_robin"}}}},
        {"seeds", {1, 2}}};
    const std::string cfg_path = (work / "cfg.json").string();
    std::ofstream(cfg_path) << cfg.dump(2);

    nlohmann::json ds = cfg.at("dataset");
    ds["seed"] = 3;
    const std::string ds_path = (work / "ds.json").string();
    std::ofstream(ds_path) << ds.dump(2);

    const fs::path out = work / "out" / "smoke";
    check(run(cli + " train --config " + cfg_path) == 0, "train exits 0");
    check(fs::exists(out / "reference.ckpt"), "reference checkpoint written");
    check(fs::exists(out / "reference_log.csv"), "training log written");

    check(run(cli + " compress --config " + cfg_path + " --reference " +
              (out / "reference.ckpt").string()) == 0,
          "compress exits 0");
    check(fs::exists(out / "compressed.ckpt"), "compressed checkpoint written");
    check(fs::exists(out / "report.json"), "compress-time report written");

    const std::string eval_out = (work / "eval").string();
    check(run(cli + " evaluate --reference " + (out / "reference.ckpt").string() +
              " --compressed " + (out / "compressed.ckpt").string() + " --dataset " + ds_path +
              " --out " + eval_out + " --dump-attributions 2 > " + (work / "eval.txt").string()) ==
              0,
          "evaluate exits 0");
    check(fs::exists(fs::path(eval_out) / "report.json"), "evaluate report written");
    check(fs::exists(fs::path(eval_out) / "attributions" / "img0_reference.pgm"),
          "attribution pgm written");

    // The evaluate-from-spec report must match the compress-time report.
    try {
        const acmp::MisalignmentReport a = acmp::load_report((out / "report.json").string());
        const acmp::MisalignmentReport b =
            acmp::load_report((fs::path(eval_out) / "report.json").string());
        check(a.cie_count == b.cie_count && a.label_hash == b.label_hash,
              "evaluate rebuilt the identical eval split");
    } catch (const std::exception& e) {
        check(false, std::string("report load: ") + e.what());
    }

    check(run(cli + " compare --a " + (out / "report.json").string() + " --b " +
              (fs::path(eval_out) / "report.json").string() + " > " +
              (work / "compare.json").string()) == 0,
          "compare exits 0");
    {
        std::ifstream is(work / "compare.json");
        nlohmann::json j;
        is >> j;
        check(j.at("cie_ratio") == 1.0, "self-comparison ratio is 1.0");
    }
    check(run(cli + " compare --a " + (out / "report.json").string() + " --b " +
              (fs::path(eval_out) / "report.json").string() + " --format csv > " +
              (work / "compare.csv").string()) == 0,
          "compare --format csv exits 0");

    check(run(cli + " sweep --config " + cfg_path + " --threads 2 > " +
              (work / "sweep.txt").string()) == 0,
          "sweep exits 0");
    int reports = 0;
    for (const auto& e : fs::recursive_directory_iterator(out))
        if (e.path().filename() == "report.json")
            ++reports;
    check(reports >= 2 * 2 * 2, "sweep wrote a report per (subset x scheme x seed)");

    // Every emitted CSV parses back with the toolkit's own reader.
    for (const char* name : {"reference_log.csv", "summary.csv", "aggregate.csv", "steps.csv"}) {
        bool parsed = true;
        int found = 0;
        try {
            for (const auto& e : fs::recursive_directory_iterator(work))
                if (e.path().filename() == name) {
                    ++found;
                    acmp::read_csv(e.path().string());
                }
        } catch (const std::exception&) {
            parsed = false;
        }
        check(parsed && found > 0, std::string("csv round-trip: ") + name);
    }

    // Bad inputs fail loudly.
    check(run(cli + " train --config /nonexistent.json 2> /dev/null") != 0,
          "missing config is an error");
    std::ofstream(work / "bad.json") << "{\"experiment\": \"x\", \"nope\": 1}";
    check(run(cli + " train --config " + (work / "bad.json").string() + " 2> /dev/null") != 0,
          "unknown config key is an error");

    if (failures == 0)
        fs::remove_all(work);
    std::cout << (failures ? "FAILED" : "PASSED") << " cli smoke (" << failures << " failures)\n";
    return failures == 0 ? 0 : 1;
}
