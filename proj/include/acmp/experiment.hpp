#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "acmp/checkpoint.hpp"
#include "acmp/compression.hpp"
#include "acmp/config.hpp"
#include "acmp/csv.hpp"
#include "acmp/metrics.hpp"
#include "acmp/train.hpp"

namespace acmp {

struct ReferenceResult {
    Network net;
    std::vector<TrainLogRow> log;
};

inline CsvTable train_log_to_csv(const std::vector<TrainLogRow>& log, bool segmentation) {
    CsvTable t;
    t.header = {"epoch", "loss", segmentation ? "train_dice" : "train_accuracy",
                segmentation ? "eval_dice" : "eval_accuracy"};
    for (const TrainLogRow& row : log)
        t.rows.push_back({std::to_string(row.epoch), format_double(row.loss),
                          format_double(row.train_metric), format_double(row.eval_metric)});
    return t;
}

// Trains the reference model with conventional cross entropy.
inline ReferenceResult train_reference(const ExperimentConfig& cfg, const Dataset& ds) {
    ReferenceResult out;
    out.net = make_model(cfg);
    FitOptions opts;
    opts.loss.terms = {LossTerm::CE};
    opts.weighting.scheme = WeightScheme::Uniform;
    opts.seed = cfg.seed;
    opts.rng_tag = "reference";
    out.log = fit(out.net, ds, cfg.train, opts);
    return out;
}

struct CellSpec {
    std::vector<LossTerm> terms;
    WeightScheme scheme = WeightScheme::Uniform;
};

inline std::string cell_name(const CellSpec& cell) {
    std::string name = weight_scheme_name(cell.scheme);
    for (const LossTerm t : cell.terms)
        name += std::string("_") + loss_term_name(t);
    return name;
}

inline std::vector<CellSpec> grid_cells(const ExperimentConfig& cfg) {
    std::vector<CellSpec> cells;
    const std::vector<std::vector<LossTerm>> subsets =
        cfg.grid_subsets.empty() ? std::vector<std::vector<LossTerm>>{cfg.loss.terms}
                                 : cfg.grid_subsets;
    const std::vector<WeightScheme> schemes =
        cfg.grid_schemes.empty() ? std::vector<WeightScheme>{cfg.weighting.scheme}
                                 : cfg.grid_schemes;
    for (const auto& terms : subsets)
        for (const WeightScheme s : schemes)
            cells.push_back({terms, s});
    return cells;
}

struct CellOutcome {
    CellSpec cell;
    std::uint64_t seed = 0;
    std::string status = "ok";  // or the error message
    MisalignmentReport report;
    std::vector<StepLog> steps;
};

inline CsvTable steps_to_csv(const std::vector<StepLog>& steps) {
    CsvTable t;
    t.header = {"step", "sparsity", "loss_ce", "loss_mse", "loss_ce_pred", "loss_kd", "accuracy",
                "cie_count"};
    for (const StepLog& s : steps) {
        const auto term = [&s](LossTerm lt) {
            const auto it = s.losses.find(lt);
            return it == s.losses.end() ? std::string() : format_double(it->second);
        };
        t.rows.push_back({std::to_string(s.step), format_double(s.sparsity), term(LossTerm::CE),
                          term(LossTerm::MSE), term(LossTerm::CEPred), term(LossTerm::KD),
                          format_double(s.accuracy), std::to_string(s.cie_count)});
    }
    return t;
}

// One grid cell: compress against the shared reference with the cell's loss
// subset and weighting scheme, then evaluate misalignment.
inline CellOutcome run_cell(const ExperimentConfig& cfg, const Network& reference,
                            const Dataset& ds, const CellSpec& cell, std::uint64_t seed) {
    CellOutcome out;
    out.cell = cell;
    out.seed = seed;
    try {
        LossConfig loss = cfg.loss;
        loss.terms = cell.terms;
        WeightingConfig weighting = cfg.weighting;
        weighting.scheme = cell.scheme;
        CompressionResult res =
            compress(reference, cfg.compression, loss, weighting, cfg.train, ds, seed);
        out.steps = std::move(res.steps);
        out.report = build_report(reference, res.net, ds);
    } catch (const std::exception& e) {
        out.status = std::string("error: ") + e.what();
    }
    return out;
}

inline double median_of(std::vector<double> v) {
    if (v.empty())
        return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline CsvTable summary_to_csv(const std::vector<CellOutcome>& outcomes) {
    CsvTable t;
    t.header = {"cell",    "scheme",  "terms",   "seed",     "status",        "sparsity",
                "accuracy_ref", "accuracy_comp", "cie",      "cie_u",    "cip",           "cip_u",
                "gap_ref", "gap_comp", "mean_attr_iou", "dice_ref", "dice_comp"};
    for (const CellOutcome& o : outcomes) {
        std::string terms;
        for (const LossTerm lt : o.cell.terms)
            terms += (terms.empty() ? "" : "+") + std::string(loss_term_name(lt));
        const MisalignmentReport& r = o.report;
        t.rows.push_back({cell_name(o.cell), weight_scheme_name(o.cell.scheme), terms,
                          std::to_string(o.seed), o.status, format_double(r.sparsity),
                          format_double(r.accuracy_ref), format_double(r.accuracy_comp),
                          std::to_string(r.cie_count), std::to_string(r.cie_u_count),
                          std::to_string(r.cip_count), std::to_string(r.cip_u_count),
                          format_double(r.max_min_gap_ref), format_double(r.max_min_gap_comp),
                          format_double(r.mean_attr_iou), format_double(r.dice_ref),
                          format_double(r.dice_comp)});
    }
    return t;
}

// Per-cell median/min/max across seeds, long format (box-plot data).
inline CsvTable aggregate_to_csv(const std::vector<CellOutcome>& outcomes) {
    const std::vector<std::pair<std::string, std::function<double(const MisalignmentReport&)>>>
        metrics{{"cie", [](const MisalignmentReport& r) { return static_cast<double>(r.cie_count); }},
                {"cie_u",
                 [](const MisalignmentReport& r) { return static_cast<double>(r.cie_u_count); }},
                {"cip", [](const MisalignmentReport& r) { return static_cast<double>(r.cip_count); }},
                {"accuracy_comp", [](const MisalignmentReport& r) { return r.accuracy_comp; }},
                {"gap_comp", [](const MisalignmentReport& r) { return r.max_min_gap_comp; }},
                {"mean_attr_iou", [](const MisalignmentReport& r) { return r.mean_attr_iou; }},
                {"dice_comp", [](const MisalignmentReport& r) { return r.dice_comp; }},
                {"sparsity", [](const MisalignmentReport& r) { return r.sparsity; }}};
    // Group outcomes by cell, preserving first-seen order.
    std::vector<std::string> order;
    std::map<std::string, std::vector<const CellOutcome*>> by_cell;
    for (const CellOutcome& o : outcomes) {
        const std::string name = cell_name(o.cell);
        if (!by_cell.count(name))
            order.push_back(name);
        by_cell[name].push_back(&o);
    }
    CsvTable t;
    t.header = {"cell", "metric", "median", "min", "max"};
    for (const std::string& name : order) {
        for (const auto& [metric, get] : metrics) {
            std::vector<double> values;
            for (const CellOutcome* o : by_cell[name])
                if (o->status == "ok")
                    values.push_back(get(o->report));
            if (values.empty())
                continue;
            const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
            t.rows.push_back({name, metric, format_double(median_of(values)), format_double(*mn),
                              format_double(*mx)});
        }
    }
    return t;
}

// Full grid: one shared reference, then (subset x scheme x seed) cells, each
// starting from the identical reference checkpoint. Cells are independent and
// may run on a small worker pool; outputs are written per cell, and the
// summary is assembled in deterministic order after all cells finish.
inline std::vector<CellOutcome> run_experiment(const ExperimentConfig& cfg, int threads = 1) {
    namespace fs = std::filesystem;
    const fs::path root = fs::path(cfg.out_dir) / cfg.experiment;
    fs::create_directories(root);

    const Dataset ds = make_dataset(cfg.dataset);
    const ReferenceResult ref = train_reference(cfg, ds);
    save_checkpoint(ref.net, (root / "reference.ckpt").string());
    write_csv((root / "reference_log.csv").string(), train_log_to_csv(ref.log, ds.segmentation));

    struct Unit {
        CellSpec cell;
        std::uint64_t seed;
    };
    std::vector<Unit> units;
    for (const CellSpec& cell : grid_cells(cfg))
        for (const std::uint64_t seed : cfg.seeds)
            units.push_back({cell, seed});

    std::vector<CellOutcome> outcomes(units.size());
    std::atomic<std::size_t> next{0};
    const int workers = std::max(1, threads);
    const auto worker = [&]() {
        // Each worker owns a private copy of the reference: report assembly
        // runs saliency backward passes through it.
        const Network reference = ref.net;
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= units.size())
                return;
            outcomes[i] = run_cell(cfg, reference, ds, units[i].cell, units[i].seed);
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < workers; ++i)
            pool.emplace_back(worker);
        for (std::thread& th : pool)
            th.join();
    }

    for (const CellOutcome& o : outcomes) {
        const fs::path dir = root / cell_name(o.cell) / std::to_string(o.seed);
        fs::create_directories(dir);
        if (o.status == "ok") {
            save_report(o.report, (dir / "report.json").string());
            write_csv((dir / "steps.csv").string(), steps_to_csv(o.steps));
        } else {
            std::ofstream err(dir / "error.txt");
            err << o.status << "\n";
        }
    }
    write_csv((root / "summary.csv").string(), summary_to_csv(outcomes));
    write_csv((root / "aggregate.csv").string(), aggregate_to_csv(outcomes));
    return outcomes;
}

// Ratio and delta comparison of two reports over the same eval split.
struct DeltaSummary {
    double cie_ratio = 1.0;     // a/b; inf when b == 0 and a > 0
    double cie_u_ratio = 1.0;
    double cip_ratio = 1.0;
    double accuracy_delta = 0.0;  // a - b, compressed accuracy
    double gap_delta = 0.0;       // a - b, max-min gap of the compressed model
    double iou_delta = 0.0;       // a - b, mean attribution IoU
    double dice_delta = 0.0;      // a - b, compressed dice
};

inline DeltaSummary compare_reports(const MisalignmentReport& a, const MisalignmentReport& b) {
    if (a.label_hash != b.label_hash || a.n_eval != b.n_eval ||
        a.dataset_name != b.dataset_name || a.dataset_seed != b.dataset_seed)
        throw DomainError("reports were built on different evaluation splits");
    const auto ratio = [](long x, long y) {
        if (y == 0)
            return x == 0 ? 1.0 : std::numeric_limits<double>::infinity();
        return static_cast<double>(x) / static_cast<double>(y);
    };
    DeltaSummary d;
    d.cie_ratio = ratio(a.cie_count, b.cie_count);
    d.cie_u_ratio = ratio(a.cie_u_count, b.cie_u_count);
    d.cip_ratio = ratio(a.cip_count, b.cip_count);
    d.accuracy_delta = a.accuracy_comp - b.accuracy_comp;
    d.gap_delta = a.max_min_gap_comp - b.max_min_gap_comp;
    d.iou_delta = a.mean_attr_iou - b.mean_attr_iou;
    d.dice_delta = a.dice_comp - b.dice_comp;
    return d;
}

inline nlohmann::json delta_to_json(const DeltaSummary& d) {
    const auto ratio_field = [](double v) -> nlohmann::json {
        if (std::isinf(v))
            return "inf";
        return v;
    };
    nlohmann::json j;
    j["cie_ratio"] = ratio_field(d.cie_ratio);
    j["cie_u_ratio"] = ratio_field(d.cie_u_ratio);
    j["cip_ratio"] = ratio_field(d.cip_ratio);
    j["accuracy_delta"] = d.accuracy_delta;
    j["gap_delta"] = d.gap_delta;
    j["iou_delta"] = d.iou_delta;
    j["dice_delta"] = d.dice_delta;
    return j;
}

inline CsvTable delta_to_csv(const DeltaSummary& d) {
    const auto ratio_field = [](double v) {
        return std::isinf(v) ? std::string("inf") : format_double(v);
    };
    CsvTable t;
    t.header = {"cie_ratio", "cie_u_ratio", "cip_ratio", "accuracy_delta", "gap_delta",
                "iou_delta", "dice_delta"};
    t.rows.push_back({ratio_field(d.cie_ratio), ratio_field(d.cie_u_ratio),
                      ratio_field(d.cip_ratio), format_double(d.accuracy_delta),
                      format_double(d.gap_delta), format_double(d.iou_delta),
                      format_double(d.dice_delta)});
    return t;
}

} // namespace acmp
