#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "acmp/compression.hpp"
#include "acmp/dataset.hpp"
#include "acmp/errors.hpp"
#include "acmp/losses.hpp"
#include "acmp/network.hpp"
#include "acmp/train.hpp"
#include "acmp/weighting.hpp"

namespace acmp {

struct DatasetSpec {
    std::string kind = "blobs";  // "blobs" | "seg_blobs"
    std::string name;
    // blobs
    int classes = 8;
    int dim = 2;
    std::vector<int> train_per_class;  // empty -> filled from train_count
    std::vector<int> eval_per_class;
    int train_count = 50;  // per-class default when no vector given
    int eval_count = 50;
    double spread = 0.25;
    // seg_blobs
    int images = 64;
    int height = 16, width = 16;
    std::uint64_t seed = 1;
};

struct ModelSpec {
    std::string kind = "mlp";  // "mlp" | "conv"
    std::vector<int> hidden{64, 64};
    std::vector<int> widths{6, 6};
};

struct ExperimentConfig {
    std::string experiment = "experiment";
    DatasetSpec dataset;
    ModelSpec model;
    TrainSchedule train;
    CompressionPlan compression;
    LossConfig loss;            // single-cell default
    WeightingConfig weighting;  // single-cell default
    std::vector<std::vector<LossTerm>> grid_subsets;
    std::vector<WeightScheme> grid_schemes;
    std::vector<std::uint64_t> seeds{1};
    std::uint64_t seed = 1;
    std::string out_dir = "out";
};

namespace detail {

inline void expect_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                        const std::string& context) {
    if (!j.is_object())
        throw ConfigError(context + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a)
                ok = true;
        if (!ok)
            throw ConfigError("unknown key '" + key + "' in " + context);
    }
}

inline LossTerm term_from_string(const std::string& s) {
    if (s == "ce")
        return LossTerm::CE;
    if (s == "mse")
        return LossTerm::MSE;
    if (s == "ce_pred" || s == "cepred")
        return LossTerm::CEPred;
    if (s == "kd")
        return LossTerm::KD;
    throw ConfigError("unknown loss term '" + s + "'");
}

inline WeightScheme scheme_from_string(const std::string& s) {
    if (s == "uniform")
        return WeightScheme::Uniform;
    if (s == "learnable")
        return WeightScheme::Learnable;
    if (s == "softadapt")
        return WeightScheme::SoftAdapt;
    if (s == "round_robin")
        return WeightScheme::RoundRobin;
    if (s == "random")
        return WeightScheme::Random;
    throw ConfigError("unknown weighting scheme '" + s + "'");
}

inline std::vector<int> int_or_array(const nlohmann::json& j, int classes,
                                     const std::string& context) {
    std::vector<int> out;
    if (j.is_number_integer()) {
        out.assign(static_cast<std::size_t>(classes), j.get<int>());
    } else if (j.is_array()) {
        out = j.get<std::vector<int>>();
        if (out.size() != static_cast<std::size_t>(classes))
            throw ConfigError(context + " must list one count per class");
    } else {
        throw ConfigError(context + " must be an integer or an array");
    }
    return out;
}

} // namespace detail

inline DatasetSpec parse_dataset_spec(const nlohmann::json& j) {
    detail::expect_keys(j,
                        {"kind", "name", "classes", "dim", "train_per_class", "eval_per_class",
                         "spread", "images", "height", "width", "seed"},
                        "dataset");
    DatasetSpec ds;
    ds.kind = j.value("kind", ds.kind);
    if (ds.kind != "blobs" && ds.kind != "seg_blobs")
        throw ConfigError("dataset.kind must be 'blobs' or 'seg_blobs'");
    ds.name = j.value("name", ds.kind);
    ds.classes = j.value("classes", ds.kind == "blobs" ? 8 : 2);
    ds.dim = j.value("dim", ds.dim);
    ds.spread = j.value("spread", ds.spread);
    ds.images = j.value("images", ds.images);
    ds.height = j.value("height", ds.height);
    ds.width = j.value("width", ds.width);
    ds.seed = j.value("seed", ds.seed);
    if (j.contains("train_per_class"))
        ds.train_per_class = detail::int_or_array(j.at("train_per_class"), ds.classes,
                                                  "dataset.train_per_class");
    if (j.contains("eval_per_class"))
        ds.eval_per_class =
            detail::int_or_array(j.at("eval_per_class"), ds.classes, "dataset.eval_per_class");
    if (ds.kind == "seg_blobs" && ds.classes != 2)
        throw ConfigError("seg_blobs datasets are binary (classes must be 2)");
    return ds;
}

inline nlohmann::json dataset_spec_to_json(const DatasetSpec& ds) {
    nlohmann::json j;
    j["kind"] = ds.kind;
    j["name"] = ds.name;
    j["seed"] = ds.seed;
    if (ds.kind == "blobs") {
        j["classes"] = ds.classes;
        j["dim"] = ds.dim;
        j["spread"] = ds.spread;
        j["train_per_class"] = ds.train_per_class.empty()
                                   ? nlohmann::json(ds.train_count)
                                   : nlohmann::json(ds.train_per_class);
        j["eval_per_class"] = ds.eval_per_class.empty() ? nlohmann::json(ds.eval_count)
                                                        : nlohmann::json(ds.eval_per_class);
    } else {
        j["images"] = ds.images;
        j["height"] = ds.height;
        j["width"] = ds.width;
    }
    return j;
}

inline Dataset make_dataset(const DatasetSpec& spec) {
    if (spec.kind == "seg_blobs")
        return gen_seg_blobs(spec.images, spec.height, spec.width, spec.seed, spec.name);
    std::vector<int> train = spec.train_per_class;
    if (train.empty())
        train.assign(static_cast<std::size_t>(spec.classes), spec.train_count);
    std::vector<int> eval = spec.eval_per_class;
    if (eval.empty())
        eval.assign(static_cast<std::size_t>(spec.classes), spec.eval_count);
    return gen_blobs(spec.classes, train, eval, spec.dim, spec.spread, spec.seed, spec.name);
}

inline ModelSpec parse_model_spec(const nlohmann::json& j) {
    detail::expect_keys(j, {"kind", "hidden", "widths"}, "model");
    ModelSpec m;
    m.kind = j.value("kind", m.kind);
    if (m.kind != "mlp" && m.kind != "conv")
        throw ConfigError("model.kind must be 'mlp' or 'conv'");
    if (j.contains("hidden"))
        m.hidden = j.at("hidden").get<std::vector<int>>();
    if (j.contains("widths"))
        m.widths = j.at("widths").get<std::vector<int>>();
    return m;
}

inline TrainSchedule parse_train_schedule(const nlohmann::json& j) {
    detail::expect_keys(j,
                        {"epochs", "lr", "lr_decay_milestones", "lr_decay_factor", "momentum",
                         "weight_decay", "batch_size"},
                        "train");
    TrainSchedule s;
    s.epochs = j.value("epochs", s.epochs);
    s.lr = j.value("lr", s.lr);
    if (j.contains("lr_decay_milestones"))
        s.lr_milestones = j.at("lr_decay_milestones").get<std::vector<int>>();
    s.lr_decay_factor = j.value("lr_decay_factor", s.lr_decay_factor);
    s.momentum = j.value("momentum", s.momentum);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    s.batch_size = j.value("batch_size", s.batch_size);
    if (s.epochs < 0 || !(s.lr > 0.0) || s.batch_size < 1)
        throw ConfigError("train schedule needs epochs >= 0, lr > 0, batch_size >= 1");
    return s;
}

inline CompressionPlan parse_compression_plan(const nlohmann::json& j) {
    detail::expect_keys(j,
                        {"method", "per_step_fraction", "num_steps", "finetune_epochs_per_step",
                         "scope", "step_mode", "lambda", "lr_ratio", "column_threshold",
                         "adapter_layers"},
                        "compression");
    CompressionPlan p;
    const std::string method = j.value("method", std::string("magnitude"));
    if (method == "magnitude")
        p.method = CompressionMethod::Magnitude;
    else if (method == "group_sparsity")
        p.method = CompressionMethod::GroupSparsity;
    else
        throw ConfigError("compression.method must be 'magnitude' or 'group_sparsity'");
    p.per_step_fraction = j.value("per_step_fraction", p.per_step_fraction);
    p.num_steps = j.value("num_steps", p.num_steps);
    p.finetune_epochs_per_step = j.value("finetune_epochs_per_step", p.finetune_epochs_per_step);
    const std::string scope = j.value("scope", std::string("per_layer"));
    if (scope == "per_layer")
        p.scope = PruneScope::PerLayer;
    else if (scope == "global")
        p.scope = PruneScope::Global;
    else
        throw ConfigError("compression.scope must be 'per_layer' or 'global'");
    const std::string mode = j.value("step_mode", std::string("fraction_of_survivors"));
    if (mode == "fraction_of_survivors")
        p.step_mode = PruneStepMode::FractionOfSurvivors;
    else if (mode == "add_percentage_points")
        p.step_mode = PruneStepMode::AddPercentagePoints;
    else
        throw ConfigError(
            "compression.step_mode must be 'fraction_of_survivors' or 'add_percentage_points'");
    p.lambda = j.value("lambda", p.lambda);
    p.lr_ratio = j.value("lr_ratio", p.lr_ratio);
    p.column_threshold = j.value("column_threshold", p.column_threshold);
    if (j.contains("adapter_layers"))
        p.adapter_layers = j.at("adapter_layers").get<std::vector<int>>();
    if (!(p.per_step_fraction > 0.0) || !(p.per_step_fraction < 1.0))
        throw ConfigError("compression.per_step_fraction must lie in (0,1)");
    if (p.num_steps < 0 || p.finetune_epochs_per_step < 0)
        throw ConfigError("compression step counts must be >= 0");
    return p;
}

inline std::vector<LossTerm> parse_terms(const nlohmann::json& arr, const std::string& context) {
    if (!arr.is_array() || arr.empty())
        throw ConfigError(context + " must be a nonempty array of loss terms");
    std::vector<LossTerm> terms;
    for (const auto& t : arr)
        terms.push_back(detail::term_from_string(t.get<std::string>()));
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    return terms;
}

inline LossConfig parse_loss_config(const nlohmann::json& j) {
    detail::expect_keys(j, {"terms", "temperature", "kd_symmetric_temperature"}, "loss");
    LossConfig cfg;
    if (j.contains("terms"))
        cfg.terms = parse_terms(j.at("terms"), "loss.terms");
    cfg.temperature = j.value("temperature", cfg.temperature);
    cfg.kd_symmetric_temperature = j.value("kd_symmetric_temperature", false);
    if (!(cfg.temperature > 0.0))
        throw ConfigError("loss.temperature must be > 0");
    return cfg;
}

inline WeightingConfig parse_weighting_config(const nlohmann::json& j) {
    detail::expect_keys(j, {"scheme", "eta", "epsilon", "update_period"}, "weighting");
    WeightingConfig cfg;
    if (j.contains("scheme"))
        cfg.scheme = detail::scheme_from_string(j.at("scheme").get<std::string>());
    cfg.eta = j.value("eta", cfg.eta);
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
    cfg.update_period = j.value("update_period", cfg.update_period);
    if (cfg.update_period < 1)
        throw ConfigError("weighting.update_period must be >= 1");
    return cfg;
}

// Parses and validates a full experiment config; unknown keys anywhere are
// rejected so a typo cannot silently skew a grid comparison.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
    detail::expect_keys(j,
                        {"experiment", "dataset", "model", "train", "compression", "loss",
                         "weighting", "grid", "seeds", "num_seeds", "seed", "out_dir"},
                        "config");
    ExperimentConfig cfg;
    cfg.experiment = j.value("experiment", cfg.experiment);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    if (j.contains("dataset"))
        cfg.dataset = parse_dataset_spec(j.at("dataset"));
    if (!j.contains("dataset") || !j.at("dataset").contains("seed"))
        cfg.dataset.seed = cfg.seed;
    if (j.contains("model"))
        cfg.model = parse_model_spec(j.at("model"));
    if (cfg.dataset.kind == "seg_blobs" && cfg.model.kind != "conv")
        throw ConfigError("segmentation datasets need a conv model");
    if (j.contains("train"))
        cfg.train = parse_train_schedule(j.at("train"));
    if (j.contains("compression"))
        cfg.compression = parse_compression_plan(j.at("compression"));
    if (j.contains("loss"))
        cfg.loss = parse_loss_config(j.at("loss"));
    if (j.contains("weighting"))
        cfg.weighting = parse_weighting_config(j.at("weighting"));
    if (j.contains("grid")) {
        detail::expect_keys(j.at("grid"), {"subsets", "schemes"}, "grid");
        if (j.at("grid").contains("subsets"))
            for (const auto& sub : j.at("grid").at("subsets"))
                cfg.grid_subsets.push_back(parse_terms(sub, "grid.subsets entry"));
        if (j.at("grid").contains("schemes"))
            for (const auto& s : j.at("grid").at("schemes"))
                cfg.grid_schemes.push_back(detail::scheme_from_string(s.get<std::string>()));
    }
    if (j.contains("seeds") && j.contains("num_seeds"))
        throw ConfigError("give either seeds or num_seeds, not both");
    if (j.contains("seeds"))
        cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    else if (j.contains("num_seeds")) {
        const int n = j.at("num_seeds").get<int>();
        if (n < 1)
            throw ConfigError("num_seeds must be >= 1");
        cfg.seeds.clear();
        for (int i = 1; i <= n; ++i)
            cfg.seeds.push_back(static_cast<std::uint64_t>(i));
    }
    if (cfg.seeds.empty())
        throw ConfigError("at least one seed is required");
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot read config: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config json: " + std::string(e.what()));
    }
    return parse_config(j);
}

inline Network make_model(const ExperimentConfig& cfg) {
    if (cfg.model.kind == "conv")
        return build_segmenter(1, cfg.model.widths, cfg.dataset.classes, cfg.seed);
    return build_classifier(cfg.dataset.dim, cfg.model.hidden, cfg.dataset.classes, cfg.seed);
}

} // namespace acmp
