#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "acmp/autodiff.hpp"
#include "acmp/dataset.hpp"
#include "acmp/errors.hpp"
#include "acmp/losses.hpp"
#include "acmp/network.hpp"

namespace acmp {

struct PredictionRecord {
    int id;  // example index
    int y;   // ground truth
    int r;   // reference prediction
    int c;   // compressed prediction
};

struct PixelRecord {
    int image, row, col;
    int y, r, c;
};

struct CieResult {
    long count = 0;
    std::vector<int> indices;  // ascending example ids
};

// Compression impacted exemplars: examples the two models classify differently.
inline CieResult count_cies(const std::vector<PredictionRecord>& records) {
    CieResult out;
    for (const PredictionRecord& rec : records)
        if (rec.r != rec.c)
            out.indices.push_back(rec.id);
    std::sort(out.indices.begin(), out.indices.end());
    out.count = static_cast<long>(out.indices.size());
    return out;
}

// CIEs on which the reference model was right, so compression broke them.
inline CieResult count_cie_u(const std::vector<PredictionRecord>& records) {
    CieResult out;
    for (const PredictionRecord& rec : records)
        if (rec.r == rec.y && rec.c != rec.r)
            out.indices.push_back(rec.id);
    std::sort(out.indices.begin(), out.indices.end());
    out.count = static_cast<long>(out.indices.size());
    return out;
}

struct CipResult {
    long count = 0;
    long cip_u_count = 0;
    std::vector<long> per_image;
};

// Per-pixel CIEs for segmentation.
inline CipResult count_cips(const std::vector<PixelRecord>& records, int n_images) {
    CipResult out;
    out.per_image.assign(static_cast<std::size_t>(n_images), 0);
    for (const PixelRecord& rec : records) {
        if (rec.image < 0 || rec.image >= n_images)
            throw DomainError("pixel record image id out of range");
        if (rec.r != rec.c) {
            ++out.count;
            ++out.per_image[static_cast<std::size_t>(rec.image)];
        }
        if (rec.r == rec.y && rec.c != rec.r)
            ++out.cip_u_count;
    }
    return out;
}

struct FairnessResult {
    std::vector<double> error_ref, error_comp;  // epsilon_i per class
    double gap_ref = 0.0, gap_comp = 0.0;       // max-min over epsilon_i
    std::vector<double> delta;                  // acc_ref_i - acc_comp_i
};

inline FairnessResult fairness_metrics(const std::vector<PredictionRecord>& records, int C) {
    std::vector<long> total(static_cast<std::size_t>(C), 0);
    std::vector<long> wrong_ref(static_cast<std::size_t>(C), 0), wrong_comp(static_cast<std::size_t>(C), 0);
    for (const PredictionRecord& rec : records) {
        if (rec.y < 0 || rec.y >= C)
            throw DomainError("label out of range in fairness computation");
        ++total[static_cast<std::size_t>(rec.y)];
        if (rec.r != rec.y)
            ++wrong_ref[static_cast<std::size_t>(rec.y)];
        if (rec.c != rec.y)
            ++wrong_comp[static_cast<std::size_t>(rec.y)];
    }
    FairnessResult out;
    for (int i = 0; i < C; ++i) {
        if (total[static_cast<std::size_t>(i)] == 0)
            throw DomainError("class " + std::to_string(i) + " has no evaluation examples");
        out.error_ref.push_back(static_cast<double>(wrong_ref[static_cast<std::size_t>(i)]) /
                                static_cast<double>(total[static_cast<std::size_t>(i)]));
        out.error_comp.push_back(static_cast<double>(wrong_comp[static_cast<std::size_t>(i)]) /
                                 static_cast<double>(total[static_cast<std::size_t>(i)]));
        // acc_ref - acc_comp == eps_comp - eps_ref; positive means the class
        // got worse under compression.
        out.delta.push_back(out.error_comp.back() - out.error_ref.back());
    }
    const auto gap = [](const std::vector<double>& eps) {
        const auto [mn, mx] = std::minmax_element(eps.begin(), eps.end());
        return *mx - *mn;
    };
    out.gap_ref = gap(out.error_ref);
    out.gap_comp = gap(out.error_comp);
    return out;
}

// Batched argmax predictions; per pixel for segmentation nets.
inline std::vector<int> predict_classes(const Network& net, const Tensor& inputs,
                                        std::size_t batch_cap = 256) {
    const std::size_t n = inputs.dim(0);
    const std::size_t per = inputs.size() / std::max<std::size_t>(n, 1);
    std::vector<int> out;
    for (std::size_t start = 0; start < n; start += batch_cap) {
        const std::size_t stop = std::min(n, start + batch_cap);
        Tensor slice;
        slice.shape = inputs.shape;
        slice.shape[0] = stop - start;
        slice.data.assign(inputs.data.begin() + static_cast<long>(start * per),
                          inputs.data.begin() + static_cast<long>(stop * per));
        const std::vector<int> preds = argmax_classes(predict(net, slice));
        out.insert(out.end(), preds.begin(), preds.end());
    }
    return out;
}

inline double accuracy_of(const Network& net, const Tensor& inputs, const std::vector<int>& labels) {
    const std::vector<int> preds = predict_classes(net, inputs);
    if (preds.size() != labels.size())
        throw ShapeError("prediction/label count mismatch");
    long correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == labels[i])
            ++correct;
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

// Dice coefficient of two binary masks: 2|P∩T| / (|P|+|T|); 1 when both empty.
inline double dice(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size())
        throw DomainError("dice masks differ in size");
    long p = 0, t = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if ((pred[i] != 0 && pred[i] != 1) || (truth[i] != 0 && truth[i] != 1))
            throw DomainError("dice requires binary masks");
        p += pred[i];
        t += truth[i];
        both += pred[i] & truth[i];
    }
    if (p + t == 0)
        return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + t);
}

// Foreground (class 1) dice of a segmenter over a whole eval split.
inline double dice_of(const Network& net, const Tensor& inputs, const std::vector<int>& labels) {
    return dice(predict_classes(net, inputs), labels);
}

// Soft IoU of two nonnegative attribution maps: sum of elementwise minima
// over sum of elementwise maxima (1 when both are all-zero). The per-element
// mean-of-ratios variant sits behind `per_element_mean`.
inline double soft_iou(const Tensor& a, const Tensor& b, bool per_element_mean = false) {
    if (!a.same_shape(b))
        throw DomainError("soft_iou maps differ in shape " + a.shape_string() + " vs " +
                          b.shape_string());
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] < 0.0 || b[i] < 0.0)
            throw DomainError("soft_iou requires nonnegative maps");
    if (per_element_mean) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double mn = std::min(a[i], b[i]), mx = std::max(a[i], b[i]);
            acc += mx == 0.0 ? 1.0 : mn / mx;
        }
        return acc / static_cast<double>(a.size());
    }
    double mins = 0.0, maxs = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        mins += std::min(a[i], b[i]);
        maxs += std::max(a[i], b[i]);
    }
    if (maxs == 0.0)
        return 1.0;
    return mins / maxs;
}

// Input-gradient saliency: |d logit_class / d input|, summed over input
// channels and divided by its max (all-zero map if the logit is constant in
// the input). `class_id` < 0 selects the net's own predicted class; for
// segmenters the map is taken w.r.t. the summed class-1 logit over all pixels.
inline Tensor saliency(const Network& net, const Tensor& single_input, int class_id = -1) {
    if (single_input.dim(0) != 1)
        throw DomainError("saliency expects a single input (leading dim 1)");
    Network& mutable_net = const_cast<Network&>(net);
    mutable_net.zero_grads();
    Tape tape = forward(mutable_net, single_input);
    Tensor seed(tape.logits.shape);
    if (tape.logits.rank() == 2) {
        int cls = class_id;
        if (cls < 0)
            cls = argmax_classes(tape.logits)[0];
        if (cls < 0 || static_cast<std::size_t>(cls) >= tape.logits.dim(1))
            throw DomainError("saliency class out of range");
        seed[static_cast<std::size_t>(cls)] = 1.0;
    } else {
        int cls = class_id < 0 ? 1 : class_id;  // foreground by default
        if (static_cast<std::size_t>(cls) >= tape.logits.dim(1))
            throw DomainError("saliency class out of range");
        const std::size_t hw = tape.logits.dim(2) * tape.logits.dim(3);
        for (std::size_t i = 0; i < hw; ++i)
            seed[static_cast<std::size_t>(cls) * hw + i] = 1.0;
    }
    const Tensor input_grad = backward(tape, seed);
    mutable_net.zero_grads();

    Tensor map;
    if (input_grad.rank() == 2) {
        map = Tensor({input_grad.dim(1)});
        for (std::size_t i = 0; i < map.size(); ++i)
            map[i] = std::abs(input_grad[i]);
    } else {
        const std::size_t c = input_grad.dim(1), h = input_grad.dim(2), w = input_grad.dim(3);
        map = Tensor({h, w});
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < h * w; ++i)
                map[i] += std::abs(input_grad[ch * h * w + i]);
    }
    double mx = 0.0;
    for (const double v : map.data)
        mx = std::max(mx, v);
    if (mx > 0.0)
        for (double& v : map.data)
            v /= mx;
    return map;
}

// Everything Section-3.1-style evaluation produces for one (reference,
// compressed) pair on one eval split.
struct MisalignmentReport {
    // eval-split fingerprint
    std::string dataset_name;
    std::uint64_t dataset_seed = 0;
    std::size_t n_eval = 0;
    int num_classes = 0;
    bool segmentation = false;
    std::uint64_t label_hash = 0;

    double sparsity = 0.0;  // of the compressed net's prunable weights
    double accuracy_ref = 0.0, accuracy_comp = 0.0;
    long correct_ref = 0, correct_comp = 0;
    long flipped_to_correct = 0;  // reference wrong, compressed right

    long cie_count = 0, cie_u_count = 0;
    std::vector<int> cie_indices, cie_u_indices;

    long cip_count = 0, cip_u_count = 0;
    std::vector<long> cip_per_image;

    std::vector<double> per_class_error_ref, per_class_error_comp, per_class_delta;
    double max_min_gap_ref = 0.0, max_min_gap_comp = 0.0;

    double mean_attr_iou = 1.0;
    std::vector<double> per_image_iou;

    double dice_ref = 1.0, dice_comp = 1.0;

    // acc_comp == acc_ref - (CIE-U - #fixed)/N, as an exact count identity.
    bool top1_identity_holds() const {
        const long broken = segmentation ? cip_u_count : cie_u_count;
        return correct_comp == correct_ref - broken + flipped_to_correct;
    }
};

struct ReportOptions {
    std::size_t attribution_sample = 0;  // 0 = every eval input
    std::size_t eval_batch = 256;
};

inline std::uint64_t hash_labels(const Dataset& ds) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    const auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 0x100000001b3ull;
    };
    for (const char ch : ds.name)
        mix(static_cast<std::uint64_t>(static_cast<unsigned char>(ch)));
    mix(ds.seed);
    mix(ds.eval_labels.size());
    for (const int l : ds.eval_labels)
        mix(static_cast<std::uint64_t>(l) + 0x9e37ull);
    return h;
}

inline MisalignmentReport build_report(const Network& reference, const Network& compressed,
                                       const Dataset& ds, const ReportOptions& opts = {}) {
    MisalignmentReport rep;
    rep.dataset_name = ds.name;
    rep.dataset_seed = ds.seed;
    rep.n_eval = ds.eval_size();
    rep.num_classes = ds.num_classes;
    rep.segmentation = ds.segmentation;
    rep.label_hash = hash_labels(ds);
    rep.sparsity = compressed.sparsity();

    const std::vector<int> preds_ref = predict_classes(reference, ds.eval_inputs, opts.eval_batch);
    const std::vector<int> preds_comp = predict_classes(compressed, ds.eval_inputs, opts.eval_batch);
    const std::vector<int>& labels = ds.eval_labels;

    std::vector<PredictionRecord> records(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        records[i] = {static_cast<int>(i), labels[i], preds_ref[i], preds_comp[i]};

    for (const PredictionRecord& rec : records) {
        if (rec.r == rec.y)
            ++rep.correct_ref;
        if (rec.c == rec.y)
            ++rep.correct_comp;
        if (rec.r != rec.y && rec.c == rec.y)
            ++rep.flipped_to_correct;
    }
    rep.accuracy_ref = static_cast<double>(rep.correct_ref) / static_cast<double>(labels.size());
    rep.accuracy_comp = static_cast<double>(rep.correct_comp) / static_cast<double>(labels.size());

    if (ds.segmentation) {
        const int hw = ds.height * ds.width;
        std::vector<PixelRecord> pixels(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const int img = static_cast<int>(i) / hw;
            const int rem = static_cast<int>(i) % hw;
            pixels[i] = {img, rem / ds.width, rem % ds.width, labels[i], preds_ref[i], preds_comp[i]};
        }
        const CipResult cip = count_cips(pixels, static_cast<int>(rep.n_eval));
        rep.cip_count = cip.count;
        rep.cip_u_count = cip.cip_u_count;
        rep.cip_per_image = cip.per_image;
        rep.dice_ref = dice(preds_ref, labels);
        rep.dice_comp = dice(preds_comp, labels);
    } else {
        const CieResult cie = count_cies(records);
        const CieResult cie_u = count_cie_u(records);
        rep.cie_count = cie.count;
        rep.cie_indices = cie.indices;
        rep.cie_u_count = cie_u.count;
        rep.cie_u_indices = cie_u.indices;
    }

    const FairnessResult fair = fairness_metrics(records, ds.num_classes);
    rep.per_class_error_ref = fair.error_ref;
    rep.per_class_error_comp = fair.error_comp;
    rep.per_class_delta = fair.delta;
    rep.max_min_gap_ref = fair.gap_ref;
    rep.max_min_gap_comp = fair.gap_comp;

    // Attribution IoU: each model explains its own prediction.
    const std::size_t n_images = rep.n_eval;
    std::size_t stride = 1;
    if (opts.attribution_sample > 0 && n_images > opts.attribution_sample)
        stride = n_images / opts.attribution_sample;
    const std::size_t per = ds.eval_inputs.size() / std::max<std::size_t>(n_images, 1);
    double iou_sum = 0.0;
    for (std::size_t i = 0; i < n_images; i += stride) {
        Tensor one;
        one.shape = ds.eval_inputs.shape;
        one.shape[0] = 1;
        one.data.assign(ds.eval_inputs.data.begin() + static_cast<long>(i * per),
                        ds.eval_inputs.data.begin() + static_cast<long>((i + 1) * per));
        const Tensor map_ref = saliency(reference, one);
        const Tensor map_comp = saliency(compressed, one);
        const double iou = soft_iou(map_ref, map_comp);
        rep.per_image_iou.push_back(iou);
        iou_sum += iou;
    }
    rep.mean_attr_iou = rep.per_image_iou.empty()
                            ? 1.0
                            : iou_sum / static_cast<double>(rep.per_image_iou.size());

    if (!rep.top1_identity_holds())
        throw NumericError("top-1 accuracy identity violated in report assembly");
    return rep;
}

inline nlohmann::json report_to_json(const MisalignmentReport& r) {
    nlohmann::json j;
    j["dataset"] = {{"name", r.dataset_name}, {"seed", r.dataset_seed},     {"n_eval", r.n_eval},
                    {"classes", r.num_classes}, {"segmentation", r.segmentation},
                    {"label_hash", r.label_hash}};
    j["sparsity"] = r.sparsity;
    j["accuracy"] = {{"reference", r.accuracy_ref},
                     {"compressed", r.accuracy_comp},
                     {"correct_reference", r.correct_ref},
                     {"correct_compressed", r.correct_comp},
                     {"flipped_to_correct", r.flipped_to_correct}};
    j["cie"] = {{"count", r.cie_count}, {"indices", r.cie_indices}};
    j["cie_u"] = {{"count", r.cie_u_count}, {"indices", r.cie_u_indices}};
    j["cip"] = {{"count", r.cip_count}, {"u_count", r.cip_u_count}, {"per_image", r.cip_per_image}};
    j["fairness"] = {{"per_class_error_reference", r.per_class_error_ref},
                     {"per_class_error_compressed", r.per_class_error_comp},
                     {"per_class_accuracy_delta", r.per_class_delta},
                     {"max_min_gap_reference", r.max_min_gap_ref},
                     {"max_min_gap_compressed", r.max_min_gap_comp}};
    j["attribution"] = {{"mean_iou", r.mean_attr_iou}, {"per_image_iou", r.per_image_iou}};
    j["dice"] = {{"reference", r.dice_ref}, {"compressed", r.dice_comp}};
    return j;
}

inline MisalignmentReport report_from_json(const nlohmann::json& j) {
    MisalignmentReport r;
    const auto& d = j.at("dataset");
    r.dataset_name = d.at("name").get<std::string>();
    r.dataset_seed = d.at("seed").get<std::uint64_t>();
    r.n_eval = d.at("n_eval").get<std::size_t>();
    r.num_classes = d.at("classes").get<int>();
    r.segmentation = d.at("segmentation").get<bool>();
    r.label_hash = d.at("label_hash").get<std::uint64_t>();
    r.sparsity = j.at("sparsity").get<double>();
    const auto& a = j.at("accuracy");
    r.accuracy_ref = a.at("reference").get<double>();
    r.accuracy_comp = a.at("compressed").get<double>();
    r.correct_ref = a.at("correct_reference").get<long>();
    r.correct_comp = a.at("correct_compressed").get<long>();
    r.flipped_to_correct = a.at("flipped_to_correct").get<long>();
    r.cie_count = j.at("cie").at("count").get<long>();
    r.cie_indices = j.at("cie").at("indices").get<std::vector<int>>();
    r.cie_u_count = j.at("cie_u").at("count").get<long>();
    r.cie_u_indices = j.at("cie_u").at("indices").get<std::vector<int>>();
    r.cip_count = j.at("cip").at("count").get<long>();
    r.cip_u_count = j.at("cip").at("u_count").get<long>();
    r.cip_per_image = j.at("cip").at("per_image").get<std::vector<long>>();
    const auto& f = j.at("fairness");
    r.per_class_error_ref = f.at("per_class_error_reference").get<std::vector<double>>();
    r.per_class_error_comp = f.at("per_class_error_compressed").get<std::vector<double>>();
    r.per_class_delta = f.at("per_class_accuracy_delta").get<std::vector<double>>();
    r.max_min_gap_ref = f.at("max_min_gap_reference").get<double>();
    r.max_min_gap_comp = f.at("max_min_gap_compressed").get<double>();
    r.mean_attr_iou = j.at("attribution").at("mean_iou").get<double>();
    r.per_image_iou = j.at("attribution").at("per_image_iou").get<std::vector<double>>();
    r.dice_ref = j.at("dice").at("reference").get<double>();
    r.dice_comp = j.at("dice").at("compressed").get<double>();
    return r;
}

inline void save_report(const MisalignmentReport& r, const std::string& path) {
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write report: " + path);
    os << report_to_json(r).dump(2) << "\n";
}

inline MisalignmentReport load_report(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot read report: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed report json: " + std::string(e.what()));
    }
    return report_from_json(j);
}

// Plain-text PGM (P2) dump of a [0,1] map for eyeballing attributions.
inline void write_pgm(const Tensor& map, const std::string& path) {
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write pgm: " + path);
    const std::size_t h = map.rank() == 2 ? map.dim(0) : 1;
    const std::size_t w = map.rank() == 2 ? map.dim(1) : map.dim(0);
    os << "P2\n" << w << " " << h << "\n255\n";
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const double v = std::clamp(map[r * w + c], 0.0, 1.0);
            os << static_cast<int>(std::lround(v * 255.0)) << (c + 1 == w ? "" : " ");
        }
        os << "\n";
    }
}

} // namespace acmp
