#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "acmp/errors.hpp"
#include "acmp/rng.hpp"
#include "acmp/tensor.hpp"

namespace acmp {

struct Ellipse {
    double cx, cy;        // center, pixel coordinates (col, row)
    double a, b;          // semi-axes in pixels
    double phi;           // rotation
    double intensity;

    bool contains(double col, double row) const {
        const double dx = col - cx, dy = row - cy;
        const double u = (dx * std::cos(phi) + dy * std::sin(phi)) / a;
        const double v = (-dx * std::sin(phi) + dy * std::cos(phi)) / b;
        return u * u + v * v <= 1.0;
    }
};

// Synthetic data with train and eval splits drawn independently from the
// same seeded generator. Classification inputs are [N,dim]; segmentation
// inputs are [N,1,H,W] with one label per pixel.
struct Dataset {
    std::string name;
    int num_classes = 0;
    std::uint64_t seed = 0;
    bool segmentation = false;
    int height = 0, width = 0;

    Tensor train_inputs, eval_inputs;
    std::vector<int> train_labels, eval_labels;
    std::vector<int> train_per_class, eval_per_class;

    // Segmentation metadata: the shapes actually rasterized per image, kept
    // so tests can recount mask areas independently.
    std::vector<std::vector<Ellipse>> train_shapes, eval_shapes;

    std::size_t train_size() const { return train_inputs.data.empty() ? 0 : train_inputs.dim(0); }
    std::size_t eval_size() const { return eval_inputs.data.empty() ? 0 : eval_inputs.dim(0); }
};

namespace detail {

inline void gen_blob_split(Tensor& inputs, std::vector<int>& labels, int C,
                           const std::vector<int>& per_class, int dim, double spread, Rng& rng) {
    std::size_t total = 0;
    for (const int n : per_class)
        total += static_cast<std::size_t>(n);
    inputs = Tensor({total, static_cast<std::size_t>(dim)});
    labels.resize(total);
    std::size_t row = 0;
    for (int cls = 0; cls < C; ++cls) {
        const double angle = 2.0 * 3.14159265358979323846 * cls / C;
        for (int i = 0; i < per_class[static_cast<std::size_t>(cls)]; ++i, ++row) {
            double* x = &inputs.data[row * static_cast<std::size_t>(dim)];
            for (int d = 0; d < dim; ++d) {
                const double mean = d == 0 ? std::cos(angle) : d == 1 ? std::sin(angle) : 0.0;
                x[d] = mean + spread * rng.normal();
            }
            labels[row] = cls;
        }
    }
}

inline void gen_seg_split(Tensor& inputs, std::vector<int>& labels,
                          std::vector<std::vector<Ellipse>>& shapes, int n_images, int h, int w,
                          Rng& rng) {
    inputs = Tensor({static_cast<std::size_t>(n_images), 1, static_cast<std::size_t>(h),
                     static_cast<std::size_t>(w)});
    labels.assign(static_cast<std::size_t>(n_images) * h * w, 0);
    shapes.assign(static_cast<std::size_t>(n_images), {});
    const double min_side = static_cast<double>(std::min(h, w));
    for (int img = 0; img < n_images; ++img) {
        double* px = &inputs.data[static_cast<std::size_t>(img) * h * w];
        for (int i = 0; i < h * w; ++i)
            px[i] = rng.uniform(0.0, 0.3);
        const int n_ell = static_cast<int>(rng.below(4));  // 0..3 bright ellipses
        for (int e = 0; e < n_ell; ++e) {
            Ellipse el;
            el.cx = rng.uniform(0.2 * w, 0.8 * w);
            el.cy = rng.uniform(0.2 * h, 0.8 * h);
            el.a = rng.uniform(0.1, 0.25) * min_side;
            el.b = rng.uniform(0.1, 0.25) * min_side;
            el.phi = rng.uniform(0.0, 3.14159265358979323846);
            el.intensity = rng.uniform(0.7, 1.0);
            shapes[static_cast<std::size_t>(img)].push_back(el);
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c)
                    if (el.contains(c, r)) {
                        px[r * w + c] = std::max(px[r * w + c], el.intensity);
                        labels[(static_cast<std::size_t>(img) * h + r) * w + c] = 1;
                    }
        }
    }
}

} // namespace detail

// Gaussian clusters with fixed class means on the unit circle in the first
// two dims; unequal per-class counts support the fairness experiments.
inline Dataset gen_blobs(int C, const std::vector<int>& train_per_class,
                         const std::vector<int>& eval_per_class, int dim, double spread,
                         std::uint64_t seed, const std::string& name = "blobs") {
    if (C < 2)
        throw DomainError("blobs need at least 2 classes");
    if (dim < 2)
        throw DomainError("blobs need dim >= 2");
    if (train_per_class.size() != static_cast<std::size_t>(C) ||
        eval_per_class.size() != static_cast<std::size_t>(C))
        throw ConfigError("per-class counts must list one entry per class");
    for (const int n : train_per_class)
        if (n < 1)
            throw DomainError("per-class counts must be >= 1");
    for (const int n : eval_per_class)
        if (n < 1)
            throw DomainError("per-class counts must be >= 1");

    Dataset ds;
    ds.name = name;
    ds.num_classes = C;
    ds.seed = seed;
    ds.train_per_class = train_per_class;
    ds.eval_per_class = eval_per_class;
    Rng train_rng(seed, "data/train"), eval_rng(seed, "data/eval");
    detail::gen_blob_split(ds.train_inputs, ds.train_labels, C, train_per_class, dim, spread,
                           train_rng);
    detail::gen_blob_split(ds.eval_inputs, ds.eval_labels, C, eval_per_class, dim, spread,
                           eval_rng);
    return ds;
}

inline Dataset gen_blobs(int C, int n_per_class, int dim, double spread, std::uint64_t seed,
                         const std::string& name = "blobs") {
    const std::vector<int> counts(static_cast<std::size_t>(C), n_per_class);
    return gen_blobs(C, counts, counts, dim, spread, seed, name);
}

// Grayscale images with 0-3 random bright ellipses over a noisy background;
// binary masks mark ellipse interiors (per-pixel classes, C=2). Generates
// n_images for each of the train and eval splits.
inline Dataset gen_seg_blobs(int n_images, int h, int w, std::uint64_t seed,
                             const std::string& name = "seg_blobs") {
    if (h < 8 || w < 8)
        throw DomainError("segmentation images must be at least 8x8");
    if (n_images < 1)
        throw DomainError("need at least one image");
    Dataset ds;
    ds.name = name;
    ds.num_classes = 2;
    ds.seed = seed;
    ds.segmentation = true;
    ds.height = h;
    ds.width = w;
    Rng train_rng(seed, "data/train"), eval_rng(seed, "data/eval");
    detail::gen_seg_split(ds.train_inputs, ds.train_labels, ds.train_shapes, n_images, h, w,
                          train_rng);
    detail::gen_seg_split(ds.eval_inputs, ds.eval_labels, ds.eval_shapes, n_images, h, w,
                          eval_rng);
    return ds;
}

// Gathers the given example indices into one batch.
inline Batch gather_batch(const Dataset& ds, const std::vector<std::size_t>& indices, bool train) {
    const Tensor& inputs = train ? ds.train_inputs : ds.eval_inputs;
    const std::vector<int>& labels = train ? ds.train_labels : ds.eval_labels;
    Batch b;
    if (ds.segmentation) {
        const std::size_t hw = static_cast<std::size_t>(ds.height) * ds.width;
        b.inputs = Tensor({indices.size(), 1, static_cast<std::size_t>(ds.height),
                           static_cast<std::size_t>(ds.width)});
        b.labels.resize(indices.size() * hw);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            std::copy_n(&inputs.data[indices[i] * hw], hw, &b.inputs.data[i * hw]);
            std::copy_n(&labels[indices[i] * hw], hw, &b.labels[i * hw]);
        }
    } else {
        const std::size_t dim = inputs.dim(1);
        b.inputs = Tensor({indices.size(), dim});
        b.labels.resize(indices.size());
        for (std::size_t i = 0; i < indices.size(); ++i) {
            std::copy_n(&inputs.data[indices[i] * dim], dim, &b.inputs.data[i * dim]);
            b.labels[i] = labels[indices[i]];
        }
    }
    return b;
}

} // namespace acmp
