#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "acmp/errors.hpp"

namespace acmp {

// Dense row-major tensor of 64-bit floats. Carrier for activations, weights,
// gradients and attribution maps.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(numel(shape), fill) {}

    Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_string());
    }

    static std::size_t numel(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (const std::size_t d : s)
            n *= d;
        return n;
    }

    std::size_t size() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape[i]; }
    std::size_t rank() const { return shape.size(); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // Flat offsets for the two layouts the primitive set uses.
    std::size_t at2(std::size_t i, std::size_t j) const { return i * shape[1] + j; }
    std::size_t at4(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return ((n * shape[1] + c) * shape[2] + y) * shape[3] + x;
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (const double v : data)
            if (!std::isfinite(v))
                return false;
        return true;
    }

    std::string shape_string() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i)
            os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }
};

// One minibatch. For per-pixel tasks `labels` holds one class id per pixel in
// row-major (example, row, col) order.
struct Batch {
    Tensor inputs;
    std::vector<int> labels;
};

} // namespace acmp
