#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "acmp/errors.hpp"
#include "acmp/rng.hpp"
#include "acmp/tensor.hpp"

namespace acmp {

enum class LayerKind : std::uint8_t { Dense, Conv2d, ReLU, Flatten, GroupAdapter };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
    case LayerKind::Dense: return "Dense";
    case LayerKind::Conv2d: return "Conv2d";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::GroupAdapter: return "GroupAdapter";
    }
    return "?";
}

// A learnable tensor with its gradient, binary prune mask, and SGD momentum
// buffer. Masked entries hold value exactly 0 after every masked update.
struct Parameter {
    Tensor value;
    Tensor grad;
    Tensor mask;
    Tensor velocity;        // optimizer state; never serialized
    bool prunable = false;  // magnitude pruning may zero entries
    bool adapter = false;   // group-sparsity matrix: scaled lr, no weight decay

    bool empty() const { return value.data.empty(); }

    void apply_mask() {
        for (std::size_t i = 0; i < value.size(); ++i)
            value[i] *= mask[i];
    }

    double sparsity_zeros() const {
        double zeros = 0;
        for (const double m : mask.data)
            if (m == 0.0)
                zeros += 1.0;
        return zeros;
    }
};

struct Layer {
    LayerKind kind = LayerKind::ReLU;
    int in = 0;   // Dense: in features; Conv2d: in channels; GroupAdapter: n
    int out = 0;  // Dense: out features; Conv2d: out channels; GroupAdapter: n

    Parameter weight;  // Dense [out,in]; Conv2d [out,in,3,3]; GroupAdapter A [n,n]
    Parameter bias;    // Dense/Conv2d [out]

    bool has_params() const {
        return kind == LayerKind::Dense || kind == LayerKind::Conv2d || kind == LayerKind::GroupAdapter;
    }
};

inline Parameter make_param(std::vector<std::size_t> shape, bool prunable, bool adapter = false) {
    Parameter p;
    p.value = Tensor(shape);
    p.grad = Tensor(shape);
    p.mask = Tensor(shape, 1.0);
    p.velocity = Tensor(std::move(shape));
    p.prunable = prunable;
    p.adapter = adapter;
    return p;
}

inline Layer make_dense(int in, int out) {
    if (in < 1 || out < 1)
        throw DomainError("Dense dims must be >= 1");
    Layer l;
    l.kind = LayerKind::Dense;
    l.in = in;
    l.out = out;
    l.weight = make_param({static_cast<std::size_t>(out), static_cast<std::size_t>(in)}, true);
    l.bias = make_param({static_cast<std::size_t>(out)}, false);
    return l;
}

// 3x3 kernel, stride 1, zero padding 1: spatial size is preserved.
inline Layer make_conv(int in_ch, int out_ch) {
    if (in_ch < 1 || out_ch < 1)
        throw DomainError("Conv2d channels must be >= 1");
    Layer l;
    l.kind = LayerKind::Conv2d;
    l.in = in_ch;
    l.out = out_ch;
    l.weight = make_param({static_cast<std::size_t>(out_ch), static_cast<std::size_t>(in_ch), 3, 3}, true);
    l.bias = make_param({static_cast<std::size_t>(out_ch)}, false);
    return l;
}

inline Layer make_relu() {
    Layer l;
    l.kind = LayerKind::ReLU;
    return l;
}

inline Layer make_flatten() {
    Layer l;
    l.kind = LayerKind::Flatten;
    return l;
}

// Square channel-mixing matrix A, initialized to the identity so that
// attaching it leaves the network function unchanged.
inline Layer make_adapter(int n) {
    if (n < 1)
        throw DomainError("GroupAdapter size must be >= 1");
    Layer l;
    l.kind = LayerKind::GroupAdapter;
    l.in = n;
    l.out = n;
    l.weight = make_param({static_cast<std::size_t>(n), static_cast<std::size_t>(n)}, false, true);
    for (int i = 0; i < n; ++i)
        l.weight.value[static_cast<std::size_t>(i) * n + i] = 1.0;
    return l;
}

// Ordered layer stack plus a keyed view over its parameters.
struct Network {
    std::vector<Layer> layers;
    std::vector<int> input_shape;  // {features} for flat inputs, {channels} for spatial
    bool spatial = false;          // spatial nets take [N, C, H, W]
    int num_classes = 0;

    void for_each_param(const std::function<void(const std::string&, Parameter&)>& fn) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            Layer& l = layers[i];
            if (!l.has_params())
                continue;
            fn("L" + std::to_string(i) + ".W", l.weight);
            if (!l.bias.empty())
                fn("L" + std::to_string(i) + ".b", l.bias);
        }
    }

    void for_each_param(const std::function<void(const std::string&, const Parameter&)>& fn) const {
        const_cast<Network*>(this)->for_each_param(
            [&](const std::string& k, Parameter& p) { fn(k, static_cast<const Parameter&>(p)); });
    }

    void zero_grads() {
        for_each_param([](const std::string&, Parameter& p) {
            std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
        });
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for_each_param([&](const std::string&, const Parameter& p) { n += p.value.size(); });
        return n;
    }

    // Fraction of prunable entries whose mask is zero.
    double sparsity() const {
        double zeros = 0, total = 0;
        for_each_param([&](const std::string&, const Parameter& p) {
            if (!p.prunable)
                return;
            total += static_cast<double>(p.value.size());
            zeros += p.sparsity_zeros();
        });
        return total == 0 ? 0.0 : zeros / total;
    }
};

// Validates that consecutive layer shapes compose; throws ShapeError naming
// the first offending layer. Called by the builders and by checkpoint load.
inline void validate_network(const Network& net) {
    if (net.input_shape.empty())
        throw ShapeError("network has empty input shape");
    // Track (features) or (channels, spatial?) through the stack.
    int features = net.input_shape[0];
    bool spatial = net.spatial;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + ")";
        switch (l.kind) {
        case LayerKind::Dense:
            if (spatial)
                throw ShapeError(where + ": Dense cannot consume spatial input without Flatten");
            // features == -1 right after Flatten: the C*H*W count is only
            // known at runtime, so forward() checks it instead.
            if (features != -1 && l.in != features)
                throw ShapeError(where + ": expected " + std::to_string(l.in) + " inputs, got " +
                                 std::to_string(features));
            features = l.out;
            break;
        case LayerKind::Conv2d:
            if (!spatial)
                throw ShapeError(where + ": Conv2d requires spatial input");
            if (l.in != features)
                throw ShapeError(where + ": expected " + std::to_string(l.in) + " channels, got " +
                                 std::to_string(features));
            features = l.out;
            break;
        case LayerKind::ReLU:
            break;
        case LayerKind::Flatten:
            if (!spatial)
                throw ShapeError(where + ": Flatten requires spatial input");
            spatial = false;
            // Feature count becomes C*H*W at runtime; composition with a
            // following Dense is checked during forward.
            features = -1;
            break;
        case LayerKind::GroupAdapter:
            if (features != -1 && l.in != features)
                throw ShapeError(where + ": adapter size " + std::to_string(l.in) +
                                 " does not match " + std::to_string(features) + " channels");
            break;
        }
    }
}

// He-uniform initialization for ReLU stacks: W ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)),
// biases zero, adapters stay identity. Each parameter draws from its own named
// stream, so initialization does not depend on traversal order.
inline void init_he_uniform(Network& net, std::uint64_t seed) {
    net.for_each_param([&](const std::string& key, Parameter& p) {
        if (p.adapter || key.ends_with(".b"))
            return;
        const std::size_t fan_in = p.value.rank() == 4 ? p.value.dim(1) * p.value.dim(2) * p.value.dim(3)
                                                       : p.value.dim(1);
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        Rng rng(seed, "init/" + key);
        for (double& v : p.value.data)
            v = rng.uniform(-limit, limit);
    });
}

// MLP classifier: [Dense -> ReLU]* -> Dense with C outputs. Empty hidden list
// yields a plain linear model.
inline Network build_classifier(int input_dim, const std::vector<int>& hidden_dims, int C,
                                std::uint64_t seed = 0) {
    if (input_dim < 1)
        throw DomainError("input_dim must be >= 1");
    if (C < 2)
        throw DomainError("classifier needs at least 2 classes");
    for (const int h : hidden_dims)
        if (h < 1)
            throw DomainError("hidden dims must be >= 1");
    Network net;
    net.input_shape = {input_dim};
    net.spatial = false;
    net.num_classes = C;
    int prev = input_dim;
    for (const int h : hidden_dims) {
        net.layers.push_back(make_dense(prev, h));
        net.layers.push_back(make_relu());
        prev = h;
    }
    net.layers.push_back(make_dense(prev, C));
    validate_network(net);
    init_he_uniform(net, seed);
    return net;
}

// Conv stack with C output channels per pixel; padding keeps H and W.
inline Network build_segmenter(int in_ch, const std::vector<int>& widths, int C,
                               std::uint64_t seed = 0) {
    if (in_ch < 1)
        throw DomainError("in_ch must be >= 1");
    if (widths.empty())
        throw DomainError("segmenter needs at least one hidden width");
    if (C < 2)
        throw DomainError("segmenter needs at least 2 classes");
    Network net;
    net.input_shape = {in_ch};
    net.spatial = true;
    net.num_classes = C;
    int prev = in_ch;
    for (const int w : widths) {
        if (w < 1)
            throw DomainError("widths must be >= 1");
        net.layers.push_back(make_conv(prev, w));
        net.layers.push_back(make_relu());
        prev = w;
    }
    net.layers.push_back(make_conv(prev, C));
    validate_network(net);
    init_he_uniform(net, seed);
    return net;
}

} // namespace acmp
