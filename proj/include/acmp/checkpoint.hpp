#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "acmp/errors.hpp"
#include "acmp/network.hpp"

namespace acmp {

// Versioned binary container: magic "ACMP", u32 version, layer table, then
// per-parameter little-endian f64 arrays with bit-packed masks. Round-trips
// params, masks and layer specs bit-exactly.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u8(std::ostream& os, std::uint8_t v) { put_bytes(os, &v, 1); }

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    put_bytes(os, b, 4);
}

inline void put_f64(std::ostream& os, double v) {
    const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    put_bytes(os, b, 8);
}

inline void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw IoError(std::string("corrupt checkpoint: truncated while reading ") + what);
}

inline std::uint8_t get_u8(std::istream& is, const char* what) {
    std::uint8_t v;
    get_bytes(is, &v, 1, what);
    return v;
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    get_bytes(is, b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline double get_f64(std::istream& is, const char* what) {
    unsigned char b[8];
    get_bytes(is, b, 8, what);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i)
        u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(u);
}

inline void put_param(std::ostream& os, const Parameter& p) {
    put_u32(os, static_cast<std::uint32_t>(p.value.rank()));
    for (const std::size_t d : p.value.shape)
        put_u32(os, static_cast<std::uint32_t>(d));
    for (const double v : p.value.data)
        put_f64(os, v);
    const std::size_t n = p.value.size();
    std::vector<unsigned char> packed((n + 7) / 8, 0);
    for (std::size_t i = 0; i < n; ++i)
        if (p.mask[i] != 0.0)
            packed[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
    put_bytes(os, packed.data(), packed.size());
}

inline void get_param(std::istream& is, Parameter& p, const char* what) {
    const std::uint32_t rank = get_u32(is, what);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape)
        d = get_u32(is, what);
    if (shape != p.value.shape)
        throw IoError(std::string("corrupt checkpoint: parameter shape mismatch for ") + what);
    for (double& v : p.value.data)
        v = get_f64(is, what);
    const std::size_t n = p.value.size();
    std::vector<unsigned char> packed((n + 7) / 8);
    get_bytes(is, packed.data(), packed.size(), what);
    for (std::size_t i = 0; i < n; ++i)
        p.mask[i] = (packed[i / 8] >> (i % 8)) & 1u ? 1.0 : 0.0;
}

} // namespace detail

inline void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw IoError("cannot open checkpoint for writing: " + path);
    detail::put_bytes(os, "ACMP", 4);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u8(os, net.spatial ? 1 : 0);
    detail::put_u32(os, static_cast<std::uint32_t>(net.input_shape.size()));
    for (const int d : net.input_shape)
        detail::put_u32(os, static_cast<std::uint32_t>(d));
    detail::put_u32(os, static_cast<std::uint32_t>(net.num_classes));
    detail::put_u32(os, static_cast<std::uint32_t>(net.layers.size()));
    for (const Layer& l : net.layers) {
        detail::put_u8(os, static_cast<std::uint8_t>(l.kind));
        detail::put_u32(os, static_cast<std::uint32_t>(l.in));
        detail::put_u32(os, static_cast<std::uint32_t>(l.out));
    }
    for (const Layer& l : net.layers) {
        if (!l.has_params())
            continue;
        detail::put_param(os, l.weight);
        if (!l.bias.empty())
            detail::put_param(os, l.bias);
    }
    if (!os)
        throw IoError("write failure on checkpoint: " + path);
}

inline Network load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    detail::get_bytes(is, magic, 4, "magic");
    if (std::string(magic, 4) != "ACMP")
        throw IoError("not a checkpoint file (bad magic): " + path);
    const std::uint32_t version = detail::get_u32(is, "version");
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));

    Network net;
    net.spatial = detail::get_u8(is, "spatial flag") != 0;
    const std::uint32_t rank = detail::get_u32(is, "input rank");
    net.input_shape.resize(rank);
    for (auto& d : net.input_shape)
        d = static_cast<int>(detail::get_u32(is, "input shape"));
    net.num_classes = static_cast<int>(detail::get_u32(is, "class count"));
    const std::uint32_t n_layers = detail::get_u32(is, "layer count");
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        const auto kind = static_cast<LayerKind>(detail::get_u8(is, "layer kind"));
        const int in = static_cast<int>(detail::get_u32(is, "layer in"));
        const int out = static_cast<int>(detail::get_u32(is, "layer out"));
        switch (kind) {
        case LayerKind::Dense: net.layers.push_back(make_dense(in, out)); break;
        case LayerKind::Conv2d: net.layers.push_back(make_conv(in, out)); break;
        case LayerKind::ReLU: net.layers.push_back(make_relu()); break;
        case LayerKind::Flatten: net.layers.push_back(make_flatten()); break;
        case LayerKind::GroupAdapter: net.layers.push_back(make_adapter(in)); break;
        default: throw IoError("corrupt checkpoint: unknown layer kind");
        }
    }
    for (Layer& l : net.layers) {
        if (!l.has_params())
            continue;
        detail::get_param(is, l.weight, layer_kind_name(l.kind));
        if (!l.bias.empty())
            detail::get_param(is, l.bias, layer_kind_name(l.kind));
    }
    validate_network(net);
    return net;
}

} // namespace acmp
