#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "acmp/errors.hpp"
#include "acmp/network.hpp"
#include "acmp/tensor.hpp"

namespace acmp {

// One executed primitive: which layer ran and the input it consumed (the
// saved intermediate every backward rule needs).
struct TapeRecord {
    int layer_index;
    Tensor input;
};

struct Tape {
    Network* net = nullptr;
    std::vector<TapeRecord> records;
    Tensor logits;
    bool consumed = false;
};

namespace detail {

inline void check_finite_or_throw(const Tensor& t, std::size_t layer_index, LayerKind kind) {
    if (!t.all_finite())
        throw NumericError("non-finite activation after layer " + std::to_string(layer_index) +
                           " (" + std::string(layer_kind_name(kind)) + ")");
}

inline Tensor dense_forward(const Layer& l, const Tensor& x) {
    const std::size_t n = x.dim(0), in = x.dim(1), out = static_cast<std::size_t>(l.out);
    Tensor y({n, out});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out; ++o) {
            double acc = l.bias.value[o];
            const double* w = &l.weight.value.data[o * in];
            const double* xi = &x.data[i * in];
            for (std::size_t k = 0; k < in; ++k)
                acc += w[k] * xi[k];
            y[i * out + o] = acc;
        }
    }
    return y;
}

inline Tensor dense_backward(Layer& l, const Tensor& x, const Tensor& dy) {
    const std::size_t n = x.dim(0), in = x.dim(1), out = static_cast<std::size_t>(l.out);
    Tensor dx(x.shape);
    for (std::size_t i = 0; i < n; ++i) {
        const double* g = &dy.data[i * out];
        const double* xi = &x.data[i * in];
        double* dxi = &dx.data[i * in];
        for (std::size_t o = 0; o < out; ++o) {
            const double go = g[o];
            l.bias.grad[o] += go;
            double* dw = &l.weight.grad.data[o * in];
            const double* w = &l.weight.value.data[o * in];
            for (std::size_t k = 0; k < in; ++k) {
                dw[k] += go * xi[k];
                dxi[k] += go * w[k];
            }
        }
    }
    return dx;
}

inline Tensor conv_forward(const Layer& l, const Tensor& x) {
    const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t co = static_cast<std::size_t>(l.out);
    Tensor y({n, co, h, w});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < co; ++o) {
            double* yrow = &y.data[y.at4(b, o, 0, 0)];
            const double bias = l.bias.value[o];
            for (std::size_t i = 0; i < h * w; ++i)
                yrow[i] = bias;
            for (std::size_t c = 0; c < ci; ++c) {
                const double* k = &l.weight.value.data[((o * ci) + c) * 9];
                const double* xc = &x.data[x.at4(b, c, 0, 0)];
                for (std::size_t ky = 0; ky < 3; ++ky)
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const double kv = k[ky * 3 + kx];
                        if (kv == 0.0)
                            continue;
                        const long dy0 = static_cast<long>(ky) - 1, dx0 = static_cast<long>(kx) - 1;
                        const std::size_t y0 = dy0 < 0 ? static_cast<std::size_t>(-dy0) : 0;
                        const std::size_t y1 = dy0 > 0 ? h - static_cast<std::size_t>(dy0) : h;
                        const std::size_t x0 = dx0 < 0 ? static_cast<std::size_t>(-dx0) : 0;
                        const std::size_t x1 = dx0 > 0 ? w - static_cast<std::size_t>(dx0) : w;
                        for (std::size_t yy = y0; yy < y1; ++yy) {
                            const double* xr = xc + static_cast<std::size_t>(static_cast<long>(yy) + dy0) * w;
                            double* yr = yrow + yy * w;
                            for (std::size_t xx = x0; xx < x1; ++xx)
                                yr[xx] += kv * xr[static_cast<std::size_t>(static_cast<long>(xx) + dx0)];
                        }
                    }
            }
        }
    return y;
}

inline Tensor conv_backward(Layer& l, const Tensor& x, const Tensor& dy) {
    const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t co = static_cast<std::size_t>(l.out);
    Tensor dx(x.shape);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < co; ++o) {
            const double* grow = &dy.data[dy.at4(b, o, 0, 0)];
            double gb = 0.0;
            for (std::size_t i = 0; i < h * w; ++i)
                gb += grow[i];
            l.bias.grad[o] += gb;
            for (std::size_t c = 0; c < ci; ++c) {
                double* dk = &l.weight.grad.data[((o * ci) + c) * 9];
                const double* k = &l.weight.value.data[((o * ci) + c) * 9];
                const double* xc = &x.data[x.at4(b, c, 0, 0)];
                double* dxc = &dx.data[dx.at4(b, c, 0, 0)];
                for (std::size_t ky = 0; ky < 3; ++ky)
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const long dy0 = static_cast<long>(ky) - 1, dx0 = static_cast<long>(kx) - 1;
                        const std::size_t y0 = dy0 < 0 ? static_cast<std::size_t>(-dy0) : 0;
                        const std::size_t y1 = dy0 > 0 ? h - static_cast<std::size_t>(dy0) : h;
                        const std::size_t x0 = dx0 < 0 ? static_cast<std::size_t>(-dx0) : 0;
                        const std::size_t x1 = dx0 > 0 ? w - static_cast<std::size_t>(dx0) : w;
                        const double kv = k[ky * 3 + kx];
                        double acc = 0.0;
                        for (std::size_t yy = y0; yy < y1; ++yy) {
                            const double* gr = grow + yy * w;
                            const double* xr = xc + static_cast<std::size_t>(static_cast<long>(yy) + dy0) * w;
                            double* dxr = dxc + static_cast<std::size_t>(static_cast<long>(yy) + dy0) * w;
                            for (std::size_t xx = x0; xx < x1; ++xx) {
                                const double g = gr[xx];
                                acc += g * xr[static_cast<std::size_t>(static_cast<long>(xx) + dx0)];
                                dxr[static_cast<std::size_t>(static_cast<long>(xx) + dx0)] += g * kv;
                            }
                        }
                        dk[ky * 3 + kx] += acc;
                    }
            }
        }
    return dx;
}

inline Tensor adapter_forward(const Layer& l, const Tensor& x) {
    const std::size_t nch = static_cast<std::size_t>(l.in);
    const Tensor& a = l.weight.value;
    Tensor y(x.shape);
    if (x.rank() == 2) {
        const std::size_t n = x.dim(0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < nch; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < nch; ++k)
                    acc += x[i * nch + k] * a[k * nch + j];
                y[i * nch + j] = acc;
            }
    } else {
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), hw = h * w;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t j = 0; j < nch; ++j) {
                double* yj = &y.data[y.at4(b, j, 0, 0)];
                for (std::size_t k = 0; k < nch; ++k) {
                    const double av = a[k * nch + j];
                    if (av == 0.0)
                        continue;
                    const double* xk = &x.data[x.at4(b, k, 0, 0)];
                    for (std::size_t i = 0; i < hw; ++i)
                        yj[i] += av * xk[i];
                }
            }
    }
    return y;
}

inline Tensor adapter_backward(Layer& l, const Tensor& x, const Tensor& dy) {
    const std::size_t nch = static_cast<std::size_t>(l.in);
    const Tensor& a = l.weight.value;
    Tensor& da = l.weight.grad;
    Tensor dx(x.shape);
    if (x.rank() == 2) {
        const std::size_t n = x.dim(0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < nch; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < nch; ++j) {
                    acc += dy[i * nch + j] * a[k * nch + j];
                    da[k * nch + j] += x[i * nch + k] * dy[i * nch + j];
                }
                dx[i * nch + k] = acc;
            }
    } else {
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), hw = h * w;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t k = 0; k < nch; ++k) {
                const double* xk = &x.data[x.at4(b, k, 0, 0)];
                double* dxk = &dx.data[dx.at4(b, k, 0, 0)];
                for (std::size_t j = 0; j < nch; ++j) {
                    const double av = a[k * nch + j];
                    const double* gj = &dy.data[dy.at4(b, j, 0, 0)];
                    double gsum = 0.0;
                    for (std::size_t i = 0; i < hw; ++i) {
                        dxk[i] += av * gj[i];
                        gsum += xk[i] * gj[i];
                    }
                    da[k * nch + j] += gsum;
                }
            }
    }
    return dx;
}

} // namespace detail

// Runs the layer stack on a batch, recording every primitive on the tape.
inline Tape forward(Network& net, const Tensor& batch_inputs) {
    if (net.spatial) {
        if (batch_inputs.rank() != 4 ||
            batch_inputs.dim(1) != static_cast<std::size_t>(net.input_shape[0]))
            throw ShapeError("input " + batch_inputs.shape_string() + " does not match declared [N," +
                             std::to_string(net.input_shape[0]) + ",H,W] input");
    } else {
        if (batch_inputs.rank() != 2 ||
            batch_inputs.dim(1) != static_cast<std::size_t>(net.input_shape[0]))
            throw ShapeError("input " + batch_inputs.shape_string() + " does not match declared [N," +
                             std::to_string(net.input_shape[0]) + "] input");
    }
    Tape tape;
    tape.net = &net;
    Tensor cur = batch_inputs;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        Layer& l = net.layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + ")";
        Tensor next;
        switch (l.kind) {
        case LayerKind::Dense:
            if (cur.rank() != 2 || cur.dim(1) != static_cast<std::size_t>(l.in))
                throw ShapeError(where + ": cannot consume input " + cur.shape_string());
            tape.records.push_back({static_cast<int>(i), cur});
            next = detail::dense_forward(l, cur);
            break;
        case LayerKind::Conv2d:
            if (cur.rank() != 4 || cur.dim(1) != static_cast<std::size_t>(l.in))
                throw ShapeError(where + ": cannot consume input " + cur.shape_string());
            tape.records.push_back({static_cast<int>(i), cur});
            next = detail::conv_forward(l, cur);
            break;
        case LayerKind::ReLU: {
            tape.records.push_back({static_cast<int>(i), cur});
            next = cur;
            for (double& v : next.data)
                v = v > 0.0 ? v : 0.0;
            break;
        }
        case LayerKind::Flatten: {
            if (cur.rank() != 4)
                throw ShapeError(where + ": cannot consume input " + cur.shape_string());
            tape.records.push_back({static_cast<int>(i), cur});
            next = cur;
            next.shape = {cur.dim(0), cur.dim(1) * cur.dim(2) * cur.dim(3)};
            break;
        }
        case LayerKind::GroupAdapter:
            if (cur.dim(1) != static_cast<std::size_t>(l.in))
                throw ShapeError(where + ": cannot consume input " + cur.shape_string());
            tape.records.push_back({static_cast<int>(i), cur});
            next = detail::adapter_forward(l, cur);
            break;
        }
        detail::check_finite_or_throw(next, i, l.kind);
        cur = std::move(next);
    }
    tape.logits = std::move(cur);
    return tape;
}

// Forward pass without keeping intermediates (teacher/eval path).
inline Tensor predict(const Network& net, const Tensor& batch_inputs) {
    Tape tape = forward(const_cast<Network&>(net), batch_inputs);
    return std::move(tape.logits);
}

// Reverse pass over the tape. Populates every Parameter.grad (grads of masked
// entries are zeroed through the mask) and returns the gradient with respect
// to the batch inputs, which saliency needs. A tape can be replayed once.
inline Tensor backward(Tape& tape, const Tensor& loss_grad) {
    if (tape.consumed)
        throw Error("tape already consumed by a previous backward pass");
    if (!loss_grad.same_shape(tape.logits))
        throw ShapeError("loss gradient " + loss_grad.shape_string() + " does not match logits " +
                         tape.logits.shape_string());
    tape.consumed = true;
    Network& net = *tape.net;
    Tensor grad = loss_grad;
    for (std::size_t r = tape.records.size(); r-- > 0;) {
        const TapeRecord& rec = tape.records[r];
        Layer& l = net.layers[static_cast<std::size_t>(rec.layer_index)];
        switch (l.kind) {
        case LayerKind::Dense:
            grad = detail::dense_backward(l, rec.input, grad);
            break;
        case LayerKind::Conv2d:
            grad = detail::conv_backward(l, rec.input, grad);
            break;
        case LayerKind::ReLU: {
            Tensor dx = rec.input;
            for (std::size_t i = 0; i < dx.size(); ++i)
                dx[i] = rec.input[i] > 0.0 ? grad[i] : 0.0;
            grad = std::move(dx);
            break;
        }
        case LayerKind::Flatten:
            grad.shape = rec.input.shape;
            break;
        case LayerKind::GroupAdapter:
            grad = detail::adapter_backward(l, rec.input, grad);
            break;
        }
    }
    // Pruned coordinates stay frozen: their gradient is masked out.
    net.for_each_param([](const std::string&, Parameter& p) {
        for (std::size_t i = 0; i < p.grad.size(); ++i)
            p.grad[i] *= p.mask[i];
    });
    return grad;
}

// Temperature softmax over the class axis (dim 1), with max-subtraction.
inline Tensor softmax_t(const Tensor& logits, double T) {
    if (!(T > 0.0))
        throw DomainError("softmax temperature must be > 0");
    Tensor out(logits.shape);
    const std::size_t c = logits.dim(1);
    const std::size_t positions = logits.rank() == 4 ? logits.dim(2) * logits.dim(3) : 1;
    const std::size_t n = logits.dim(0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t pos = 0; pos < positions; ++pos) {
            const std::size_t base = b * c * positions + pos;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < c; ++k)
                mx = std::max(mx, logits[base + k * positions]);
            double denom = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
                const double e = std::exp((logits[base + k * positions] - mx) / T);
                out[base + k * positions] = e;
                denom += e;
            }
            for (std::size_t k = 0; k < c; ++k)
                out[base + k * positions] /= denom;
        }
    return out;
}

// log softmax at T=1, same layout rules as softmax_t.
inline Tensor log_softmax(const Tensor& logits) {
    Tensor out(logits.shape);
    const std::size_t c = logits.dim(1);
    const std::size_t positions = logits.rank() == 4 ? logits.dim(2) * logits.dim(3) : 1;
    const std::size_t n = logits.dim(0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t pos = 0; pos < positions; ++pos) {
            const std::size_t base = b * c * positions + pos;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < c; ++k)
                mx = std::max(mx, logits[base + k * positions]);
            double denom = 0.0;
            for (std::size_t k = 0; k < c; ++k)
                denom += std::exp(logits[base + k * positions] - mx);
            const double lse = mx + std::log(denom);
            for (std::size_t k = 0; k < c; ++k)
                out[base + k * positions] = logits[base + k * positions] - lse;
        }
    return out;
}

// Classical momentum SGD: v <- mu*v + (g + wd*w); w <- w - lr*v, then the
// prune mask is re-applied. Adapter matrices use lr*adapter_lr_scale and are
// exempt from weight decay (their regularizer is the group-sparsity term).
inline void sgd_step(Network& net, double lr, double momentum, double weight_decay,
                     double adapter_lr_scale = 1.0) {
    if (!(lr > 0.0))
        throw DomainError("learning rate must be > 0");
    net.for_each_param([&](const std::string&, Parameter& p) {
        const double step = p.adapter ? lr * adapter_lr_scale : lr;
        const double wd = p.adapter ? 0.0 : weight_decay;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i] + wd * p.value[i];
            p.velocity[i] = momentum * p.velocity[i] + g;
            p.value[i] -= step * p.velocity[i];
        }
        p.apply_mask();
    });
}

} // namespace acmp
