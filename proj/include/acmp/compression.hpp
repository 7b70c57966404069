#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "acmp/errors.hpp"
#include "acmp/metrics.hpp"
#include "acmp/network.hpp"
#include "acmp/train.hpp"

namespace acmp {

enum class PruneScope : int { PerLayer = 0, Global };

// How "sparsity increases by a fixed factor" is read: prune a fraction of the
// currently surviving weights each step (iterative magnitude pruning), or add
// a fixed number of percentage points of total sparsity per step.
enum class PruneStepMode : int { FractionOfSurvivors = 0, AddPercentagePoints };

enum class CompressionMethod : int { Magnitude = 0, GroupSparsity };

struct CompressionPlan {
    CompressionMethod method = CompressionMethod::Magnitude;
    double per_step_fraction = 0.2;
    int num_steps = 4;
    int finetune_epochs_per_step = 20;
    PruneScope scope = PruneScope::PerLayer;
    PruneStepMode step_mode = PruneStepMode::FractionOfSurvivors;
    double lambda = 2e-4;                 // group-sparsity regularization factor
    double lr_ratio = 0.01;               // eta_s / eta for adapter matrices
    double column_threshold = 1e-2;       // x mean column norm; columns below are pruned
    std::vector<int> adapter_layers;      // layer indices (of the unadapted net)
};

namespace detail {

struct Candidate {
    double magnitude;
    int param_order;
    std::size_t index;
    Parameter* param;
};

inline void zero_candidates(std::vector<Candidate>& cands, std::size_t k) {
    // Smallest |w| first; ties resolved by parameter order then flat index,
    // so all-equal magnitudes prune the lowest indices.
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.magnitude != b.magnitude)
            return a.magnitude < b.magnitude;
        if (a.param_order != b.param_order)
            return a.param_order < b.param_order;
        return a.index < b.index;
    });
    for (std::size_t i = 0; i < k && i < cands.size(); ++i) {
        cands[i].param->mask[cands[i].index] = 0.0;
        cands[i].param->value[cands[i].index] = 0.0;
    }
}

} // namespace detail

// Zeroes the given fraction of currently surviving weight entries with the
// smallest magnitudes (count floored). Biases and adapter matrices are never
// magnitude-pruned. Masks only ever move 1 -> 0.
inline void magnitude_prune(Network& net, double fraction, PruneScope scope) {
    if (!(fraction > 0.0) || !(fraction < 1.0))
        throw DomainError("prune fraction must lie in (0,1)");
    std::vector<detail::Candidate> pool;
    int order = 0;
    net.for_each_param([&](const std::string&, Parameter& p) {
        if (!p.prunable) {
            ++order;
            return;
        }
        std::vector<detail::Candidate> survivors;
        for (std::size_t i = 0; i < p.value.size(); ++i)
            if (p.mask[i] != 0.0)
                survivors.push_back({std::abs(p.value[i]), order, i, &p});
        if (scope == PruneScope::PerLayer) {
            const std::size_t k =
                static_cast<std::size_t>(fraction * static_cast<double>(survivors.size()));
            detail::zero_candidates(survivors, k);
        } else {
            pool.insert(pool.end(), survivors.begin(), survivors.end());
        }
        ++order;
    });
    if (scope == PruneScope::Global) {
        const std::size_t k = static_cast<std::size_t>(fraction * static_cast<double>(pool.size()));
        detail::zero_candidates(pool, k);
    }
}

// Prunes toward an absolute target sparsity (AddPercentagePoints mode).
inline void prune_to_sparsity(Network& net, double target, PruneScope scope) {
    target = std::clamp(target, 0.0, 1.0);
    std::vector<detail::Candidate> pool;
    std::size_t pool_total = 0, pool_zeros = 0;
    int order = 0;
    net.for_each_param([&](const std::string&, Parameter& p) {
        if (!p.prunable) {
            ++order;
            return;
        }
        std::vector<detail::Candidate> survivors;
        std::size_t zeros = 0;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            if (p.mask[i] != 0.0)
                survivors.push_back({std::abs(p.value[i]), order, i, &p});
            else
                ++zeros;
        }
        if (scope == PruneScope::PerLayer) {
            const std::size_t want =
                static_cast<std::size_t>(target * static_cast<double>(p.value.size()));
            if (want > zeros)
                detail::zero_candidates(survivors, want - zeros);
        } else {
            pool.insert(pool.end(), survivors.begin(), survivors.end());
            pool_total += p.value.size();
            pool_zeros += zeros;
        }
        ++order;
    });
    if (scope == PruneScope::Global) {
        const std::size_t want = static_cast<std::size_t>(target * static_cast<double>(pool_total));
        if (want > pool_zeros)
            detail::zero_candidates(pool, want - pool_zeros);
    }
}

struct StepLog {
    int step = 0;
    double sparsity = 0.0;
    std::map<LossTerm, double> losses;  // unweighted term values on the train split
    double accuracy = 0.0;              // eval accuracy (pixel accuracy for segmentation)
    long cie_count = 0;                 // eval CIEs (CIPs for segmentation) vs the reference
};

struct CompressionResult {
    Network net;
    std::vector<StepLog> steps;
};

namespace detail {

inline StepLog snapshot_step(int step, Network& student, const Network& reference,
                             const Dataset& ds, const LossConfig& loss_cfg) {
    StepLog log;
    log.step = step;
    log.sparsity = student.sparsity();
    log.accuracy = accuracy_of(student, ds.eval_inputs, ds.eval_labels);
    const std::vector<int> pr = predict_classes(reference, ds.eval_inputs);
    const std::vector<int> pc = predict_classes(student, ds.eval_inputs);
    for (std::size_t i = 0; i < pr.size(); ++i)
        if (pr[i] != pc[i])
            ++log.cie_count;
    // Term values over the train split, unweighted.
    std::vector<std::size_t> all(ds.train_size());
    std::iota(all.begin(), all.end(), 0);
    const Batch batch = gather_batch(ds, all, true);
    LossConfig cfg = loss_cfg;
    cfg.canonicalize();
    CombinedEval ev = eval_combined(cfg, uniform_over(cfg.terms), batch, student,
                                    cfg.needs_teacher() ? &reference : nullptr);
    log.losses = ev.loss.term_values;
    return log;
}

} // namespace detail

// REWIND-style iterative magnitude pruning: prune, then retrain the whole
// model with the configured combined loss against the frozen reference,
// using the reference schedule compressed to finetune_epochs_per_step.
// Weights continue from their current values. Masks are monotone: once a
// coordinate is pruned it stays pruned.
inline CompressionResult rewind_compress(const Network& reference, const CompressionPlan& plan,
                                         const LossConfig& loss_cfg,
                                         const WeightingConfig& weighting_cfg,
                                         const TrainSchedule& schedule, const Dataset& ds,
                                         std::uint64_t seed) {
    CompressionResult result;
    result.net = reference;
    const TrainSchedule ft = scale_schedule(schedule, plan.finetune_epochs_per_step);
    for (int step = 0; step < plan.num_steps; ++step) {
        if (plan.step_mode == PruneStepMode::FractionOfSurvivors)
            magnitude_prune(result.net, plan.per_step_fraction, plan.scope);
        else
            prune_to_sparsity(result.net, plan.per_step_fraction * (step + 1), plan.scope);
        FitOptions opts;
        opts.teacher = &reference;
        opts.loss = loss_cfg;
        opts.weighting = weighting_cfg;
        opts.seed = seed;
        opts.rng_tag = "finetune/step" + std::to_string(step);
        opts.log_metrics = false;
        fit(result.net, ds, ft, opts);
        result.steps.push_back(detail::snapshot_step(step + 1, result.net, reference, ds, loss_cfg));
    }
    return result;
}

// Inserts the n x n identity adapter right after the given Dense/Conv layer.
// Forward outputs are unchanged at initialization.
inline void attach_group_adapter(Network& net, int layer_index) {
    if (layer_index < 0 || static_cast<std::size_t>(layer_index) >= net.layers.size())
        throw ConfigError("adapter target layer index out of range");
    const Layer& target = net.layers[static_cast<std::size_t>(layer_index)];
    if (target.kind != LayerKind::Dense && target.kind != LayerKind::Conv2d)
        throw ConfigError("adapters attach to Dense or Conv2d layers, not " +
                          std::string(layer_kind_name(target.kind)));
    net.layers.insert(net.layers.begin() + layer_index + 1, make_adapter(target.out));
    validate_network(net);
}

// Column-wise group L2 of a square matrix: sum_j ||A[:,j]||_2. The
// subgradient of a zero column is defined as 0.
inline std::pair<double, Tensor> group_sparsity_regularizer(const Tensor& a) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1))
        throw DomainError("group-sparsity regularizer expects a square matrix");
    const std::size_t n = a.dim(0);
    Tensor grad(a.shape);
    double value = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            sq += a[i * n + j] * a[i * n + j];
        const double norm = std::sqrt(sq);
        value += norm;
        if (norm > 0.0)
            for (std::size_t i = 0; i < n; ++i)
                grad[i * n + j] = a[i * n + j] / norm;
    }
    return {value, grad};
}

namespace detail {

inline std::vector<double> column_norms(const Tensor& a) {
    const std::size_t n = a.dim(0);
    std::vector<double> norms(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            sq += a[i * n + j] * a[i * n + j];
        norms[j] = std::sqrt(sq);
    }
    return norms;
}

inline void drop_rows(Parameter& p, const std::vector<bool>& drop, std::size_t row_width) {
    const std::size_t rows = p.value.size() / row_width;
    Tensor value, mask, grad, velocity;
    std::vector<std::size_t> shape = p.value.shape;
    std::size_t kept = 0;
    for (std::size_t r = 0; r < rows; ++r)
        if (!drop[r])
            ++kept;
    shape[0] = kept;
    value = Tensor(shape);
    mask = Tensor(shape);
    grad = Tensor(shape);
    velocity = Tensor(shape);
    std::size_t out_row = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (drop[r])
            continue;
        std::copy_n(&p.value.data[r * row_width], row_width, &value.data[out_row * row_width]);
        std::copy_n(&p.mask.data[r * row_width], row_width, &mask.data[out_row * row_width]);
        ++out_row;
    }
    p.value = std::move(value);
    p.mask = std::move(mask);
    p.grad = std::move(grad);
    p.velocity = std::move(velocity);
}

// Removes input channel/column blocks from a consumer layer.
inline void drop_consumer_inputs(Layer& consumer, const std::vector<bool>& drop_channel,
                                 std::size_t block) {
    const std::size_t n_ch = drop_channel.size();
    std::size_t kept_ch = 0;
    for (std::size_t c = 0; c < n_ch; ++c)
        if (!drop_channel[c])
            ++kept_ch;
    Parameter& w = consumer.weight;
    std::vector<std::size_t> shape = w.value.shape;
    std::size_t in_per_out_old, in_per_out_new, tail;
    if (consumer.kind == LayerKind::Dense) {
        in_per_out_old = shape[1];
        tail = 1;
        shape[1] = kept_ch * block;
        in_per_out_new = shape[1];
    } else {  // Conv2d: [out, in, 3, 3]
        in_per_out_old = shape[1] * 9;
        tail = 9;
        shape[1] = kept_ch;
        in_per_out_new = kept_ch * 9;
    }
    Tensor value(shape), mask(shape), grad(shape), velocity(shape);
    const std::size_t outs = shape[0];
    for (std::size_t o = 0; o < outs; ++o) {
        std::size_t dst = 0;
        for (std::size_t c = 0; c < n_ch; ++c) {
            if (drop_channel[c])
                continue;
            const std::size_t width = consumer.kind == LayerKind::Dense ? block : tail;
            std::copy_n(&w.value.data[o * in_per_out_old + c * width], width,
                        &value.data[o * in_per_out_new + dst * width]);
            std::copy_n(&w.mask.data[o * in_per_out_old + c * width], width,
                        &mask.data[o * in_per_out_new + dst * width]);
            ++dst;
        }
    }
    w.value = std::move(value);
    w.mask = std::move(mask);
    w.grad = std::move(grad);
    w.velocity = std::move(velocity);
    consumer.in = static_cast<int>(consumer.kind == LayerKind::Dense ? kept_ch * block : kept_ch);
}

} // namespace detail

// Folds every adapter into its preceding layer: W' = A^T W, b' = A^T b, with
// columns below threshold x (mean column norm) zeroed first. Output channels
// whose column was zeroed (or is exactly zero) are removed together with the
// matching inputs of the next parameterized layer; when no such consumer
// exists (adapter on the logit layer) the channels are kept as zero rows so
// the class count is preserved. Pure linear algebra: the folded net computes
// the same function as the adapter net.
inline Network fold_adapters(const Network& source, double column_threshold) {
    Network net = source;
    for (std::size_t i = 0; i < net.layers.size();) {
        if (net.layers[i].kind != LayerKind::GroupAdapter) {
            ++i;
            continue;
        }
        if (i == 0 || !net.layers[i - 1].has_params() ||
            net.layers[i - 1].out != net.layers[i].in)
            throw ConfigError("adapter at layer " + std::to_string(i) +
                              " has no matching preceding layer to fold into");
        Layer& prev = net.layers[i - 1];
        const Tensor a = net.layers[i].weight.value;
        const std::size_t n = a.dim(0);

        // Threshold small columns to exactly zero.
        std::vector<double> norms = detail::column_norms(a);
        double mean_norm = 0.0;
        for (const double v : norms)
            mean_norm += v;
        mean_norm /= static_cast<double>(n);
        Tensor a_pruned = a;
        std::vector<bool> dead(n, false);
        std::size_t dead_count = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (norms[j] < column_threshold * mean_norm || norms[j] == 0.0) {
                dead[j] = true;
                ++dead_count;
                for (std::size_t r = 0; r < n; ++r)
                    a_pruned[r * n + j] = 0.0;
            }
        }
        if (dead_count == n)
            throw DomainError("degenerate model: every adapter column pruned at layer " +
                              std::to_string(i));

        // Fold: channel j of the composed layer mixes the previous outputs by
        // column j of A.
        Parameter folded_w = prev.weight;
        Parameter folded_b = prev.bias;
        if (prev.kind == LayerKind::Dense) {
            const std::size_t in = prev.weight.value.dim(1);
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t col = 0; col < in; ++col) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < n; ++k)
                        acc += a_pruned[k * n + j] * prev.weight.value[k * in + col];
                    folded_w.value[j * in + col] = acc;
                }
        } else {
            const std::size_t per_out = prev.weight.value.dim(1) * 9;
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t col = 0; col < per_out; ++col) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < n; ++k)
                        acc += a_pruned[k * n + j] * prev.weight.value[k * per_out + col];
                    folded_w.value[j * per_out + col] = acc;
                }
        }
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                acc += a_pruned[k * n + j] * prev.bias.value[k];
            folded_b.value[j] = acc;
        }
        // Folded entries are fresh linear combinations; masks reset to ones.
        std::fill(folded_w.mask.data.begin(), folded_w.mask.data.end(), 1.0);
        std::fill(folded_w.grad.data.begin(), folded_w.grad.data.end(), 0.0);
        std::fill(folded_w.velocity.data.begin(), folded_w.velocity.data.end(), 0.0);
        prev.weight = std::move(folded_w);
        prev.bias = std::move(folded_b);

        net.layers.erase(net.layers.begin() + static_cast<long>(i));

        if (dead_count > 0) {
            // Find the next parameterized consumer; ReLU passes zeros through.
            std::size_t consumer = i;
            bool through_flatten = false;
            bool found = false;
            for (std::size_t k = i; k < net.layers.size(); ++k) {
                if (net.layers[k].kind == LayerKind::ReLU)
                    continue;
                if (net.layers[k].kind == LayerKind::Flatten) {
                    through_flatten = true;
                    continue;
                }
                if (net.layers[k].kind == LayerKind::Dense ||
                    net.layers[k].kind == LayerKind::Conv2d) {
                    consumer = k;
                    found = true;
                }
                break;
            }
            if (found) {
                Layer& cons = net.layers[consumer];
                const std::size_t row_width = prev.kind == LayerKind::Dense
                                                  ? prev.weight.value.dim(1)
                                                  : prev.weight.value.dim(1) * 9;
                detail::drop_rows(prev.weight, dead, row_width);
                detail::drop_rows(prev.bias, dead, 1);
                prev.out = static_cast<int>(n - dead_count);
                const std::size_t block = through_flatten || cons.kind == LayerKind::Dense
                                              ? static_cast<std::size_t>(cons.in) / n
                                              : 1;
                detail::drop_consumer_inputs(cons, dead, block);
            }
        }
    }
    validate_network(net);
    return net;
}

// Group-sparsity compression: attach adapters, train W with the combined loss
// and A with lr_ratio-scaled steps under the column-wise regularizer, then
// threshold columns and fold. Training runs for num_steps x
// finetune_epochs_per_step epochs of the reference schedule profile.
inline CompressionResult group_sparsity_compress(const Network& reference,
                                                 const CompressionPlan& plan,
                                                 const LossConfig& loss_cfg,
                                                 const WeightingConfig& weighting_cfg,
                                                 const TrainSchedule& schedule, const Dataset& ds,
                                                 std::uint64_t seed) {
    if (plan.adapter_layers.empty())
        throw ConfigError("group-sparsity compression needs adapter_layers");
    CompressionResult result;
    result.net = reference;
    std::vector<int> targets = plan.adapter_layers;
    std::sort(targets.begin(), targets.end(), std::greater<int>());
    for (const int idx : targets)
        attach_group_adapter(result.net, idx);

    const int epochs = std::max(1, plan.num_steps) * plan.finetune_epochs_per_step;
    FitOptions opts;
    opts.teacher = &reference;
    opts.loss = loss_cfg;
    opts.weighting = weighting_cfg;
    opts.seed = seed;
    opts.rng_tag = "group_sparsity";
    opts.log_metrics = false;
    opts.adapter_lr_ratio = plan.lr_ratio;
    opts.grad_hook = [&plan](Network& n) {
        for (Layer& l : n.layers) {
            if (l.kind != LayerKind::GroupAdapter)
                continue;
            const auto [value, grad] = group_sparsity_regularizer(l.weight.value);
            for (std::size_t i = 0; i < grad.size(); ++i)
                l.weight.grad[i] += plan.lambda * grad[i];
        }
    };
    fit(result.net, ds, scale_schedule(schedule, epochs), opts);

    result.net = fold_adapters(result.net, plan.column_threshold);
    result.steps.push_back(
        detail::snapshot_step(1, result.net, reference, ds, loss_cfg));
    return result;
}

// Dispatch on the plan's method.
inline CompressionResult compress(const Network& reference, const CompressionPlan& plan,
                                  const LossConfig& loss_cfg, const WeightingConfig& weighting_cfg,
                                  const TrainSchedule& schedule, const Dataset& ds,
                                  std::uint64_t seed) {
    if (plan.method == CompressionMethod::Magnitude)
        return rewind_compress(reference, plan, loss_cfg, weighting_cfg, schedule, ds, seed);
    return group_sparsity_compress(reference, plan, loss_cfg, weighting_cfg, schedule, ds, seed);
}

} // namespace acmp
