#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "acmp/dataset.hpp"
#include "acmp/errors.hpp"
#include "acmp/losses.hpp"
#include "acmp/metrics.hpp"
#include "acmp/weighting.hpp"

namespace acmp {

struct TrainSchedule {
    int epochs = 50;
    double lr = 0.1;
    std::vector<int> lr_milestones;  // epochs at which lr multiplies by the decay factor
    double lr_decay_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int batch_size = 64;
};

// Shrinks a schedule to `epochs` while keeping the same lr-decay profile
// (milestones scale proportionally). Used for the retrain-after-prune loop,
// which reuses the reference schedule.
inline TrainSchedule scale_schedule(const TrainSchedule& base, int epochs) {
    TrainSchedule s = base;
    s.epochs = epochs;
    s.lr_milestones.clear();
    if (base.epochs > 0)
        for (const int m : base.lr_milestones) {
            const int scaled = static_cast<int>(static_cast<long>(m) * epochs / base.epochs);
            if (scaled > 0 && scaled < epochs)
                s.lr_milestones.push_back(scaled);
        }
    return s;
}

struct TrainLogRow {
    int epoch;
    double loss;
    double train_metric;  // accuracy, or dice for segmentation
    double eval_metric;
};

struct FitOptions {
    const Network* teacher = nullptr;
    LossConfig loss;
    WeightingConfig weighting;
    std::uint64_t seed = 1;
    std::string rng_tag = "train";  // distinguishes reference/fine-tune streams
    bool log_metrics = true;        // per-epoch train/eval metric evaluation
    double adapter_lr_ratio = 1.0;
    // Called after backward, before the optimizer step (adapter regularizers
    // hook in here).
    std::function<void(Network&)> grad_hook;
    // Per-step observer: (weights used, unweighted term values).
    std::function<void(const TermWeights&, const std::map<LossTerm, double>&)> step_observer;
};

inline double lr_at_epoch(const TrainSchedule& s, int epoch) {
    double lr = s.lr;
    for (const int m : s.lr_milestones)
        if (epoch >= m)
            lr *= s.lr_decay_factor;
    return lr;
}

// SGD training loop shared by reference training and fine-tuning. Momentum
// buffers start from zero; batches reshuffle every epoch from a named stream.
inline std::vector<TrainLogRow> fit(Network& net, const Dataset& ds, const TrainSchedule& schedule,
                                    const FitOptions& opts) {
    if (schedule.batch_size < 1)
        throw ConfigError("batch size must be >= 1");
    LossConfig loss_cfg = opts.loss;
    loss_cfg.canonicalize();
    if (loss_cfg.needs_teacher() && opts.teacher == nullptr)
        throw ConfigError("loss subset requires a teacher network");

    net.for_each_param([](const std::string&, Parameter& p) {
        std::fill(p.velocity.data.begin(), p.velocity.data.end(), 0.0);
    });

    WeightingState wstate(opts.weighting.scheme, loss_cfg.terms, opts.weighting, opts.seed);
    Rng shuffle_rng(opts.seed, opts.rng_tag + "/shuffle");

    const std::size_t n = ds.train_size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    std::vector<TrainLogRow> log;
    long step = 0;
    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
        const double lr = lr_at_epoch(schedule, epoch);
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(schedule.batch_size)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(schedule.batch_size));
            const std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                               order.begin() + static_cast<long>(stop));
            const Batch batch = gather_batch(ds, idx, true);

            const TermWeights weights = current_weights(wstate);
            CombinedEval ev = eval_combined(loss_cfg, weights, batch, net, opts.teacher);
            if (!std::isfinite(ev.loss.value))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(step));
            net.zero_grads();
            backward(ev.tape, ev.loss.logit_grad);
            if (opts.grad_hook)
                opts.grad_hook(net);
            sgd_step(net, lr, schedule.momentum, schedule.weight_decay, opts.adapter_lr_ratio);
            register_step(wstate, ev.loss.term_values, lr);
            if (opts.step_observer)
                opts.step_observer(weights, ev.loss.term_values);

            epoch_loss += ev.loss.value;
            ++batches;
            ++step;
        }
        TrainLogRow row;
        row.epoch = epoch;
        row.loss = batches ? epoch_loss / static_cast<double>(batches) : 0.0;
        if (opts.log_metrics) {
            if (ds.segmentation) {
                row.train_metric = dice_of(net, ds.train_inputs, ds.train_labels);
                row.eval_metric = dice_of(net, ds.eval_inputs, ds.eval_labels);
            } else {
                row.train_metric = accuracy_of(net, ds.train_inputs, ds.train_labels);
                row.eval_metric = accuracy_of(net, ds.eval_inputs, ds.eval_labels);
            }
        } else {
            row.train_metric = row.eval_metric = 0.0;
        }
        log.push_back(row);
    }
    return log;
}

} // namespace acmp
