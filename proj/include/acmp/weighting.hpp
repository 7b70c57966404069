#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "acmp/errors.hpp"
#include "acmp/losses.hpp"
#include "acmp/rng.hpp"

namespace acmp {

enum class WeightScheme : int { Uniform = 0, Learnable, SoftAdapt, RoundRobin, Random };

inline const char* weight_scheme_name(WeightScheme s) {
    switch (s) {
    case WeightScheme::Uniform: return "uniform";
    case WeightScheme::Learnable: return "learnable";
    case WeightScheme::SoftAdapt: return "softadapt";
    case WeightScheme::RoundRobin: return "round_robin";
    case WeightScheme::Random: return "random";
    }
    return "?";
}

struct WeightingConfig {
    WeightScheme scheme = WeightScheme::Uniform;
    double eta = 1.0;        // SoftAdapt strength/sign; Learnable weight decay
    double epsilon = 1e-8;   // SoftAdapt normalization guard
    int update_period = 10;  // optimization steps between SoftAdapt updates
};

// Each active term gets 1/|active|.
inline TermWeights uniform_weights(const std::vector<LossTerm>& active) {
    return uniform_over(active);
}

// Per-step weighting state: current weights plus scheme-specific memory (raw
// learnable params, SoftAdapt loss-history window, RNG stream for Random).
struct WeightingState {
    WeightScheme scheme = WeightScheme::Uniform;
    std::vector<LossTerm> active;
    WeightingConfig config;

    TermWeights current;
    std::map<LossTerm, double> raw;              // Learnable raw params, init 0
    std::deque<std::map<LossTerm, double>> history;  // SoftAdapt: last 2*period step values
    long step_counter = 0;
    long steps_since_update = 0;
    Rng rng{0, "loss-choice"};
    bool prepared = false;

    WeightingState(WeightScheme s, std::vector<LossTerm> terms, WeightingConfig cfg,
                   std::uint64_t seed)
        : scheme(s), active(std::move(terms)), config(cfg), rng(seed, "loss-choice") {
        if (active.empty())
            throw ConfigError("weighting needs a nonempty loss subset");
        std::sort(active.begin(), active.end());
        active.erase(std::unique(active.begin(), active.end()), active.end());
        for (const LossTerm t : active)
            raw[t] = 0.0;
        current = uniform_weights(active);
    }
};

namespace detail {

inline TermWeights softmax_weights(const std::vector<LossTerm>& active,
                                   const std::vector<double>& scores) {
    double mx = scores[0];
    for (const double s : scores)
        mx = std::max(mx, s);
    double denom = 0.0;
    std::vector<double> e(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        e[i] = std::exp(scores[i] - mx);
        denom += e[i];
    }
    TermWeights w;
    for (std::size_t i = 0; i < active.size(); ++i)
        w[active[i]] = e[i] / denom;
    return w;
}

} // namespace detail

// Weights as the softmax of the raw learnable params.
inline TermWeights learnable_weights(const WeightingState& state) {
    std::vector<double> scores;
    for (const LossTerm t : state.active)
        scores.push_back(state.raw.at(t));
    return detail::softmax_weights(state.active, scores);
}

// One gradient-descent step on the raw params through the combined loss
// L = sum_t w_t(raw) * value_t plus the decay term eta*||raw||^2. Since L is
// linear in the weights, dL/draw_t = w_t * (value_t - sum_s w_s value_s).
// Returns the post-update weights; softmax keeps them positive and on the
// simplex by construction.
inline TermWeights learnable_update(WeightingState& state,
                                    const std::map<LossTerm, double>& term_values, double lr) {
    const TermWeights w = learnable_weights(state);
    double mean = 0.0;
    for (const LossTerm t : state.active)
        mean += w.at(t) * term_values.at(t);
    for (const LossTerm t : state.active) {
        const double g = w.at(t) * (term_values.at(t) - mean) + 2.0 * state.config.eta * state.raw[t];
        state.raw[t] -= lr * g;
    }
    state.current = learnable_weights(state);
    return state.current;
}

// SoftAdapt reweighting from per-term loss deltas (aligned with the active
// order): scores are the deltas normalized by their sum (guarded by epsilon),
// and the weights are softmax(eta * scores). With eta > 0 the worst-performing
// (largest-increase) loss gets the largest weight. When every delta is zero
// the scores are defined as zero, giving uniform weights.
inline TermWeights softadapt_update(WeightingState& state, const std::vector<double>& deltas) {
    if (deltas.size() != state.active.size())
        throw ConfigError("softadapt needs one delta per active term");
    bool all_zero = true;
    double sum = 0.0;
    for (const double d : deltas) {
        if (d != 0.0)
            all_zero = false;
        sum += d;
    }
    std::vector<double> scores(deltas.size(), 0.0);
    if (!all_zero)
        for (std::size_t i = 0; i < deltas.size(); ++i)
            scores[i] = state.config.eta * deltas[i] / (sum + state.config.epsilon);
    state.current = detail::softmax_weights(state.active, scores);
    return state.current;
}

// One-hot selection cycling through the active terms in declaration order.
inline TermWeights round_robin_weights(const WeightingState& state) {
    TermWeights w;
    for (const LossTerm t : state.active)
        w[t] = 0.0;
    w[state.active[static_cast<std::size_t>(state.step_counter) % state.active.size()]] = 1.0;
    return w;
}

// One-hot selection drawn uniformly from the active terms.
inline TermWeights random_weights(WeightingState& state) {
    TermWeights w;
    for (const LossTerm t : state.active)
        w[t] = 0.0;
    w[state.active[state.rng.below(state.active.size())]] = 1.0;
    return w;
}

// Weights to combine with at the current optimization step. Idempotent within
// a step: the first call prepares (and, for Random, draws) the selection.
inline TermWeights current_weights(WeightingState& state) {
    if (state.prepared)
        return state.current;
    switch (state.scheme) {
    case WeightScheme::Uniform:
        state.current = uniform_weights(state.active);
        break;
    case WeightScheme::Learnable:
        state.current = learnable_weights(state);
        break;
    case WeightScheme::SoftAdapt:
        break;  // held between periodic updates
    case WeightScheme::RoundRobin:
        state.current = round_robin_weights(state);
        break;
    case WeightScheme::Random:
        state.current = random_weights(state);
        break;
    }
    state.prepared = true;
    return state.current;
}

// Advances the state after an optimization step. Learnable updates its raw
// params with the model learning rate; SoftAdapt records history and, every
// update_period steps once two full windows exist, recomputes weights from
// the difference of consecutive window means.
inline void register_step(WeightingState& state, const std::map<LossTerm, double>& term_values,
                          double model_lr) {
    switch (state.scheme) {
    case WeightScheme::Learnable:
        learnable_update(state, term_values, model_lr);
        break;
    case WeightScheme::SoftAdapt: {
        state.history.push_back(term_values);
        const std::size_t window = static_cast<std::size_t>(state.config.update_period);
        while (state.history.size() > 2 * window)
            state.history.pop_front();
        ++state.steps_since_update;
        if (state.steps_since_update >= state.config.update_period &&
            state.history.size() == 2 * window) {
            std::vector<double> deltas;
            for (const LossTerm t : state.active) {
                double prev = 0.0, cur = 0.0;
                for (std::size_t i = 0; i < window; ++i)
                    prev += state.history[i].at(t);
                for (std::size_t i = window; i < 2 * window; ++i)
                    cur += state.history[i].at(t);
                deltas.push_back((cur - prev) / static_cast<double>(window));
            }
            softadapt_update(state, deltas);
            state.steps_since_update = 0;
        }
        break;
    }
    default:
        break;
    }
    ++state.step_counter;
    state.prepared = false;
}

} // namespace acmp
