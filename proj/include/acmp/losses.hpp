#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "acmp/autodiff.hpp"
#include "acmp/errors.hpp"
#include "acmp/network.hpp"
#include "acmp/tensor.hpp"

namespace acmp {

enum class LossTerm : int { CE = 0, MSE = 1, CEPred = 2, KD = 3 };

inline const char* loss_term_name(LossTerm t) {
    switch (t) {
    case LossTerm::CE: return "ce";
    case LossTerm::MSE: return "mse";
    case LossTerm::CEPred: return "ce_pred";
    case LossTerm::KD: return "kd";
    }
    return "?";
}

using TermWeights = std::map<LossTerm, double>;

// Active loss subset plus the knobs the distillation term needs. Terms are
// kept in canonical order (CE, MSE, CEPred, KD) so round-robin cycling and
// report columns are deterministic.
struct LossConfig {
    std::vector<LossTerm> terms{LossTerm::CE};
    double temperature = 2.0;          // teacher softmax temperature for KD
    bool kd_symmetric_temperature = false;  // conventional both-sides-T variant

    void canonicalize() {
        std::sort(terms.begin(), terms.end());
        terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    }

    bool needs_teacher() const {
        for (const LossTerm t : terms)
            if (t != LossTerm::CE)
                return true;
        return false;
    }

    bool has(LossTerm t) const { return std::find(terms.begin(), terms.end(), t) != terms.end(); }
};

struct TermResult {
    double value = 0.0;
    Tensor logit_grad;
};

namespace detail {

// (batch, positions) layout of a logits tensor: [N,C] or [N,C,H,W].
struct LogitLayout {
    std::size_t n, c, positions;
};

inline LogitLayout layout_of(const Tensor& logits) {
    if (logits.rank() == 2)
        return {logits.dim(0), logits.dim(1), 1};
    if (logits.rank() == 4)
        return {logits.dim(0), logits.dim(1), logits.dim(2) * logits.dim(3)};
    throw ShapeError("logits must be [N,C] or [N,C,H,W], got " + logits.shape_string());
}

} // namespace detail

// Per-(example|pixel) argmax over the class axis; ties go to the lowest index.
inline std::vector<int> argmax_classes(const Tensor& logits) {
    const auto [n, c, positions] = detail::layout_of(logits);
    std::vector<int> out(n * positions);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t pos = 0; pos < positions; ++pos) {
            const std::size_t base = b * c * positions + pos;
            int best = 0;
            double bv = logits[base];
            for (std::size_t k = 1; k < c; ++k) {
                const double v = logits[base + k * positions];
                if (v > bv) {
                    bv = v;
                    best = static_cast<int>(k);
                }
            }
            out[b * positions + pos] = best;
        }
    return out;
}

// Eq.-style cross entropy: mean over examples (pixels count as examples) of
// -log softmax(logits)[label]; gradient (softmax - onehot)/N.
inline TermResult ce_loss(const Tensor& student_logits, const std::vector<int>& labels) {
    const auto [n, c, positions] = detail::layout_of(student_logits);
    const std::size_t count = n * positions;
    if (labels.size() != count)
        throw ShapeError("expected " + std::to_string(count) + " labels, got " +
                         std::to_string(labels.size()));
    const Tensor lsm = log_softmax(student_logits);
    TermResult r;
    r.logit_grad = Tensor(student_logits.shape);
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(count);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t pos = 0; pos < positions; ++pos) {
            const int y = labels[b * positions + pos];
            if (y < 0 || static_cast<std::size_t>(y) >= c)
                throw DomainError("label " + std::to_string(y) + " out of range [0," +
                                  std::to_string(c) + ")");
            const std::size_t base = b * c * positions + pos;
            total -= lsm[base + static_cast<std::size_t>(y) * positions];
            for (std::size_t k = 0; k < c; ++k) {
                const double p = std::exp(lsm[base + k * positions]);
                r.logit_grad[base + k * positions] =
                    (p - (static_cast<std::size_t>(y) == k ? 1.0 : 0.0)) * inv;
            }
        }
    r.value = total * inv;
    return r;
}

// Logit pairing: mean over examples of the squared L2 distance between
// student and teacher logits over the class axis. Teacher is a constant.
inline TermResult mse_pairing_loss(const Tensor& student_logits, const Tensor& teacher_logits) {
    if (!student_logits.same_shape(teacher_logits))
        throw DomainError("student logits " + student_logits.shape_string() +
                          " and teacher logits " + teacher_logits.shape_string() + " differ");
    const auto [n, c, positions] = detail::layout_of(student_logits);
    const std::size_t count = n * positions;
    const double inv = 1.0 / static_cast<double>(count);
    TermResult r;
    r.logit_grad = Tensor(student_logits.shape);
    double total = 0.0;
    for (std::size_t i = 0; i < student_logits.size(); ++i) {
        const double d = student_logits[i] - teacher_logits[i];
        total += d * d;
        r.logit_grad[i] = 2.0 * d * inv;
    }
    r.value = total * inv;
    return r;
}

// Hard distillation: cross entropy against the teacher's argmax prediction.
inline TermResult ce_pred_loss(const Tensor& student_logits, const Tensor& teacher_logits) {
    if (!student_logits.same_shape(teacher_logits))
        throw DomainError("student logits " + student_logits.shape_string() +
                          " and teacher logits " + teacher_logits.shape_string() + " differ");
    return ce_loss(student_logits, argmax_classes(teacher_logits));
}

// Distillation divergence, literal form: KL(softmax(student) || softmax(teacher, T)).
// The temperature sits on the teacher only; `symmetric` moves it to both
// sides for comparison. No T^2 gradient compensation in either variant.
inline TermResult kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double T,
                          bool symmetric = false) {
    if (!(T > 0.0))
        throw DomainError("KD temperature must be > 0");
    if (!student_logits.same_shape(teacher_logits))
        throw DomainError("student logits " + student_logits.shape_string() +
                          " and teacher logits " + teacher_logits.shape_string() + " differ");
    const auto [n, c, positions] = detail::layout_of(student_logits);
    const std::size_t count = n * positions;
    const double inv = 1.0 / static_cast<double>(count);
    const double student_T = symmetric ? T : 1.0;

    Tensor scaled_s = student_logits;
    if (student_T != 1.0)
        for (double& v : scaled_s.data)
            v /= student_T;
    Tensor scaled_t = teacher_logits;
    if (T != 1.0)
        for (double& v : scaled_t.data)
            v /= T;
    const Tensor logp = log_softmax(scaled_s);
    const Tensor logq = log_softmax(scaled_t);

    TermResult r;
    r.logit_grad = Tensor(student_logits.shape);
    double total = 0.0;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t pos = 0; pos < positions; ++pos) {
            const std::size_t base = b * c * positions + pos;
            double kl = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
                const std::size_t idx = base + k * positions;
                kl += std::exp(logp[idx]) * (logp[idx] - logq[idx]);
            }
            kl = std::max(kl, 0.0);  // guard rounding at p == q
            total += kl;
            for (std::size_t k = 0; k < c; ++k) {
                const std::size_t idx = base + k * positions;
                const double p = std::exp(logp[idx]);
                r.logit_grad[idx] = p * ((logp[idx] - logq[idx]) - kl) * inv / student_T;
            }
        }
    r.value = total * inv;
    return r;
}

struct CombinedResult {
    double value = 0.0;
    std::map<LossTerm, double> term_values;  // unweighted, one entry per active term
    Tensor logit_grad;
};

inline void validate_weights(const LossConfig& cfg, const TermWeights& weights) {
    if (weights.size() != cfg.terms.size())
        throw ConfigError("weight set covers " + std::to_string(weights.size()) + " terms, loss has " +
                          std::to_string(cfg.terms.size()));
    double sum = 0.0;
    for (const LossTerm t : cfg.terms) {
        const auto it = weights.find(t);
        if (it == weights.end())
            throw ConfigError(std::string("no weight for active term ") + loss_term_name(t));
        if (it->second < 0.0)
            throw ConfigError(std::string("negative weight for term ") + loss_term_name(t));
        sum += it->second;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("weights sum to " + std::to_string(sum) + ", expected 1");
}

// Weighted combination at the logits level. All active terms are evaluated
// (their unweighted values feed SoftAdapt and the logs) even when a scheme
// assigns them weight zero this step.
inline CombinedResult combined_loss(const LossConfig& cfg, const TermWeights& weights,
                                    const Tensor& student_logits, const Tensor* teacher_logits,
                                    const std::vector<int>* labels) {
    validate_weights(cfg, weights);
    if (cfg.has(LossTerm::CE) && labels == nullptr)
        throw ConfigError("CE term requires labels");
    if (cfg.needs_teacher() && teacher_logits == nullptr)
        throw ConfigError("alignment terms require teacher logits");

    CombinedResult out;
    out.logit_grad = Tensor(student_logits.shape);
    for (const LossTerm t : cfg.terms) {
        TermResult tr;
        switch (t) {
        case LossTerm::CE: tr = ce_loss(student_logits, *labels); break;
        case LossTerm::MSE: tr = mse_pairing_loss(student_logits, *teacher_logits); break;
        case LossTerm::CEPred: tr = ce_pred_loss(student_logits, *teacher_logits); break;
        case LossTerm::KD:
            tr = kd_loss(student_logits, *teacher_logits, cfg.temperature,
                         cfg.kd_symmetric_temperature);
            break;
        }
        const double w = weights.at(t);
        out.term_values[t] = tr.value;
        out.value += w * tr.value;
        for (std::size_t i = 0; i < out.logit_grad.size(); ++i)
            out.logit_grad[i] += w * tr.logit_grad[i];
    }
    return out;
}

struct CombinedEval {
    Tape tape;
    Tensor teacher_logits;
    CombinedResult loss;
};

// Net-level wrapper: runs the student (taped) and the frozen teacher, then
// combines the active terms.
inline CombinedEval eval_combined(const LossConfig& cfg, const TermWeights& weights,
                                  const Batch& batch, Network& student, const Network* teacher) {
    CombinedEval ev;
    ev.tape = forward(student, batch.inputs);
    const Tensor* tl = nullptr;
    if (cfg.needs_teacher()) {
        if (teacher == nullptr)
            throw ConfigError("loss subset requires a teacher network");
        ev.teacher_logits = predict(*teacher, batch.inputs);
        tl = &ev.teacher_logits;
    }
    const std::vector<int>* labels = cfg.has(LossTerm::CE) ? &batch.labels : nullptr;
    ev.loss = combined_loss(cfg, weights, ev.tape.logits, tl, labels);
    return ev;
}

inline TermWeights uniform_over(const std::vector<LossTerm>& terms) {
    if (terms.empty())
        throw ConfigError("cannot weight an empty loss subset");
    TermWeights w;
    for (const LossTerm t : terms)
        w[t] = 1.0 / static_cast<double>(terms.size());
    return w;
}

// Central-difference gradient audit. Compares autodiff parameter gradients of
// the uniform-weighted active loss against (f(w+h)-f(w-h))/2h, coordinate by
// coordinate, and returns the max relative error
// |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|). Masked coordinates are skipped
// (their autodiff gradient is zeroed by construction). The probe path uses
// forward passes only, independent of the reverse-mode code it audits.
inline double grad_check(Network& net, const Batch& batch, const LossConfig& cfg,
                         const Network* teacher = nullptr, std::size_t max_coords_per_param = 0,
                         double step = 1e-4) {
    const TermWeights weights = uniform_over(cfg.terms);

    Tensor teacher_logits;
    const Tensor* tl = nullptr;
    if (cfg.needs_teacher()) {
        if (teacher == nullptr)
            throw ConfigError("loss subset requires a teacher network");
        teacher_logits = predict(*teacher, batch.inputs);
        tl = &teacher_logits;
    }
    const std::vector<int>* labels = cfg.has(LossTerm::CE) ? &batch.labels : nullptr;

    const auto loss_value = [&]() {
        const Tensor logits = predict(net, batch.inputs);
        return combined_loss(cfg, weights, logits, tl, labels).value;
    };

    net.zero_grads();
    Tape tape = forward(net, batch.inputs);
    const CombinedResult combined = combined_loss(cfg, weights, tape.logits, tl, labels);
    backward(tape, combined.logit_grad);

    double max_rel = 0.0;
    net.for_each_param([&](const std::string&, Parameter& p) {
        const std::size_t n = p.value.size();
        std::size_t stride = 1;
        if (max_coords_per_param > 0 && n > max_coords_per_param)
            stride = n / max_coords_per_param;
        for (std::size_t i = 0; i < n; i += stride) {
            if (p.mask[i] == 0.0)
                continue;
            const double saved = p.value[i];
            p.value[i] = saved + step;
            const double up = loss_value();
            p.value[i] = saved - step;
            const double down = loss_value();
            p.value[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double ad = p.grad[i];
            const double rel = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
            max_rel = std::max(max_rel, rel);
        }
    });
    return max_rel;
}

} // namespace acmp
