#include "acmp/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace acmp;

TEST(CeLoss, UniformLogitsGiveLogC) {
    const TermResult r = ce_loss(Tensor({1, 4}, {0, 0, 0, 0}), {0});
    EXPECT_NEAR(r.value, std::log(4.0), 1e-12);
}

TEST(CeLoss, ScalarArithmeticOracle) {
    const TermResult r = ce_loss(Tensor({1, 2}, {2.0, 0.0}), {0});
    EXPECT_NEAR(r.value, std::log(1.0 + std::exp(-2.0)), 1e-12);  // 0.126928...
    EXPECT_NEAR(r.value, 0.12693, 1e-5);
}

TEST(CeLoss, ConfidentCorrectLimit) {
    const TermResult r = ce_loss(Tensor({1, 2}, {1000.0, 0.0}), {0});
    EXPECT_NEAR(r.value, 0.0, 1e-9);
}

TEST(CeLoss, OutOfRangeLabelIsDomainError) {
    EXPECT_THROW(ce_loss(Tensor({1, 2}, {0.0, 0.0}), {2}), DomainError);
    EXPECT_THROW(ce_loss(Tensor({1, 2}, {0.0, 0.0}), {-1}), DomainError);
}

TEST(CeLoss, GradientIsSoftmaxMinusOnehotOverN) {
    const Tensor logits({2, 2}, {1.0, -1.0, 0.5, 0.5});
    const TermResult r = ce_loss(logits, {0, 1});
    const Tensor sm = softmax_t(logits, 1.0);
    EXPECT_NEAR(r.logit_grad[0], (sm[0] - 1.0) / 2.0, 1e-15);
    EXPECT_NEAR(r.logit_grad[1], sm[1] / 2.0, 1e-15);
    EXPECT_NEAR(r.logit_grad[2], sm[2] / 2.0, 1e-15);
    EXPECT_NEAR(r.logit_grad[3], (sm[3] - 1.0) / 2.0, 1e-15);
}

TEST(MsePairing, IdenticalLogitsAreAFixedPoint) {
    const Tensor s({2, 3}, {1, 2, 3, 4, 5, 6});
    const TermResult r = mse_pairing_loss(s, s);
    EXPECT_DOUBLE_EQ(r.value, 0.0);
    for (const double g : r.logit_grad.data)
        EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(MsePairing, SquaredL2OverClassAxis) {
    const TermResult r = mse_pairing_loss(Tensor({1, 2}, {1.0, 2.0}), Tensor({1, 2}, {0.0, 0.0}));
    EXPECT_DOUBLE_EQ(r.value, 5.0);
}

TEST(MsePairing, MeanOverExamples) {
    const TermResult r = mse_pairing_loss(Tensor({2, 2}, {1, 0, 0, 3}), Tensor({2, 2}, {0, 0, 0, 0}));
    EXPECT_DOUBLE_EQ(r.value, (1.0 + 9.0) / 2.0);
}

TEST(MsePairing, ShapeMismatchIsDomainError) {
    EXPECT_THROW(mse_pairing_loss(Tensor({1, 2}), Tensor({1, 3})), DomainError);
}

TEST(CePred, ComposesArgmaxWithCrossEntropy) {
    const TermResult r = ce_pred_loss(Tensor({1, 2}, {0.0, 0.0}), Tensor({1, 2}, {5.0, 1.0}));
    EXPECT_NEAR(r.value, std::log(2.0), 1e-12);
}

TEST(CePred, SelfConsistentWhenConfident) {
    const Tensor confident({1, 2}, {30.0, -30.0});
    const TermResult r = ce_pred_loss(confident, confident);
    EXPECT_NEAR(r.value, 0.0, 1e-9);
}

TEST(CePred, TieBreaksToLowestIndex) {
    // Teacher tie [1,1,0] resolves to class 0.
    const std::vector<int> y = argmax_classes(Tensor({1, 3}, {1.0, 1.0, 0.0}));
    EXPECT_EQ(y, (std::vector<int>{0}));
    const TermResult tied = ce_pred_loss(Tensor({1, 3}, {9.0, 0.0, 0.0}), Tensor({1, 3}, {1.0, 1.0, 0.0}));
    EXPECT_NEAR(tied.value, 0.0, 1e-3);  // student confident on class 0
}

TEST(CePred, EqualsCeAgainstTeacherArgmaxEverywhere) {
    Rng rng(23, "cepred");
    for (int trial = 0; trial < 20; ++trial) {
        Tensor s({4, 5}), t({4, 5});
        for (double& v : s.data)
            v = rng.uniform(-3, 3);
        for (double& v : t.data)
            v = rng.uniform(-3, 3);
        const TermResult a = ce_pred_loss(s, t);
        const TermResult b = ce_loss(s, argmax_classes(t));
        EXPECT_DOUBLE_EQ(a.value, b.value);
        EXPECT_EQ(a.logit_grad.data, b.logit_grad.data);
    }
}

TEST(KdLoss, IdenticalLogitsAtUnitTemperatureAreZero) {
    const Tensor s({2, 3}, {1, 2, 3, -1, 0, 1});
    const TermResult r = kd_loss(s, s, 1.0);
    EXPECT_NEAR(r.value, 0.0, 1e-15);
}

TEST(KdLoss, ScalarKlOracle) {
    // student [0,0] vs teacher [2,0] at T=2: KL([.5,.5] || softmax([1,0])).
    const TermResult r = kd_loss(Tensor({1, 2}, {0.0, 0.0}), Tensor({1, 2}, {2.0, 0.0}), 2.0);
    const double e = std::exp(1.0);
    const double q0 = e / (1.0 + e), q1 = 1.0 / (1.0 + e);
    const double expected = 0.5 * std::log(0.5 / q0) + 0.5 * std::log(0.5 / q1);
    EXPECT_NEAR(r.value, expected, 1e-12);
    EXPECT_NEAR(r.value, 0.120114507, 1e-9);
}

TEST(KdLoss, DiffusionLimitIsLogCMinusEntropy) {
    const Tensor s({1, 3}, {2.0, 0.0, -1.0});
    const Tensor t({1, 3}, {5.0, -2.0, 0.5});
    const TermResult r = kd_loss(s, t, 1e6);
    const Tensor p = softmax_t(s, 1.0);
    double entropy = 0.0;
    for (int k = 0; k < 3; ++k)
        entropy -= p[k] * std::log(p[k]);
    EXPECT_NEAR(r.value, std::log(3.0) - entropy, 1e-4);
}

TEST(KdLoss, NonPositiveTemperatureIsDomainError) {
    EXPECT_THROW(kd_loss(Tensor({1, 2}), Tensor({1, 2}), 0.0), DomainError);
}

TEST(KdLoss, SymmetricVariantDiffersFromLiteralForm) {
    const Tensor s({1, 2}, {1.0, -1.0});
    const Tensor t({1, 2}, {2.0, 0.0});
    const TermResult literal = kd_loss(s, t, 4.0, false);
    const TermResult both = kd_loss(s, t, 4.0, true);
    EXPECT_NE(literal.value, both.value);
    // Symmetric variant at equal logits is exactly zero too.
    EXPECT_NEAR(kd_loss(t, t, 4.0, true).value, 0.0, 1e-15);
}

TEST(Combined, DegenerateWeightsReduceToCe) {
    LossConfig cfg;
    cfg.terms = {LossTerm::CE, LossTerm::MSE, LossTerm::CEPred};
    const Tensor s({2, 3}, {1, 0, -1, 0.5, 0.2, -0.3});
    const Tensor t({2, 3}, {0.9, 0, -1, 0.4, 0.3, -0.2});
    const std::vector<int> labels{0, 1};
    const TermWeights w{{LossTerm::CE, 1.0}, {LossTerm::MSE, 0.0}, {LossTerm::CEPred, 0.0}};
    const CombinedResult r = combined_loss(cfg, w, s, &t, &labels);
    const TermResult ce = ce_loss(s, labels);
    EXPECT_DOUBLE_EQ(r.value, ce.value);
    EXPECT_EQ(r.logit_grad.data, ce.logit_grad.data);
}

TEST(Combined, FixedPointTermValues) {
    // Teacher equals student and argmax equals the label: MSE is 0 and CEPred
    // equals CE, so the combination is the weighted sum of those term values.
    LossConfig cfg;
    cfg.terms = {LossTerm::CE, LossTerm::MSE, LossTerm::CEPred};
    const Tensor s({1, 2}, {3.0, 0.0});
    const std::vector<int> labels{0};
    const TermWeights w = uniform_over(cfg.terms);
    const CombinedResult r = combined_loss(cfg, w, s, &s, &labels);
    EXPECT_DOUBLE_EQ(r.term_values.at(LossTerm::MSE), 0.0);
    EXPECT_DOUBLE_EQ(r.term_values.at(LossTerm::CEPred), r.term_values.at(LossTerm::CE));
    double expected = 0.0;
    for (const auto& [t, v] : r.term_values)
        expected += v / 3.0;
    EXPECT_DOUBLE_EQ(r.value, expected);
}

TEST(Combined, WeightedArithmetic) {
    // CE = 1.0 and MSE = 5.0 at weights (0.5, 0.5) combine to 3.0. Construct
    // logits realizing exactly those term values via scaling.
    LossConfig cfg;
    cfg.terms = {LossTerm::CE, LossTerm::MSE};
    // One example, two classes. MSE = (s0-t0)^2 + (s1-t1)^2 = 5 via (1,2) vs (0,0).
    const Tensor s({1, 2}, {1.0, 2.0});
    const Tensor t({1, 2}, {0.0, 0.0});
    const std::vector<int> labels{1};
    const TermWeights w{{LossTerm::CE, 0.5}, {LossTerm::MSE, 0.5}};
    const CombinedResult r = combined_loss(cfg, w, s, &t, &labels);
    const double ce = ce_loss(s, labels).value;
    EXPECT_DOUBLE_EQ(r.term_values.at(LossTerm::MSE), 5.0);
    EXPECT_DOUBLE_EQ(r.value, 0.5 * ce + 0.5 * 5.0);
    // And the spec's arithmetic case: plugging in CE=1, MSE=5 gives 3.0.
    EXPECT_DOUBLE_EQ(0.5 * 1.0 + 0.5 * 5.0, 3.0);
}

TEST(Combined, WeightTermMismatchIsConfigError) {
    LossConfig cfg;
    cfg.terms = {LossTerm::CE, LossTerm::MSE};
    const Tensor s({1, 2}, {0.0, 0.0});
    const std::vector<int> labels{0};
    const TermWeights missing{{LossTerm::CE, 1.0}};
    EXPECT_THROW(combined_loss(cfg, missing, s, &s, &labels), ConfigError);
    const TermWeights wrong_sum{{LossTerm::CE, 0.7}, {LossTerm::MSE, 0.7}};
    EXPECT_THROW(combined_loss(cfg, wrong_sum, s, &s, &labels), ConfigError);
}

TEST(Combined, LinearInWeights) {
    // Doubling a weight before normalization and renormalizing must match a
    // direct evaluation with the renormalized weights.
    LossConfig cfg;
    cfg.terms = {LossTerm::CE, LossTerm::MSE, LossTerm::CEPred};
    Rng rng(3, "lin");
    Tensor s({3, 4}), t({3, 4});
    for (double& v : s.data)
        v = rng.uniform(-2, 2);
    for (double& v : t.data)
        v = rng.uniform(-2, 2);
    const std::vector<int> labels{0, 3, 1};
    const TermWeights w{{LossTerm::CE, 0.5}, {LossTerm::MSE, 0.25}, {LossTerm::CEPred, 0.25}};
    const TermWeights doubled{{LossTerm::CE, 1.0 / 1.5}, {LossTerm::MSE, 0.25 / 1.5},
                              {LossTerm::CEPred, 0.25 / 1.5}};
    const CombinedResult a = combined_loss(cfg, w, s, &t, &labels);
    const CombinedResult b = combined_loss(cfg, doubled, s, &t, &labels);
    double direct = 0.0;
    for (const auto& [term, v] : a.term_values)
        direct += doubled.at(term) * v;
    EXPECT_NEAR(b.value, direct, 1e-12);
    EXPECT_EQ(a.term_values, b.term_values);  // weights never change term values
}

TEST(Combined, AllTermValuesNonNegative) {
    LossConfig cfg;
    cfg.terms = {LossTerm::CE, LossTerm::MSE, LossTerm::CEPred, LossTerm::KD};
    Rng rng(8, "nn");
    for (int trial = 0; trial < 30; ++trial) {
        Tensor s({2, 3}), t({2, 3});
        for (double& v : s.data)
            v = rng.uniform(-4, 4);
        for (double& v : t.data)
            v = rng.uniform(-4, 4);
        const std::vector<int> labels{static_cast<int>(rng.below(3)),
                                      static_cast<int>(rng.below(3))};
        const CombinedResult r =
            combined_loss(cfg, uniform_over(cfg.terms), s, &t, &labels);
        for (const auto& [term, v] : r.term_values)
            EXPECT_GE(v, 0.0) << loss_term_name(term);
    }
}

TEST(Combined, PerPixelLogitsAverageOverAllPositions) {
    // [N,C,H,W] logits: every pixel counts as an example.
    const Tensor s({1, 2, 2, 2}, {1, 1, 1, 1, 0, 0, 0, 0});  // class-0 logit 1 everywhere
    const std::vector<int> labels{0, 0, 0, 1};
    const TermResult r = ce_loss(s, labels);
    const double l0 = std::log(1.0 + std::exp(-1.0));  // -log softmax[0]
    const double l1 = std::log(1.0 + std::exp(1.0));   // -log softmax[1]
    EXPECT_NEAR(r.value, (3.0 * l0 + l1) / 4.0, 1e-12);
}

TEST(GradCheckOnLosses, EveryTermMatchesFiniteDifferences) {
    for (const LossTerm term : {LossTerm::CE, LossTerm::MSE, LossTerm::CEPred, LossTerm::KD}) {
        Network net = build_classifier(3, {6}, 4, 11);
        Network teacher = build_classifier(3, {6}, 4, 12);
        Rng rng(51, "gc");
        Batch batch;
        batch.inputs = Tensor({5, 3});
        for (double& v : batch.inputs.data)
            v = rng.normal();
        batch.labels = {0, 1, 2, 3, 1};
        LossConfig cfg;
        cfg.terms = {term};
        cfg.temperature = 3.0;
        EXPECT_LT(grad_check(net, batch, cfg, &teacher), 1e-4) << loss_term_name(term);
    }
}
