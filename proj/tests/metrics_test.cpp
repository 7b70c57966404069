#include "acmp/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace acmp;

namespace {

std::vector<PredictionRecord> random_records(int n, int C, std::uint64_t seed) {
    Rng rng(seed, "records");
    std::vector<PredictionRecord> recs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        recs[static_cast<std::size_t>(i)] = {i, static_cast<int>(rng.below(C)),
                                             static_cast<int>(rng.below(C)),
                                             static_cast<int>(rng.below(C))};
    return recs;
}

} // namespace

TEST(CountCies, NoDisagreementNoCies) {
    std::vector<PredictionRecord> recs{{0, 0, 0, 0}, {1, 1, 2, 2}};
    EXPECT_EQ(count_cies(recs).count, 0);
}

TEST(CountCies, SingleFlip) {
    std::vector<PredictionRecord> recs{{0, 0, 0, 0}, {1, 1, 1, 2}, {2, 2, 2, 2}};
    const CieResult r = count_cies(recs);
    EXPECT_EQ(r.count, 1);
    EXPECT_EQ(r.indices, (std::vector<int>{1}));
}

TEST(CountCies, MatchesBruteForceRecount) {
    const auto recs = random_records(1000, 5, 11);
    const CieResult r = count_cies(recs);
    long expect = 0;
    for (const auto& rec : recs)
        if (rec.r != rec.c)
            ++expect;
    EXPECT_EQ(r.count, expect);
    EXPECT_EQ(static_cast<long>(r.indices.size()), expect);
}

TEST(CountCies, SymmetricInModelPair) {
    auto recs = random_records(500, 4, 21);
    const long forward_count = count_cies(recs).count;
    for (auto& rec : recs)
        std::swap(rec.r, rec.c);
    EXPECT_EQ(count_cies(recs).count, forward_count);
}

TEST(CountCieU, CollapsesToCieWhenReferencePerfect) {
    auto recs = random_records(300, 4, 31);
    for (auto& rec : recs)
        rec.r = rec.y;
    EXPECT_EQ(count_cie_u(recs).count, count_cies(recs).count);
}

TEST(CountCieU, HandEnumeratedExample) {
    const std::vector<PredictionRecord> recs{{0, 1, 0, 1}, {1, 1, 1, 0}};
    EXPECT_EQ(count_cies(recs).count, 2);
    const CieResult u = count_cie_u(recs);
    EXPECT_EQ(u.count, 1);
    EXPECT_EQ(u.indices, (std::vector<int>{1}));
}

TEST(CountCieU, DirectionMatters) {
    auto recs = random_records(500, 4, 41);
    const long before = count_cie_u(recs).count;
    long swapped_expect = 0;
    for (const auto& rec : recs)
        if (rec.c == rec.y && rec.r != rec.c)
            ++swapped_expect;
    for (auto& rec : recs)
        std::swap(rec.r, rec.c);
    EXPECT_EQ(count_cie_u(recs).count, swapped_expect);
    (void)before;
}

TEST(CountCieU, SubsetOfCies) {
    const auto recs = random_records(1000, 3, 51);
    const CieResult cie = count_cies(recs);
    const CieResult cie_u = count_cie_u(recs);
    for (const int idx : cie_u.indices)
        EXPECT_TRUE(std::binary_search(cie.indices.begin(), cie.indices.end(), idx));
}

TEST(CountCips, IdenticalPredictionsGiveZero) {
    std::vector<PixelRecord> px;
    for (int i = 0; i < 16; ++i)
        px.push_back({0, i / 4, i % 4, 1, 1, 1});
    const CipResult r = count_cips(px, 1);
    EXPECT_EQ(r.count, 0);
    EXPECT_EQ(r.cip_u_count, 0);
}

TEST(CountCips, ThreeFlippedPixels) {
    std::vector<PixelRecord> px;
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
            px.push_back({0, r, c, 0, 0, 0});
    px[5].c = 1;
    px[77].c = 1;
    px[200].c = 1;
    const CipResult res = count_cips(px, 1);
    EXPECT_EQ(res.count, 3);
    EXPECT_EQ(res.per_image[0], 3);
}

TEST(CountCips, MatchesBruteForcePixelScan) {
    Rng rng(3, "cips");
    std::vector<PixelRecord> px;
    const int images = 10, h = 8, w = 8;
    for (int img = 0; img < images; ++img)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                px.push_back({img, r, c, static_cast<int>(rng.below(2)),
                              static_cast<int>(rng.below(2)), static_cast<int>(rng.below(2))});
    const CipResult res = count_cips(px, images);
    long expect = 0, expect_u = 0;
    std::vector<long> per(images, 0);
    for (const auto& p : px) {
        if (p.r != p.c) {
            ++expect;
            ++per[static_cast<std::size_t>(p.image)];
        }
        if (p.r == p.y && p.c != p.r)
            ++expect_u;
    }
    EXPECT_EQ(res.count, expect);
    EXPECT_EQ(res.cip_u_count, expect_u);
    EXPECT_EQ(res.per_image, per);
}

TEST(Fairness, PerfectClassifierHasZeroGap) {
    std::vector<PredictionRecord> recs;
    for (int i = 0; i < 30; ++i)
        recs.push_back({i, i % 3, i % 3, i % 3});
    const FairnessResult f = fairness_metrics(recs, 3);
    for (const double e : f.error_ref)
        EXPECT_DOUBLE_EQ(e, 0.0);
    EXPECT_DOUBLE_EQ(f.gap_ref, 0.0);
    EXPECT_DOUBLE_EQ(f.gap_comp, 0.0);
}

TEST(Fairness, GapArithmetic) {
    // class 0: 1/10 wrong, class 1: 4/10 wrong for the compressed model.
    std::vector<PredictionRecord> recs;
    for (int i = 0; i < 10; ++i)
        recs.push_back({i, 0, 0, i < 1 ? 1 : 0});
    for (int i = 10; i < 20; ++i)
        recs.push_back({i, 1, 1, i < 14 ? 0 : 1});
    const FairnessResult f = fairness_metrics(recs, 2);
    EXPECT_DOUBLE_EQ(f.error_comp[0], 0.1);
    EXPECT_DOUBLE_EQ(f.error_comp[1], 0.4);
    EXPECT_NEAR(f.gap_comp, 0.3, 1e-15);
}

TEST(Fairness, IdenticalModelsHaveZeroDeltas) {
    auto recs = random_records(400, 4, 61);
    for (auto& rec : recs)
        rec.c = rec.r;
    // Ensure every class appears.
    for (int cls = 0; cls < 4; ++cls)
        recs.push_back({400 + cls, cls, cls, cls});
    const FairnessResult f = fairness_metrics(recs, 4);
    for (const double d : f.delta)
        EXPECT_DOUBLE_EQ(d, 0.0);
}

TEST(Fairness, MissingClassIsExplicitError) {
    std::vector<PredictionRecord> recs{{0, 0, 0, 0}, {1, 0, 0, 0}};
    EXPECT_THROW(fairness_metrics(recs, 2), DomainError);
}

TEST(Fairness, GapInvariantUnderClassRelabeling) {
    auto recs = random_records(600, 4, 71);
    const FairnessResult base = fairness_metrics(recs, 4);
    const int perm[4] = {2, 3, 1, 0};
    for (auto& rec : recs) {
        rec.y = perm[rec.y];
        rec.r = perm[rec.r];
        rec.c = perm[rec.c];
    }
    const FairnessResult permuted = fairness_metrics(recs, 4);
    EXPECT_NEAR(base.gap_ref, permuted.gap_ref, 1e-15);
    EXPECT_NEAR(base.gap_comp, permuted.gap_comp, 1e-15);
}

TEST(Saliency, LinearModelMapIsAbsWeightRow) {
    Network net;
    net.input_shape = {3};
    net.num_classes = 2;
    net.layers.push_back(make_dense(3, 2));
    net.layers[0].weight.value.data = {0.5, -2.0, 1.0, 0.1, 0.1, 0.1};
    const Tensor map = saliency(net, Tensor({1, 3}, {1.0, 1.0, 1.0}), 0);
    // |w_0| = (0.5, 2, 1) normalized by max 2.
    EXPECT_DOUBLE_EQ(map[0], 0.25);
    EXPECT_DOUBLE_EQ(map[1], 1.0);
    EXPECT_DOUBLE_EQ(map[2], 0.5);
}

TEST(Saliency, DeadInputCoordinateMapsToZero) {
    Network net = build_classifier(4, {6}, 3, 17);
    // Zero the first input column of the first layer.
    Parameter& w = net.layers[0].weight;
    for (std::size_t o = 0; o < 6; ++o)
        w.value[o * 4 + 0] = 0.0;
    const Tensor map = saliency(net, Tensor({1, 4}, {0.3, -0.2, 0.9, 0.5}));
    EXPECT_DOUBLE_EQ(map[0], 0.0);
}

TEST(Saliency, MatchesFiniteDifferenceSensitivity) {
    Network net = build_classifier(4, {8}, 3, 5);
    Rng rng(5, "x");
    Tensor x({1, 4});
    for (double& v : x.data)
        v = rng.normal();
    Tensor logits = predict(net, x);
    const int cls = argmax_classes(logits)[0];
    const Tensor map = saliency(net, x, cls);

    // Independent probe: central differences of the class logit in the input.
    const double h = 1e-5;
    Tensor fd({4});
    for (std::size_t i = 0; i < 4; ++i) {
        Tensor up = x, down = x;
        up[i] += h;
        down[i] -= h;
        const double lu = predict(net, up)[static_cast<std::size_t>(cls)];
        const double ld = predict(net, down)[static_cast<std::size_t>(cls)];
        fd[i] = std::abs((lu - ld) / (2 * h));
    }
    double mx = 0;
    for (const double v : fd.data)
        mx = std::max(mx, v);
    for (double& v : fd.data)
        v /= mx;
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_NEAR(map[i], fd[i], 1e-3 * std::max(1.0, std::abs(fd[i])));
}

TEST(Saliency, AllZeroMapWhenLogitConstant) {
    Network net;
    net.input_shape = {2};
    net.num_classes = 2;
    net.layers.push_back(make_dense(2, 2));  // zero weights
    const Tensor map = saliency(net, Tensor({1, 2}, {1.0, 2.0}), 0);
    EXPECT_DOUBLE_EQ(map[0], 0.0);
    EXPECT_DOUBLE_EQ(map[1], 0.0);
}

TEST(SoftIou, IdentityIsOne) {
    const Tensor a({3}, {0.1, 0.5, 1.0});
    EXPECT_DOUBLE_EQ(soft_iou(a, a), 1.0);
}

TEST(SoftIou, DisjointSupportsGiveZero) {
    EXPECT_DOUBLE_EQ(soft_iou(Tensor({2}, {1.0, 0.0}), Tensor({2}, {0.0, 1.0})), 0.0);
}

TEST(SoftIou, SumRatioArithmetic) {
    EXPECT_DOUBLE_EQ(soft_iou(Tensor({2}, {0.2, 0.8}), Tensor({2}, {0.4, 0.4})), 0.5);
}

TEST(SoftIou, SymmetricAndScaleStable) {
    Rng rng(9, "iou");
    Tensor a({8}), b({8});
    for (double& v : a.data)
        v = rng.uniform(0, 1);
    for (double& v : b.data)
        v = rng.uniform(0, 1);
    EXPECT_DOUBLE_EQ(soft_iou(a, b), soft_iou(b, a));
    Tensor scaled = a;
    for (double& v : scaled.data)
        v *= 7.5;
    EXPECT_DOUBLE_EQ(soft_iou(scaled, scaled), 1.0);
}

TEST(SoftIou, BothZeroDefinedAsOne) {
    EXPECT_DOUBLE_EQ(soft_iou(Tensor({3}), Tensor({3})), 1.0);
}

TEST(SoftIou, NegativeEntriesAreDomainError) {
    EXPECT_THROW(soft_iou(Tensor({1}, {-0.1}), Tensor({1}, {0.1})), DomainError);
}

TEST(Dice, IdenticalNonEmptyMasksGiveOne) {
    const std::vector<int> m{1, 0, 1, 1};
    EXPECT_DOUBLE_EQ(dice(m, m), 1.0);
}

TEST(Dice, DisjointMasksGiveZero) {
    EXPECT_DOUBLE_EQ(dice({1, 1, 0, 0}, {0, 0, 1, 1}), 0.0);
}

TEST(Dice, OverlapArithmetic) {
    // |P|=4, |T|=6, overlap 3 -> 0.6
    const std::vector<int> p{1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
    const std::vector<int> t{1, 1, 1, 0, 1, 1, 1, 0, 0, 0};
    EXPECT_DOUBLE_EQ(dice(p, t), 0.6);
    EXPECT_DOUBLE_EQ(dice(t, p), 0.6);
}

TEST(Dice, EmptyMasksGiveOne) {
    EXPECT_DOUBLE_EQ(dice({0, 0}, {0, 0}), 1.0);
}

TEST(Dice, NonBinaryInputIsDomainError) {
    EXPECT_THROW(dice({2, 0}, {1, 0}), DomainError);
}

TEST(BuildReport, IdenticalNetsAreFullyAligned) {
    const Dataset ds = gen_blobs(3, 12, 2, 0.2, 77);
    const Network net = build_classifier(2, {8}, 3, 7);
    const MisalignmentReport rep = build_report(net, net, ds);
    EXPECT_EQ(rep.cie_count, 0);
    EXPECT_EQ(rep.cie_u_count, 0);
    EXPECT_DOUBLE_EQ(rep.mean_attr_iou, 1.0);
    for (const double d : rep.per_class_delta)
        EXPECT_DOUBLE_EQ(d, 0.0);
    EXPECT_DOUBLE_EQ(rep.accuracy_ref, rep.accuracy_comp);
    EXPECT_TRUE(rep.top1_identity_holds());
}

TEST(BuildReport, PlantedDisagreementIsCountedExactly) {
    Dataset ds;
    ds.name = "planted";
    ds.num_classes = 2;
    ds.seed = 1;
    ds.eval_inputs = Tensor({2, 2}, {2.0, 1.0, 1.0, 5.0});
    ds.eval_labels = {0, 1};
    ds.train_inputs = ds.eval_inputs;
    ds.train_labels = ds.eval_labels;

    Network ref;
    ref.input_shape = {2};
    ref.num_classes = 2;
    ref.layers.push_back(make_dense(2, 2));
    ref.layers[0].weight.value.data = {1, 0, 0, 1};
    Network comp = ref;
    comp.layers[0].bias.value.data = {0.0, 2.0};  // flips only the first example

    const MisalignmentReport rep = build_report(ref, comp, ds);
    EXPECT_EQ(rep.cie_count, 1);
    EXPECT_EQ(rep.cie_indices, (std::vector<int>{0}));
    EXPECT_EQ(rep.cie_u_count, 1);
    EXPECT_DOUBLE_EQ(rep.accuracy_ref, 1.0);
    EXPECT_DOUBLE_EQ(rep.accuracy_comp, 0.5);
    EXPECT_TRUE(rep.top1_identity_holds());
}

TEST(BuildReport, CountsEqualBruteForceOnSyntheticRun) {
    const Dataset ds = gen_blobs(4, 125, 2, 0.45, 13);  // 500 eval examples
    const Network ref = build_classifier(2, {12}, 4, 13);
    Network comp = build_classifier(2, {12}, 4, 14);
    const MisalignmentReport rep = build_report(ref, comp, ds);

    const std::vector<int> pr = predict_classes(ref, ds.eval_inputs);
    const std::vector<int> pc = predict_classes(comp, ds.eval_inputs);
    long cie = 0, cie_u = 0, correct_r = 0, correct_c = 0;
    for (std::size_t i = 0; i < pr.size(); ++i) {
        if (pr[i] != pc[i])
            ++cie;
        if (pr[i] == ds.eval_labels[i] && pc[i] != pr[i])
            ++cie_u;
        if (pr[i] == ds.eval_labels[i])
            ++correct_r;
        if (pc[i] == ds.eval_labels[i])
            ++correct_c;
    }
    EXPECT_EQ(rep.cie_count, cie);
    EXPECT_EQ(rep.cie_u_count, cie_u);
    EXPECT_EQ(rep.correct_ref, correct_r);
    EXPECT_EQ(rep.correct_comp, correct_c);
    EXPECT_TRUE(rep.top1_identity_holds());
}

TEST(BuildReport, SegmentationReportCountsCips) {
    const Dataset ds = gen_seg_blobs(4, 8, 8, 3);
    const Network ref = build_segmenter(1, {4}, 2, 3);
    Network comp = build_segmenter(1, {4}, 2, 4);
    const MisalignmentReport rep = build_report(ref, comp, ds);
    const std::vector<int> pr = predict_classes(ref, ds.eval_inputs);
    const std::vector<int> pc = predict_classes(comp, ds.eval_inputs);
    long cip = 0;
    for (std::size_t i = 0; i < pr.size(); ++i)
        if (pr[i] != pc[i])
            ++cip;
    EXPECT_EQ(rep.cip_count, cip);
    EXPECT_EQ(rep.dice_ref, dice(pr, ds.eval_labels));
    EXPECT_EQ(rep.dice_comp, dice(pc, ds.eval_labels));
    EXPECT_TRUE(rep.top1_identity_holds());
    EXPECT_EQ(rep.per_image_iou.size(), ds.eval_size());
}

TEST(ReportJson, RoundTripPreservesEverything) {
    const Dataset ds = gen_blobs(3, 20, 2, 0.3, 5);
    const Network ref = build_classifier(2, {6}, 3, 5);
    Network comp = build_classifier(2, {6}, 3, 6);
    const MisalignmentReport rep = build_report(ref, comp, ds);
    const MisalignmentReport back = report_from_json(report_to_json(rep));
    EXPECT_EQ(back.cie_count, rep.cie_count);
    EXPECT_EQ(back.cie_indices, rep.cie_indices);
    EXPECT_EQ(back.label_hash, rep.label_hash);
    EXPECT_DOUBLE_EQ(back.mean_attr_iou, rep.mean_attr_iou);
    EXPECT_DOUBLE_EQ(back.max_min_gap_comp, rep.max_min_gap_comp);
    EXPECT_EQ(back.per_image_iou, rep.per_image_iou);
}
