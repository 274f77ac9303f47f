#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "swcalib/errors.hpp"
#include "swcalib/ops.hpp"
#include "swcalib/oracle.hpp"
#include "swcalib/quant.hpp"
#include "test_util.hpp"

using namespace swcalib;
using swcalib::testing::bit_equal;
using swcalib::testing::normal_tensor;
using swcalib::testing::uniform_tensor;

namespace {

Tensor fq_range(const std::vector<double>& x, double lo, double hi, int bits) {
    const std::size_t n = x.size();
    return fake_quantize_range(Tensor({1, n}, x), Tensor({1, 1}, {lo}), Tensor({1, 1}, {hi}), bits);
}

}  // namespace

TEST(QuantConfig, TagRoundTrip) {
    for (const char* tag : {"W2A16g128", "W4A4", "W3A16gT", "W8A8g16", "W1A16"}) {
        EXPECT_EQ(QuantConfig::parse(tag).tag(), tag);
    }
    auto cfg = QuantConfig::parse("W2A16g128");
    EXPECT_EQ(cfg.weight_bits, 2);
    EXPECT_EQ(cfg.act_bits, 16);
    EXPECT_EQ(cfg.grouping, Grouping::kGroups);
    EXPECT_EQ(cfg.group_size, 128u);
    EXPECT_FALSE(cfg.quantizes_activations());
    EXPECT_TRUE(QuantConfig::parse("W4A4").quantizes_activations());
    EXPECT_EQ(QuantConfig::parse("W4A4").grouping, Grouping::kPerChannel);
}

TEST(QuantConfig, RejectsBadTags) {
    EXPECT_THROW(QuantConfig::parse("W0A16"), ConfigError);
    EXPECT_THROW(QuantConfig::parse("W9A16"), ConfigError);
    EXPECT_THROW(QuantConfig::parse("W2A16g0"), ConfigError);
    EXPECT_THROW(QuantConfig::parse("2bit"), ConfigError);
    EXPECT_THROW(QuantConfig::parse("W2A0"), ConfigError);
}

TEST(QuantConfig, GroupSizeMustDivideInputAxis) {
    auto cfg = QuantConfig::parse("W2A16g3");
    EXPECT_THROW(group_length({8, 4}, cfg), ConfigError);
    EXPECT_EQ(group_length({9, 4}, cfg), 3u);
    EXPECT_EQ(group_count({9, 4}, cfg), 12u);
    EXPECT_EQ(group_count({9, 4}, QuantConfig::parse("W2A16gT")), 1u);
    EXPECT_EQ(group_count({9, 4}, QuantConfig::parse("W2A16")), 4u);
}

TEST(QuantConfig, GroupingRoundTrips) {
    Rng rng(1);
    Tensor w = uniform_tensor(rng, {8, 3});
    auto cfg = QuantConfig::parse("W2A16g4");
    Tensor g = group_weights(w, cfg);
    EXPECT_EQ(g.shape(), (Shape{6, 4}));
    // Group 0 is the first four inputs of output channel 0.
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(g.at(0, j), w.at(j, 0));
    EXPECT_TRUE(bit_equal(ungroup_weights(g, w.shape()), w));
}

TEST(FakeQuantize, FixedRangeTwoBits) {
    EXPECT_EQ(fq_range({0.0, 0.9, 2.2, 3.5}, 0, 3, 2).to_vector(), (std::vector<double>{0, 1, 2, 3}));
}

TEST(FakeQuantize, GridPointsUnchanged) {
    const std::vector<double> grid{-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5};
    EXPECT_EQ(fq_range(grid, -1.0, 2.5, 3).to_vector(), grid);
}

TEST(FakeQuantize, ZeroBitsIsConfigError) {
    EXPECT_THROW(fq_range({1.0}, 0, 1, 0), ConfigError);
    EXPECT_THROW(fake_quantize_range(Tensor::zeros({1, 0}), Tensor::zeros({1, 1}), Tensor::full({1, 1}, 1.0), 2),
                 ConfigError);
}

TEST(FakeQuantize, ErrorAtMostHalfStepInsideRange) {
    Rng rng(2);
    for (int bits : {2, 3, 4, 8}) {
        const double lo = rng.uniform(-2, -0.1), hi = rng.uniform(0.1, 2);
        std::vector<double> x(500);
        for (auto& v : x) v = rng.uniform(lo, hi);
        const auto q = fq_range(x, lo, hi, bits).to_vector();
        const double step = (hi - lo) / ((1 << bits) - 1);
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::fabs(q[i] - x[i]), step / 2 + 1e-12);
    }
}

TEST(FakeQuantize, IdempotentAtFixedBounds) {
    Rng rng(3);
    Tensor g = normal_tensor(rng, {8, 8});
    auto lwc = lwc_init(Tensor::zeros({8, 8}), QuantConfig::parse("W2A16"), LwcInit::parse("soft"), 0, false);
    auto b = lwc_clip_bounds(g, lwc, false);
    for (int bits : {1, 2, 3, 4, 8}) {
        Tensor q = fake_quantize_range(g, b.lower, b.upper, bits);
        EXPECT_TRUE(bit_equal(fake_quantize_range(q, b.lower, b.upper, bits), q)) << bits;
    }
}

TEST(FakeQuantize, MonotoneAndBitBounded) {
    Rng rng(3);
    auto cfg = QuantConfig::parse("W2A16g8");
    Tensor w = normal_tensor(rng, {16, 4});
    auto lwc = lwc_init(w, cfg, LwcInit::parse("soft"), 0, false);
    Tensor q = fake_quantize(w, cfg, lwc);

    const auto gw = group_weights(w, cfg).to_vector();
    const auto gq = group_weights(q, cfg).to_vector();
    for (std::size_t grp = 0; grp < 8; ++grp) {
        std::set<double> levels(gq.begin() + grp * 8, gq.begin() + (grp + 1) * 8);
        EXPECT_LE(levels.size(), 4u);
        for (std::size_t i = 0; i < 8; ++i) {
            for (std::size_t j = 0; j < 8; ++j) {
                if (gw[grp * 8 + i] <= gw[grp * 8 + j]) {
                    EXPECT_LE(gq[grp * 8 + i], gq[grp * 8 + j]);
                }
            }
        }
    }
}

TEST(FakeQuantize, MonotoneOnDenseSweep) {
    std::vector<double> x;
    for (int i = 0; i <= 2000; ++i) x.push_back(-3.0 + 6.0 * i / 2000.0);
    const auto q = fq_range(x, -1.3, 2.1, 3).to_vector();
    for (std::size_t i = 1; i < q.size(); ++i) EXPECT_LE(q[i - 1], q[i]);
    EXPECT_LE(std::set<double>(q.begin(), q.end()).size(), 8u);
}

TEST(FakeQuantize, GradientReachesClipLogits) {
    Rng rng(4);
    auto cfg = QuantConfig::parse("W2A16");
    Tensor w = normal_tensor(rng, {8, 2});
    auto lwc = lwc_init(w, cfg, LwcInit{}, 0, true);
    backward(sum(square(fake_quantize(w, cfg, lwc) - w)));
    double norm = 0.0;
    for (double g : lwc.gamma_raw.grad_vector()) norm += std::fabs(g);
    for (double g : lwc.beta_raw.grad_vector()) norm += std::fabs(g);
    EXPECT_GT(norm, 0.0);
}

TEST(Lwc, ClipBoundsInsideGroupRange) {
    Rng rng(5);
    Tensor grouped = normal_tensor(rng, {4, 6});
    for (double raw : {-30.0, -2.0, 0.0, 3.0, 30.0}) {
        LwcParams lwc{Tensor::full({4, 1}, raw), Tensor::full({4, 1}, -raw)};
        auto b = lwc_clip_bounds(grouped, lwc, false);
        auto mx = max_along(grouped, 1).to_vector(), mn = min_along(grouped, 1).to_vector();
        for (std::size_t i = 0; i < 4; ++i) {
            EXPECT_LE(b.upper.data()[i], mx[i]);
            EXPECT_GE(b.lower.data()[i], mn[i]);
        }
    }
}

TEST(Lwc, InitStrategiesHitConstants) {
    Rng rng(6);
    Tensor w = normal_tensor(rng, {8, 4});
    auto cfg = QuantConfig::parse("W2A16g4");
    auto soft = lwc_init(w, cfg, LwcInit::parse("soft"), 0);
    for (double v : soft.gamma_raw.data()) EXPECT_EQ(sigmoid_value(v), 0.9);
    for (double v : soft.beta_raw.data()) EXPECT_EQ(sigmoid_value(v), 0.9);
    auto aggr = lwc_init(w, cfg, LwcInit::parse("aggressive"), 0);
    for (double v : aggr.gamma_raw.data()) EXPECT_EQ(sigmoid(Tensor::scalar(v)).item(), 0.5);
    auto def = lwc_init(w, cfg, LwcInit::parse("default"), 0);
    for (double v : def.gamma_raw.data()) EXPECT_EQ(v, 4.0);
    EXPECT_EQ(sigmoid_value(0.0), 0.5);
    EXPECT_EQ(soft.gamma_raw.shape(), (Shape{8, 1}));
    EXPECT_TRUE(soft.gamma_raw.requires_grad());
}

TEST(Lwc, PercentileInitOnEvenGrid) {
    std::vector<double> v(201);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = -1.0 + 2.0 * static_cast<double>(i) / 200.0;
    Tensor w({201, 1}, v);
    auto lwc = lwc_init(w, QuantConfig::parse("W2A16"), LwcInit::parse("percentile:95"), 0);
    const double expect_hi = oracle::percentile_reference(v, 95.0);
    const double expect_lo = oracle::percentile_reference(v, 5.0);
    EXPECT_NEAR(expect_hi, 0.9, 1e-12);
    EXPECT_NEAR(sigmoid_value(lwc.gamma_raw.item()), expect_hi / 1.0, 1e-12);
    EXPECT_NEAR(sigmoid_value(lwc.beta_raw.item()), expect_lo / -1.0, 1e-12);
}

TEST(Lwc, RandomInitDeterministicAndInRange) {
    Rng rng(7);
    Tensor w = normal_tensor(rng, {8, 4});
    auto cfg = QuantConfig::parse("W2A16");
    auto a = lwc_init(w, cfg, LwcInit::parse("random:0.6,0.8"), 42);
    auto b = lwc_init(w, cfg, LwcInit::parse("random:0.6,0.8"), 42);
    EXPECT_TRUE(bit_equal(a.gamma_raw, b.gamma_raw));
    for (double v : a.gamma_raw.data()) {
        EXPECT_GE(sigmoid_value(v), 0.6 - 1e-12);
        EXPECT_LE(sigmoid_value(v), 0.8 + 1e-12);
    }
}

TEST(Lwc, InitParseErrors) {
    EXPECT_THROW(LwcInit::parse("percentile:100"), ConfigError);
    EXPECT_THROW(LwcInit::parse("percentile:0"), ConfigError);
    EXPECT_THROW(LwcInit::parse("percentile:abc"), ConfigError);
    EXPECT_THROW(LwcInit::parse("random:0.9,0.5"), ConfigError);
    EXPECT_THROW(LwcInit::parse("norm-aware"), ConfigError);
    EXPECT_EQ(LwcInit::parse("percentile:95").str(), "percentile:95");
}

TEST(Let, IdentityLeavesEverything) {
    Rng rng(8);
    Tensor x = normal_tensor(rng, {3, 4}), w = normal_tensor(rng, {4, 2}), b = normal_tensor(rng, {2});
    auto out = let_transform(x, w, b, LetParams::identity(4));
    EXPECT_TRUE(bit_equal(out.x, x));
    EXPECT_TRUE(bit_equal(out.w, w));
    EXPECT_TRUE(bit_equal(out.bias, b));
}

TEST(Let, HandExample) {
    auto out = let_transform(Tensor::matrix({{2}}), Tensor::matrix({{3}}), Tensor::vector({1}),
                             LetParams{Tensor::vector({1}), Tensor::vector({2})});
    EXPECT_EQ(out.x.item(), 0.5);
    EXPECT_EQ(out.w.item(), 6.0);
    EXPECT_EQ(out.bias.item(), 4.0);
}

TEST(Let, FullPrecisionEquivalence) {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = normal_tensor(rng, {5, 6}), w = normal_tensor(rng, {6, 3}), b = normal_tensor(rng, {3});
        LetParams let{normal_tensor(rng, {6}), uniform_tensor(rng, {6}, 0.2, 5.0)};
        auto out = let_transform(x, w, b, let);
        const auto ref = (matmul(x, w) + b).to_vector();
        const auto got = (matmul(out.x, out.w) + out.bias).to_vector();
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_LE(std::fabs(ref[i] - got[i]), 1e-9 * std::max(1.0, std::fabs(ref[i])));
    }
}

TEST(Let, NonPositiveScaleIsDomainError) {
    Tensor x = Tensor::zeros({1, 2}), w = Tensor::zeros({2, 1}), b = Tensor::zeros({1});
    EXPECT_THROW(let_transform(x, w, b, LetParams{Tensor::zeros({2}), Tensor::vector({1, 0})}), DomainError);
    EXPECT_THROW(let_transform(x, w, b, LetParams{Tensor::zeros({2}), Tensor::vector({-1, 1})}), DomainError);
}

TEST(Let, FoldIntoNormMatchesTransform) {
    Rng rng(10);
    Tensor z = normal_tensor(rng, {4, 3});
    NormAffine norm{uniform_tensor(rng, {3}, 0.5, 1.5), normal_tensor(rng, {3})};
    LetParams let{normal_tensor(rng, {3}), uniform_tensor(rng, {3}, 0.5, 2.0)};
    auto folded = fold_let_into_norm(norm, let);
    const auto direct = ((z * norm.gain + norm.shift - let.delta) / let.scale).to_vector();
    const auto via = (z * folded.gain + folded.shift).to_vector();
    for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_NEAR(direct[i], via[i], 1e-12);
}

TEST(HierLet, HandRow) {
    auto out = hier_let_token_scale(Tensor::matrix({{2, -2}}), HierLetState{});
    EXPECT_EQ(out.s_tok.item(), 2.0);
    EXPECT_EQ(out.x.to_vector(), (std::vector<double>{1, -1}));
}

TEST(HierLet, ConstantRowUsesEpsilon) {
    HierLetState st{};
    auto out = hier_let_token_scale(Tensor::matrix({{5, 5}}), st);
    EXPECT_EQ(out.s_tok.item(), st.epsilon);
    EXPECT_EQ(out.x.to_vector(), (std::vector<double>{5 / st.epsilon, 5 / st.epsilon}));
}

TEST(HierLet, NormalizedRowsHaveUnitVariance) {
    Rng rng(11);
    Tensor x = normal_tensor(rng, {20, 7}, 3.0);
    auto out = hier_let_token_scale(x, HierLetState{});
    const auto v = out.x.to_vector();
    for (std::size_t r = 0; r < 20; ++r) {
        std::vector<double> row(v.begin() + r * 7, v.begin() + (r + 1) * 7);
        EXPECT_NEAR(oracle::population_variance_reference(row), 1.0, 1e-9);
    }
    for (double s : out.s_tok.data()) EXPECT_GE(s, 1e-6);
}

TEST(ActQuant, PerTokenLevels) {
    Rng rng(12);
    Tensor x = normal_tensor(rng, {6, 32});
    Tensor q = quantize_activations(x, 3);
    EXPECT_EQ(q.shape(), x.shape());
    const auto v = q.to_vector();
    for (std::size_t r = 0; r < 6; ++r) {
        EXPECT_LE(std::set<double>(v.begin() + r * 32, v.begin() + (r + 1) * 32).size(), 8u);
    }
}
