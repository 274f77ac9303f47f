#include <gtest/gtest.h>

#include <cmath>

#include "swcalib/errors.hpp"
#include "swcalib/losses.hpp"
#include "swcalib/model.hpp"
#include "swcalib/ops.hpp"
#include "test_util.hpp"

namespace swcalib {
namespace {

using testing::bit_equal;
using testing::normal_tensor;

ModelSpec small_spec() {
    ModelSpec s;
    s.vocab_size = 32;
    s.d_model = 16;
    s.n_heads = 2;
    s.n_blocks = 2;
    s.ff_mult = 2;
    s.max_seq_len = 12;
    return s;
}

TokenBatch random_batch(Rng& rng, std::size_t batch, std::size_t seq, std::size_t vocab) {
    TokenBatch tb{{}, batch, seq};
    for (std::size_t i = 0; i < batch * seq; ++i) tb.ids.push_back(static_cast<std::uint32_t>(rng.below(vocab)));
    return tb;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    const auto x = a.to_vector(), y = b.to_vector();
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
}

TEST(ModelSpec, Validation) {
    ModelSpec s = small_spec();
    s.n_heads = 3;
    EXPECT_THROW(s.validate(), ConfigError);
    s = small_spec();
    s.vocab_size = 0;
    EXPECT_THROW(s.validate(), ConfigError);
    EXPECT_NO_THROW(small_spec().validate());
}

TEST(Model, InitIsSeededAndShaped) {
    const auto s = small_spec();
    const Model a = Model::init(s, 7), b = Model::init(s, 7), c = Model::init(s, 8);
    const auto ta = a.named_tensors(), tb = b.named_tensors(), tc = c.named_tensors();
    ASSERT_EQ(ta.size(), 2 + s.n_blocks * (4 + 2 * kLinearCount) + 2);
    for (std::size_t i = 0; i < ta.size(); ++i) {
        EXPECT_EQ(ta[i].first, tb[i].first);
        EXPECT_TRUE(bit_equal(ta[i].second, tb[i].second)) << ta[i].first;
    }
    EXPECT_FALSE(bit_equal(a.embed, c.embed));
    EXPECT_EQ(a.blocks[0].at(Linear::kFc1).w.shape(), (Shape{16, 32}));
    EXPECT_EQ(a.blocks[0].at(Linear::kFc2).w.shape(), (Shape{32, 16}));
    EXPECT_EQ(a.pos.shape(), (Shape{12, 16}));
}

TEST(BlockForward, DeterministicAndShapePreserving) {
    const auto s = small_spec();
    const Model m = Model::init(s, 1);
    Rng rng(3);
    const Tensor x = normal_tensor(rng, {2, 5, 16});
    const Tensor y1 = block_forward(x, m.blocks[0], s), y2 = block_forward(x, m.blocks[0], s);
    EXPECT_EQ(y1.shape(), x.shape());
    EXPECT_TRUE(bit_equal(y1, y2));
    EXPECT_THROW(block_forward(normal_tensor(rng, {2, 5, 8}), m.blocks[0], s), DimensionError);
}

TEST(BlockForward, ZeroInputGivesZeroOutput) {
    const auto s = small_spec();
    const Model m = Model::init(s, 1);
    const Tensor y = block_forward(Tensor::zeros({1, 4, 16}), m.blocks[1], s);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(BlockForward, HighBitQuantizerConvergesToFullPrecision) {
    const auto s = small_spec();
    const Model m = Model::init(s, 2);
    Rng rng(4);
    const Tensor x = normal_tensor(rng, {2, 6, 16});
    QuantOptions opts;
    opts.cfg = QuantConfig::parse("W8A16g8");
    BlockQuantizers q = init_block_quantizers(m.blocks[0], opts, 0, false);
    q.cfg.weight_bits = 24;
    for (auto& lq : q.linear) {
        lq.lwc.gamma_raw = Tensor::full(lq.lwc.gamma_raw.shape(), 30.0);
        lq.lwc.beta_raw = Tensor::full(lq.lwc.beta_raw.shape(), 30.0);
    }
    const Tensor fp = block_forward(x, m.blocks[0], s);
    const Tensor qq = block_forward(x, m.blocks[0], s, &q);
    EXPECT_LT(max_abs_diff(fp, qq), 1e-6);
    EXPECT_FALSE(bit_equal(fp, qq));
}

TEST(BlockForward, IdentityLetLeavesQuantizedOutputUnchanged) {
    const auto s = small_spec();
    const Model m = Model::init(s, 2);
    Rng rng(5);
    const Tensor x = normal_tensor(rng, {1, 6, 16});
    QuantOptions with, without;
    with.cfg = without.cfg = QuantConfig::parse("W3A16g8");
    with.let = true;
    without.let = false;
    const auto qa = init_block_quantizers(m.blocks[0], with, 9, false);
    const auto qb = init_block_quantizers(m.blocks[0], without, 9, false);
    EXPECT_LT(max_abs_diff(block_forward(x, m.blocks[0], s, &qa), block_forward(x, m.blocks[0], s, &qb)), 1e-12);
}

TEST(ModelForward, SingleTokenShapeAndFiniteLogits) {
    const auto s = small_spec();
    const Model m = Model::init(s, 3);
    const Tensor logits = model_forward(m, {{5}, 1, 1});
    EXPECT_EQ(logits.shape(), (Shape{1, 1, 32}));
    Rng rng(1);
    const Tensor batch_logits = model_forward(m, random_batch(rng, 3, 12, 32));
    for (double v : batch_logits.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(ModelForward, NoQuantizersEqualsFullPrecisionPath) {
    const auto s = small_spec();
    const Model m = Model::init(s, 3);
    Rng rng(2);
    const auto tb = random_batch(rng, 2, 8, 32);
    Tensor x = embed_tokens(m, tb);
    for (const auto& b : m.blocks) x = block_forward_flat(x, 2, 8, b, s);
    const Tensor manual = reshape(model_head(m, x), {2, 8, 32});
    EXPECT_TRUE(bit_equal(manual, model_forward(m, tb)));
    EXPECT_TRUE(bit_equal(model_forward(m, tb), model_forward(m, tb, nullptr)));
}

TEST(ModelForward, Causality) {
    const auto s = small_spec();
    const Model m = Model::init(s, 4);
    Rng rng(6);
    const auto tb = random_batch(rng, 1, 10, 32);
    const auto base = model_forward(m, tb).to_vector();
    for (std::size_t t = 0; t < 10; ++t) {
        auto changed = tb;
        changed.ids[t] = (changed.ids[t] + 1) % 32;
        const auto out = model_forward(m, changed).to_vector();
        for (std::size_t i = 0; i < t * 32; ++i) ASSERT_EQ(out[i], base[i]) << "position " << i / 32 << " saw token " << t;
        bool moved = false;
        for (std::size_t i = t * 32; i < (t + 1) * 32; ++i) moved |= out[i] != base[i];
        EXPECT_TRUE(moved);
    }
}

TEST(ModelForward, TwoBitQuantizationChangesOutputDistribution) {
    const auto s = small_spec();
    const Model m = Model::init(s, 5);
    Rng rng(8);
    const auto tb = random_batch(rng, 2, 8, 32);
    QuantOptions opts;
    opts.cfg = QuantConfig::parse("W2A16g8");
    const auto q = init_model_quantizers(m, opts, 0);
    const auto fp = model_forward_flat(m, tb), qq = model_forward_flat(m, tb, &q);
    EXPECT_GT(kl_loss(fp.logits, qq.logits, 1.0).item(), 0.0);
}

TEST(ModelForward, Errors) {
    const auto s = small_spec();
    const Model m = Model::init(s, 5);
    EXPECT_THROW(model_forward(m, {{32}, 1, 1}), DomainError);
    EXPECT_THROW(model_forward(m, {std::vector<std::uint32_t>(13, 0), 1, 13}), DimensionError);
    EXPECT_THROW(model_forward(m, {{1, 2, 3}, 1, 2}), DimensionError);
    std::vector<BlockQuantizers> one(1);
    EXPECT_THROW(model_forward(m, {{1}, 1, 1}, &one), DimensionError);
}

TEST(LayerNorm, NormalizesRows) {
    Rng rng(1);
    const Tensor x = normal_tensor(rng, {4, 8}, 3.0);
    const Tensor y = layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}));
    const auto v = y.to_vector();
    for (std::size_t r = 0; r < 4; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t c = 0; c < 8; ++c) mean += v[r * 8 + c] / 8.0;
        for (std::size_t c = 0; c < 8; ++c) var += (v[r * 8 + c] - mean) * (v[r * 8 + c] - mean) / 8.0;
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(var, 1.0, 1e-5);
    }
}

}  // namespace
}  // namespace swcalib
