#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swcalib/quant.hpp"
#include "swcalib/tensor.hpp"

namespace swcalib {

struct ModelSpec {
    std::size_t vocab_size = 256;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_blocks = 2;
    std::size_t ff_mult = 4;
    std::size_t max_seq_len = 64;

    void validate() const;
    std::size_t d_ff() const { return d_model * ff_mult; }
    bool operator==(const ModelSpec&) const = default;
};

// The six linear layers of a block, in forward order.
enum class Linear : std::size_t { kQ, kK, kV, kO, kFc1, kFc2 };
constexpr std::size_t kLinearCount = 6;
constexpr std::array<const char*, kLinearCount> kLinearNames{"q", "k", "v", "o", "fc1", "fc2"};

struct LinearWeights {
    Tensor w;  // [in x out]
    Tensor b;  // [out]
};

struct BlockWeights {
    Tensor ln1_gain, ln1_shift;
    std::array<LinearWeights, kLinearCount> linear;
    Tensor ln2_gain, ln2_shift;

    LinearWeights& at(Linear l) { return linear[static_cast<std::size_t>(l)]; }
    const LinearWeights& at(Linear l) const { return linear[static_cast<std::size_t>(l)]; }
};

struct Model {
    ModelSpec spec;
    Tensor embed;  // [V x d], also the output head
    Tensor pos;    // [max_seq_len x d]
    std::vector<BlockWeights> blocks;
    Tensor lnf_gain, lnf_shift;

    // Gaussian weights with std 1/sqrt(d), zero biases and shifts, unit gains.
    static Model init(const ModelSpec& spec, std::uint64_t seed);
    // Every tensor under its container name ("embed", "block0.q.w", ...).
    std::vector<std::pair<std::string, Tensor>> named_tensors() const;
};

// Bytes held by the model's weight tensors.
std::size_t model_bytes(const Model& m);

// Learnable quantizer state of one linear layer.
struct LinearQuant {
    LwcParams lwc;
    std::optional<LetParams> let;
};

// Quantizers for one block. cfg.weight_bits is used as given (the forward
// does not re-validate it), so tests may push it past 8.
struct BlockQuantizers {
    QuantConfig cfg;
    bool hier_let = false;
    HierLetState hier;
    std::array<LinearQuant, kLinearCount> linear;

    LinearQuant& at(Linear l) { return linear[static_cast<std::size_t>(l)]; }
    const LinearQuant& at(Linear l) const { return linear[static_cast<std::size_t>(l)]; }

    // Trainable tensors, split by learning-rate group.
    std::vector<Tensor> lwc_parameters() const;
    std::vector<Tensor> let_parameters() const;
    // Copies with no gradient history and the given requires_grad.
    BlockQuantizers clone(bool requires_grad) const;
};

struct QuantOptions {
    QuantConfig cfg;
    std::optional<bool> let;  // unset: on when activations are quantized
    bool hier_let = false;
    LwcInit lwc_init;

    bool let_enabled() const { return let.value_or(cfg.quantizes_activations()); }
};

BlockQuantizers init_block_quantizers(const BlockWeights& w, const QuantOptions& opts, std::uint64_t seed,
                                      bool requires_grad = true);
std::vector<BlockQuantizers> init_model_quantizers(const Model& m, const QuantOptions& opts, std::uint64_t seed);

constexpr double kLayerNormEps = 1e-5;

// Row-wise layer norm of [N x d] with affine gain/shift.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift);

// x @ w + b, optionally through the quantizer of that layer.
Tensor linear_forward(const Tensor& x, const LinearWeights& lw, const BlockQuantizers* q, Linear which);

// Pre-norm block on flattened [batch*seq x d] activations.
Tensor block_forward_flat(const Tensor& x, std::size_t batch, std::size_t seq, const BlockWeights& w,
                          const ModelSpec& spec, const BlockQuantizers* q = nullptr);
// Same on [B x S x d].
Tensor block_forward(const Tensor& x, const BlockWeights& w, const ModelSpec& spec, const BlockQuantizers* q = nullptr);

// Token batch: `batch` sequences of `seq` ids, row-major.
struct TokenBatch {
    std::vector<std::uint32_t> ids;
    std::size_t batch = 0;
    std::size_t seq = 0;
};

// Token + position embeddings, [batch*seq x d].
Tensor embed_tokens(const Model& m, const TokenBatch& tokens);
// Final norm and tied head on [N x d] hidden states; logits [N x V].
Tensor model_head(const Model& m, const Tensor& hidden);
// Full forward; logits [B x S x V]. quantizers, when given, has one entry per
// block.
Tensor model_forward(const Model& m, const TokenBatch& tokens, const std::vector<BlockQuantizers>* quantizers = nullptr);
// Same, returning [B*S x V] and the final block's output.
struct ForwardTrace {
    Tensor last_hidden;  // [B*S x d]
    Tensor logits;       // [B*S x V]
};
ForwardTrace model_forward_flat(const Model& m, const TokenBatch& tokens,
                                const std::vector<BlockQuantizers>* quantizers = nullptr);

}  // namespace swcalib
