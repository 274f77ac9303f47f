#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "swcalib/tensor.hpp"

namespace swcalib {

enum class Grouping { kPerChannel, kPerTensor, kGroups };

// Bit-width and grouping settings, written as a tag like "W2A16g128".
//   W<bits>       weight bits, 1..8
//   A<bits>       activation bits; 16 or more keeps activations unquantized
//   g<n> | gT     n weights per group along the input axis, or one group per
//                 tensor; no suffix means one group per output channel
struct QuantConfig {
    int weight_bits = 4;
    int act_bits = 16;
    Grouping grouping = Grouping::kPerChannel;
    std::size_t group_size = 0;
    bool symmetric = false;

    static QuantConfig parse(std::string_view tag);
    std::string tag() const;
    void validate() const;
    bool quantizes_activations() const { return act_bits < 16; }
};

// Weights are stored [in x out]. Groups run along the input axis of each
// output channel, so the grouped view is reshape(w^T, [G, g]).
std::size_t group_length(const Shape& weight_shape, const QuantConfig& cfg);
std::size_t group_count(const Shape& weight_shape, const QuantConfig& cfg);
Tensor group_weights(const Tensor& w, const QuantConfig& cfg);
Tensor ungroup_weights(const Tensor& grouped, const Shape& weight_shape);

// Learnable clipping logits, one per group, shaped [G x 1]. The clip range of
// group i is [sigmoid(beta_raw_i) * min, sigmoid(gamma_raw_i) * max].
struct LwcParams {
    Tensor gamma_raw;
    Tensor beta_raw;
};

struct ClipBounds {
    Tensor lower;  // [G x 1]
    Tensor upper;
};

ClipBounds lwc_clip_bounds(const Tensor& grouped, const LwcParams& lwc, bool symmetric);

// Uniform affine fake quantization of each row of `grouped` onto
// 2^bits levels spanning [lower, upper]: step = (upper - lower) / (2^bits - 1),
// integer zero point round(-lower / step). Rounding uses the clamped
// straight-through rule; gradients reach the bounds through step and zero
// point. bits may go up to 30 here.
Tensor fake_quantize_range(const Tensor& grouped, const Tensor& lower, const Tensor& upper, int bits);

// Fake-quantizes a weight matrix with learnable clipping; returns the same
// shape as w.
Tensor fake_quantize(const Tensor& w, const QuantConfig& cfg, const LwcParams& lwc);
// Same, with bits taken from the argument instead of cfg.weight_bits.
Tensor fake_quantize_bits(const Tensor& w, int bits, const QuantConfig& cfg, const LwcParams& lwc);

// Dynamic per-token quantization of activations [N x d] (no learned params).
Tensor quantize_activations(const Tensor& x, int bits);

// Channel-wise equivalent transformation. scale must be strictly positive.
struct LetParams {
    Tensor delta;  // [d]
    Tensor scale;  // [d]

    static LetParams identity(std::size_t d, bool requires_grad = false);
};

struct LetOutputs {
    Tensor x;     // (x - delta) / scale
    Tensor w;     // diag(scale) w
    Tensor bias;  // bias + delta w
};

void check_let_scale(const LetParams& let);
LetOutputs let_transform(const Tensor& x, const Tensor& w, const Tensor& bias, const LetParams& let);

// Folds a LET that follows a layer norm into the norm's affine parameters:
// gain' = gain / scale, shift' = (shift - delta) / scale.
struct NormAffine {
    Tensor gain;
    Tensor shift;
};
NormAffine fold_let_into_norm(const NormAffine& norm, const LetParams& let);

struct HierLetState {
    double epsilon = 1e-6;
};

struct TokenScaled {
    Tensor x;      // x / s_tok, row-wise
    Tensor s_tok;  // [N x 1]
};

// s_tok = max(sqrt(population variance over channels), epsilon) per row.
TokenScaled hier_let_token_scale(const Tensor& x, const HierLetState& state);

// LWC initialization heuristics. "default" is the host method's raw logit 4.
struct LwcInit {
    enum class Kind { kDefault, kSoft, kAggressive, kPercentile, kRandom };
    Kind kind = Kind::kDefault;
    double percentile = 95.0;  // kPercentile: upper p-th / lower (100-p)-th
    double lo = 0.7;           // kRandom: factors ~ U(lo, hi)
    double hi = 1.0;

    // "default", "soft", "aggressive", "percentile:95", "random:0.7,1.0".
    static LwcInit parse(std::string_view text);
    std::string str() const;
    void validate() const;
};

constexpr double kDefaultLwcLogit = 4.0;
constexpr double kSoftClipFactor = 0.9;
constexpr double kAggressiveClipFactor = 0.5;

// Logit whose sigmoid_value() reproduces p exactly when some double does.
double logit_exact(double p);

LwcParams lwc_init(const Tensor& w, const QuantConfig& cfg, const LwcInit& strategy, std::uint64_t seed,
                   bool requires_grad = true);

}  // namespace swcalib
