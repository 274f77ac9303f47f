#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "swcalib/tensor.hpp"

namespace swcalib {

// Full-precision and quantized block outputs flattened to [N x d], with
// N = batch * seq_len.
struct BlockOutputs {
    Tensor y_fp;
    Tensor y_q;

    void validate() const;
    std::size_t samples() const { return y_fp.size(0); }
    std::size_t dim() const { return y_fp.size(1); }
};

enum class MseReduction {
    kMean,  // ||y_fp - y_q||^2 / (N d)
    kSum,   // ||y_fp - y_q||^2
};

struct LossSpec {
    double sw_w = 0.0;
    std::size_t n_proj = 128;
    double kl_temperature = 1.0;
    double kl_label_smoothing = 0.0;
    double hybrid_alpha = 0.5;
    std::uint64_t projection_seed = 0;
    MseReduction mse_reduction = MseReduction::kMean;
    // Draw a fresh projection set every optimization step; otherwise one set
    // per block.
    bool resample_projections = true;

    void validate() const;
};

// Unit-norm slicing directions, one per row.
struct ProjectionSet {
    Tensor u;  // [n_proj x d]

    // Normalizes each row; rows must be non-zero.
    static ProjectionSet from_rows(const Tensor& rows);
    std::size_t count() const { return u.size(0); }
    std::size_t dim() const { return u.size(1); }
};

// Rows are independent standard Gaussian draws, normalized. Row i uses its
// own sub-stream of `seed`, so the set does not depend on evaluation order.
ProjectionSet sample_projections(std::size_t d, std::size_t n_proj, std::uint64_t seed);

Tensor mse_loss(const BlockOutputs& b, MseReduction reduction = MseReduction::kMean);

// Mean absolute difference of the ascending-sorted inputs.
Tensor w1_1d(const Tensor& a, const Tensor& b);

// Average over projections u_i of w1_1d(y_fp u_i, y_q u_i).
Tensor sliced_wasserstein_loss(const BlockOutputs& b, const ProjectionSet& proj);
// Individual W1 value of every projection (no graph).
std::vector<double> per_projection_w1(const BlockOutputs& b, const ProjectionSet& proj);

struct BlockLossTerms {
    Tensor total;
    Tensor mse;
    Tensor sw;
};

// (1 - sw_w) * MSE + sw_w * SW.
Tensor combined_block_loss(const BlockOutputs& b, const LossSpec& spec, const ProjectionSet& proj);
BlockLossTerms combined_block_terms(const BlockOutputs& b, const LossSpec& spec, const ProjectionSet& proj);

// Forward KL(p_fp || p_q) of temperature-scaled softmaxes, averaged over the
// N rows. p_fp is a constant reference: no gradient reaches logits_fp.
Tensor kl_loss(const Tensor& logits_fp, const Tensor& logits_q, double temperature, double label_smoothing = 0.0);

// alpha * MSE + (1 - alpha) * KL.
Tensor hybrid_loss(const BlockOutputs& b, const Tensor& logits_fp, const Tensor& logits_q, double alpha,
                   double temperature, double label_smoothing = 0.0, MseReduction reduction = MseReduction::kMean);

}  // namespace swcalib
