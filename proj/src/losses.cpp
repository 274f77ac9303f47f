#include "swcalib/losses.hpp"

#include <cmath>

#include "swcalib/errors.hpp"
#include "swcalib/ops.hpp"
#include "swcalib/rng.hpp"

namespace swcalib {

void BlockOutputs::validate() const {
    if (y_fp.rank() != 2 || y_q.rank() != 2) throw DimensionError("block outputs must be [N x d]");
    if (y_fp.shape() != y_q.shape()) {
        throw DimensionError("block outputs differ in shape: " + shape_str(y_fp.shape()) + " vs " +
                             shape_str(y_q.shape()));
    }
    if (y_fp.size(0) == 0 || y_fp.size(1) == 0) throw DimensionError("block outputs need N >= 1 and d >= 1");
}

void LossSpec::validate() const {
    if (!(sw_w >= 0.0 && sw_w <= 1.0)) throw ConfigError("sw_w must be in [0, 1]");
    if (n_proj < 1) throw ConfigError("n_proj must be >= 1");
    if (!(kl_temperature > 0.0)) throw ConfigError("kl_temperature must be > 0");
    if (!(kl_label_smoothing >= 0.0 && kl_label_smoothing < 1.0)) throw ConfigError("kl_label_smoothing must be in [0, 1)");
    if (!(hybrid_alpha >= 0.0 && hybrid_alpha <= 1.0)) throw ConfigError("hybrid_alpha must be in [0, 1]");
}

// ---------------------------------------------------------------------------
// Projections

ProjectionSet ProjectionSet::from_rows(const Tensor& rows) {
    if (rows.rank() != 2 || rows.size(0) == 0 || rows.size(1) == 0) throw DimensionError("projection rows must be [K x d]");
    const std::size_t k = rows.size(0), d = rows.size(1);
    auto values = rows.to_vector();
    for (std::size_t i = 0; i < k; ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) norm += values[i * d + j] * values[i * d + j];
        norm = std::sqrt(norm);
        if (norm == 0.0) throw DomainError("projection row " + std::to_string(i) + " is zero");
        for (std::size_t j = 0; j < d; ++j) values[i * d + j] /= norm;
    }
    return {Tensor({k, d}, std::move(values))};
}

ProjectionSet sample_projections(std::size_t d, std::size_t n_proj, std::uint64_t seed) {
    if (d < 1 || n_proj < 1) throw ConfigError("sample_projections needs d >= 1 and n_proj >= 1");
    std::vector<double> values(n_proj * d);
    for (std::size_t i = 0; i < n_proj; ++i) {
        Rng rng(mix_seed(seed, i));
        double norm = 0.0;
        while (norm == 0.0) {
            norm = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double z = rng.normal();
                values[i * d + j] = z;
                norm += z * z;
            }
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < d; ++j) values[i * d + j] /= norm;
    }
    return {Tensor({n_proj, d}, std::move(values))};
}

// ---------------------------------------------------------------------------
// Losses

Tensor mse_loss(const BlockOutputs& b, MseReduction reduction) {
    b.validate();
    Tensor sq = square(b.y_fp - b.y_q);
    return reduction == MseReduction::kMean ? mean(sq) : sum(sq);
}

Tensor w1_1d(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.size(0) != b.size(0)) {
        throw DimensionError("w1_1d: inputs must be 1-D of equal length");
    }
    if (a.size(0) == 0) throw DimensionError("w1_1d: empty inputs");
    return mean(abs(sort_with_permutation(a).sorted - sort_with_permutation(b).sorted));
}

namespace {

// Sorted projections, one projection per row: [n_proj x N].
Tensor sorted_projections(const Tensor& y, const ProjectionSet& proj) {
    return sort_rows(transpose(matmul(y, transpose(proj.u))));
}

void check_projection_dim(const BlockOutputs& b, const ProjectionSet& proj) {
    b.validate();
    if (proj.u.rank() != 2 || proj.dim() != b.dim()) {
        throw DimensionError("projection dim " + std::to_string(proj.u.rank() == 2 ? proj.dim() : 0) +
                             " does not match block output dim " + std::to_string(b.dim()));
    }
}

}  // namespace

Tensor sliced_wasserstein_loss(const BlockOutputs& b, const ProjectionSet& proj) {
    check_projection_dim(b, proj);
    // Every slice has N samples, so the mean over all entries equals the mean
    // over slices of the per-slice W1.
    return mean(abs(sorted_projections(b.y_fp, proj) - sorted_projections(b.y_q, proj)));
}

std::vector<double> per_projection_w1(const BlockOutputs& b, const ProjectionSet& proj) {
    check_projection_dim(b, proj);
    NoGradGuard no_grad;
    const Tensor diff = abs(sorted_projections(b.y_fp, proj) - sorted_projections(b.y_q, proj));
    const std::size_t k = proj.count(), n = b.samples();
    std::vector<double> out(k, 0.0);
    auto d = diff.data();
    for (std::size_t i = 0; i < k; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += d[i * n + j];
        out[i] = s / static_cast<double>(n);
    }
    return out;
}

BlockLossTerms combined_block_terms(const BlockOutputs& b, const LossSpec& spec, const ProjectionSet& proj) {
    spec.validate();
    Tensor mse = mse_loss(b, spec.mse_reduction);
    Tensor sw = sliced_wasserstein_loss(b, proj);
    Tensor total = Tensor::scalar(1.0 - spec.sw_w) * mse + Tensor::scalar(spec.sw_w) * sw;
    return {total, mse, sw};
}

Tensor combined_block_loss(const BlockOutputs& b, const LossSpec& spec, const ProjectionSet& proj) {
    return combined_block_terms(b, spec, proj).total;
}

Tensor kl_loss(const Tensor& logits_fp, const Tensor& logits_q, double temperature, double label_smoothing) {
    if (logits_fp.shape() != logits_q.shape() || logits_fp.rank() != 2) {
        throw DimensionError("kl_loss: logits must be matching [N x V]");
    }
    if (!(temperature > 0.0)) throw ConfigError("kl_loss: temperature must be > 0");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("kl_loss: label smoothing must be in [0, 1)");
    const std::size_t n = logits_fp.size(0), v = logits_fp.size(1);

    // Constant reference distribution and its negative entropy.
    std::vector<double> p(n * v);
    double neg_entropy = 0.0;
    {
        NoGradGuard no_grad;
        const auto logp = log_softmax_rows(logits_fp.detach() / temperature).to_vector();
        for (std::size_t i = 0; i < p.size(); ++i) {
            double pi = std::exp(logp[i]);
            double log_pi = logp[i];
            if (label_smoothing > 0.0) {
                pi = (1.0 - label_smoothing) * pi + label_smoothing / static_cast<double>(v);
                log_pi = std::log(pi);
            }
            p[i] = pi;
            if (pi > 0.0) neg_entropy += pi * log_pi;
        }
    }
    Tensor log_q = log_softmax_rows(logits_q / temperature);
    Tensor cross = sum(Tensor({n, v}, std::move(p)) * log_q);
    return (Tensor::scalar(neg_entropy) - cross) / static_cast<double>(n);
}

Tensor hybrid_loss(const BlockOutputs& b, const Tensor& logits_fp, const Tensor& logits_q, double alpha,
                   double temperature, double label_smoothing, MseReduction reduction) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("hybrid alpha must be in [0, 1]");
    return Tensor::scalar(alpha) * mse_loss(b, reduction) +
           Tensor::scalar(1.0 - alpha) * kl_loss(logits_fp, logits_q, temperature, label_smoothing);
}

}  // namespace swcalib
