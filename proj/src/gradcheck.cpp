#include "swcalib/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "swcalib/errors.hpp"
#include "swcalib/losses.hpp"
#include "swcalib/ops.hpp"
#include "swcalib/quant.hpp"

namespace swcalib::oracle {

namespace {

using Inputs = std::vector<Tensor>;

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

Tensor random_normal(Rng& rng, Shape shape, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

// Magnitude in [lo, hi] with random sign.
Tensor away_from_zero(Rng& rng, Shape shape, double lo, double hi) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    return Tensor(std::move(shape), std::move(v));
}

// Contracts t against fixed pseudo-random weights so every output element
// carries a distinct upstream gradient.
Tensor weighted_sum(const Tensor& t) {
    Rng rng(mix_seed(0x5eed, t.numel()));
    std::vector<double> w(t.numel());
    for (auto& x : w) x = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    return sum(t * Tensor(t.shape(), std::move(w)));
}

double min_sorted_gap(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double gap = INFINITY;
    for (std::size_t i = 1; i < v.size(); ++i) gap = std::min(gap, v[i] - v[i - 1]);
    return gap;
}

// Smallest gap between values within any row of a [R x C] matrix.
double min_row_gap(const Tensor& m) {
    const std::size_t r = m.size(0), c = m.size(1);
    const auto d = m.to_vector();
    double gap = INFINITY;
    for (std::size_t i = 0; i < r; ++i) {
        gap = std::min(gap, min_sorted_gap({d.begin() + i * c, d.begin() + (i + 1) * c}));
    }
    return gap;
}

constexpr double kSafeGap = 1e-3;

// Regenerates until pred accepts.
template <typename Make, typename Pred>
Inputs generate_until(Rng& rng, Make make, Pred pred) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Inputs in = make(rng);
        if (pred(in)) return in;
    }
    throw UsageError("gradcheck: could not draw inputs away from non-smooth points");
}

constexpr std::size_t kSwN = 6;
constexpr std::size_t kSwD = 3;

ProjectionSet fixed_projections(std::size_t n_proj) { return sample_projections(kSwD, n_proj, 0xabc + n_proj); }

bool sw_inputs_smooth(const Inputs& in, std::size_t n_proj) {
    NoGradGuard no_grad;
    const auto proj = fixed_projections(n_proj);
    const Tensor pf = transpose(matmul(in[0], transpose(proj.u)));
    const Tensor pq = transpose(matmul(in[1], transpose(proj.u)));
    if (min_row_gap(pf) < kSafeGap || min_row_gap(pq) < kSafeGap) return false;
    const Tensor diff = abs(sort_rows(pf) - sort_rows(pq));
    const auto d = diff.data();
    return *std::min_element(d.begin(), d.end()) > kSafeGap;
}

Inputs sw_inputs(Rng& rng, std::size_t n_proj) {
    return generate_until(
        rng,
        [](Rng& r) {
            return Inputs{random_normal(r, {kSwN, kSwD}), random_normal(r, {kSwN, kSwD}, 1.3)};
        },
        [n_proj](const Inputs& in) { return sw_inputs_smooth(in, n_proj); });
}

constexpr std::size_t kKlN = 4;
constexpr std::size_t kKlV = 5;

Tensor fixed_reference_logits() {
    Rng rng(0xf00d);
    return random_normal(rng, {kKlN, kKlV}, 1.5);
}

std::vector<GradCheckCase> build_cases() {
    std::vector<GradCheckCase> c;
    auto reg = [&](std::string name, std::function<Inputs(Rng&)> make, std::function<Tensor(const Inputs&)> fn) {
        c.push_back({std::move(name), std::move(make), std::move(fn)});
    };

    reg("matmul", [](Rng& r) { return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {4, 2})}; },
        [](const Inputs& in) { return weighted_sum(matmul(in[0], in[1])); });
    reg("transpose", [](Rng& r) { return Inputs{random_tensor(r, {3, 4})}; },
        [](const Inputs& in) { return weighted_sum(transpose(in[0])); });
    reg("reshape", [](Rng& r) { return Inputs{random_tensor(r, {3, 4})}; },
        [](const Inputs& in) { return weighted_sum(reshape(in[0], {2, 6})); });
    reg("add", [](Rng& r) { return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {4})}; },
        [](const Inputs& in) { return weighted_sum(add(in[0], in[1])); });
    reg("sub", [](Rng& r) { return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {3, 1})}; },
        [](const Inputs& in) { return weighted_sum(sub(in[0], in[1])); });
    reg("mul", [](Rng& r) { return Inputs{random_tensor(r, {2, 3, 4}), random_tensor(r, {3, 1})}; },
        [](const Inputs& in) { return weighted_sum(mul(in[0], in[1])); });
    reg("div", [](Rng& r) { return Inputs{random_tensor(r, {3, 4}), away_from_zero(r, {3, 4}, 0.5, 2.0)}; },
        [](const Inputs& in) { return weighted_sum(div(in[0], in[1])); });
    reg("neg", [](Rng& r) { return Inputs{random_tensor(r, {5})}; },
        [](const Inputs& in) { return weighted_sum(neg(in[0])); });
    reg("abs", [](Rng& r) { return Inputs{away_from_zero(r, {6}, 0.1, 1.0)}; },
        [](const Inputs& in) { return weighted_sum(abs(in[0])); });
    reg("square", [](Rng& r) { return Inputs{random_tensor(r, {6})}; },
        [](const Inputs& in) { return weighted_sum(square(in[0])); });
    reg("sqrt", [](Rng& r) { return Inputs{random_tensor(r, {6}, 0.5, 2.0)}; },
        [](const Inputs& in) { return weighted_sum(sqrt(in[0])); });
    reg("exp", [](Rng& r) { return Inputs{random_tensor(r, {6})}; },
        [](const Inputs& in) { return weighted_sum(exp(in[0])); });
    reg("log", [](Rng& r) { return Inputs{random_tensor(r, {6}, 0.5, 2.0)}; },
        [](const Inputs& in) { return weighted_sum(log(in[0])); });
    reg("sigmoid", [](Rng& r) { return Inputs{random_tensor(r, {6}, -3.0, 3.0)}; },
        [](const Inputs& in) { return weighted_sum(sigmoid(in[0])); });
    reg("gelu", [](Rng& r) { return Inputs{random_tensor(r, {6}, -3.0, 3.0)}; },
        [](const Inputs& in) { return weighted_sum(gelu(in[0])); });
    reg(
        "clamp",
        [](Rng& r) {
            return generate_until(
                r, [](Rng& q) { return Inputs{random_tensor(q, {8})}; },
                [](const Inputs& in) {
                    for (double v : in[0].data())
                        if (std::fabs(std::fabs(v) - 0.5) < 0.05) return false;
                    return true;
                });
        },
        [](const Inputs& in) { return weighted_sum(clamp(in[0], -0.5, 0.5)); });
    reg("sum", [](Rng& r) { return Inputs{random_tensor(r, {3, 4})}; },
        [](const Inputs& in) { return sum(square(in[0])); });
    reg("mean", [](Rng& r) { return Inputs{random_tensor(r, {3, 4})}; },
        [](const Inputs& in) { return mean(square(in[0])); });
    reg("sum_along", [](Rng& r) { return Inputs{random_tensor(r, {3, 4})}; },
        [](const Inputs& in) { return weighted_sum(sum_along(in[0], 0)); });
    reg("mean_along", [](Rng& r) { return Inputs{random_tensor(r, {3, 4})}; },
        [](const Inputs& in) { return weighted_sum(mean_along(in[0], 1)); });
    reg("variance_along_axis", [](Rng& r) { return Inputs{random_tensor(r, {3, 5})}; },
        [](const Inputs& in) { return weighted_sum(variance_along_axis(in[0], 1)); });
    auto distinct_3x5 = [](Rng& r) {
        return generate_until(
            r, [](Rng& q) { return Inputs{random_tensor(q, {3, 5})}; },
            [](const Inputs& in) { return min_row_gap(in[0]) > kSafeGap; });
    };
    reg("max_along", distinct_3x5, [](const Inputs& in) { return weighted_sum(max_along(in[0], 1)); });
    reg("min_along", distinct_3x5, [](const Inputs& in) { return weighted_sum(min_along(in[0], 1)); });
    reg(
        "sort",
        [](Rng& r) {
            return generate_until(
                r, [](Rng& q) { return Inputs{random_tensor(q, {7})}; },
                [](const Inputs& in) { return min_sorted_gap(in[0].to_vector()) > kSafeGap; });
        },
        [](const Inputs& in) { return weighted_sum(sort_with_permutation(in[0]).sorted); });
    reg("sort_rows", distinct_3x5, [](const Inputs& in) { return weighted_sum(sort_rows(in[0])); });
    reg("gather_rows", [](Rng& r) { return Inputs{random_tensor(r, {4, 3})}; },
        [](const Inputs& in) {
            const std::vector<std::uint32_t> ids{2, 0, 2, 3, 1};
            return weighted_sum(gather_rows(in[0], ids));
        });
    reg("log_softmax_rows", [](Rng& r) { return Inputs{random_tensor(r, {3, 5}, -2.0, 2.0)}; },
        [](const Inputs& in) { return weighted_sum(log_softmax_rows(in[0])); });
    reg("softmax_rows", [](Rng& r) { return Inputs{random_tensor(r, {3, 5}, -2.0, 2.0)}; },
        [](const Inputs& in) { return weighted_sum(softmax_rows(in[0])); });
    reg("causal_attention",
        [](Rng& r) {
            return Inputs{random_tensor(r, {6, 4}), random_tensor(r, {6, 4}), random_tensor(r, {6, 4})};
        },
        [](const Inputs& in) { return weighted_sum(causal_attention(in[0], in[1], in[2], 2, 3, 2)); });
    reg("let_transform",
        [](Rng& r) {
            return Inputs{random_tensor(r, {4, 3}), random_tensor(r, {3, 2}), random_tensor(r, {2}),
                          random_tensor(r, {3}, -0.5, 0.5), random_tensor(r, {3}, 0.5, 2.0)};
        },
        [](const Inputs& in) {
            const auto out = let_transform(in[0], in[1], in[2], LetParams{in[3], in[4]});
            return weighted_sum(out.x) + weighted_sum(out.w) + weighted_sum(out.bias);
        });
    reg("hier_let_token_scale", [](Rng& r) { return Inputs{random_tensor(r, {3, 4}, -2.0, 2.0)}; },
        [](const Inputs& in) {
            const auto out = hier_let_token_scale(in[0], HierLetState{});
            return weighted_sum(out.x) + weighted_sum(out.s_tok);
        });

    // Losses.
    reg("mse_loss", [](Rng& r) { return Inputs{random_normal(r, {5, 3}), random_normal(r, {5, 3})}; },
        [](const Inputs& in) { return mse_loss({in[0], in[1]}); });
    reg("mse_loss_sum", [](Rng& r) { return Inputs{random_normal(r, {5, 3}), random_normal(r, {5, 3})}; },
        [](const Inputs& in) { return mse_loss({in[0], in[1]}, MseReduction::kSum); });
    reg(
        "w1_1d",
        [](Rng& r) {
            return generate_until(
                r, [](Rng& q) { return Inputs{random_normal(q, {6}), random_normal(q, {6}, 1.5)}; },
                [](const Inputs& in) {
                    if (min_sorted_gap(in[0].to_vector()) < kSafeGap) return false;
                    if (min_sorted_gap(in[1].to_vector()) < kSafeGap) return false;
                    NoGradGuard g;
                    const auto d = abs(sort_with_permutation(in[0]).sorted - sort_with_permutation(in[1]).sorted);
                    const auto v = d.data();
                    return *std::min_element(v.begin(), v.end()) > kSafeGap;
                });
        },
        [](const Inputs& in) { return w1_1d(in[0], in[1]); });
    for (std::size_t n_proj : {1, 16, 128}) {
        reg("sliced_wasserstein_nproj" + std::to_string(n_proj), [n_proj](Rng& r) { return sw_inputs(r, n_proj); },
            [n_proj](const Inputs& in) { return sliced_wasserstein_loss({in[0], in[1]}, fixed_projections(n_proj)); });
    }
    for (double sw_w : {0.0, 0.2, 1.0}) {
        const std::string label = sw_w == 0.0 ? "0" : (sw_w == 1.0 ? "1" : "0.2");
        reg("combined_sww" + label, [](Rng& r) { return sw_inputs(r, 16); },
            [sw_w](const Inputs& in) {
                LossSpec spec;
                spec.sw_w = sw_w;
                spec.n_proj = 16;
                return combined_block_loss({in[0], in[1]}, spec, fixed_projections(16));
            });
    }
    reg("kl_loss", [](Rng& r) { return Inputs{random_normal(r, {kKlN, kKlV}, 1.5)}; },
        [](const Inputs& in) { return kl_loss(fixed_reference_logits(), in[0], 1.0); });
    reg("kl_loss_t2_smoothed", [](Rng& r) { return Inputs{random_normal(r, {kKlN, kKlV}, 1.5)}; },
        [](const Inputs& in) { return kl_loss(fixed_reference_logits(), in[0], 2.0, 0.1); });
    reg("hybrid_loss",
        [](Rng& r) {
            return Inputs{random_normal(r, {5, 3}), random_normal(r, {5, 3}), random_normal(r, {kKlN, kKlV}, 1.5)};
        },
        [](const Inputs& in) { return hybrid_loss({in[0], in[1]}, fixed_reference_logits(), in[2], 0.5, 1.0); });
    return c;
}

}  // namespace

const std::vector<GradCheckCase>& gradcheck_cases() {
    static const std::vector<GradCheckCase> cases = build_cases();
    return cases;
}

GradCheckTrialSummary run_gradcheck_case(const GradCheckCase& c, std::size_t trials, std::uint64_t seed, double tol) {
    GradCheckTrialSummary summary{c.name, trials, 0, 0.0};
    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng(mix_seed(seed, std::hash<std::string>{}(c.name), t));
        const auto inputs = c.make_inputs(rng);
        const auto result = check_gradients(c.fn, inputs, 1e-5, tol);
        summary.worst_rel_error = std::max(summary.worst_rel_error, result.max_rel_error);
        if (!result.passed) ++summary.failures;
    }
    return summary;
}

}  // namespace swcalib::oracle
