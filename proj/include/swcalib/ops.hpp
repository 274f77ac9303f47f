#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "swcalib/tensor.hpp"

namespace swcalib {

// Differentiable operations. Binary elementwise ops broadcast numpy-style
// (shapes right-aligned, each dimension equal or 1); gradients are summed
// back over broadcast dimensions.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
// Subgradient 0 at x = 0.
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// The exact scalar function sigmoid() applies elementwise.
double sigmoid_value(double v);
// tanh approximation.
Tensor gelu(const Tensor& x);

// Gradient 1 where lo <= x <= hi, else 0.
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor clamp_min(const Tensor& x, double lo);

// Forward rounds half to even; backward is the identity.
Tensor round_ste(const Tensor& x);
// Clamped straight-through rounding: forward clamp(round(x), lo, hi),
// backward passes the gradient where round(x) lies in [lo, hi], 0 elsewhere.
Tensor round_ste(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reductions along one axis; the reduced axis is kept with size 1.
Tensor sum_along(const Tensor& x, std::size_t axis);
Tensor mean_along(const Tensor& x, std::size_t axis);
// Population variance (divides by n).
Tensor variance_along_axis(const Tensor& x, std::size_t axis);
// Gradient goes to the first extremal element.
Tensor max_along(const Tensor& x, std::size_t axis);
Tensor min_along(const Tensor& x, std::size_t axis);

struct SortResult {
    Tensor sorted;
    // perm[i] = index in the input of the i-th smallest value.
    std::vector<std::size_t> perm;
};

// Stable ascending sort of a 1-D tensor; ties keep input order. Backward
// scatters sorted-position gradients back through the permutation.
SortResult sort_with_permutation(const Tensor& v);
// Sorts every row of a 2-D tensor independently (same rule per row).
Tensor sort_rows(const Tensor& x);

// rows[i] = table[ids[i]].
Tensor gather_rows(const Tensor& table, std::span<const std::uint32_t> ids);
// Row-wise over the last axis of a 2-D tensor.
Tensor log_softmax_rows(const Tensor& x);
Tensor softmax_rows(const Tensor& x);

// Multi-head causal self-attention core on flattened [batch*seq x d]
// inputs: per (batch, head), softmax(q k^T / sqrt(d/heads) + causal mask) v.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch, std::size_t seq,
                        std::size_t heads);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
inline Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
inline Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
inline Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }

}  // namespace swcalib
