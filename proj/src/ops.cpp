#include "swcalib/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "swcalib/errors.hpp"
#include "swcalib/parallel.hpp"

namespace swcalib {

namespace {

bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }
std::span<const double> in_data(const Node& self, std::size_t i) { return self.inputs[i]->data; }
std::span<double> in_grad(Node& self, std::size_t i) { return self.inputs[i]->grad_buffer(); }

void require_rank(const Tensor& t, std::size_t r, const char* op) {
    if (t.rank() != r) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                             shape_str(t.shape()));
    }
}

Buffer copy_of(std::span<const double> values) { return Buffer(values.begin(), values.end()); }

// ---------------------------------------------------------------------------
// Broadcasting

struct BroadcastPlan {
    Shape out;
    bool same = false;
    std::vector<std::size_t> a_index;  // out flat index -> a flat index
    std::vector<std::size_t> b_index;
};

std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    // Strides of `in` aligned to `out`, zero on broadcast dimensions.
    std::vector<std::size_t> strides(out.size(), 0);
    const std::size_t offset = out.size() - in.size();
    std::size_t s = 1;
    for (std::size_t i = in.size(); i-- > 0;) {
        strides[offset + i] = in[i] == 1 ? 0 : s;
        s *= in[i];
    }
    return strides;
}

std::shared_ptr<BroadcastPlan> plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    auto plan = std::make_shared<BroadcastPlan>();
    if (a == b) {
        plan->out = a;
        plan->same = true;
        return plan;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    plan->out.assign(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        plan->out[i] = da == 1 ? db : da;
    }
    const auto sa = broadcast_strides(a, plan->out);
    const auto sb = broadcast_strides(b, plan->out);
    const std::size_t n = shape_numel(plan->out);
    plan->a_index.resize(n);
    plan->b_index.resize(n);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
        plan->a_index[flat] = ia;
        plan->b_index[flat] = ib;
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < plan->out[d]) break;
            ia -= sa[d] * idx[d];
            ib -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
    return plan;
}

// f(a, b) -> value; da(a, b, y) and db(a, b, y) -> local partials.
template <typename F, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
    auto plan = plan_broadcast(a.shape(), b.shape(), op);
    const std::size_t n = shape_numel(plan->out);
    Buffer out(n);
    auto x = a.data();
    auto y = b.data();
    if (plan->same) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i], y[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(x[plan->a_index[i]], y[plan->b_index[i]]);
    }
    return make_result(op, plan->out, std::move(out), {a, b}, [plan, da, db](Node& self) {
        auto g = std::span<const double>(self.grad);
        auto x = in_data(self, 0);
        auto y = in_data(self, 1);
        const std::size_t n = g.size();
        for (std::size_t slot = 0; slot < 2; ++slot) {
            if (!wants(self, slot)) continue;
            auto gi = in_grad(self, slot);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t ia = plan->same ? i : plan->a_index[i];
                const std::size_t ib = plan->same ? i : plan->b_index[i];
                const double local = slot == 0 ? da(x[ia], y[ib], self.data[i]) : db(x[ia], y[ib], self.data[i]);
                gi[slot == 0 ? ia : ib] += g[i] * local;
            }
        }
    });
}

// f(x) -> value; df(x, y) -> derivative.
template <typename F, typename DF>
Tensor unary(const char* op, const Tensor& x, F f, DF df) {
    auto src = x.data();
    Buffer out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = f(src[i]);
    return make_result(op, x.shape(), std::move(out), {x}, [df](Node& self) {
        auto g = std::span<const double>(self.grad);
        auto xs = in_data(self, 0);
        auto gi = in_grad(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * df(xs[i], self.data[i]);
    });
}

struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size()) throw DimensionError(std::string(op) + ": axis out of range for " + shape_str(s));
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    if (r.n == 0) throw DimensionError(std::string(op) + ": reduction over empty axis");
    return r;
}

Shape keep_axis(Shape s, std::size_t axis) {
    s[axis] = 1;
    return s;
}

// Stable argsort of one contiguous row.
void argsort_row(std::span<const double> row, std::span<std::size_t> perm) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t i, std::size_t j) { return row[i] < row[j]; });
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t n = a.size(0), k = a.size(1), m = b.size(1);
    if (b.size(0) != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    Buffer out(n * m, 0.0);
    auto x = a.data();
    auto y = b.data();
    parallel_for(n, 16, [&](std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0; i < r1; ++i) {
            double* orow = out.data() + i * m;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = x[i * k + p];
                const double* brow = y.data() + p * m;
                for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
            }
        }
    });
    return make_result("matmul", {n, m}, std::move(out), {a, b}, [n, k, m](Node& self) {
        const double* g = self.grad.data();
        auto x = in_data(self, 0);
        auto y = in_data(self, 1);
        if (wants(self, 0)) {
            // da = g b^T
            auto ga = in_grad(self, 0);
            parallel_for(n, 16, [&](std::size_t r0, std::size_t r1) {
                for (std::size_t i = r0; i < r1; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* brow = y.data() + p * m;
                        const double* grow = g + i * m;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                        ga[i * k + p] += acc;
                    }
                }
            });
        }
        if (wants(self, 1)) {
            // db = a^T g
            auto gb = in_grad(self, 1);
            parallel_for(k, 8, [&](std::size_t p0, std::size_t p1) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double* grow = g + i * m;
                    for (std::size_t p = p0; p < p1; ++p) {
                        const double av = x[i * k + p];
                        double* gbrow = gb.data() + p * m;
                        for (std::size_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
                    }
                }
            });
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t r = a.size(0), c = a.size(1);
    Buffer out(r * c);
    auto x = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
    return make_result("transpose", {c, r}, std::move(out), {a}, [r, c](Node& self) {
        auto gi = in_grad(self, 0);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += self.grad[j * r + i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    return make_result("reshape", std::move(shape), copy_of(a.data()), {a}, [](Node& self) {
        auto gi = in_grad(self, 0);
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    for (double v : b.data()) {
        if (v == 0.0) throw DomainError("div: division by zero");
    }
    return binary(
        "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double out) { return -out / y; });
}

Tensor neg(const Tensor& x) {
    return unary(
        "neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor abs(const Tensor& x) {
    return unary(
        "abs", x, [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
    return unary(
        "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
    for (double v : x.data()) {
        if (v < 0.0) throw DomainError("sqrt: negative input");
    }
    return unary(
        "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor exp(const Tensor& x) {
    return unary(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (v <= 0.0) throw DomainError("log: non-positive input");
    }
    return unary(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

double sigmoid_value(double v) {
    // 1 - e/(1+e) resolves values near 1 finer than 1/(1+e) does, so that
    // targets like 0.9 are reachable exactly.
    if (v >= 0.0) {
        const double e = std::exp(-v);
        return 1.0 - e / (1.0 + e);
    }
    const double e = std::exp(v);
    return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        "sigmoid", x, [](double v) { return sigmoid_value(v); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    return unary(
        "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))); },
        [](double v, double) {
            const double t = std::tanh(kC * (v + kA * v * v * v));
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
        });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (lo > hi) throw DomainError("clamp: lo > hi");
    return unary(
        "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor clamp_min(const Tensor& x, double lo) {
    return unary(
        "clamp_min", x, [lo](double v) { return std::max(v, lo); },
        [lo](double v, double) { return v >= lo ? 1.0 : 0.0; });
}

// Adding 0.0 maps a rounded -0 to +0, so quantized grids have one zero.
Tensor round_ste(const Tensor& x) {
    return unary(
        "round_ste", x, [](double v) { return std::nearbyint(v) + 0.0; }, [](double, double) { return 1.0; });
}

Tensor round_ste(const Tensor& x, double lo, double hi) {
    if (lo > hi) throw DomainError("round_ste: lo > hi");
    return unary(
        "round_ste_clamped", x, [lo, hi](double v) { return std::clamp(std::nearbyint(v) + 0.0, lo, hi); },
        [lo, hi](double v, double) {
            const double r = std::nearbyint(v);
            return (r >= lo && r <= hi) ? 1.0 : 0.0;
        });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return make_result("sum", {}, Buffer{acc}, {x}, [](Node& self) {
        auto gi = in_grad(self, 0);
        const double g = self.grad[0];
        for (auto& v : gi) v += g;
    });
}

Tensor mean(const Tensor& x) {
    const std::size_t n = x.numel();
    if (n == 0) throw DimensionError("mean of empty tensor");
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return make_result("mean", {}, Buffer{acc / static_cast<double>(n)}, {x}, [n](Node& self) {
        auto gi = in_grad(self, 0);
        const double g = self.grad[0] / static_cast<double>(n);
        for (auto& v : gi) v += g;
    });
}

Tensor sum_along(const Tensor& x, std::size_t axis) {
    const auto sp = split_axis(x.shape(), axis, "sum_along");
    auto src = x.data();
    Buffer out(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < sp.n; ++k)
            for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += src[(o * sp.n + k) * sp.inner + i];
    return make_result("sum_along", keep_axis(x.shape(), axis), std::move(out), {x}, [sp](Node& self) {
        auto gi = in_grad(self, 0);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t k = 0; k < sp.n; ++k)
                for (std::size_t i = 0; i < sp.inner; ++i) gi[(o * sp.n + k) * sp.inner + i] += self.grad[o * sp.inner + i];
    });
}

Tensor mean_along(const Tensor& x, std::size_t axis) {
    const auto sp = split_axis(x.shape(), axis, "mean_along");
    auto src = x.data();
    const double inv = 1.0 / static_cast<double>(sp.n);
    Buffer out(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < sp.n; ++k)
            for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += src[(o * sp.n + k) * sp.inner + i];
    for (auto& v : out) v *= inv;
    return make_result("mean_along", keep_axis(x.shape(), axis), std::move(out), {x}, [sp, inv](Node& self) {
        auto gi = in_grad(self, 0);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t k = 0; k < sp.n; ++k)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    gi[(o * sp.n + k) * sp.inner + i] += self.grad[o * sp.inner + i] * inv;
    });
}

Tensor variance_along_axis(const Tensor& x, std::size_t axis) {
    const auto sp = split_axis(x.shape(), axis, "variance_along_axis");
    auto src = x.data();
    const double inv = 1.0 / static_cast<double>(sp.n);
    auto means = std::make_shared<std::vector<double>>(sp.outer * sp.inner, 0.0);
    Buffer out(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            double m = 0.0;
            for (std::size_t k = 0; k < sp.n; ++k) m += src[(o * sp.n + k) * sp.inner + i];
            m *= inv;
            double v = 0.0;
            for (std::size_t k = 0; k < sp.n; ++k) {
                const double d = src[(o * sp.n + k) * sp.inner + i] - m;
                v += d * d;
            }
            (*means)[o * sp.inner + i] = m;
            out[o * sp.inner + i] = v * inv;
        }
    }
    return make_result("variance_along_axis", keep_axis(x.shape(), axis), std::move(out), {x},
                       [sp, inv, means](Node& self) {
                           auto xs = in_data(self, 0);
                           auto gi = in_grad(self, 0);
                           for (std::size_t o = 0; o < sp.outer; ++o)
                               for (std::size_t k = 0; k < sp.n; ++k)
                                   for (std::size_t i = 0; i < sp.inner; ++i) {
                                       const std::size_t j = (o * sp.n + k) * sp.inner + i;
                                       gi[j] += self.grad[o * sp.inner + i] * 2.0 * (xs[j] - (*means)[o * sp.inner + i]) * inv;
                                   }
                       });
}

namespace {

template <typename Better>
Tensor extreme_along(const char* op, const Tensor& x, std::size_t axis, Better better) {
    const auto sp = split_axis(x.shape(), axis, op);
    auto src = x.data();
    auto arg = std::make_shared<std::vector<std::size_t>>(sp.outer * sp.inner);
    Buffer out(sp.outer * sp.inner);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            std::size_t best = o * sp.n * sp.inner + i;
            for (std::size_t k = 1; k < sp.n; ++k) {
                const std::size_t j = (o * sp.n + k) * sp.inner + i;
                if (better(src[j], src[best])) best = j;
            }
            (*arg)[o * sp.inner + i] = best;
            out[o * sp.inner + i] = src[best];
        }
    }
    return make_result(op, keep_axis(x.shape(), axis), std::move(out), {x}, [arg](Node& self) {
        auto gi = in_grad(self, 0);
        for (std::size_t r = 0; r < arg->size(); ++r) gi[(*arg)[r]] += self.grad[r];
    });
}

}  // namespace

Tensor max_along(const Tensor& x, std::size_t axis) {
    return extreme_along("max_along", x, axis, [](double a, double b) { return a > b; });
}

Tensor min_along(const Tensor& x, std::size_t axis) {
    return extreme_along("min_along", x, axis, [](double a, double b) { return a < b; });
}

// ---------------------------------------------------------------------------
// Sorting

namespace {

Tensor sort_rows_impl(const char* op, const Tensor& x, std::size_t rows, std::size_t cols,
                      std::shared_ptr<std::vector<std::size_t>> perm) {
    auto src = x.data();
    Buffer out(rows * cols);
    perm->resize(rows * cols);
    parallel_for(rows, 4, [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            auto row = src.subspan(r * cols, cols);
            auto p = std::span<std::size_t>(perm->data() + r * cols, cols);
            argsort_row(row, p);
            for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = row[p[j]];
        }
    });
    return make_result(op, x.shape(), std::move(out), {x}, [perm, rows, cols](Node& self) {
        auto gi = in_grad(self, 0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j) gi[r * cols + (*perm)[r * cols + j]] += self.grad[r * cols + j];
    });
}

}  // namespace

SortResult sort_with_permutation(const Tensor& v) {
    require_rank(v, 1, "sort_with_permutation");
    auto perm = std::make_shared<std::vector<std::size_t>>();
    Tensor sorted = sort_rows_impl("sort", v, 1, v.size(0), perm);
    return {std::move(sorted), *perm};
}

Tensor sort_rows(const Tensor& x) {
    require_rank(x, 2, "sort_rows");
    return sort_rows_impl("sort_rows", x, x.size(0), x.size(1), std::make_shared<std::vector<std::size_t>>());
}

// ---------------------------------------------------------------------------
// Lookup and softmax

Tensor gather_rows(const Tensor& table, std::span<const std::uint32_t> ids) {
    require_rank(table, 2, "gather_rows");
    const std::size_t v = table.size(0), d = table.size(1);
    auto src = table.data();
    auto idx = std::make_shared<std::vector<std::uint32_t>>(ids.begin(), ids.end());
    Buffer out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= v) throw DomainError("gather_rows: id " + std::to_string(ids[i]) + " >= " + std::to_string(v));
        std::copy_n(src.data() + ids[i] * d, d, out.data() + i * d);
    }
    return make_result("gather_rows", {ids.size(), d}, std::move(out), {table}, [idx, d](Node& self) {
        auto gi = in_grad(self, 0);
        for (std::size_t i = 0; i < idx->size(); ++i)
            for (std::size_t j = 0; j < d; ++j) gi[(*idx)[i] * d + j] += self.grad[i * d + j];
    });
}

Tensor log_softmax_rows(const Tensor& x) {
    require_rank(x, 2, "log_softmax_rows");
    const std::size_t r = x.size(0), c = x.size(1);
    auto src = x.data();
    Buffer out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = src.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
    }
    return make_result("log_softmax_rows", {r, c}, std::move(out), {x}, [r, c](Node& self) {
        auto gi = in_grad(self, 0);
        for (std::size_t i = 0; i < r; ++i) {
            double gs = 0.0;
            for (std::size_t j = 0; j < c; ++j) gs += self.grad[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                gi[i * c + j] += self.grad[i * c + j] - std::exp(self.data[i * c + j]) * gs;
        }
    });
}

Tensor softmax_rows(const Tensor& x) {
    require_rank(x, 2, "softmax_rows");
    const std::size_t r = x.size(0), c = x.size(1);
    auto src = x.data();
    Buffer out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = src.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += (out[i * c + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
    }
    return make_result("softmax_rows", {r, c}, std::move(out), {x}, [r, c](Node& self) {
        auto gi = in_grad(self, 0);
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.data[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                gi[i * c + j] += self.data[i * c + j] * (self.grad[i * c + j] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// Attention

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch, std::size_t seq,
                        std::size_t heads) {
    require_rank(q, 2, "causal_attention");
    if (q.shape() != k.shape() || q.shape() != v.shape()) throw DimensionError("causal_attention: q/k/v shapes differ");
    const std::size_t n = q.size(0), d = q.size(1);
    if (n != batch * seq) throw DimensionError("causal_attention: rows != batch*seq");
    if (heads == 0 || d % heads != 0) throw DimensionError("causal_attention: d not divisible by heads");
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // probs[(b*heads + h)*seq*seq + i*seq + j], zero above the diagonal.
    auto probs = std::make_shared<std::vector<double>>(batch * heads * seq * seq, 0.0);
    Buffer out(n * d, 0.0);
    auto qs = q.data(), ks = k.data(), vs = v.data();
    parallel_for(batch * heads, 1, [&](std::size_t p0, std::size_t p1) {
        std::vector<double> scores(seq);
        for (std::size_t bh = p0; bh < p1; ++bh) {
            const std::size_t b = bh / heads, h = bh % heads;
            double* P = probs->data() + bh * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
                const double* qi = qs.data() + (b * seq + i) * d + h * dh;
                double mx = -INFINITY;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double* kj = ks.data() + (b * seq + j) * d + h * dh;
                    double s = 0.0;
                    for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
                    scores[j] = s * scale;
                    mx = std::max(mx, scores[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j <= i; ++j) z += (scores[j] = std::exp(scores[j] - mx));
                double* oi = out.data() + (b * seq + i) * d + h * dh;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double pij = scores[j] / z;
                    P[i * seq + j] = pij;
                    const double* vj = vs.data() + (b * seq + j) * d + h * dh;
                    for (std::size_t t = 0; t < dh; ++t) oi[t] += pij * vj[t];
                }
            }
        }
    });
    return make_result(
        "causal_attention", {n, d}, std::move(out), {q, k, v}, [probs, batch, seq, heads, d, dh, scale](Node& self) {
            auto qs = in_data(self, 0), ks = in_data(self, 1), vs = in_data(self, 2);
            std::span<double> gq, gk, gv;
            if (wants(self, 0)) gq = in_grad(self, 0);
            if (wants(self, 1)) gk = in_grad(self, 1);
            if (wants(self, 2)) gv = in_grad(self, 2);
            const double* g = self.grad.data();
            parallel_for(batch * heads, 1, [&](std::size_t p0, std::size_t p1) {
                std::vector<double> dp(seq);
                for (std::size_t bh = p0; bh < p1; ++bh) {
                    const std::size_t b = bh / heads, h = bh % heads;
                    const double* P = probs->data() + bh * seq * seq;
                    for (std::size_t i = 0; i < seq; ++i) {
                        const double* gi = g + (b * seq + i) * d + h * dh;
                        double dot = 0.0;
                        for (std::size_t j = 0; j <= i; ++j) {
                            const double* vj = vs.data() + (b * seq + j) * d + h * dh;
                            double s = 0.0;
                            for (std::size_t t = 0; t < dh; ++t) s += gi[t] * vj[t];
                            dp[j] = s;
                            dot += P[i * seq + j] * s;
                        }
                        const double* qi = qs.data() + (b * seq + i) * d + h * dh;
                        for (std::size_t j = 0; j <= i; ++j) {
                            const double pij = P[i * seq + j];
                            const double ds = pij * (dp[j] - dot) * scale;
                            const std::size_t rj = (b * seq + j) * d + h * dh;
                            const std::size_t ri = (b * seq + i) * d + h * dh;
                            for (std::size_t t = 0; t < dh; ++t) {
                                if (!gq.empty()) gq[ri + t] += ds * ks[rj + t];
                                if (!gk.empty()) gk[rj + t] += ds * qi[t];
                                if (!gv.empty()) gv[rj + t] += pij * gi[t];
                            }
                        }
                    }
                }
            });
        });
}

}  // namespace swcalib
