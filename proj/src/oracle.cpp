#include "swcalib/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "swcalib/errors.hpp"

namespace swcalib::oracle {

double exact_w1_1d(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("exact_w1_1d: length mismatch");
    if (a.empty()) return 0.0;
    struct Event {
        double x;
        int source;  // 0 = a, 1 = b
    };
    std::vector<Event> events;
    events.reserve(a.size() + b.size());
    for (double x : a) events.push_back({x, 0});
    for (double x : b) events.push_back({x, 1});
    std::sort(events.begin(), events.end(), [](const Event& l, const Event& r) { return l.x < r.x; });

    // Counts of a and b at or below the current position; the CDF gap is
    // constant between consecutive events.
    const double n = static_cast<double>(a.size());
    long count_a = 0, count_b = 0;
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < events.size(); ++i) {
        (events[i].source == 0 ? count_a : count_b) += 1;
        const double width = events[i + 1].x - events[i].x;
        if (width > 0.0) total += std::fabs(static_cast<double>(count_a - count_b)) * width;
    }
    return total / n;
}

PointSet PointSet::from(const Tensor& t) {
    if (t.rank() != 2) throw DimensionError("PointSet needs a 2-D tensor");
    return {t.size(0), t.size(1), t.to_vector()};
}

std::vector<std::vector<double>> euclidean_cost(const PointSet& a, const PointSet& b) {
    if (a.n != b.n || a.d != b.d) throw DimensionError("euclidean_cost: point sets differ in shape");
    std::vector<std::vector<double>> cost(a.n, std::vector<double>(b.n));
    for (std::size_t i = 0; i < a.n; ++i) {
        for (std::size_t j = 0; j < b.n; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < a.d; ++t) {
                const double diff = a.row(i)[t] - b.row(j)[t];
                s += diff * diff;
            }
            cost[i][j] = std::sqrt(s);
        }
    }
    return cost;
}

// Shortest augmenting path with potentials, O(n^3).
std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
    const std::size_t n = cost.size();
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> assignment(n);
    for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
    return assignment;
}

std::vector<std::size_t> brute_force_assignment(const std::vector<std::vector<double>>& cost) {
    const std::size_t n = cost.size();
    if (n > 8) throw UsageError("brute_force_assignment: N too large");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::vector<std::size_t> best = perm;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) c += cost[i][perm[i]];
        if (c < best_cost) {
            best_cost = c;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

double exact_w1_assignment(const PointSet& a, const PointSet& b) {
    if (a.n != b.n) throw DimensionError("exact_w1_assignment: sample counts differ");
    if (a.n > kMaxAssignmentN) {
        throw UsageError("exact_w1_assignment: N = " + std::to_string(a.n) + " exceeds " +
                         std::to_string(kMaxAssignmentN));
    }
    if (a.n == 0) return 0.0;
    const auto cost = euclidean_cost(a, b);
    const auto assignment = a.n <= kMaxExhaustiveN ? brute_force_assignment(cost) : hungarian(cost);
    double total = 0.0;
    for (std::size_t i = 0; i < a.n; ++i) total += cost[i][assignment[i]];
    return total / static_cast<double>(a.n);
}

double exact_w1_assignment(const Tensor& a, const Tensor& b) {
    return exact_w1_assignment(PointSet::from(a), PointSet::from(b));
}

double percentile_reference(std::span<const double> values, double p) {
    if (values.empty()) throw UsageError("percentile of empty set");
    std::vector<double> s(values.begin(), values.end());
    std::sort(s.begin(), s.end());
    const double pos = p / 100.0 * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, s.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return s[lo] + (s[hi] - s[lo]) * frac;
}

double population_variance_reference(std::span<const double> values) {
    // Two-pass with the mean computed first.
    long double m = 0.0L;
    for (double v : values) m += v;
    m /= static_cast<long double>(values.size());
    long double s = 0.0L;
    for (double v : values) s += (v - m) * (v - m);
    return static_cast<double>(s / static_cast<long double>(values.size()));
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw UsageError("finite_diff_grad: h must be positive");
    NoGradGuard guard;
    const auto base = x.to_vector();
    std::vector<double> grad(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        auto plus = base;
        auto minus = base;
        plus[i] += h;
        minus[i] -= h;
        const double fp = f(Tensor(x.shape(), plus));
        const double fm = f(Tensor(x.shape(), minus));
        if (!std::isfinite(fp) || !std::isfinite(fm)) throw NonFiniteError("finite_diff_grad", "forward");
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return Tensor(x.shape(), std::move(grad));
}

GradCheckResult check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                const std::vector<Tensor>& inputs, double h, double tol) {
    std::vector<Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(t.clone(true));
    Tensor out = f(leaves);
    backward(out);

    GradCheckResult result;
    result.passed = true;
    std::ostringstream detail;
    for (std::size_t slot = 0; slot < leaves.size(); ++slot) {
        const auto analytic = leaves[slot].grad_vector();
        auto fn = [&](const Tensor& probe) {
            auto args = inputs;
            args[slot] = probe;
            return f(args).item();
        };
        const auto numeric = finite_diff_grad(fn, inputs[slot], h).to_vector();
        double max_diff = 0.0, scale = 1e-6;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            max_diff = std::max(max_diff, std::fabs(analytic[i] - numeric[i]));
            scale = std::max({scale, std::fabs(analytic[i]), std::fabs(numeric[i])});
        }
        const double rel = max_diff / scale;
        if (rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_input = slot;
        }
        if (!(rel < tol)) {
            result.passed = false;
            detail << "input " << slot << ": rel err " << rel << "; ";
        }
    }
    result.detail = detail.str();
    return result;
}

}  // namespace swcalib::oracle
