#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "swcalib/tensor.hpp"

// Reference implementations used to certify the differentiable code. Nothing
// here shares code with the autodiff engine's sort or loss paths.
namespace swcalib::oracle {

// 1-D Wasserstein-1 between two equal-size empirical measures, computed as
// the integral of |F_a - F_b| over the merged support.
double exact_w1_1d(std::span<const double> a, std::span<const double> b);

// Row-major N x d point sets.
struct PointSet {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> values;

    static PointSet from(const Tensor& t);
    std::span<const double> row(std::size_t i) const { return {values.data() + i * d, d}; }
};

// N x N Euclidean cost between the rows of two point sets.
std::vector<std::vector<double>> euclidean_cost(const PointSet& a, const PointSet& b);

// Minimum-cost perfect matching; returns assignment[row] = column.
std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost);
// Same problem by enumerating every permutation (N <= 8).
std::vector<std::size_t> brute_force_assignment(const std::vector<std::vector<double>>& cost);

constexpr std::size_t kMaxExhaustiveN = 6;
constexpr std::size_t kMaxAssignmentN = 10;

// Empirical W1 between uniform measures on the rows of a and b: minimum over
// matchings of the mean Euclidean cost. Exhaustive for N <= 6, Hungarian up
// to N = 10; larger N is a UsageError.
double exact_w1_assignment(const PointSet& a, const PointSet& b);
double exact_w1_assignment(const Tensor& a, const Tensor& b);

// Linear-interpolation percentile (numpy's default), p in [0, 100].
double percentile_reference(std::span<const double> values, double p);
double population_variance_reference(std::span<const double> values);

// Central differences of a scalar function, one coordinate at a time.
// Evaluations run without graph recording.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

struct GradCheckResult {
    bool passed = false;
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::string detail;
};

// Compares backward() of f(inputs) against central differences for every
// input. Error per input is max|analytic - numeric| / max(|analytic|_inf,
// |numeric|_inf, 1e-6).
GradCheckResult check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                const std::vector<Tensor>& inputs, double h = 1e-5, double tol = 1e-5);

}  // namespace swcalib::oracle
