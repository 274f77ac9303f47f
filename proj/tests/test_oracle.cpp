#include <gtest/gtest.h>

#include <cmath>

#include "swcalib/errors.hpp"
#include "swcalib/losses.hpp"
#include "swcalib/ops.hpp"
#include "swcalib/oracle.hpp"
#include "test_util.hpp"

using namespace swcalib;
using swcalib::testing::normal_tensor;

TEST(ExactW1_1d, HandValues) {
    const std::vector<double> a{0, 2}, b{1, 3};
    EXPECT_DOUBLE_EQ(oracle::exact_w1_1d(a, b), 1.0);
    EXPECT_EQ(oracle::exact_w1_1d(a, a), 0.0);
    const std::vector<double> c{3, 0}, d{1, 2};
    EXPECT_DOUBLE_EQ(oracle::exact_w1_1d(c, d), 1.0);
}

TEST(ExactW1_1d, LengthMismatch) {
    const std::vector<double> a{0, 2}, b{1};
    EXPECT_THROW(oracle::exact_w1_1d(a, b), DimensionError);
}

TEST(ExactW1_1d, AgreesWithDifferentiableW1) {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const std::size_t n = 1 + rng.below(50);
        Tensor a = normal_tensor(rng, {n}), b = normal_tensor(rng, {n}, 2.0);
        EXPECT_NEAR(w1_1d(a, b).item(), oracle::exact_w1_1d(a.data(), b.data()), 1e-12);
    }
}

TEST(Assignment, IdenticalSetsAreZero) {
    Rng rng(2);
    Tensor a = normal_tensor(rng, {5, 3});
    EXPECT_EQ(oracle::exact_w1_assignment(a, a), 0.0);
}

TEST(Assignment, VerticalMatching) {
    Tensor a = Tensor::matrix({{0, 0}, {1, 0}});
    Tensor b = Tensor::matrix({{0, 1}, {1, 1}});
    EXPECT_DOUBLE_EQ(oracle::exact_w1_assignment(a, b), 1.0);
}

TEST(Assignment, HungarianMatchesBruteForce) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        auto pa = oracle::PointSet::from(normal_tensor(rng, {n, 3}));
        auto pb = oracle::PointSet::from(normal_tensor(rng, {n, 3}));
        const auto cost = oracle::euclidean_cost(pa, pb);
        auto total = [&](const std::vector<std::size_t>& asg) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += cost[i][asg[i]];
            return s;
        };
        EXPECT_NEAR(total(oracle::hungarian(cost)), total(oracle::brute_force_assignment(cost)), 1e-12);
    }
}

TEST(Assignment, TooLargeIsUsageError) {
    Tensor a = Tensor::zeros({11, 2});
    EXPECT_THROW(oracle::exact_w1_assignment(a, a), UsageError);
}

TEST(Assignment, OneDimensionalMatchesQuantileFormula) {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.below(10);
        Tensor a = normal_tensor(rng, {n, 1}), b = normal_tensor(rng, {n, 1});
        EXPECT_NEAR(oracle::exact_w1_assignment(a, b), oracle::exact_w1_1d(a.data(), b.data()), 1e-12);
    }
}

TEST(Assignment, BoundsSlicedWasserstein) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(8), d = 1 + rng.below(4);
        Tensor a = normal_tensor(rng, {n, d}), b = normal_tensor(rng, {n, d});
        const double exact = oracle::exact_w1_assignment(a, b);
        EXPECT_LE(sliced_wasserstein_loss({a, b}, sample_projections(d, 32, trial)).item(), exact + 1e-9);
    }
}

TEST(References, PercentileAndVariance) {
    const std::vector<double> v{4, 1, 3, 2};
    EXPECT_DOUBLE_EQ(oracle::percentile_reference(v, 50), 2.5);
    EXPECT_DOUBLE_EQ(oracle::percentile_reference(v, 0), 1.0);
    EXPECT_DOUBLE_EQ(oracle::percentile_reference(v, 100), 4.0);
    EXPECT_DOUBLE_EQ(oracle::percentile_reference(v, 25), 1.75);
    EXPECT_DOUBLE_EQ(oracle::population_variance_reference(v), 1.25);
}

TEST(FiniteDiff, SumGivesOnes) {
    auto g = oracle::finite_diff_grad([](const Tensor& x) { return sum(x).item(); }, Tensor::vector({1, -2, 3}));
    for (double v : g.to_vector()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDiff, SquareAtThree) {
    auto g = oracle::finite_diff_grad([](const Tensor& x) { return square(x).item(); }, Tensor::scalar(3.0));
    EXPECT_NEAR(g.item(), 6.0, 1e-8);
}

// An op that computes x^2 but claims derivative 3x must be caught.
TEST(FiniteDiff, FlagsWrongBackwardRule) {
    auto bad_square = [](const Tensor& x) {
        Buffer out(x.numel());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
        return make_result("bad_square", x.shape(), std::move(out), {x}, [](Node& self) {
            auto g = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3.0 * self.inputs[0]->data[i] * self.grad[i];
        });
    };
    auto f = [&](const std::vector<Tensor>& in) { return sum(bad_square(in[0])); };
    auto result = oracle::check_gradients(f, {Tensor::vector({0.5, -1.0, 2.0})});
    EXPECT_FALSE(result.passed);
    EXPECT_GT(result.max_rel_error, 0.1);

    auto good = [](const std::vector<Tensor>& in) { return sum(square(in[0])); };
    EXPECT_TRUE(oracle::check_gradients(good, {Tensor::vector({0.5, -1.0, 2.0})}).passed);
}
