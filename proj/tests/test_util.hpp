#pragma once

#include <vector>

#include "swcalib/rng.hpp"
#include "swcalib/tensor.hpp"

namespace swcalib::testing {

inline Tensor uniform_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool rg = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v), rg);
}

inline Tensor normal_tensor(Rng& rng, Shape shape, double scale = 1.0, bool rg = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor(std::move(shape), std::move(v), rg);
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && a.to_vector() == b.to_vector();
}

}  // namespace swcalib::testing
