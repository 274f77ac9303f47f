#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "swcalib/oracle.hpp"
#include "swcalib/rng.hpp"

namespace swcalib::oracle {

// One differentiable operation wired for a finite-difference check: a random
// input generator (kept away from kinks and sort ties) and a scalar-valued
// function of those inputs.
struct GradCheckCase {
    std::string name;
    std::function<std::vector<Tensor>(Rng&)> make_inputs;
    std::function<Tensor(const std::vector<Tensor>&)> fn;
};

// Every registered op and loss.
const std::vector<GradCheckCase>& gradcheck_cases();

struct GradCheckTrialSummary {
    std::string name;
    std::size_t trials = 0;
    std::size_t failures = 0;
    double worst_rel_error = 0.0;
};

GradCheckTrialSummary run_gradcheck_case(const GradCheckCase& c, std::size_t trials, std::uint64_t seed,
                                         double tol = 1e-5);

}  // namespace swcalib::oracle
