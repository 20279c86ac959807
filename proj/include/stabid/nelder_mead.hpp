#pragma once

#include <functional>

#include "stabid/lti.hpp"

namespace stabid {

struct NelderMeadOptions {
    int max_iterations = 500;
    int max_evaluations = 0;     // 0: unlimited
    double diameter_tol = 1e-6;  // stop when max vertex distance to the best vertex drops below
    double initial_step = 0.5;
};

struct NelderMeadResult {
    Vector x;
    double value = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

using Objective = std::function<double(const Vector&)>;

/// Derivative-free simplex minimization (standard reflection / expansion /
/// contraction / shrink coefficients 1, 2, 0.5, 0.5). +inf objective values
/// are allowed and simply rank last, which makes hard barriers usable.
NelderMeadResult nelder_mead(const Objective& objective, const Vector& start,
                             const NelderMeadOptions& options = {});

}  // namespace stabid
