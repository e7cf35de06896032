#pragma once

#include <functional>
#include <span>
#include <vector>

#include "hypercast/autodiff.hpp"

namespace hypercast::ad {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::vector<double> analytic_all, numeric_all;

    // Every coordinate satisfies |a - n| <= atol + rtol * (|a| + |n|). The
    // absolute floor absorbs finite-difference round-off on tiny gradients.
    bool allclose(double rtol, double atol) const;
    std::size_t mismatches(double rtol, double atol) const;
};

// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

// f builds a scalar on a fresh tape from the tracked input `x`.
using InputFn = std::function<Tensor(Tape&, const Tensor&)>;
GradCheckResult gradient_check(const InputFn& f, const Shape& shape, const std::vector<double>& x,
                               double eps = 1e-3);

// f builds a scalar on a fresh tape, binding `params` through Tape::parameter.
// Parameter values are restored on return; grads are left zeroed.
using ParamFn = std::function<Tensor(Tape&)>;
GradCheckResult gradient_check_params(const ParamFn& f, std::span<Parameter* const> params,
                                      double eps = 1e-3);

}  // namespace hypercast::ad
