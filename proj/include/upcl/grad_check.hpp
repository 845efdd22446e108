#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "upcl/common.hpp"

namespace upcl {

// Central-difference check of an analytic gradient. `value_of` maps a
// matrix of inputs to a scalar; `at` is the evaluation point and
// `analytic` its claimed gradient. Returns the max over coordinates of
// |difference| / max(1, |analytic|).
template <typename ValueFn>
double grad_check(ValueFn&& value_of, const Matrix& at, const Matrix& analytic, double h = 1e-5) {
    Matrix probe = at;
    double worst = 0.0;
    for (std::size_t idx = 0; idx < probe.data.size(); ++idx) {
        const double saved = probe.data[idx];
        probe.data[idx] = saved + h;
        const double hi = value_of(probe);
        probe.data[idx] = saved - h;
        const double lo = value_of(probe);
        probe.data[idx] = saved;
        const double fd = (hi - lo) / (2.0 * h);
        const double g = analytic.data[idx];
        worst = std::max(worst, std::abs(fd - g) / std::max(1.0, std::abs(g)));
    }
    return worst;
}

} // namespace upcl
