#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>

namespace cse {

// Central-difference gradient check. Perturbs each listed parameter in place,
// re-evaluates the scalar loss, and returns the worst relative error against
// the supplied analytic gradient. The loss closure is expected to evaluate in
// double precision so the finite differences are not dominated by roundoff.
//
// Relative error uses a 1e-3 denominator floor: parameters whose true
// gradient is below that scale are effectively compared with an absolute
// tolerance of eps * 1e-3.
inline double grad_check(const std::function<double()>& loss_fn, std::span<double*> params,
                         std::span<const double> analytic, double eps = 1e-3) {
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* p = params[i];
        const double saved = *p;
        *p = saved + eps;
        const double lp = loss_fn();
        *p = saved - eps;
        const double lm = loss_fn();
        *p = saved;

        const double fd = (lp - lm) / (2.0 * eps);
        const double an = analytic[i];
        const double denom = std::max(std::abs(fd) + std::abs(an), 1e-3);
        worst = std::max(worst, std::abs(fd - an) / denom);
    }
    return worst;
}

} // namespace cse
