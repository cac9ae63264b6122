#pragma once

// Independent test oracles. Everything here is deliberately written against
// public scalar interfaces only (no reuse of the analytic-gradient or
// filter-ranking code paths it checks).

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "selfcontrast/embed.hpp"
#include "selfcontrast/toylm.hpp"

namespace oracles {

/// Central finite difference of f with respect to params.flat()[i].
inline double central_difference(const selfcontrast::ModelParams& params,
                                 const std::function<double(const selfcontrast::ModelParams&)>& f,
                                 size_t i, double step = 1e-5) {
    selfcontrast::ModelParams up = params, down = params;
    up.flat()[i] += step;
    down.flat()[i] -= step;
    return (f(up) - f(down)) / (2.0 * step);
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    size_t worst_index = 0;
    size_t checked = 0;
};

/// Compare an analytic gradient against central differences on a random
/// subset of coordinates. The relative-error denominator is floored at 1e-3
/// so coordinates where both sides vanish stay meaningful (the FD noise
/// floor at step 1e-5 sits near 1e-10, orders below the 1e-6 tolerance).
inline GradCheckResult grad_check(
    const selfcontrast::ModelParams& params,
    const std::function<double(const selfcontrast::ModelParams&)>& f,
    const std::vector<double>& analytic, selfcontrast::Rng& rng, size_t coords_to_check,
    double step = 1e-5) {
    GradCheckResult res;
    const size_t n = analytic.size();
    for (size_t k = 0; k < coords_to_check; ++k) {
        const size_t i = static_cast<size_t>(rng.below(n));
        const double fd = central_difference(params, f, i, step);
        const double diff = std::abs(analytic[i] - fd);
        const double rel = diff / std::max({std::abs(analytic[i]), std::abs(fd), 1e-3});
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_index = i;
        }
        ++res.checked;
    }
    return res;
}

/// Exhaustive sort-and-slice reference for the negative filter: rank by
/// similarity descending (stable), drop ceil((1-a%)*R), return survivors in
/// ascending similarity order (stable).
inline std::vector<int> brute_force_eligible(const std::vector<double>& sims, double a_percent) {
    const int R = static_cast<int>(sims.size());
    std::vector<int> order(sims.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return sims[(size_t)a] > sims[(size_t)b]; });
    const double frac = (100.0 - a_percent) / 100.0;
    int drop = static_cast<int>(std::ceil(frac * R - 1e-12));
    drop = std::clamp(drop, 0, R);
    std::vector<int> kept(order.begin() + drop, order.end());
    std::stable_sort(kept.begin(), kept.end(),
                     [&](int a, int b) { return sims[(size_t)a] < sims[(size_t)b]; });
    return kept;
}

/// Chi-square 0.99 quantiles for the degrees of freedom the tests use.
inline double chi2_crit_99(int dof) {
    switch (dof) {
        case 9: return 21.666;
        case 22: return 40.289;
        case 24: return 42.980;
        case 27: return 46.963;
        default: throw std::invalid_argument("chi2_crit_99: add the quantile for this dof");
    }
}

}  // namespace oracles
