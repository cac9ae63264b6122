#pragma once

// Closed-form and Monte Carlo machinery for the multi-negative
// approximation theory. Per-pair gradients of the positive and negative
// sample are modeled as a correlated bivariate normal (mu1, mu2, sigma1,
// sigma2, rho); the target gradient is mu1 - mu2.
//
//   lambda          = sigma2^2 / (sigma1^2 + sigma2^2 - 2 sigma1 sigma2 rho)
//   Var(mean of l independent pairs)        = (sigma1^2 + sigma2^2 - 2 s1 s2 rho) / l
//   Var(1 positive vs mean of m negatives)  = sigma1^2 + sigma2^2/m - 2 s1 s2 rho
//   matching m for l pairs (l < 1/(1-lambda)): smallest integer
//                     m >= lambda / (lambda + 1/l - 1)

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfcontrast/rng.hpp"

namespace selfcontrast {

struct GradientModel {
    double mu1 = 0.0;
    double mu2 = 0.0;
    double sigma1 = 1.0;
    double sigma2 = 1.0;
    double rho = 0.0;

    double pair_diff_variance() const {
        return sigma1 * sigma1 + sigma2 * sigma2 - 2.0 * sigma1 * sigma2 * rho;
    }

    double target_gradient() const { return mu1 - mu2; }

    void validate() const {
        if (sigma1 < 0.0 || sigma2 < 0.0)
            throw std::invalid_argument("gradient model sigmas must be >= 0");
        if (rho < -1.0 || rho > 1.0)
            throw std::invalid_argument("gradient model rho must be in [-1, 1]");
        if (!(pair_diff_variance() > 0.0))
            throw std::invalid_argument("degenerate gradient model: Var(p - n) must be > 0");
    }
};

/// Negative exploiting potential.
inline double lambda_of(const GradientModel& model) {
    model.validate();
    return model.sigma2 * model.sigma2 / model.pair_diff_variance();
}

/// Smallest integer m with Var(1 positive, m negatives) <= Var(l pairs),
/// i.e. m >= lambda / (lambda + 1/l - 1). Requires l < 1/(1 - lambda) when
/// lambda < 1. The ceil carries a small relative nudge so analytically
/// integer bounds (e.g. lambda=0.9, l=9 -> 81) survive rounding.
inline long long min_negatives(double lambda, long long l) {
    if (l < 1) throw std::invalid_argument("min_negatives: l must be >= 1");
    if (!(lambda > 0.0)) throw std::invalid_argument("min_negatives: lambda must be > 0");
    const double denom = lambda + 1.0 / static_cast<double>(l) - 1.0;
    if (!(denom > 1e-15))
        throw std::invalid_argument(
            "min_negatives: no solution; the bound requires l < 1/(1-lambda) (lambda=" +
            std::to_string(lambda) + ", l=" + std::to_string(l) + ")");
    const double bound = lambda / denom;
    const double nudged = bound - 1e-9 * std::max(1.0, std::abs(bound));
    return std::max<long long>(1, static_cast<long long>(std::ceil(nudged)));
}

/// Variance of the mean preference gradient over l independent pairs.
inline double var_multipair(const GradientModel& model, long long l) {
    if (l < 1) throw std::invalid_argument("var_multipair: l must be >= 1");
    return model.pair_diff_variance() / static_cast<double>(l);
}

/// Variance of one positive-sample gradient minus the mean of m negative
/// gradients (each correlated sigma1*sigma2*rho with the positive, mutually
/// uncorrelated).
inline double var_multineg(const GradientModel& model, long long m) {
    if (m < 1) throw std::invalid_argument("var_multineg: m must be >= 1");
    return model.sigma1 * model.sigma1 + model.sigma2 * model.sigma2 / static_cast<double>(m) -
           2.0 * model.sigma1 * model.sigma2 * model.rho;
}

/// m -> infinity limit of the method: the effect of 1/(1-lambda) pairs;
/// +infinity for lambda >= 1.
inline double upper_limit_pairs(double lambda) {
    if (!(lambda > 0.0)) throw std::invalid_argument("upper_limit_pairs: lambda must be > 0");
    if (lambda >= 1.0) return std::numeric_limits<double>::infinity();
    return 1.0 / (1.0 - lambda);
}

struct SimConfig {
    long long l = 1;
    long long m = 1;
    long long trials = 100000;
    uint64_t seed = 0;

    void validate() const {
        if (l < 1 || m < 1 || trials < 1)
            throw std::invalid_argument("sim config: l, m, trials must all be >= 1");
    }
};

struct SimResult {
    double mse_multipair = 0.0;
    double mse_multineg = std::numeric_limits<double>::quiet_NaN();
    double mean_multipair = 0.0;
    double mean_multineg = std::numeric_limits<double>::quiet_NaN();
    double stderr_mse_multipair = 0.0;  // std error of the MSE estimate
    double stderr_mse_multineg = std::numeric_limits<double>::quiet_NaN();
    bool sampling_valid = false;  // m-negative covariance is PSD (m*rho^2 <= 1)
};

namespace detail {

struct Welford {
    double mean = 0.0;
    double m2 = 0.0;
    long long n = 0;

    void add(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }

    double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
    double stderr_of_mean() const {
        return n > 0 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0;
    }
};

}  // namespace detail

/// Monte Carlo MSE of both estimators against the target gradient
/// mu1 - mu2. Trials are seeded by counter (derive_seed(seed, 2t) for the
/// pair stream, 2t+1 for the negative stream), so results are independent of
/// execution order.
///
/// Multi-negative sampling realizes Cov(p0, n_i) = s1 s2 rho and
/// Cov(n_i, n_j) = 0 via n_i = mu2 + s2*rho*u + s2*(w_i - beta*wbar) with
/// beta = 1 - sqrt(1 - m rho^2); the joint law is PSD only for m rho^2 <= 1,
/// otherwise sampling_valid = false and only the multipair estimator runs.
inline SimResult simulate_mse(const GradientModel& model, const SimConfig& cfg) {
    model.validate();
    cfg.validate();
    const double target = model.target_gradient();
    const double m_rho2 =
        static_cast<double>(cfg.m) * model.rho * model.rho;

    SimResult result;
    result.sampling_valid = m_rho2 <= 1.0 + 1e-12;

    detail::Welford pair_est, pair_se, neg_est, neg_se;
    const double rho_c = std::sqrt(std::max(0.0, 1.0 - model.rho * model.rho));
    const double beta_neg =
        result.sampling_valid ? 1.0 - std::sqrt(std::max(0.0, 1.0 - m_rho2)) : 0.0;
    std::vector<double> w(static_cast<size_t>(cfg.m));

    for (long long t = 0; t < cfg.trials; ++t) {
        {
            Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(2 * t)));
            double acc = 0.0;
            for (long long i = 0; i < cfg.l; ++i) {
                const double u = rng.normal();
                const double gp = model.mu1 + model.sigma1 * u;
                const double gn =
                    model.mu2 + model.sigma2 * (model.rho * u + rho_c * rng.normal());
                acc += gp - gn;
            }
            const double est = acc / static_cast<double>(cfg.l);
            pair_est.add(est);
            pair_se.add((est - target) * (est - target));
        }
        if (result.sampling_valid) {
            Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(2 * t + 1)));
            const double u = rng.normal();
            const double p0 = model.mu1 + model.sigma1 * u;
            double wbar = 0.0;
            for (auto& wi : w) {
                wi = rng.normal();
                wbar += wi;
            }
            wbar /= static_cast<double>(cfg.m);
            double nbar = 0.0;
            for (const double wi : w)
                nbar += model.mu2 + model.sigma2 * (model.rho * u + (wi - beta_neg * wbar));
            nbar /= static_cast<double>(cfg.m);
            const double est = p0 - nbar;
            neg_est.add(est);
            neg_se.add((est - target) * (est - target));
        }
    }

    result.mse_multipair = pair_se.mean;
    result.mean_multipair = pair_est.mean;
    result.stderr_mse_multipair = pair_se.stderr_of_mean();
    if (result.sampling_valid) {
        result.mse_multineg = neg_se.mean;
        result.mean_multineg = neg_est.mean;
        result.stderr_mse_multineg = neg_se.stderr_of_mean();
    }
    return result;
}

}  // namespace selfcontrast
