#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <span>
#include <vector>

#include "metanav/common.hpp"
#include "metanav/dynamics.hpp"

namespace metanav {

/// Empirical loss distribution entering a CVaR computation.
struct LossSamples {
    std::vector<double> values;
    double alpha = 0.95;  // confidence, in (0, 1)
};

/// Safety loss L(x, xhat) = max_i { eps_i - |p_r - xhat_i|^2 }.
/// Nonpositive iff the robot lies in the predicted safe region.
inline double safety_loss(const RobotState& x, std::span<const Vec2> obs_samples,
                          std::span<const double> thresholds) {
    assert(!obs_samples.empty() && obs_samples.size() == thresholds.size());
    double worst = -kInf;
    for (std::size_t i = 0; i < obs_samples.size(); ++i) {
        const double l = thresholds[i] - (x.position() - obs_samples[i]).squaredNorm();
        worst = std::max(worst, l);
    }
    return worst;
}

/// Exact CVaR of the empirical distribution: the Rockafellar-Uryasev minimum,
/// which for equal weights is the mean of the worst (1-alpha) tail with
/// fractional weight on the VaR boundary sample.
inline double cvar_exact(const LossSamples& ls) {
    assert(!ls.values.empty() && ls.alpha > 0.0 && ls.alpha < 1.0);
    std::vector<double> v = ls.values;
    std::sort(v.begin(), v.end(), std::greater<>());
    const double m = static_cast<double>(v.size());
    const double tail = (1.0 - ls.alpha) * m;  // tail mass in sample units
    const int full = static_cast<int>(std::floor(tail));
    double acc = 0.0;
    for (int i = 0; i < full; ++i) acc += v[static_cast<std::size_t>(i)];
    const double frac = tail - full;
    if (frac > 0.0 && full < static_cast<int>(v.size()))
        acc += frac * v[static_cast<std::size_t>(full)];
    return acc / tail;
}

/// LHS - delta of the SAA CVaR constraint at a GIVEN xi:
///   xi + sum_m (L_m - xi)^+ / (M (1-alpha)) - delta.
/// Nonpositive means feasible.
inline double cvar_saa_residual(const LossSamples& ls, double xi, double delta) {
    assert(!ls.values.empty());
    double acc = 0.0;
    for (double v : ls.values) acc += std::max(0.0, v - xi);
    return xi + acc / (static_cast<double>(ls.values.size()) * (1.0 - ls.alpha)) - delta;
}

/// softplus_rho(z) = log(1 + exp(rho z)) / rho, an upper bound on max(0, z).
/// Smooths the hinge inside the MPC so the NLP solver has usable derivatives.
inline double softplus(double z, double rho) {
    const double t = rho * z;
    if (t > 0.0) return z + std::log1p(std::exp(-t)) / rho;
    return std::log1p(std::exp(t)) / rho;
}

/// Logistic sigmoid, the derivative of softplus_rho w.r.t. z at rho*z.
inline double logistic(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

/// Smoothed variant of `cvar_saa_residual` used inside the solver.
inline double cvar_saa_residual_smoothed(const LossSamples& ls, double xi, double delta,
                                         double rho) {
    assert(!ls.values.empty());
    double acc = 0.0;
    for (double v : ls.values) acc += softplus(v - xi, rho);
    return xi + acc / (static_cast<double>(ls.values.size()) * (1.0 - ls.alpha)) - delta;
}

}  // namespace metanav
