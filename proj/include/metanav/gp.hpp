#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "metanav/common.hpp"

namespace metanav {

struct DegenerateGram : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// RBF hyperparameters, one independent GP per output dimension.
/// Fixed per run; a 10-point window is too small for online optimisation.
struct GpHyper {
    std::array<Vec2, 2> length_scales{Vec2{1.0, 1.0}, Vec2{1.0, 1.0}};  // diag of L_j, m^2
    std::array<double, 2> signal_var{0.05, 0.05};                       // sigma_f,j^2
    std::array<double, 2> noise_var{1e-4, 1e-4};                        // sigma_w,j^2
};

/// Sliding window of (position, one-step displacement) pairs for one obstacle.
struct GpDataset {
    std::vector<Vec2> inputs;   // x_{t-l}
    std::vector<Vec2> outputs;  // v_{t-l} = x_{t-l+1} - x_{t-l}

    int size() const { return static_cast<int>(inputs.size()); }
    bool empty() const { return inputs.empty(); }
};

/// K-step forecast of one obstacle: per-step mean and diagonal covariance.
struct GpForecast {
    std::vector<Vec2> means;  // mu_{t+k}, k = 1..K
    std::vector<Vec2> vars;   // diag(Sigma_{t+k}), nondecreasing in k
};

/// k_j(x, x') = sigma_f,j^2 exp(-1/2 (x-x')^T L_j^-1 (x-x')).
inline double kernel(const Vec2& x, const Vec2& xp, const GpHyper& h, int j) {
    const Vec2 d = x - xp;
    const double q = d.x() * d.x() / h.length_scales[j].x() +
                     d.y() * d.y() / h.length_scales[j].y();
    return h.signal_var[j] * std::exp(-0.5 * q);
}

struct GpPrediction {
    Vec2 mean;
    Vec2 var;
};

/// Fitted GP for one obstacle: Gram factorisation cached so repeated
/// predictions during propagation cost O(N) each.
class GpModel {
public:
    GpModel(const GpDataset& ds, const GpHyper& h) : ds_(&ds), hyper_(h) {
        const int n = ds.size();
        if (n == 0) return;
        for (int j = 0; j < 2; ++j) {
            Eigen::MatrixXd gram(n, n);
            for (int a = 0; a < n; ++a)
                for (int b = 0; b <= a; ++b) {
                    const double v = kernel(ds.inputs[a], ds.inputs[b], h, j);
                    gram(a, b) = v;
                    gram(b, a) = v;
                }
            // Cholesky with additive jitter escalation before giving up.
            bool done = false;
            for (double jitter : {0.0, 1e-10, 1e-6}) {
                Eigen::MatrixXd m = gram;
                m.diagonal().array() += h.noise_var[j] + jitter;
                llt_[j].compute(m);
                if (llt_[j].info() == Eigen::Success) {
                    done = true;
                    break;
                }
            }
            if (!done) throw DegenerateGram("GP Gram matrix not positive definite");
            Eigen::VectorXd y(n);
            for (int a = 0; a < n; ++a) y(a) = ds.outputs[a](j);
            alpha_[j] = llt_[j].solve(y);
        }
    }

    /// Posterior mean and variance of the velocity field at a query point.
    /// An empty dataset gives the zero-mean prior back.
    GpPrediction predict(const Vec2& x) const {
        GpPrediction p;
        const int n = ds_->size();
        if (n == 0) {
            p.mean = {0.0, 0.0};
            p.var = {hyper_.signal_var[0], hyper_.signal_var[1]};
            return p;
        }
        Eigen::VectorXd ks(n);
        for (int j = 0; j < 2; ++j) {
            for (int a = 0; a < n; ++a) ks(a) = kernel(x, ds_->inputs[a], hyper_, j);
            p.mean(j) = ks.dot(alpha_[j]);
            const double var = kernel(x, x, hyper_, j) - ks.dot(llt_[j].solve(ks));
            p.var(j) = var < 0.0 ? 0.0 : var;  // round-off guard
        }
        return p;
    }

private:
    const GpDataset* ds_;
    GpHyper hyper_;
    std::array<Eigen::LLT<Eigen::MatrixXd>, 2> llt_;
    std::array<Eigen::VectorXd, 2> alpha_;
};

/// One-shot posterior at a query point (Appendix-A closed form).
inline GpPrediction posterior(const GpDataset& ds, const GpHyper& h, const Vec2& x_star) {
    return GpModel(ds, h).predict(x_star);
}

/// Propagate mean and diagonal covariance K steps ahead, evaluating the GP at
/// the current mean only:
///   mu_{t+k+1}    = mu_{t+k} + mu_v(mu_{t+k})
///   Sigma_{t+k+1} = Sigma_{t+k} + Sigma_v(mu_{t+k})
inline GpForecast propagate(const GpDataset& ds, const GpHyper& h, const Vec2& x_now, int k_steps) {
    GpModel model(ds, h);
    GpForecast f;
    f.means.reserve(k_steps);
    f.vars.reserve(k_steps);
    Vec2 mu = x_now;
    Vec2 var{0.0, 0.0};
    for (int k = 0; k < k_steps; ++k) {
        const GpPrediction p = model.predict(mu);
        mu += p.mean;
        var += p.var;
        f.means.push_back(mu);
        f.vars.push_back(var);
    }
    return f;
}

/// M independent draws per horizon step from N(mu_{t+k}, Sigma_{t+k}).
/// Layout: samples[k][m]. Deterministic under a fixed stream.
inline std::vector<std::vector<Vec2>> sample_forecast(const GpForecast& f, int m_samples,
                                                      RandomStream& rng) {
    std::vector<std::vector<Vec2>> out(f.means.size());
    for (std::size_t k = 0; k < f.means.size(); ++k) {
        const Vec2 sd{std::sqrt(f.vars[k].x()), std::sqrt(f.vars[k].y())};
        out[k].reserve(m_samples);
        for (int m = 0; m < m_samples; ++m) {
            const Vec2 n = rng.normal2();
            out[k].push_back(f.means[k] + Vec2{sd.x() * n.x(), sd.y() * n.y()});
        }
    }
    return out;
}

}  // namespace metanav
