#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "metanav/qp.hpp"

namespace metanav::opt {

struct NumericalFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Evaluation record of a smooth inequality-constrained NLP at one point.
struct NlpEval {
    double f = 0.0;
    VectorXd grad;  // n
    VectorXd c;     // m, feasible means c <= 0
    MatrixXd jac;   // m x n
    MatrixXd hess;  // n x n positive-semidefinite model Hessian
};

/// min f(z)  s.t.  c(z) <= 0,  lb <= z <= ub.
///
/// The Hessian callback returns a PSD model (Gauss-Newton of the objective
/// plus multiplier-weighted PSD curvature of the constraints); exactness is
/// not required, only positive semidefiniteness.
class NlpProblem {
public:
    virtual ~NlpProblem() = default;
    virtual int num_vars() const = 0;
    virtual int num_ineq() const = 0;
    virtual VectorXd lower_bounds() const = 0;
    virtual VectorXd upper_bounds() const = 0;

    /// Objective and constraint values only (line-search evaluations).
    virtual void eval(const VectorXd& z, double& f, VectorXd& c) const = 0;

    /// Full evaluation with derivatives. `lambda` holds the current multiplier
    /// estimate for the constraint-curvature part of the model Hessian.
    virtual void eval_full(const VectorXd& z, const VectorXd& lambda, NlpEval& out) const = 0;
};

struct SolverConfig {
    int max_iterations = 120;
    double kkt_tol = 1e-5;
    double constraint_tol = 1e-5;
    double levenberg = 1e-8;
    double merit_penalty_init = 10.0;
    double elastic_penalty = 1e3;    // slack weight when the QP turns infeasible
    double elastic_penalty_max = 1e5;
    int max_line_search = 30;
    double armijo = 1e-4;
    double trust_init = 0.5;         // fraction of the per-variable scale
    double trust_min = 1e-6;
    double trust_max = 4.0;
    bool verbose = false;
    QpSettings qp;
};

enum class SolveStatus { Optimal, MaxIter, Infeasible };

struct SqpResult {
    VectorXd z;
    VectorXd lambda;
    SolveStatus status = SolveStatus::MaxIter;
    int iterations = 0;
    double objective = 0.0;
    double kkt_residual = kInf;
    double max_violation = kInf;
    bool used_elastic = false;
};

namespace detail {

inline double max_violation(const VectorXd& c) {
    return c.size() == 0 ? 0.0 : std::max(0.0, c.maxCoeff());
}

inline double sum_violation(const VectorXd& c) {
    double s = 0.0;
    for (int i = 0; i < c.size(); ++i) s += std::max(0.0, c(i));
    return s;
}

/// Projected-gradient stationarity plus complementarity, infinity norm.
inline double kkt_residual(const NlpEval& e, const VectorXd& lambda, const VectorXd& z,
                           const VectorXd& lb, const VectorXd& ub) {
    VectorXd gl = e.grad;
    if (e.c.size() > 0) gl.noalias() += e.jac.transpose() * lambda;
    double r = 0.0;
    for (int i = 0; i < z.size(); ++i) {
        const double proj = clamp(z(i) - gl(i), lb(i), ub(i));
        r = std::max(r, std::abs(proj - z(i)));
    }
    for (int i = 0; i < e.c.size(); ++i) r = std::max(r, std::abs(lambda(i) * e.c(i)));
    return r;
}

}  // namespace detail

/// Sequential quadratic programming with a Gauss-Newton model Hessian, an l1
/// merit line search, per-variable trust scaling of the QP step, and an
/// elastic (slack-penalised) fallback when the linearised constraints turn
/// inconsistent. Throws NumericalFailure on non-finite evaluations.
inline SqpResult solve_sqp(const NlpProblem& p, VectorXd z0, const SolverConfig& cfg = {}) {
    const int n = p.num_vars();
    const int m = p.num_ineq();
    const VectorXd lb = p.lower_bounds();
    const VectorXd ub = p.upper_bounds();

    VectorXd z = z0;
    for (int i = 0; i < n; ++i) z(i) = clamp(z(i), lb(i), ub(i));
    VectorXd lambda = VectorXd::Zero(m);

    // Per-variable step scale: box width where available.
    VectorXd scale(n);
    for (int i = 0; i < n; ++i) {
        const double w = ub(i) - lb(i);
        scale(i) = std::isfinite(w) && w > 1e-12 ? w : 2.0 * (1.0 + std::abs(z(i)));
    }

    SqpResult res;
    res.z = z;
    res.lambda = lambda;

    double nu = cfg.merit_penalty_init;
    double elastic_nu = cfg.elastic_penalty;
    double trust = cfg.trust_init;
    bool elastic = false;

    double best_f = kInf, best_viol = kInf;
    auto consider_best = [&](const VectorXd& cand, double f, double viol, const VectorXd& lam) {
        const bool cand_feas = viol <= cfg.constraint_tol;
        const bool best_feas = best_viol <= cfg.constraint_tol;
        bool better = false;
        if (cand_feas && !best_feas) better = true;
        else if (cand_feas == best_feas) better = cand_feas ? (f < best_f) : (viol < best_viol);
        if (better) {
            best_f = f;
            best_viol = viol;
            res.z = cand;
            res.lambda = lam;
            res.objective = f;
        }
    };

    NlpEval e;
    double prev_viol = kInf;
    int no_progress = 0;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        res.iterations = it + 1;
        p.eval_full(z, lambda, e);
        if (!std::isfinite(e.f) || !e.grad.allFinite() || !e.hess.allFinite() ||
            (m > 0 && (!e.c.allFinite() || !e.jac.allFinite())))
            throw NumericalFailure("non-finite NLP linearization");

        const double viol = detail::max_violation(e.c);
        const double kkt = detail::kkt_residual(e, lambda, z, lb, ub);
        consider_best(z, e.f, viol, lambda);
        if (cfg.verbose)
            std::fprintf(stderr, "sqp it %3d  f %.8e  viol %.2e  kkt %.2e  trust %.2e%s\n", it,
                         e.f, viol, kkt, trust, elastic ? "  elastic" : "");
        if (kkt < cfg.kkt_tol && viol < cfg.constraint_tol) {
            res.status = SolveStatus::Optimal;
            res.z = z;
            res.lambda = lambda;
            res.objective = e.f;
            res.kkt_residual = kkt;
            res.max_violation = viol;
            res.used_elastic = elastic;
            return res;
        }

        MatrixXd h = e.hess;
        h.diagonal().array() += cfg.levenberg;

        // Trust-scaled step box intersected with the variable bounds.
        VectorXd dlb(n), dub(n);
        for (int i = 0; i < n; ++i) {
            dlb(i) = std::max(lb(i) - z(i), -trust * scale(i));
            dub(i) = std::min(ub(i) - z(i), trust * scale(i));
        }

        VectorXd d, lam_new;
        bool qp_ok = false;
        if (!elastic) {
            QpResult qp = solve_qp(h, e.grad, e.jac, (-e.c).eval(), dlb, dub, cfg.qp);
            if (qp.status != QpStatus::Infeasible && qp.x.allFinite()) {
                d = qp.x;
                lam_new = qp.lambda;
                qp_ok = true;
            } else {
                elastic = true;
            }
        }
        if (!qp_ok) {
            // Elastic subproblem: per-row slacks t >= 0, penalised in the objective.
            MatrixXd he = MatrixXd::Zero(n + m, n + m);
            he.topLeftCorner(n, n) = h;
            he.diagonal().tail(m).array() = 1e-8 * std::max(1.0, elastic_nu);
            VectorXd ge(n + m);
            ge.head(n) = e.grad;
            ge.tail(m).array() = elastic_nu;
            MatrixXd ae(m, n + m);
            ae.leftCols(n) = e.jac;
            ae.rightCols(m) = -MatrixXd::Identity(m, m);
            VectorXd lbe(n + m), ube(n + m);
            lbe.head(n) = dlb;
            ube.head(n) = dub;
            lbe.tail(m).setZero();
            ube.tail(m).setConstant(kInf);
            QpResult qp = solve_qp(he, ge, ae, (-e.c).eval(), lbe, ube, cfg.qp);
            if (qp.status == QpStatus::Infeasible || !qp.x.allFinite())
                throw NumericalFailure("elastic QP subproblem failed");
            d = qp.x.head(n);
            lam_new = qp.lambda;
        }

        const double dnorm = d.lpNorm<Eigen::Infinity>();
        if (dnorm < 1e-13) {
            lambda = lam_new;
            if (++no_progress >= 3) break;
            continue;
        }

        if (m > 0) nu = std::max(nu, 1.1 * lam_new.lpNorm<Eigen::Infinity>() + 1e-3);
        const double sum_v = detail::sum_violation(e.c);
        const double phi0 = e.f + nu * sum_v;
        // Predicted merit reduction of the QP model at the full step.
        double lin_viol = 0.0;
        if (m > 0) {
            const VectorXd c_lin = e.c + e.jac * d;
            lin_viol = detail::sum_violation(c_lin);
        }
        const double pred = -(e.grad.dot(d) + 0.5 * d.dot(h * d)) + nu * (sum_v - lin_viol);
        const double descent = e.grad.dot(d) - nu * sum_v;

        double step = 1.0;
        bool accepted = false;
        double actual = 0.0;
        double f_trial;
        VectorXd c_trial(m);
        for (int ls = 0; ls < cfg.max_line_search; ++ls) {
            const VectorXd z_trial = z + step * d;
            p.eval(z_trial, f_trial, c_trial);
            if (std::isfinite(f_trial) && (m == 0 || c_trial.allFinite())) {
                const double phi = f_trial + nu * detail::sum_violation(c_trial);
                if (phi <= phi0 + cfg.armijo * step * std::min(descent, 0.0) &&
                    phi < phi0 + 1e-14 * (1.0 + std::abs(phi0))) {
                    z = z_trial;
                    accepted = true;
                    actual = phi0 - phi;
                    break;
                }
            }
            step *= 0.5;
        }
        lambda = lam_new;
        if (cfg.verbose && !accepted)
            std::fprintf(stderr, "    reject |d| %.2e descent %.2e pred %.2e last_dphi %.3e\n",
                         dnorm, descent, pred,
                         f_trial + nu * detail::sum_violation(c_trial) - phi0);

        // Radius update from the quality of the full-step model prediction.
        if (accepted) {
            no_progress = 0;
            const double ratio = pred > 1e-16 ? actual / (step * pred) : 1.0;
            if (step >= 1.0 && ratio > 0.75)
                trust = std::min(cfg.trust_max, 2.0 * trust);
            else if (step < 0.25 || ratio < 0.1)
                trust = std::max(cfg.trust_min, 0.25 * trust);
        } else {
            trust = std::max(cfg.trust_min, 0.25 * trust);
            if (++no_progress >= 6) break;
            if (elastic && elastic_nu < cfg.elastic_penalty_max) elastic_nu *= 10.0;
        }

        // Escalate the elastic penalty when violation stagnates.
        if (elastic && viol > cfg.constraint_tol && viol > 0.9 * prev_viol &&
            elastic_nu < cfg.elastic_penalty_max)
            elastic_nu *= 10.0;
        prev_viol = viol;
    }

    // Classify the terminal iterate.
    {
        double f;
        VectorXd c(m);
        p.eval(z, f, c);
        consider_best(z, f, detail::max_violation(c), lambda);
    }
    res.max_violation = best_viol;
    res.used_elastic = elastic;
    if (best_viol <= cfg.constraint_tol) {
        res.status = SolveStatus::MaxIter;
    } else {
        // Elastic relaxation also failed to restore feasibility.
        res.status = SolveStatus::Infeasible;
    }
    {
        NlpEval ef;
        p.eval_full(res.z, res.lambda, ef);
        res.kkt_residual = detail::kkt_residual(ef, res.lambda, res.z, lb, ub);
        res.objective = ef.f;
    }
    return res;
}

}  // namespace metanav::opt
