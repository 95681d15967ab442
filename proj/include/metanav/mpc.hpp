#pragma once

#include <algorithm>
#include <chrono>
#include <deque>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "metanav/dynamics.hpp"
#include "metanav/gp.hpp"
#include "metanav/risk.hpp"
#include "metanav/sqp.hpp"
#include "metanav/world.hpp"

namespace metanav {

struct MpcConfig {
    int horizon = 20;               // K
    double q_pos = 1.0;             // Q = diag(q_pos, q_pos, 0)
    double r_ctrl = 0.2;            // R = r_ctrl * I2
    double terminal_weight = 20.0;  // Q_f = terminal_weight * Q
    double alpha = 0.95;
    double delta_cvar = 0.01;
    int m_saa = 100;
    int n_adapt = 2;
    int n_gp = 10;
    double softplus_rho = 50.0;
    GpHyper gp;
    DynParams dyn;
    opt::SolverConfig solver;
};

enum class MpcStatus { Optimal, MaxIter, Infeasible };

struct MpcSolution {
    std::vector<Action> u_seq;      // K inputs, inside U
    std::vector<RobotState> x_seq;  // K+1 states, x_seq[0] = measured state
    std::vector<double> xi_seq;     // K CVaR levels
    MpcStatus status = MpcStatus::MaxIter;
    double objective = 0.0;
    double max_cvar_residual = -kInf;  // unsmoothed, over all (k, obstacle) rows
    int iterations = 0;
    double kkt_residual = kInf;
    double max_violation = kInf;
};

/// Indices of the n_adapt dynamic obstacles currently closest to the robot
/// (squared distance, ties broken by lower index).
inline std::vector<int> select_obstacles(const EnvState& s, int n_adapt) {
    const int n = static_cast<int>(s.dyn_positions.size());
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return safety_value(s.robot, s.dyn_positions[a]) <
               safety_value(s.robot, s.dyn_positions[b]);
    });
    if (n_adapt < n) idx.resize(std::max(n_adapt, 0));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Sampled forecast of one obstacle over the horizon plus its safety threshold.
struct ObstacleForecast {
    std::vector<std::vector<Vec2>> samples;  // [k][m], k = 1..K
    double threshold = 0.0;                  // eps_d of this obstacle
};

/// Single-shooting NLP of the GP-MPC problem.
///
/// Decision vector z = (v_0, delta_0, ..., v_{K-1}, delta_{K-1}, xi_1..xi_K).
/// Objective: terminal cost + sum of tracking stage costs.
/// Rows: static safety eps_s - |p_k - c_j|^2 <= 0 for k = 1..K, then one
/// smoothed SAA CVaR row per horizon step and selected obstacle, sharing the
/// per-step level xi_k. Unused xi are pinned to zero through their bounds.
class GpMpcProblem : public opt::NlpProblem {
public:
    GpMpcProblem(const RobotState& x0, const Vec2& goal, std::vector<StaticObstacle> statics,
                 std::vector<ObstacleForecast> forecasts, const MpcConfig& cfg)
        : x0_(x0),
          goal_(goal),
          statics_(std::move(statics)),
          forecasts_(std::move(forecasts)),
          cfg_(cfg),
          k_(cfg.horizon) {
        n_static_ = static_cast<int>(statics_.size());
        n_sel_ = static_cast<int>(forecasts_.size());
        saa_weight_ = n_sel_ > 0
                          ? 1.0 / (static_cast<double>(cfg_.m_saa) * (1.0 - cfg_.alpha))
                          : 0.0;
    }

    int num_vars() const override { return 3 * k_; }
    int num_ineq() const override { return k_ * (n_static_ + n_sel_); }
    int num_bound_rows() const { return 4 * k_ + (n_sel_ == 0 ? 2 * k_ : 0); }

    opt::VectorXd lower_bounds() const override {
        opt::VectorXd lb(num_vars());
        for (int k = 0; k < k_; ++k) {
            lb(2 * k) = kVMin;
            lb(2 * k + 1) = -kDeltaMax;
        }
        lb.tail(k_).setConstant(n_sel_ > 0 ? -kInf : 0.0);
        return lb;
    }
    opt::VectorXd upper_bounds() const override {
        opt::VectorXd ub(num_vars());
        for (int k = 0; k < k_; ++k) {
            ub(2 * k) = kVMax;
            ub(2 * k + 1) = kDeltaMax;
        }
        ub.tail(k_).setConstant(n_sel_ > 0 ? kInf : 0.0);
        return ub;
    }

    /// Rollout of the state sequence implied by the input part of z.
    std::vector<RobotState> rollout(const opt::VectorXd& z) const {
        std::vector<RobotState> xs(k_ + 1);
        xs[0] = x0_;
        for (int k = 0; k < k_; ++k)
            xs[k + 1] = step(xs[k], {z(2 * k), z(2 * k + 1)}, cfg_.dyn);
        return xs;
    }

    double objective_of(const std::vector<RobotState>& xs, const opt::VectorXd& z) const {
        double f = 0.0;
        for (int k = 0; k < k_; ++k) {
            f += cfg_.q_pos * (xs[k].position() - goal_).squaredNorm();
            f += cfg_.r_ctrl * (square(z(2 * k)) + square(z(2 * k + 1)));
        }
        f += cfg_.terminal_weight * cfg_.q_pos * (xs[k_].position() - goal_).squaredNorm();
        return f;
    }

    void eval(const opt::VectorXd& z, double& f, opt::VectorXd& c) const override {
        const std::vector<RobotState> xs = rollout(z);
        f = objective_of(xs, z);
        c.resize(num_ineq());
        fill_constraints(xs, z, c, nullptr, nullptr);
    }

    void eval_full(const opt::VectorXd& z, const opt::VectorXd& lambda,
                   opt::NlpEval& out) const override {
        const int n = num_vars();
        const int nu = 2 * k_;
        const std::vector<RobotState> xs = rollout(z);

        // Position sensitivities S_k = d(x_k, y_k)/du, propagated with the
        // analytic step Jacobians.
        std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> sens(k_ + 1);
        sens[0].setZero(3, nu);
        for (int k = 0; k < k_; ++k) {
            const StepJacobians j = step_jacobians(xs[k], {z(2 * k), z(2 * k + 1)}, cfg_.dyn);
            sens[k + 1] = j.a * sens[k];
            sens[k + 1].block<3, 2>(0, 2 * k) += j.b;
        }

        out.f = objective_of(xs, z);
        out.grad = opt::VectorXd::Zero(n);
        out.hess = opt::MatrixXd::Zero(n, n);
        for (int k = 0; k <= k_; ++k) {
            const double w = (k == k_) ? cfg_.terminal_weight * cfg_.q_pos
                                       : (k == 0 ? 0.0 : cfg_.q_pos);
            // k = 0 carries no decision dependence (S_0 = 0); skip its work.
            if (w == 0.0) continue;
            const auto sp = sens[k].topRows(2);
            const Vec2 e = xs[k].position() - goal_;
            out.grad.head(nu).noalias() += 2.0 * w * (sp.transpose() * e);
            out.hess.topLeftCorner(nu, nu).noalias() += 2.0 * w * (sp.transpose() * sp);
        }
        for (int k = 0; k < k_; ++k) {
            out.grad(2 * k) += 2.0 * cfg_.r_ctrl * z(2 * k);
            out.grad(2 * k + 1) += 2.0 * cfg_.r_ctrl * z(2 * k + 1);
            out.hess(2 * k, 2 * k) += 2.0 * cfg_.r_ctrl;
            out.hess(2 * k + 1, 2 * k + 1) += 2.0 * cfg_.r_ctrl;
        }

        out.c.resize(num_ineq());
        out.jac.setZero(num_ineq(), n);
        fill_constraints(xs, z, out.c, &out.jac, &sens);

        // PSD curvature of the CVaR rows, lifted through the sensitivities.
        if (n_sel_ > 0 && lambda.size() == num_ineq()) {
            const double rho = cfg_.softplus_rho;
            for (int k = 1; k <= k_; ++k) {
                for (int i = 0; i < n_sel_; ++i) {
                    const double lam = lambda(cvar_row(k, i));
                    if (lam <= 1e-12) continue;
                    const auto& pts = forecasts_[i].samples[k - 1];
                    const double xi = z(nu + k - 1);
                    Eigen::Matrix2d mpp = Eigen::Matrix2d::Zero();
                    Vec2 mpx = Vec2::Zero();
                    double mxx = 0.0;
                    for (const Vec2& q : pts) {
                        const Vec2 d = xs[k].position() - q;
                        const double loss = forecasts_[i].threshold - d.squaredNorm();
                        const double sg = logistic(rho * (loss - xi));
                        const double cw = saa_weight_ * rho * sg * (1.0 - sg);
                        const Vec2 v = -2.0 * d;
                        mpp.noalias() += cw * (v * v.transpose());
                        mpx += cw * v * -1.0;
                        mxx += cw;
                    }
                    const auto sp = sens[k].topRows(2);
                    out.hess.topLeftCorner(nu, nu).noalias() +=
                        lam * (sp.transpose() * mpp * sp);
                    const opt::VectorXd cross = sp.transpose() * mpx;
                    out.hess.block(0, nu + k - 1, nu, 1).noalias() += lam * cross;
                    out.hess.block(nu + k - 1, 0, 1, nu).noalias() += lam * cross.transpose();
                    out.hess(nu + k - 1, nu + k - 1) += lam * mxx;
                }
            }
        }
    }

    int static_row(int k, int j) const { return (k - 1) * n_static_ + j; }
    int cvar_row(int k, int i) const { return k_ * n_static_ + (k - 1) * n_sel_ + i; }

    const std::vector<ObstacleForecast>& forecasts() const { return forecasts_; }
    const MpcConfig& config() const { return cfg_; }
    const Vec2& goal() const { return goal_; }
    int horizon() const { return k_; }
    int num_selected() const { return n_sel_; }

private:
    void fill_constraints(const std::vector<RobotState>& xs, const opt::VectorXd& z,
                          opt::VectorXd& c, opt::MatrixXd* jac,
                          const std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>>* sens) const {
        const int nu = 2 * k_;
        for (int k = 1; k <= k_; ++k) {
            for (int j = 0; j < n_static_; ++j) {
                const Vec2 d = xs[k].position() - statics_[j].center;
                c(static_row(k, j)) = static_threshold(statics_[j].radius) - d.squaredNorm();
                if (jac) {
                    const auto sp = (*sens)[k].topRows(2);
                    jac->row(static_row(k, j)).head(nu) = (-2.0 * d).transpose() * sp;
                }
            }
        }
        if (n_sel_ == 0) return;
        const double rho = cfg_.softplus_rho;
        for (int k = 1; k <= k_; ++k) {
            const double xi = z(nu + k - 1);
            for (int i = 0; i < n_sel_; ++i) {
                const auto& pts = forecasts_[i].samples[k - 1];
                double acc = 0.0, acc_sig = 0.0;
                Vec2 dp = Vec2::Zero();
                for (const Vec2& q : pts) {
                    const Vec2 d = xs[k].position() - q;
                    const double loss = forecasts_[i].threshold - d.squaredNorm();
                    acc += softplus(loss - xi, rho);
                    if (jac) {
                        const double sg = logistic(rho * (loss - xi));
                        acc_sig += sg;
                        dp += sg * (-2.0 * d);
                    }
                }
                c(cvar_row(k, i)) = xi + saa_weight_ * acc - cfg_.delta_cvar;
                if (jac) {
                    const auto sp = (*sens)[k].topRows(2);
                    jac->row(cvar_row(k, i)).head(nu) = (saa_weight_ * dp).transpose() * sp;
                    (*jac)(cvar_row(k, i), nu + k - 1) = 1.0 - saa_weight_ * acc_sig;
                }
            }
        }
    }

    RobotState x0_;
    Vec2 goal_;
    std::vector<StaticObstacle> statics_;
    std::vector<ObstacleForecast> forecasts_;
    MpcConfig cfg_;
    int k_;
    int n_static_ = 0;
    int n_sel_ = 0;
    double saa_weight_ = 0.0;
};

/// Solve the GP-MPC problem, optionally warm-starting from the previous
/// solution shifted by one stage. Returns the projected input sequence, the
/// implied state trajectory and post-hoc unsmoothed CVaR residuals.
inline MpcSolution solve(const GpMpcProblem& p, const std::optional<MpcSolution>& warm_start,
                         const opt::SolverConfig& solver_cfg) {
    const int k = p.horizon();
    opt::VectorXd z0 = opt::VectorXd::Zero(3 * k);
    if (warm_start && static_cast<int>(warm_start->u_seq.size()) == k) {
        for (int i = 0; i < k; ++i) {
            const Action& u = warm_start->u_seq[std::min(i + 1, k - 1)];
            z0(2 * i) = u.v;
            z0(2 * i + 1) = u.delta;
            z0(2 * k + i) = warm_start->xi_seq[std::min(i + 1, k - 1)];
        }
    } else if (p.num_selected() > 0) {
        // Cold start: zero input; xi at the alpha-quantile of the losses seen
        // from the initial position (a feasible-ish Rockafellar-Uryasev level).
        const std::vector<RobotState> xs = p.rollout(z0);
        const double alpha = p.config().alpha;
        for (int kk = 1; kk <= k; ++kk) {
            double xi = -kInf;
            for (int i = 0; i < p.num_selected(); ++i) {
                const auto& pts = p.forecasts()[i].samples[kk - 1];
                std::vector<double> losses;
                losses.reserve(pts.size());
                for (const Vec2& q : pts)
                    losses.push_back(p.forecasts()[i].threshold -
                                     (xs[kk].position() - q).squaredNorm());
                auto nth = losses.begin() + static_cast<long>(alpha * (losses.size() - 1));
                std::nth_element(losses.begin(), nth, losses.end());
                xi = std::max(xi, *nth);
            }
            z0(2 * k + kk - 1) = xi;
        }
    }

    const opt::SqpResult r = opt::solve_sqp(p, z0, solver_cfg);

    MpcSolution sol;
    sol.iterations = r.iterations;
    sol.kkt_residual = r.kkt_residual;
    sol.max_violation = r.max_violation;
    sol.objective = r.objective;
    switch (r.status) {
        case opt::SolveStatus::Optimal: sol.status = MpcStatus::Optimal; break;
        case opt::SolveStatus::MaxIter: sol.status = MpcStatus::MaxIter; break;
        case opt::SolveStatus::Infeasible: sol.status = MpcStatus::Infeasible; break;
    }
    sol.u_seq.resize(k);
    sol.xi_seq.resize(k);
    for (int i = 0; i < k; ++i) {
        sol.u_seq[i] = clamp_action({r.z(2 * i), r.z(2 * i + 1)});
        sol.xi_seq[i] = r.z(2 * k + i);
    }
    opt::VectorXd z_proj(3 * k);
    for (int i = 0; i < k; ++i) {
        z_proj(2 * i) = sol.u_seq[i].v;
        z_proj(2 * i + 1) = sol.u_seq[i].delta;
        z_proj(2 * k + i) = sol.xi_seq[i];
    }
    sol.x_seq = p.rollout(z_proj);
    sol.objective = p.objective_of(sol.x_seq, z_proj);

    sol.max_cvar_residual = -kInf;
    for (int kk = 1; kk <= k; ++kk) {
        for (int i = 0; i < p.num_selected(); ++i) {
            LossSamples ls;
            ls.alpha = p.config().alpha;
            for (const Vec2& q : p.forecasts()[i].samples[kk - 1])
                ls.values.push_back(p.forecasts()[i].threshold -
                                    (sol.x_seq[kk].position() - q).squaredNorm());
            sol.max_cvar_residual =
                std::max(sol.max_cvar_residual,
                         cvar_saa_residual(ls, sol.xi_seq[kk - 1], p.config().delta_cvar));
        }
    }
    return sol;
}

/// Sliding window of recent positions of one obstacle, turned into the GP
/// training pairs (x_{t-l}, x_{t-l+1} - x_{t-l}).
class ObstacleHistory {
public:
    explicit ObstacleHistory(int n_gp = 10) : window_(n_gp + 1) {}

    void observe(const Vec2& p) {
        positions_.push_back(p);
        if (static_cast<int>(positions_.size()) > window_) positions_.pop_front();
    }

    GpDataset dataset() const {
        GpDataset ds;
        for (std::size_t i = 0; i + 1 < positions_.size(); ++i) {
            ds.inputs.push_back(positions_[i]);
            ds.outputs.push_back(positions_[i + 1] - positions_[i]);
        }
        return ds;
    }

    void clear() { positions_.clear(); }
    int size() const { return static_cast<int>(positions_.size()); }

private:
    int window_;
    std::deque<Vec2> positions_;
};

struct MpcDiagnostics {
    MpcStatus status = MpcStatus::MaxIter;
    int iterations = 0;
    double wall_time_ms = 0.0;
    double gp_time_ms = 0.0;
    double solve_time_ms = 0.0;
    double cvar_residual_max = -kInf;
    double kkt_residual = kInf;
    bool fallback = false;  // braking action after a numerical failure
};

/// One receding-horizon action: adaptive obstacle selection, GP forecast
/// sampling, NLP construction and solve. Returns the first input.
inline std::pair<Action, MpcDiagnostics> mpc_action(
    const EnvState& s, const Task& task, const std::vector<ObstacleHistory>& history,
    const MpcConfig& cfg, RandomStream& rng,
    std::optional<MpcSolution>* warm_start = nullptr) {
    using clock = std::chrono::steady_clock;
    MpcDiagnostics diag;
    const auto t0 = clock::now();

    const std::vector<int> sel = select_obstacles(s, cfg.n_adapt);
    std::vector<ObstacleForecast> forecasts;
    forecasts.reserve(sel.size());
    for (int i : sel) {
        GpDataset ds = history[static_cast<std::size_t>(i)].dataset();
        while (ds.size() > cfg.n_gp) {  // keep the most recent pairs
            ds.inputs.erase(ds.inputs.begin());
            ds.outputs.erase(ds.outputs.begin());
        }
        ObstacleForecast f;
        f.threshold = dyn_threshold(task.dynamics[static_cast<std::size_t>(i)].radius);
        const GpForecast gp = propagate(ds, cfg.gp, s.dyn_positions[static_cast<std::size_t>(i)],
                                        cfg.horizon);
        f.samples = sample_forecast(gp, cfg.m_saa, rng);
        forecasts.push_back(std::move(f));
    }
    const auto t1 = clock::now();
    diag.gp_time_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

    const GpMpcProblem problem(s.robot, task.goal, task.statics, std::move(forecasts), cfg);
    Action u{0.0, 0.0};
    try {
        const std::optional<MpcSolution> warm =
            warm_start ? *warm_start : std::optional<MpcSolution>{};
        MpcSolution sol = solve(problem, warm, cfg.solver);
        u = sol.u_seq.front();
        diag.status = sol.status;
        diag.iterations = sol.iterations;
        diag.cvar_residual_max = sol.max_cvar_residual;
        diag.kkt_residual = sol.kkt_residual;
        if (warm_start) *warm_start = std::move(sol);
    } catch (const opt::NumericalFailure&) {
        diag.fallback = true;  // brake
        if (warm_start) warm_start->reset();
    }
    const auto t2 = clock::now();
    diag.solve_time_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    diag.wall_time_ms = std::chrono::duration<double, std::milli>(t2 - t0).count();
    return {u, diag};
}

/// Receding-horizon controller owning the warm start across stages.
class MpcController {
public:
    explicit MpcController(MpcConfig cfg = {}) : cfg_(std::move(cfg)) {}

    std::pair<Action, MpcDiagnostics> act(const EnvState& s, const Task& task,
                                          const std::vector<ObstacleHistory>& history,
                                          RandomStream& rng) {
        return mpc_action(s, task, history, cfg_, rng, &warm_);
    }

    void reset() { warm_.reset(); }
    const MpcConfig& config() const { return cfg_; }
    MpcConfig& config() { return cfg_; }

private:
    MpcConfig cfg_;
    std::optional<MpcSolution> warm_;
};

}  // namespace metanav
