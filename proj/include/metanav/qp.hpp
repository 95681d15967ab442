#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "metanav/common.hpp"

namespace metanav::opt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class QpStatus { Optimal, MaxIter, Infeasible };

struct QpResult {
    QpStatus status = QpStatus::MaxIter;
    VectorXd x;
    VectorXd lambda;  // duals of the general rows A x <= b
    VectorXd mu_lo;   // duals of x >= lb
    VectorXd mu_hi;   // duals of x <= ub
    int iterations = 0;
};

struct QpSettings {
    int max_iterations = 60;
    double tolerance = 1e-10;  // residual and complementarity target
};

namespace detail {

/// Mehrotra predictor-corrector interior point method for
///   min 1/2 x'Hx + g'x   s.t.  A x <= b,  lb <= x <= ub
/// on the reduced problem (no fixed variables, H positive definite).
inline QpResult solve_qp_reduced(const MatrixXd& h, const VectorXd& g, const MatrixXd& a,
                                 const VectorXd& b, const VectorXd& lb, const VectorXd& ub,
                                 const QpSettings& cfg) {
    const int n = static_cast<int>(g.size());
    const int m = static_cast<int>(b.size());

    QpResult res;
    res.lambda = VectorXd::Zero(m);
    res.mu_lo = VectorXd::Zero(n);
    res.mu_hi = VectorXd::Zero(n);

    std::vector<int> lo_idx, hi_idx;
    for (int i = 0; i < n; ++i) {
        if (std::isfinite(lb(i))) lo_idx.push_back(i);
        if (std::isfinite(ub(i))) hi_idx.push_back(i);
    }
    const int nl = static_cast<int>(lo_idx.size());
    const int nh = static_cast<int>(hi_idx.size());

    if (m == 0 && nl == 0 && nh == 0) {
        res.x = h.llt().solve(-g);
        res.status = QpStatus::Optimal;
        return res;
    }

    // Strictly interior start.
    VectorXd x = VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        const double l = lb(i), u = ub(i);
        if (std::isfinite(l) && std::isfinite(u)) x(i) = 0.5 * (l + u);
        else if (std::isfinite(l)) x(i) = l + 1.0;
        else if (std::isfinite(u)) x(i) = u - 1.0;
    }
    VectorXd s = VectorXd::Ones(m), lam = VectorXd::Ones(m);
    if (m > 0) {
        const VectorXd gap = b - a * x;
        for (int i = 0; i < m; ++i) s(i) = std::max(1.0, gap(i));
    }
    // Bound gaps are eliminated exactly (tl = x - lb, tu = ub - x throughout),
    // so they must start consistent; the midpoint start keeps them positive.
    VectorXd tl(nl), ml = VectorXd::Ones(nl);
    VectorXd tu(nh), mh = VectorXd::Ones(nh);
    for (int i = 0; i < nl; ++i) tl(i) = x(lo_idx[i]) - lb(lo_idx[i]);
    for (int i = 0; i < nh; ++i) tu(i) = ub(hi_idx[i]) - x(hi_idx[i]);

    const double total = static_cast<double>(m + nl + nh);
    const double scale = std::max({1.0, g.lpNorm<Eigen::Infinity>(),
                                   m > 0 ? b.lpNorm<Eigen::Infinity>() : 0.0});

    MatrixXd kkt(n, n);
    VectorXd rd(n), rp(m), rhs(n), dx(n), ds(m), dlam(m), dml(nl), dmh(nh);
    VectorXd dx_a(n), ds_a(m), dlam_a(m), dml_a(nl), dmh_a(nh);

    for (int it = 0; it < cfg.max_iterations; ++it) {
        res.iterations = it + 1;

        // Residuals.
        rd = h * x + g;
        if (m > 0) rd.noalias() += a.transpose() * lam;
        for (int i = 0; i < nl; ++i) rd(lo_idx[i]) -= ml(i);
        for (int i = 0; i < nh; ++i) rd(hi_idx[i]) += mh(i);
        if (m > 0) rp = a * x + s - b;

        double mu = 0.0;
        if (total > 0) {
            mu = (s.dot(lam) + tl.dot(ml) + tu.dot(mh)) / total;
        }
        const double rd_norm = rd.lpNorm<Eigen::Infinity>();
        const double rp_norm = m > 0 ? rp.lpNorm<Eigen::Infinity>() : 0.0;
        double rb_norm = 0.0;
        for (int i = 0; i < nl; ++i) rb_norm = std::max(rb_norm, std::abs(x(lo_idx[i]) - lb(lo_idx[i]) - tl(i)));
        for (int i = 0; i < nh; ++i) rb_norm = std::max(rb_norm, std::abs(ub(hi_idx[i]) - x(hi_idx[i]) - tu(i)));

        if (rd_norm <= cfg.tolerance * scale && rp_norm <= cfg.tolerance * scale &&
            rb_norm <= cfg.tolerance * scale && mu <= cfg.tolerance * scale) {
            res.status = QpStatus::Optimal;
            break;
        }
        // Divergence heuristic: duals exploding while primal residual stalls.
        if (lam.size() > 0 && lam.maxCoeff() > 1e12 && rp_norm > 1e-6 * scale) {
            res.status = QpStatus::Infeasible;
            break;
        }

        // Normal-equations matrix  H + A' diag(lam/s) A + diag(ml/tl + mh/tu).
        kkt = h;
        if (m > 0) {
            for (int i = 0; i < m; ++i) {
                const double w = std::min(lam(i) / s(i), 1e14);
                kkt.noalias() += w * (a.row(i).transpose() * a.row(i));
            }
        }
        for (int i = 0; i < nl; ++i) kkt(lo_idx[i], lo_idx[i]) += std::min(ml(i) / tl(i), 1e14);
        for (int i = 0; i < nh; ++i) kkt(hi_idx[i], hi_idx[i]) += std::min(mh(i) / tu(i), 1e14);

        Eigen::LLT<MatrixXd> llt(kkt);
        if (llt.info() != Eigen::Success) {
            kkt.diagonal().array() += 1e-10 * kkt.diagonal().maxCoeff() + 1e-14;
            llt.compute(kkt);
            if (llt.info() != Eigen::Success) {
                res.status = QpStatus::Infeasible;
                break;
            }
        }

        // The bound residuals x - lb - tl are kept exactly zero by our updates,
        // so the reduced RHS only carries rd, rp and the complementarity terms.
        auto assemble_and_solve = [&](const VectorXd& comp_s, const VectorXd& comp_l,
                                      const VectorXd& comp_u, VectorXd& out_dx, VectorXd& out_ds,
                                      VectorXd& out_dlam, VectorXd& out_dml, VectorXd& out_dmh) {
            rhs = -rd;
            if (m > 0) {
                for (int i = 0; i < m; ++i) {
                    const double tmp = (comp_s(i) + lam(i) * rp(i)) / s(i);
                    rhs.noalias() -= a.row(i).transpose() * tmp;
                }
            }
            for (int i = 0; i < nl; ++i) rhs(lo_idx[i]) += comp_l(i) / tl(i);
            for (int i = 0; i < nh; ++i) rhs(hi_idx[i]) -= comp_u(i) / tu(i);
            out_dx = llt.solve(rhs);
            if (m > 0) {
                out_ds = -rp - a * out_dx;
                for (int i = 0; i < m; ++i) out_dlam(i) = (comp_s(i) - lam(i) * out_ds(i)) / s(i);
            }
            for (int i = 0; i < nl; ++i) out_dml(i) = (comp_l(i) - ml(i) * out_dx(lo_idx[i])) / tl(i);
            for (int i = 0; i < nh; ++i) out_dmh(i) = (comp_u(i) + mh(i) * out_dx(hi_idx[i])) / tu(i);
        };

        auto step_lengths = [&](const VectorXd& vds, const VectorXd& vdl, const VectorXd& vdml,
                                const VectorXd& vdmh, const VectorXd& vdx, double tau,
                                double& ap, double& ad) {
            ap = 1.0;
            ad = 1.0;
            for (int i = 0; i < m; ++i) {
                if (vds(i) < 0.0) ap = std::min(ap, -tau * s(i) / vds(i));
                if (vdl(i) < 0.0) ad = std::min(ad, -tau * lam(i) / vdl(i));
            }
            for (int i = 0; i < nl; ++i) {
                if (vdx(lo_idx[i]) < 0.0) ap = std::min(ap, -tau * tl(i) / vdx(lo_idx[i]));
                if (vdml(i) < 0.0) ad = std::min(ad, -tau * ml(i) / vdml(i));
            }
            for (int i = 0; i < nh; ++i) {
                if (vdx(hi_idx[i]) > 0.0) ap = std::min(ap, tau * tu(i) / vdx(hi_idx[i]));
                if (vdmh(i) < 0.0) ad = std::min(ad, -tau * mh(i) / vdmh(i));
            }
        };

        // Predictor (affine scaling).
        VectorXd comp_s = -(s.array() * lam.array()).matrix();
        VectorXd comp_l = -(tl.array() * ml.array()).matrix();
        VectorXd comp_u = -(tu.array() * mh.array()).matrix();
        assemble_and_solve(comp_s, comp_l, comp_u, dx_a, ds_a, dlam_a, dml_a, dmh_a);
        double ap_a, ad_a;
        step_lengths(ds_a, dlam_a, dml_a, dmh_a, dx_a, 1.0, ap_a, ad_a);
        double mu_aff = 0.0;
        if (total > 0) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i) acc += (s(i) + ap_a * ds_a(i)) * (lam(i) + ad_a * dlam_a(i));
            for (int i = 0; i < nl; ++i) acc += (tl(i) + ap_a * dx_a(lo_idx[i])) * (ml(i) + ad_a * dml_a(i));
            for (int i = 0; i < nh; ++i) acc += (tu(i) - ap_a * dx_a(hi_idx[i])) * (mh(i) + ad_a * dmh_a(i));
            mu_aff = acc / total;
        }
        const double sigma = mu > 0 ? std::pow(mu_aff / mu, 3.0) : 0.0;

        // Corrector.
        for (int i = 0; i < m; ++i) comp_s(i) += sigma * mu - ds_a(i) * dlam_a(i);
        for (int i = 0; i < nl; ++i) comp_l(i) += sigma * mu - dx_a(lo_idx[i]) * dml_a(i);
        for (int i = 0; i < nh; ++i) comp_u(i) += sigma * mu + dx_a(hi_idx[i]) * dmh_a(i);
        assemble_and_solve(comp_s, comp_l, comp_u, dx, ds, dlam, dml, dmh);

        double ap, ad;
        step_lengths(ds, dlam, dml, dmh, dx, 0.995, ap, ad);
        x += ap * dx;
        if (m > 0) {
            s += ap * ds;
            lam += ad * dlam;
        }
        for (int i = 0; i < nl; ++i) tl(i) += ap * dx(lo_idx[i]);
        for (int i = 0; i < nh; ++i) tu(i) -= ap * dx(hi_idx[i]);
        ml += ad * dml;
        mh += ad * dmh;
    }

    res.x = x;
    res.lambda = lam;
    for (int i = 0; i < nl; ++i) res.mu_lo(lo_idx[i]) = ml(i);
    for (int i = 0; i < nh; ++i) res.mu_hi(hi_idx[i]) = mh(i);
    return res;
}

}  // namespace detail

/// Solve  min 1/2 x'Hx + g'x  s.t. A x <= b, lb <= x <= ub.
/// H must be positive definite. Variables with lb == ub are eliminated first
/// (the MPC pins unused CVaR levels that way).
inline QpResult solve_qp(const MatrixXd& h, const VectorXd& g, const MatrixXd& a,
                         const VectorXd& b, const VectorXd& lb, const VectorXd& ub,
                         const QpSettings& cfg = {}) {
    const int n = static_cast<int>(g.size());
    std::vector<int> free_idx, fixed_idx;
    for (int i = 0; i < n; ++i) {
        if (std::isfinite(lb(i)) && std::isfinite(ub(i)) && ub(i) - lb(i) <= 1e-12)
            fixed_idx.push_back(i);
        else
            free_idx.push_back(i);
    }
    if (fixed_idx.empty()) return detail::solve_qp_reduced(h, g, a, b, lb, ub, cfg);

    const int nf = static_cast<int>(free_idx.size());
    VectorXd xfix = VectorXd::Zero(n);
    for (int i : fixed_idx) xfix(i) = 0.5 * (lb(i) + ub(i));

    MatrixXd hr(nf, nf);
    VectorXd gr(nf), lbr(nf), ubr(nf);
    for (int r = 0; r < nf; ++r) {
        gr(r) = g(free_idx[r]) + h.row(free_idx[r]).dot(xfix);
        lbr(r) = lb(free_idx[r]);
        ubr(r) = ub(free_idx[r]);
        for (int c = 0; c < nf; ++c) hr(r, c) = h(free_idx[r], free_idx[c]);
    }
    const int m = static_cast<int>(b.size());
    MatrixXd ar(m, nf);
    VectorXd br = b;
    if (m > 0) {
        br.noalias() -= a * xfix;
        for (int c = 0; c < nf; ++c) ar.col(c) = a.col(free_idx[c]);
    }

    QpResult red = detail::solve_qp_reduced(hr, gr, ar, br, lbr, ubr, cfg);
    QpResult out;
    out.status = red.status;
    out.iterations = red.iterations;
    out.lambda = red.lambda;
    out.x = xfix;
    out.mu_lo = VectorXd::Zero(n);
    out.mu_hi = VectorXd::Zero(n);
    for (int r = 0; r < nf; ++r) {
        out.x(free_idx[r]) = red.x(r);
        out.mu_lo(free_idx[r]) = red.mu_lo(r);
        out.mu_hi(free_idx[r]) = red.mu_hi(r);
    }
    return out;
}

}  // namespace metanav::opt
