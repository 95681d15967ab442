#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "metanav/common.hpp"
#include "metanav/qp.hpp"

using namespace metanav;
using namespace metanav::opt;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Brute-force oracle: enumerate all active sets of the general rows, solve the
// equality-constrained KKT system, keep the feasible candidate with
// nonnegative multipliers. Box bounds are folded into general rows first.
// Exponential, so only for tiny problems.
struct DenseQp {
    MatrixXd h;
    VectorXd g;
    MatrixXd a;  // rows: a_i x <= b_i
    VectorXd b;
};

double oracle_qp_min(const DenseQp& qp) {
    const int n = static_cast<int>(qp.g.size());
    const int m = static_cast<int>(qp.b.size());
    double best = kInf;
    for (int mask = 0; mask < (1 << m); ++mask) {
        std::vector<int> act;
        for (int i = 0; i < m; ++i)
            if (mask & (1 << i)) act.push_back(i);
        const int k = static_cast<int>(act.size());
        if (k > n) continue;
        MatrixXd kkt(n + k, n + k);
        kkt.setZero();
        kkt.topLeftCorner(n, n) = qp.h;
        VectorXd rhs(n + k);
        rhs.head(n) = -qp.g;
        for (int i = 0; i < k; ++i) {
            kkt.block(n + i, 0, 1, n) = qp.a.row(act[i]);
            kkt.block(0, n + i, n, 1) = qp.a.row(act[i]).transpose();
            rhs(n + i) = qp.b(act[i]);
        }
        Eigen::FullPivLU<MatrixXd> lu(kkt);
        if (!lu.isInvertible()) continue;
        const VectorXd sol = lu.solve(rhs);
        const VectorXd x = sol.head(n);
        const VectorXd lam = sol.tail(k);
        if (k > 0 && lam.minCoeff() < -1e-9) continue;
        bool feasible = true;
        for (int i = 0; i < m; ++i)
            if (qp.a.row(i).dot(x) > qp.b(i) + 1e-8) feasible = false;
        if (!feasible) continue;
        best = std::min(best, 0.5 * x.dot(qp.h * x) + qp.g.dot(x));
    }
    return best;
}

MatrixXd random_spd(RandomStream& rng, int n, double reg = 0.5) {
    MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = rng.normal();
    return m * m.transpose() + reg * MatrixXd::Identity(n, n);
}

}  // namespace

TEST_CASE("qp matches the active-set enumeration oracle on small problems") {
    RandomStream rng(17);
    int solved = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + rng.uniform_int(3);  // 2..4
        const int m = 1 + rng.uniform_int(5);  // 1..5
        DenseQp qp;
        qp.h = random_spd(rng, n);
        qp.g = VectorXd::NullaryExpr(n, [&](int) { return rng.normal(); });
        qp.a = MatrixXd::NullaryExpr(m, n, [&](int, int) { return rng.normal(); });
        qp.b = VectorXd::NullaryExpr(m, [&](int) { return rng.uniform(-0.2, 1.5); });

        const double oracle = oracle_qp_min(qp);
        if (!std::isfinite(oracle)) continue;  // oracle found no feasible candidate
        ++solved;

        const VectorXd lb = VectorXd::Constant(n, -kInf);
        const VectorXd ub = VectorXd::Constant(n, kInf);
        const QpResult r = solve_qp(qp.h, qp.g, qp.a, qp.b, lb, ub);
        REQUIRE(r.status == QpStatus::Optimal);
        const double val = 0.5 * r.x.dot(qp.h * r.x) + qp.g.dot(r.x);
        REQUIRE(val == Catch::Approx(oracle).margin(1e-6));
        for (int i = 0; i < m; ++i) REQUIRE(qp.a.row(i).dot(r.x) <= qp.b(i) + 1e-7);
    }
    REQUIRE(solved > 100);
}

TEST_CASE("qp satisfies kkt conditions on larger random problems with boxes") {
    RandomStream rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 10 + rng.uniform_int(40);
        const int m = 5 + rng.uniform_int(80);
        const MatrixXd h = random_spd(rng, n, 1.0);
        const VectorXd g = VectorXd::NullaryExpr(n, [&](int) { return rng.normal(); });
        const MatrixXd a = MatrixXd::NullaryExpr(m, n, [&](int, int) { return rng.normal(); });
        const VectorXd b = VectorXd::NullaryExpr(m, [&](int) { return rng.uniform(0.1, 2.0); });
        VectorXd lb = VectorXd::Constant(n, -1.0);
        VectorXd ub = VectorXd::Constant(n, 1.0);
        lb(0) = -kInf;  // a couple of one-sided variables
        ub(1) = kInf;

        const QpResult r = solve_qp(h, g, a, b, lb, ub);
        REQUIRE(r.status == QpStatus::Optimal);

        // stationarity: H x + g + A' lam - mu_lo + mu_hi = 0
        VectorXd stationarity = h * r.x + g + a.transpose() * r.lambda - r.mu_lo + r.mu_hi;
        REQUIRE(stationarity.lpNorm<Eigen::Infinity>() < 1e-6);
        // primal feasibility
        REQUIRE((a * r.x - b).maxCoeff() < 1e-7);
        for (int i = 0; i < n; ++i) {
            REQUIRE(r.x(i) >= lb(i) - 1e-8);
            REQUIRE(r.x(i) <= ub(i) + 1e-8);
        }
        // dual feasibility and complementarity
        REQUIRE(r.lambda.minCoeff() >= -1e-10);
        for (int i = 0; i < m; ++i)
            REQUIRE(std::abs(r.lambda(i) * (a.row(i).dot(r.x) - b(i))) < 1e-6);
    }
}

TEST_CASE("qp handles fixed variables by elimination") {
    // min (x0-1)^2 + (x1-1)^2 with x1 pinned at 0 -> x = (1, 0)
    MatrixXd h = 2.0 * MatrixXd::Identity(2, 2);
    VectorXd g(2);
    g << -2.0, -2.0;
    MatrixXd a(0, 2);
    VectorXd b(0);
    VectorXd lb(2), ub(2);
    lb << -kInf, 0.0;
    ub << kInf, 0.0;
    const QpResult r = solve_qp(h, g, a, b, lb, ub);
    REQUIRE(r.status == QpStatus::Optimal);
    CHECK(r.x(0) == Catch::Approx(1.0).margin(1e-8));
    CHECK(r.x(1) == 0.0);
}

TEST_CASE("qp reports infeasibility") {
    // x <= -1 and -x <= -1 cannot hold together.
    MatrixXd h = MatrixXd::Identity(1, 1);
    VectorXd g = VectorXd::Zero(1);
    MatrixXd a(2, 1);
    a << 1.0, -1.0;
    VectorXd b(2);
    b << -1.0, -1.0;
    const VectorXd lb = VectorXd::Constant(1, -kInf);
    const VectorXd ub = VectorXd::Constant(1, kInf);
    const QpResult r = solve_qp(h, g, a, b, lb, ub);
    REQUIRE(r.status != QpStatus::Optimal);
}
