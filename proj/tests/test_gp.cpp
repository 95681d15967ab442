#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <Eigen/Dense>

#include "metanav/gp.hpp"

using namespace metanav;

namespace {

// Dense re-implementation of the closed-form GP posterior using a full-pivot
// LU inverse, independent of the Cholesky path in the library.
GpPrediction oracle_posterior(const GpDataset& ds, const GpHyper& h, const Vec2& x) {
    const int n = ds.size();
    GpPrediction p;
    for (int j = 0; j < 2; ++j) {
        Eigen::MatrixXd gram(n, n);
        Eigen::VectorXd ks(n), y(n);
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) gram(a, b) = kernel(ds.inputs[a], ds.inputs[b], h, j);
            ks(a) = kernel(x, ds.inputs[a], h, j);
            y(a) = ds.outputs[a](j);
        }
        gram.diagonal().array() += h.noise_var[j];
        const Eigen::MatrixXd inv = gram.fullPivLu().inverse();
        p.mean(j) = ks.dot(inv * y);
        p.var(j) = kernel(x, x, h, j) - ks.dot(inv * ks);
    }
    return p;
}

GpDataset random_dataset(RandomStream& rng, int n) {
    GpDataset ds;
    for (int i = 0; i < n; ++i) {
        ds.inputs.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3)});
        ds.outputs.push_back({rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)});
    }
    return ds;
}

}  // namespace

TEST_CASE("kernel") {
    GpHyper h;
    h.signal_var = {1.0, 1.0};
    const Vec2 a{0.3, -1.2};
    CHECK(kernel(a, a, h, 0) == Catch::Approx(1.0));
    CHECK(kernel(a, Vec2{100.0, 100.0}, h, 0) == Catch::Approx(0.0).margin(1e-300));
    // |x - x'|^2 = 2 with unit length scales -> exp(-1)
    CHECK(kernel({0, 0}, {1.0, 1.0}, h, 0) == Catch::Approx(std::exp(-1.0)).epsilon(1e-12));
    // symmetry
    RandomStream rng(1);
    GpHyper hr;
    hr.length_scales = {Vec2{0.5, 2.0}, Vec2{1.5, 0.7}};
    hr.signal_var = {0.3, 0.9};
    for (int i = 0; i < 100; ++i) {
        const Vec2 x{rng.uniform(-2, 2), rng.uniform(-2, 2)};
        const Vec2 y{rng.uniform(-2, 2), rng.uniform(-2, 2)};
        REQUIRE(kernel(x, y, hr, 0) == kernel(y, x, hr, 0));
        REQUIRE(kernel(x, y, hr, 1) == kernel(y, x, hr, 1));
    }
}

TEST_CASE("posterior interpolates a single noise-free training pair") {
    GpHyper h;
    h.noise_var = {1e-12, 1e-12};
    GpDataset ds;
    ds.inputs.push_back({1.0, 2.0});
    ds.outputs.push_back({0.1, -0.2});
    const GpPrediction p = posterior(ds, h, {1.0, 2.0});
    CHECK(p.mean.x() == Catch::Approx(0.1).margin(1e-6));
    CHECK(p.mean.y() == Catch::Approx(-0.2).margin(1e-6));
    CHECK(p.var.x() == Catch::Approx(0.0).margin(1e-6));
    CHECK(p.var.y() == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("posterior reverts to the prior far from data") {
    GpHyper h;
    RandomStream rng(2);
    const GpDataset ds = random_dataset(rng, 6);
    const GpPrediction p = posterior(ds, h, {500.0, -500.0});
    CHECK(p.mean.x() == Catch::Approx(0.0).margin(1e-12));
    CHECK(p.var.x() == Catch::Approx(h.signal_var[0]).margin(1e-12));
    CHECK(p.var.y() == Catch::Approx(h.signal_var[1]).margin(1e-12));
}

TEST_CASE("posterior matches the dense closed-form oracle") {
    RandomStream rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + rng.uniform_int(10);
        const GpDataset ds = random_dataset(rng, n);
        GpHyper h;
        h.length_scales = {Vec2{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)},
                           Vec2{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)}};
        h.signal_var = {rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5)};
        h.noise_var = {rng.uniform(1e-4, 1e-2), rng.uniform(1e-4, 1e-2)};
        for (int q = 0; q < 5; ++q) {
            const Vec2 x{rng.uniform(-4, 4), rng.uniform(-4, 4)};
            const GpPrediction a = posterior(ds, h, x);
            const GpPrediction b = oracle_posterior(ds, h, x);
            for (int j = 0; j < 2; ++j) {
                REQUIRE(std::abs(a.mean(j) - b.mean(j)) <= 1e-8 * (std::abs(b.mean(j)) + 1e-9));
                REQUIRE(std::abs(a.var(j) - b.var(j)) <= 1e-8 * (std::abs(b.var(j)) + 1e-9));
            }
        }
    }
}

TEST_CASE("posterior variance is nonnegative and duplicates never increase it") {
    RandomStream rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        GpDataset ds = random_dataset(rng, 5);
        GpHyper h;
        const Vec2 q{rng.uniform(-4, 4), rng.uniform(-4, 4)};
        const GpPrediction before = posterior(ds, h, q);
        REQUIRE(before.var.minCoeff() >= 0.0);
        // duplicate an existing training point
        ds.inputs.push_back(ds.inputs[0]);
        ds.outputs.push_back(ds.outputs[0]);
        const GpPrediction after = posterior(ds, h, q);
        REQUIRE(after.var.x() <= before.var.x() + 1e-10);
        REQUIRE(after.var.y() <= before.var.y() + 1e-10);
    }
}

TEST_CASE("propagate") {
    GpHyper h;

    SECTION("K=1 equals x_now plus the posterior mean at x_now") {
        RandomStream rng(5);
        const GpDataset ds = random_dataset(rng, 7);
        const Vec2 x{0.5, -0.5};
        const GpForecast f = propagate(ds, h, x, 1);
        const GpPrediction p = posterior(ds, h, x);
        CHECK(f.means[0].x() == Catch::Approx(x.x() + p.mean.x()).margin(1e-14));
        CHECK(f.means[0].y() == Catch::Approx(x.y() + p.mean.y()).margin(1e-14));
        CHECK(f.vars[0].x() == Catch::Approx(p.var.x()).margin(1e-14));
    }
    SECTION("zero-motion dataset keeps the mean in place") {
        GpDataset ds;
        ds.inputs.push_back({1.0, 1.0});
        ds.outputs.push_back({0.0, 0.0});
        const GpForecast f = propagate(ds, h, {1.0, 1.0}, 1);
        CHECK(f.means[0].x() == Catch::Approx(1.0).margin(1e-9));
        CHECK(f.means[0].y() == Catch::Approx(1.0).margin(1e-9));
    }
    SECTION("constant-velocity data extrapolates linearly when queries stay on-data") {
        GpHyper tight;
        tight.noise_var = {1e-10, 1e-10};
        const Vec2 v{0.4, -0.3};
        GpDataset ds;
        Vec2 p{0.0, 0.0};
        for (int i = 0; i < 25; ++i) {
            ds.inputs.push_back(p);
            ds.outputs.push_back(v);
            p += v;
        }
        // Propagation from an interior training input revisits training inputs
        // exactly, where the noise-free GP interpolates the constant velocity.
        const Vec2 now = ds.inputs[4];
        const GpForecast f = propagate(ds, tight, now, 20);
        for (int k = 1; k <= 20; ++k) {
            const Vec2 expect = now + k * v;
            REQUIRE(f.means[k - 1].x() == Catch::Approx(expect.x()).margin(1e-6));
            REQUIRE(f.means[k - 1].y() == Catch::Approx(expect.y()).margin(1e-6));
        }
    }
    SECTION("diagonal variance is nondecreasing in k") {
        RandomStream rng(6);
        const GpDataset ds = random_dataset(rng, 8);
        const GpForecast f = propagate(ds, h, {0.0, 0.0}, 15);
        for (std::size_t k = 1; k < f.vars.size(); ++k) {
            REQUIRE(f.vars[k].x() >= f.vars[k - 1].x() - 1e-15);
            REQUIRE(f.vars[k].y() >= f.vars[k - 1].y() - 1e-15);
        }
    }
    SECTION("empty dataset behaves as the zero-velocity prior") {
        GpDataset ds;
        const GpForecast f = propagate(ds, h, {2.0, 3.0}, 5);
        for (int k = 0; k < 5; ++k) {
            REQUIRE(f.means[k].x() == 2.0);
            REQUIRE(f.means[k].y() == 3.0);
            REQUIRE(f.vars[k].x() == Catch::Approx((k + 1) * h.signal_var[0]));
        }
    }
}

TEST_CASE("sample_forecast") {
    GpForecast f;
    f.means = {{1.0, 2.0}, {1.5, 2.5}};
    f.vars = {{0.0, 0.0}, {0.04, 0.09}};

    SECTION("zero covariance collapses to the mean") {
        RandomStream rng(1);
        const auto s = sample_forecast(f, 16, rng);
        for (const auto& x : s[0]) {
            REQUIRE(x.x() == 1.0);
            REQUIRE(x.y() == 2.0);
        }
    }
    SECTION("same seed gives the identical sample set") {
        RandomStream r1(9), r2(9);
        const auto a = sample_forecast(f, 32, r1);
        const auto b = sample_forecast(f, 32, r2);
        REQUIRE(a == b);
    }
    SECTION("sample mean concentrates at the forecast mean") {
        const int m = 100000;
        RandomStream rng(11);
        const auto s = sample_forecast(f, m, rng);
        Vec2 acc{0, 0};
        for (const auto& x : s[1]) acc += x;
        acc /= double(m);
        // 3 sigma / sqrt(M) bands
        REQUIRE(std::abs(acc.x() - 1.5) < 3.0 * 0.2 / std::sqrt(double(m)));
        REQUIRE(std::abs(acc.y() - 2.5) < 3.0 * 0.3 / std::sqrt(double(m)));
    }
}
