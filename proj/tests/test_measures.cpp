#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "mfgweak/measures.hpp"
#include "mfgweak/simulate.hpp"
#include "support/test_model.hpp"

using namespace mfgweak;
using mfgweak::testing::TestModel;

namespace {

// Hand-built ensemble with prescribed increments; states follow sigma = 1.
PathEnsemble handmade_ensemble(const TimeGrid& grid, const std::vector<std::vector<double>>& dw,
                               double x0 = 0.0) {
    const int M = static_cast<int>(dw.size());
    const int N = grid.num_steps;
    PathEnsemble::Builder b;
    b.paths = PathArray(grid, M, 1);
    b.increments.assign(static_cast<std::size_t>(M) * N, 0.0);
    b.initial.assign(static_cast<std::size_t>(M), x0);
    b.seed = 0;
    for (int m = 0; m < M; ++m) {
        b.paths.mutable_state(m, 0)[0] = x0;
        for (int k = 0; k < N; ++k) {
            b.increments[static_cast<std::size_t>(m) * N + k] = dw[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)];
            b.paths.mutable_state(m, k + 1)[0] =
                b.paths.state(m, k)[0] + dw[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)];
        }
    }
    return std::move(b).finish();
}

ControlLawFlow constant_flow(const TimeGrid& grid, int count, double a) {
    ControlLawFlow f = ControlLawFlow::empty(grid, 1, count);
    for (int k = 0; k < grid.num_steps; ++k)
        for (int m = 0; m < count; ++m) f.sample_ptr(k, m)[0] = a;
    return f;
}

}  // namespace

TEST_CASE("zero drift gives unit weights exactly", "[measures]") {
    TestModel model;
    PathEnsemble e = simulate_driftless(model, TimeGrid(1.0, 25), 400, 31);
    WeightedMeasure mu = WeightedMeasure::driftless(e);
    GirsanovStats stats;
    auto w = girsanov_weights(e, model, ClosedLoopPolicy::constant({0.0}), mu.view(), &stats);
    REQUIRE(stats.prenorm_mean == 1.0);
    for (double wi : w.weights) REQUIRE(wi == 1.0);
}

TEST_CASE("single-step stochastic exponential has the closed form", "[measures]") {
    // theta = 0.5, dW = 0.2, dt = 0.1: raw weight exp(0.1 - 0.0125).
    PathEnsemble e = handmade_ensemble(TimeGrid(0.1, 1), {{0.2}});
    TestModel model;
    WeightedMeasure mu = WeightedMeasure::driftless(e);
    GirsanovStats stats;
    girsanov_weights(e, model, ClosedLoopPolicy::constant({0.5}), mu.view(), &stats);
    REQUIRE(stats.prenorm_mean == Catch::Approx(std::exp(0.0875)).epsilon(1e-14));
}

TEST_CASE("raw weight mean is a martingale within Monte Carlo error", "[measures]") {
    TestModel model;
    const int M = 4000;
    PathEnsemble e = simulate_driftless(model, TimeGrid(1.0, 40), M, 77);
    WeightedMeasure mu = WeightedMeasure::driftless(e);
    for (double theta : {0.3, -0.8, 1.0}) {
        GirsanovStats stats;
        auto w = girsanov_weights(e, model, ClosedLoopPolicy::constant({theta}), mu.view(),
                                  &stats);
        REQUIRE(std::abs(stats.prenorm_mean - 1.0) < 3.0 * stats.prenorm_se);
        w.validate("test");
        double mean = std::accumulate(w.weights.begin(), w.weights.end(), 0.0) / M;
        REQUIRE(mean == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("state-dependent policies keep the martingale property", "[measures]") {
    // The raw stochastic exponential has unit mean for any admissible policy,
    // not just constants.
    TestModel model;
    const int M = 4000;
    PathEnsemble e = simulate_driftless(model, TimeGrid(1.0, 40), M, 123);
    WeightedMeasure mu = WeightedMeasure::driftless(e);
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng = make_rng(derive_seed(999, static_cast<std::uint64_t>(trial)));
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        double c0 = unif(rng), c1 = unif(rng), c2 = unif(rng);
        ClosedLoopPolicy p;
        p.adim = 1;
        p.eval = [c0, c1, c2](int k, const PathSlice& x, std::span<double> a) {
            double t = x.grid().time(k);
            double v = c0 + c1 * std::tanh(x.current()[0]) + c2 * std::sin(6.28 * t);
            a[0] = std::min(1.0, std::max(-1.0, v));
        };
        GirsanovStats stats;
        girsanov_weights(e, model, p, mu.view(), &stats);
        REQUIRE(std::abs(stats.prenorm_mean - 1.0) < 3.0 * stats.prenorm_se);
    }
}

TEST_CASE("drift bound violations are model contract errors", "[measures]") {
    TestModel model;
    model.bound = 0.4;  // policies up to |a| = 1 overshoot it
    PathEnsemble e = simulate_driftless(model, TimeGrid(1.0, 5), 20, 3);
    WeightedMeasure mu = WeightedMeasure::driftless(e);
    REQUIRE_THROWS_AS(
        girsanov_weights(e, model, ClosedLoopPolicy::constant({0.9}), mu.view()),
        ModelContractViolation);
    REQUIRE_NOTHROW(girsanov_weights(e, model, ClosedLoopPolicy::constant({0.3}), mu.view()));
}

TEST_CASE("pushforward with control-free drift is the identity on weights", "[measures]") {
    TestModel model;
    model.drift_fn = [](int, const PathSlice&, const MuView&, std::span<const double>,
                        std::span<double> out) { out[0] = 0.0; };
    PathEnsemble e = simulate_driftless(model, TimeGrid(1.0, 10), 100, 17);
    WeightedMeasure mu = WeightedMeasure::driftless(e);
    auto [mu_out, nu_out] = pushforward_measure(e, model, ClosedLoopPolicy::constant({0.25}),
                                                mu.view());
    for (double w : mu_out.weights) REQUIRE(w == 1.0);
    for (int k = 0; k < 10; ++k)
        for (int m = 0; m < 100; ++m) REQUIRE(nu_out.sample_ptr(k, m)[0] == 0.25);
}

TEST_CASE("zero policy under linear drift keeps unit weights", "[measures]") {
    TestModel model;  // b = a
    PathEnsemble e = simulate_driftless(model, TimeGrid(1.0, 10), 100, 18);
    WeightedMeasure mu = WeightedMeasure::driftless(e);
    auto [mu_out, nu_out] = pushforward_measure(e, model, ClosedLoopPolicy::constant({0.0}),
                                                mu.view());
    (void)nu_out;
    for (double w : mu_out.weights) REQUIRE(w == 1.0);
}

TEST_CASE("weighted expectation basics", "[measures]") {
    TestModel model;
    const int M = 4000;
    PathEnsemble e = simulate_driftless(model, TimeGrid(1.0, 20), M, 55);

    // Normalization: phi = 1 integrates to 1 for any normalized measure.
    WeightedMeasure mu = girsanov_weights(e, model, ClosedLoopPolicy::constant({0.7}),
                                          WeightedMeasure::driftless(e).view());
    REQUIRE(expectation(mu, [](const PathSlice&) { return 1.0; }) ==
            Catch::Approx(1.0).margin(1e-12));

    // Driftless terminal mean is 0 within 3 / sqrt(M).
    WeightedMeasure unit = WeightedMeasure::driftless(e);
    double mean_xt = expectation(unit, [](const PathSlice& p) {
        return p.state(p.grid().num_steps)[0];
    });
    REQUIRE(std::abs(mean_xt) < 3.0 / std::sqrt(static_cast<double>(M)));

    // Two-path toy: weights (2, 0), values (3, 7) average to 3.
    PathEnsemble toy = handmade_ensemble(TimeGrid(1.0, 1), {{1.0}, {2.0}});
    WeightedMeasure wm;
    wm.ensemble = &toy;
    wm.weights = {2.0, 0.0};
    double v = expectation(wm, [](const PathSlice& p) {
        return p.state(1)[0] == 1.0 ? 3.0 : 7.0;
    });
    REQUIRE(v == 3.0);

    // Non-finite integrands are reported.
    REQUIRE_THROWS_AS(
        expectation(unit, [](const PathSlice&) { return std::numeric_limits<double>::infinity(); }),
        SolverError);
}

TEST_CASE("discrepancy vanishes on identical inputs and scales linearly", "[measures]") {
    TestModel model;
    PathEnsemble e = simulate_driftless(model, TimeGrid(1.0, 16), 500, 21);
    WeightedMeasure mu = WeightedMeasure::driftless(e);
    ControlLawFlow nu = constant_flow(e.grid(), 500, 0.3);
    DiscrepancyConfig cfg = DiscrepancyConfig::defaults(e.grid());

    MeasureDiscrepancy zero = discrepancy(mu, mu, nu, nu, cfg, &model);
    REQUIRE(zero.moment_residual == 0.0);
    REQUIRE(zero.sliced_w1 == 0.0);
    REQUIRE(zero.control_flow_residual == 0.0);

    // Perturb weights along a centered functional, at two amplitudes.
    auto perturbed = [&](double eps) {
        WeightedMeasure m2 = mu;
        double mean = 0.0;
        for (int m = 0; m < e.num_paths(); ++m) mean += e.paths().state(m, 16)[0];
        mean /= e.num_paths();
        for (int m = 0; m < e.num_paths(); ++m)
            m2.weights[static_cast<std::size_t>(m)] =
                1.0 + eps * (e.paths().state(m, 16)[0] - mean);
        return m2;
    };
    MeasureDiscrepancy d1 = discrepancy(perturbed(0.01), mu, nu, nu, cfg, &model);
    MeasureDiscrepancy d2 = discrepancy(perturbed(0.02), mu, nu, nu, cfg, &model);
    REQUIRE(d1.moment_residual > 0.0);
    REQUIRE(d2.moment_residual == Catch::Approx(2.0 * d1.moment_residual).epsilon(1e-10));

    // Point-mass control flows at distance |a - a'|.
    ControlLawFlow nu2 = constant_flow(e.grid(), 500, -0.45);
    MeasureDiscrepancy dq = discrepancy(mu, mu, nu, nu2, cfg, &model);
    REQUIRE(dq.control_flow_residual == Catch::Approx(0.75).epsilon(1e-12));

    // Mismatched ensembles are a usage error.
    PathEnsemble other = simulate_driftless(model, TimeGrid(1.0, 16), 500, 22);
    WeightedMeasure mu_other = WeightedMeasure::driftless(other);
    REQUIRE_THROWS_AS(discrepancy(mu, mu_other, nu, nu, cfg, &model), UsageError);
}

TEST_CASE("quantile radius: counting examples", "[measures]") {
    std::vector<double> pts{0.0, 1.0, 2.0};
    double x0 = 0.0;
    REQUIRE(quantile_radius(pts, 1, nullptr, {&x0, 1}, 0.5) == 1.0);
    // Mass already at the center.
    REQUIRE(quantile_radius(pts, 1, nullptr, {&x0, 1}, 0.3) == 0.0);
    REQUIRE_THROWS_AS(quantile_radius(std::span<const double>{}, 1, nullptr, {&x0, 1}, 0.5),
                      UsageError);
    REQUIRE_THROWS_AS(quantile_radius(pts, 1, nullptr, {&x0, 1}, 1.5), UsageError);
}

namespace {

// Exhaustive oracle: try every sample distance as candidate radius and keep
// the smallest whose closed ball reaches the mass level.
double quantile_radius_bruteforce(const std::vector<double>& pts, int dim,
                                  const std::vector<double>& w, const std::vector<double>& x,
                                  double y) {
    const std::size_t n = pts.size() / static_cast<std::size_t>(dim);
    double total = 0.0;
    std::vector<double> dist(n);
    for (std::size_t m = 0; m < n; ++m) {
        double d2 = 0.0;
        for (int i = 0; i < dim; ++i) {
            double di = pts[m * dim + i] - x[static_cast<std::size_t>(i)];
            d2 += di * di;
        }
        dist[m] = std::sqrt(d2);
        total += w[m];
    }
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
        double mass = 0.0;
        for (std::size_t m = 0; m < n; ++m)
            if (dist[m] <= dist[c]) mass += w[m];
        if (mass >= y * total) best = std::min(best, dist[c]);
    }
    return best;
}

}  // namespace

TEST_CASE("quantile radius agrees with the exhaustive scan and is monotone", "[measures]") {
    Rng rng = make_rng(4242);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<int> size_dist(1, 20);
    for (int trial = 0; trial < 300; ++trial) {
        int dim = 1 + trial % 3;
        int n = size_dist(rng);
        std::vector<double> pts(static_cast<std::size_t>(n) * dim);
        std::vector<double> w(static_cast<std::size_t>(n));
        for (double& p : pts) p = unif(rng) * 4.0 - 2.0;
        for (double& wi : w) wi = 0.1 + unif(rng);
        std::vector<double> x(static_cast<std::size_t>(dim));
        for (double& xi : x) xi = unif(rng) * 4.0 - 2.0;

        double prev = -1.0;
        for (double y : {0.1, 0.25, 0.5, 0.7, 0.9}) {
            double got = quantile_radius(pts, dim, w.data(), x, y);
            double want = quantile_radius_bruteforce(pts, dim, w, x, y);
            REQUIRE(got == want);
            REQUIRE(got >= prev);  // nondecreasing in the mass level
            prev = got;
        }
    }
}

TEST_CASE("quantile radius matches the uniform oracle", "[measures]") {
    Rng rng = make_rng(31337);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> pts(100);
    std::vector<double> w(100, 1.0);
    for (double& p : pts) p = unif(rng);
    std::vector<double> x{0.5};
    double r = quantile_radius(pts, 1, w.data(), x, 0.5);
    REQUIRE(r == Catch::Approx(0.25).margin(0.05));
    REQUIRE(r == quantile_radius_bruteforce(pts, 1, w, x, 0.5));
}

TEST_CASE("1-d Wasserstein distance basics", "[measures]") {
    std::vector<double> a{0.0, 1.0, 2.0};
    std::vector<double> b{0.5, 1.5, 2.5};
    REQUIRE(wasserstein1_1d(a, nullptr, a, nullptr) == 0.0);
    REQUIRE(wasserstein1_1d(a, nullptr, b, nullptr) == Catch::Approx(0.5));
    // Diracs: W1 = |a - b|.
    std::vector<double> da{0.3}, db{-0.9};
    REQUIRE(wasserstein1_1d(da, nullptr, db, nullptr) == Catch::Approx(1.2));
}

TEST_CASE("weighted quantile resampling preserves equal-weight multisets", "[measures]") {
    std::vector<double> vals{3.0, 1.0, 2.0, 0.0};
    std::vector<double> w(4, 1.0);
    auto out = weighted_quantile_resample(vals, w, 4);
    REQUIRE(out == std::vector<double>{0.0, 1.0, 2.0, 3.0});

    // Zero-weight atoms are never selected.
    std::vector<double> w2{1.0, 0.0, 1.0, 0.0};
    auto out2 = weighted_quantile_resample(vals, w2, 4);
    for (double v : out2) REQUIRE((v == 3.0 || v == 2.0));
}
