#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mfgweak/hamiltonian.hpp"
#include "mfgweak/measures.hpp"
#include "mfgweak/simulate.hpp"
#include "support/test_model.hpp"

using namespace mfgweak;
using mfgweak::testing::TestModel;

namespace {

struct Fixture {
    TestModel model;
    PathEnsemble ensemble;
    WeightedMeasure mu;

    explicit Fixture(TestModel m = {}, int steps = 4, int paths = 64, std::uint64_t seed = 9)
        : model(std::move(m)),
          ensemble(simulate_driftless(model, TimeGrid(1.0, steps), paths, seed)),
          mu(WeightedMeasure::driftless(ensemble)) {}

    PathSlice slice(int m = 0, int k = 0) const { return ensemble.slice(m, k); }
};

QView dirac_q(const double* a, int adim) { return QView(a, nullptr, 1, adim, nullptr, 0); }

}  // namespace

TEST_CASE("Hamiltonian evaluation: drift term and reward term", "[hamiltonian]") {
    Fixture fx;  // b = a, sigma = 1, f = 0
    double z = 2.0, a = 0.3;
    double q_sample = 0.0;
    QView q = dirac_q(&q_sample, 1);
    REQUIRE(hamiltonian_value(fx.model, 0, fx.slice(), fx.mu.view(), q, {&z, 1}, {&a, 1}) ==
            Catch::Approx(0.6));

    // z = 0 reduces to the running reward.
    TestModel with_f;
    with_f.control_reward_fn = [](int, const PathSlice&, const MuView&,
                                  std::span<const double> a2) { return 1.5 - a2[0] * a2[0]; };
    Fixture fx2(with_f);
    double z0 = 0.0, a2 = 0.4;
    REQUIRE(hamiltonian_value(fx2.model, 0, fx2.slice(), fx2.mu.view(), q, {&z0, 1}, {&a2, 1}) ==
            Catch::Approx(1.5 - 0.16));

    // Controls outside the control set are rejected.
    double bad = 1.5;
    REQUIRE_THROWS_AS(
        hamiltonian_value(fx.model, 0, fx.slice(), fx.mu.view(), q, {&z, 1}, {&bad, 1}),
        UsageError);
}

TEST_CASE("Hamiltonian with control-law coupling", "[hamiltonian]") {
    // f = gamma x_t <c', q> - c(a) with gamma = 1, x_t = 2, <c', q> = 0.4:
    // h = 2 * 0.4 - 0.25 + z * a = 1.05 at z = 1, a = 0.5.
    TestModel model;
    model.control_reward_fn = [](int, const PathSlice&, const MuView&,
                                 std::span<const double> a) { return -a[0] * a[0]; };
    model.flow_reward_fn = [](int, const PathSlice& x, const MuView&, const QView& q) {
        double mean_cprime = q.mean([](std::span<const double> a) { return 2.0 * a[0]; });
        return x.current()[0] * mean_cprime;
    };

    TimeGrid grid(1.0, 1);
    PathArray paths(grid, 1, 1);
    paths.mutable_state(0, 0)[0] = 2.0;
    paths.mutable_state(0, 1)[0] = 2.0;
    paths.build_iota();
    PathSlice x(paths, 0, 0);
    MuView mu(paths, nullptr);

    double q_sample = 0.2;  // c'(0.2) = 0.4
    QView q = dirac_q(&q_sample, 1);
    double z = 1.0, a = 0.5;
    REQUIRE(hamiltonian_value(model, 0, x, mu, q, {&z, 1}, {&a, 1}) == Catch::Approx(1.05));
}

TEST_CASE("maximizer of the quadratic Hamiltonian: interior, clipped, bang-bang",
          "[hamiltonian]") {
    TestModel quad;
    quad.concave = true;
    quad.control_reward_fn = [](int, const PathSlice&, const MuView&, std::span<const double> a) {
        return -a[0] * a[0];
    };
    Fixture fx(quad);

    double z = 0.6;
    auto [a1, v1] = maximize_control_part(fx.model, 0, fx.slice(), fx.mu.view(), {&z, 1});
    REQUIRE(a1[0] == Catch::Approx(0.3).margin(1e-9));
    REQUIRE(v1 == Catch::Approx(0.09).margin(1e-9));

    z = 4.0;
    auto [a2, v2] = maximize_control_part(fx.model, 0, fx.slice(), fx.mu.view(), {&z, 1});
    REQUIRE(a2[0] == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(v2 == Catch::Approx(3.0).margin(1e-9));

    TestModel bang;  // f = 0: linear maximization
    Fixture fb(bang);
    z = -2.0;
    auto [a3, v3] = maximize_control_part(fb.model, 0, fb.slice(), fb.mu.view(), {&z, 1});
    REQUIRE(a3[0] == Catch::Approx(-1.0));
    REQUIRE(v3 == Catch::Approx(2.0));
}

TEST_CASE("policies from adjoint fields", "[hamiltonian]") {
    // Strictly concave reward with interior peak: the zero field maps to the
    // constant peak policy.
    TestModel peaked;
    peaked.concave = true;
    peaked.control_reward_fn = [](int, const PathSlice&, const MuView&,
                                  std::span<const double> a) {
        return -(a[0] - 0.4) * (a[0] - 0.4);
    };
    Fixture fx(peaked);
    ZField zero = [](int, const PathSlice&, std::span<double> z) { z[0] = 0.0; };
    ClosedLoopPolicy p = policy_from_z(fx.model, fx.mu.view(), zero);
    for (int k = 0; k < 4; ++k)
        REQUIRE(p(k, fx.slice(0, k))[0] == Catch::Approx(0.4).margin(1e-9));

    // Flat landscape: the tie-break picks the smallest corner of A.
    TestModel flat;
    flat.drift_fn = [](int, const PathSlice&, const MuView&, std::span<const double>,
                       std::span<double> out) { out[0] = 0.0; };
    Fixture ff(flat);
    ClosedLoopPolicy pf = policy_from_z(ff.model, ff.mu.view(), zero);
    REQUIRE(pf(0, ff.slice())[0] == -1.0);

    // Clipped-quadratic: the policy is z/2 clipped to the interval.
    TestModel quad;
    quad.concave = true;
    quad.control_reward_fn = [](int, const PathSlice&, const MuView&, std::span<const double> a) {
        return -a[0] * a[0];
    };
    Fixture fq(quad);
    ZField field = [](int k, const PathSlice&, std::span<double> z) { z[0] = 0.5 * (k + 1); };
    ClosedLoopPolicy pq = policy_from_z(fq.model, fq.mu.view(), field);
    REQUIRE(pq(0, fq.slice(0, 0))[0] == Catch::Approx(0.25).margin(1e-9));
    REQUIRE(pq(1, fq.slice(0, 1))[0] == Catch::Approx(0.5).margin(1e-9));
    REQUIRE(pq(3, fq.slice(0, 3))[0] == Catch::Approx(1.0).margin(1e-9));  // clipped
}

TEST_CASE("maximizer beats a refined grid on random probes", "[hamiltonian]") {
    // Three maximization strategies; all must dominate a refinement of the
    // default search grid up to 1e-9.
    TestModel quad;
    quad.concave = true;
    quad.control_reward_fn = [](int, const PathSlice&, const MuView&, std::span<const double> a) {
        return -1.3 * a[0] * a[0] + 0.2 * a[0];
    };
    TestModel wavy;  // multimodal: exercised by the exhaustive grid
    wavy.control_reward_fn = [](int, const PathSlice&, const MuView&, std::span<const double> a) {
        return std::sin(5.0 * a[0]) - 0.3 * a[0] * a[0];
    };
    TestModel analytic;
    analytic.analytic = true;
    analytic.concave = true;
    analytic.control_reward_fn = [](int, const PathSlice&, const MuView&,
                                    std::span<const double> a) { return -a[0] * a[0]; };
    analytic.argmax_fn = [](int, const PathSlice&, const MuView&, std::span<const double> z,
                            std::span<double> a) {
        a[0] = std::min(1.0, std::max(-1.0, z[0] / 2.0));
    };

    Rng rng = make_rng(20240229);
    std::uniform_real_distribution<double> zdist(-3.0, 3.0);
    for (TestModel* model : {&quad, &wavy, &analytic}) {
        Fixture fx(*model);
        for (int probe = 0; probe < 340; ++probe) {
            double z = zdist(rng);
            int m = probe % fx.ensemble.num_paths();
            int k = probe % 4;
            PathSlice slice = fx.slice(m, k);
            auto [a_star, value] =
                maximize_control_part(fx.model, k, slice, fx.mu.view(), {&z, 1});
            (void)a_star;
            detail::HamObjective h(fx.model, k, slice, fx.mu.view(), {&z, 1});
            for (int g = 0; g <= 513; ++g) {
                double a = -1.0 + 2.0 * g / 513.0;
                REQUIRE(value >= h({&a, 1}) - 1e-9);
            }
        }
    }
}

TEST_CASE("argmax never depends on the control-law argument", "[hamiltonian]") {
    TestModel model;
    model.concave = true;
    model.control_reward_fn = [](int, const PathSlice&, const MuView&, std::span<const double> a) {
        return -a[0] * a[0];
    };
    model.flow_reward_fn = [](int, const PathSlice&, const MuView&, const QView& q) {
        return q.mean([](std::span<const double> a) { return a[0]; });
    };
    Fixture fx(model);
    double qa = -0.7, qb = 0.9;
    QView q1 = dirac_q(&qa, 1), q2 = dirac_q(&qb, 1);
    for (double z : {-2.0, -0.3, 0.0, 0.4, 1.7}) {
        auto [a1, h1] = maximize_hamiltonian(fx.model, 0, fx.slice(), fx.mu.view(), q1, {&z, 1});
        auto [a2, h2] = maximize_hamiltonian(fx.model, 0, fx.slice(), fx.mu.view(), q2, {&z, 1});
        REQUIRE(a1[0] == a2[0]);  // exact equality
        REQUIRE(h1 - h2 == Catch::Approx(qa - qb));
    }
}

TEST_CASE("maximized Hamiltonian is Lipschitz in the adjoint", "[hamiltonian]") {
    TestModel model;
    model.concave = true;
    model.control_reward_fn = [](int, const PathSlice&, const MuView&, std::span<const double> a) {
        return -0.7 * a[0] * a[0];
    };
    Fixture fx(model);
    const double c_bd = fx.model.drift_bound();
    Rng rng = make_rng(515);
    std::uniform_real_distribution<double> zdist(-4.0, 4.0);
    for (int probe = 0; probe < 500; ++probe) {
        double z1 = zdist(rng), z2 = zdist(rng);
        auto [a1, h1] = maximize_control_part(fx.model, 0, fx.slice(), fx.mu.view(), {&z1, 1});
        auto [a2, h2] = maximize_control_part(fx.model, 0, fx.slice(), fx.mu.view(), {&z2, 1});
        (void)a1;
        (void)a2;
        REQUIRE(std::abs(h1 - h2) <= c_bd * std::abs(z1 - z2) + 1e-9);
    }
}

TEST_CASE("midpoints of near-optimal controls stay near-optimal", "[hamiltonian]") {
    TestModel model;
    model.concave = true;
    model.control_reward_fn = [](int, const PathSlice&, const MuView&, std::span<const double> a) {
        return -2.0 * a[0] * a[0] + 0.3 * a[0];
    };
    Fixture fx(model);
    Rng rng = make_rng(8181);
    std::uniform_real_distribution<double> zdist(-2.0, 2.0);
    for (int probe = 0; probe < 200; ++probe) {
        double z = zdist(rng);
        auto [a_star, value] = maximize_control_part(fx.model, 0, fx.slice(), fx.mu.view(),
                                                     {&z, 1});
        (void)value;
        detail::HamObjective h(fx.model, 0, fx.slice(), fx.mu.view(), {&z, 1});
        double lo = std::max(-1.0, a_star[0] - 0.05), hi = std::min(1.0, a_star[0] + 0.05);
        double mid = 0.5 * (lo + hi);
        REQUIRE(h({&mid, 1}) >= std::min(h({&lo, 1}), h({&hi, 1})) - 1e-12);
    }
}

TEST_CASE("infinite costs exclude controls; a fully excluded set fails", "[hamiltonian]") {
    // A finite-volume book: only |a| <= 0.5 is available.
    TestModel capped;
    capped.control_reward_fn = [](int, const PathSlice&, const MuView&,
                                  std::span<const double> a) {
        if (std::abs(a[0]) > 0.5) return -std::numeric_limits<double>::infinity();
        return -a[0] * a[0];
    };
    Fixture fx(capped);
    double z = 4.0;  // unconstrained argmax would clip at 1
    auto [a_star, value] = maximize_control_part(fx.model, 0, fx.slice(), fx.mu.view(), {&z, 1});
    REQUIRE(a_star[0] <= 0.5 + 1e-9);
    REQUIRE(std::isfinite(value));

    TestModel empty;
    empty.control_reward_fn = [](int, const PathSlice&, const MuView&, std::span<const double>) {
        return -std::numeric_limits<double>::infinity();
    };
    Fixture fe(empty);
    REQUIRE_THROWS_AS(maximize_control_part(fe.model, 0, fe.slice(), fe.mu.view(), {&z, 1}),
                      SolverError);
}

TEST_CASE("finite control sets are searched exhaustively", "[hamiltonian]") {
    TestModel model;
    model.A = ControlSet::finite({{-1.0}, {-0.25}, {0.5}, {1.0}});
    model.control_reward_fn = [](int, const PathSlice&, const MuView&, std::span<const double> a) {
        return -(a[0] - 0.3) * (a[0] - 0.3);
    };
    model.drift_fn = [](int, const PathSlice&, const MuView&, std::span<const double>,
                        std::span<double> out) { out[0] = 0.0; };
    Fixture fx(model);
    double z = 0.0;
    auto [a_star, value] = maximize_control_part(fx.model, 0, fx.slice(), fx.mu.view(), {&z, 1});
    REQUIRE(a_star[0] == 0.5);
    (void)value;
}
