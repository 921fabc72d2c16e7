#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "mfgweak/bsde.hpp"
#include "mfgweak/common.hpp"
#include "mfgweak/hamiltonian.hpp"
#include "mfgweak/measures.hpp"
#include "mfgweak/model.hpp"
#include "mfgweak/simulate.hpp"

namespace mfgweak {

struct MfgSolveConfig {
    int num_paths = 2000;
    int num_steps = 50;
    double horizon = 1.0;
    std::uint64_t seed = 1;
    int max_iters = 100;
    double damping = 0.5;  // in (0, 1]
    MeasureDiscrepancy tol{1e-3, 1e-3, 1e-3};
    RegressionBasis basis;
    MaximizeOptions maxopt;
    DiscrepancyConfig discrepancy_cfg;  // marginal_steps empty = quartiles
    bool run_pilot_checks = true;

    void validate() const {
        if (!(damping > 0.0 && damping <= 1.0))
            throw UsageError("fixedpoint::MfgSolveConfig: damping must lie in (0, 1]");
        if (!(tol.moment_residual > 0.0 && tol.sliced_w1 > 0.0 && tol.control_flow_residual > 0.0))
            throw UsageError("fixedpoint::MfgSolveConfig: tolerances must be positive");
        if (num_paths < 1 || num_steps < 1 || !(horizon > 0.0))
            throw UsageError("fixedpoint::MfgSolveConfig: invalid ensemble size or grid");
        if (max_iters < 1)
            throw UsageError("fixedpoint::MfgSolveConfig: need at least one iteration");
    }

    TimeGrid grid() const { return TimeGrid(horizon, num_steps); }
    DiscrepancyConfig discrepancy(const TimeGrid& g) const {
        DiscrepancyConfig c = discrepancy_cfg;
        if (c.marginal_steps.empty()) c = DiscrepancyConfig::defaults(g);
        return c;
    }
};

struct MfgDiagnostics {
    double weight_second_moment = 1.0;   // (1/M) sum w^2 of mu-hat
    double psi_second_moment = 0.0;      // empirical E[psi^2(X)] on the ensemble
    double growth_ratio = 0.0;           // max |g| / (psi(x) + int psi dmu) observed
    double prenorm_weight_mean = 1.0;    // raw stochastic-exponential mean, last pushforward
    double prenorm_weight_se = 0.0;
    double bsde_value = 0.0;             // E[Y_0] of the last backward solve
    int z_clip_hits = 0;
    double argmax_diameter_max = 0.0;    // near-optimal set diameter on probes
    bool argmax_diameter_flag = false;   // true when the diameter is material
};

struct MfgSolution {
    std::shared_ptr<const PathEnsemble> ensemble;
    WeightedMeasure mu_hat;
    ControlLawFlow nu_hat;
    ClosedLoopPolicy policy_hat;  // references mu_hat and ensemble; keep the solution alive
    BsdeSolution bsde;
    double value = 0.0;  // importance-weighted realized reward of policy_hat
    std::vector<MeasureDiscrepancy> residual_history;
    bool converged = false;
    MfgDiagnostics diagnostics;
};

namespace detail {

// Mixture of two flows with scalar mass factors, compressed back to m_out
// samples per step: weighted quantile resampling for scalar controls,
// systematic resampling over the concatenated order otherwise. Both are
// deterministic.
inline ControlLawFlow mix_flows(const ControlLawFlow& a, double wa, const ControlLawFlow& b,
                                double wb, int m_out, const ModelSpec& model) {
    if (a.grid.num_steps != b.grid.num_steps || a.adim != b.adim)
        throw UsageError("fixedpoint::mix_flows: incompatible control flows");
    const int N = a.grid.num_steps;
    const int ad = a.adim;
    ControlLawFlow out = ControlLawFlow::empty(a.grid, ad, m_out);

    std::vector<double> vals;
    std::vector<double> wts;
    for (int k = 0; k < N; ++k) {
        const std::size_t na = static_cast<std::size_t>(a.count);
        const std::size_t nb = static_cast<std::size_t>(b.count);
        wts.resize(na + nb);
        for (std::size_t m = 0; m < na; ++m) wts[m] = wa * a.weight_ptr(k)[m];
        for (std::size_t m = 0; m < nb; ++m) wts[na + m] = wb * b.weight_ptr(k)[m];

        if (ad == 1) {
            vals.resize(na + nb);
            for (std::size_t m = 0; m < na; ++m) vals[m] = a.sample_ptr(k, static_cast<int>(m))[0];
            for (std::size_t m = 0; m < nb; ++m) vals[na + m] = b.sample_ptr(k, static_cast<int>(m))[0];
            std::vector<double> q = weighted_quantile_resample(vals, wts, m_out);
            for (int m = 0; m < m_out; ++m) out.sample_ptr(k, m)[0] = q[static_cast<std::size_t>(m)];
        } else {
            std::vector<std::size_t> idx = systematic_resample_indices(wts, m_out);
            for (int m = 0; m < m_out; ++m) {
                std::size_t src = idx[static_cast<std::size_t>(m)];
                const double* from = src < na ? a.sample_ptr(k, static_cast<int>(src))
                                              : b.sample_ptr(k, static_cast<int>(src - na));
                std::copy(from, from + ad, out.sample_ptr(k, m));
            }
        }
    }
    out.rebuild_feature_means(model);
    return out;
}

}  // namespace detail

// Pilot self-checks on a small ensemble before the real solve: the drift
// ratio bound on random control probes, finiteness of the growth gauge's
// second moment, and an empirical constant for the growth envelope of the
// rewards. Violations of the declared bound throw; the moments are reported.
inline void pilot_check(const ModelSpec& model, const TimeGrid& grid, std::uint64_t seed,
                        MfgDiagnostics* diag = nullptr) {
    const int M = 128;
    PathEnsemble pilot = simulate_driftless(model, grid, M, derive_seed(seed, 0x70696c6fULL));
    WeightedMeasure mu = WeightedMeasure::driftless(pilot);
    MuView view = mu.view();

    Rng rng = make_rng(derive_seed(seed, 0x70696c6f32ULL));
    std::uniform_int_distribution<int> pick_m(0, M - 1);
    std::uniform_int_distribution<int> pick_k(0, grid.num_steps - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const ControlSet& A = model.control_set();
    std::vector<double> a(static_cast<std::size_t>(A.dim()));
    std::vector<double> th(static_cast<std::size_t>(model.state_dim()));
    for (int probe = 0; probe < 256; ++probe) {
        int m = pick_m(rng), k = pick_k(rng);
        if (A.kind() == ControlSet::Kind::Box) {
            for (int i = 0; i < A.dim(); ++i) {
                auto ii = static_cast<std::size_t>(i);
                a[ii] = A.lower()[ii] + unif(rng) * (A.upper()[ii] - A.lower()[ii]);
            }
        } else {
            std::uniform_int_distribution<std::size_t> pick_a(0, A.points().size() - 1);
            a = A.points()[pick_a(rng)];
        }
        eval_theta_checked(model, k, pilot.slice(m, k), view, a, th);
    }

    double psi2 = 0.0, ratio = 0.0, psi_mean = 0.0;
    std::vector<double> psis(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) {
        double psi = model.growth_gauge(pilot.full_path(m));
        psis[static_cast<std::size_t>(m)] = psi;
        psi2 += psi * psi;
        psi_mean += psi;
    }
    psi2 /= static_cast<double>(M);
    psi_mean /= static_cast<double>(M);
    if (!std::isfinite(psi2))
        throw ModelContractViolation(
            "fixedpoint::pilot_check: growth gauge second moment is not finite");
    for (int m = 0; m < M; ++m) {
        double g = std::abs(model.terminal_reward(pilot.full_path(m), view));
        ratio = std::max(ratio, g / (psis[static_cast<std::size_t>(m)] + psi_mean));
    }
    if (diag) {
        diag->psi_second_moment = psi2;
        diag->growth_ratio = ratio;
    }
}

// Diameter of the near-optimal control set on random (path, step) probes of
// the final iterate; a large diameter means the maximizer selection (and so
// the computed equilibrium) leans on the tie-breaking rule.
inline void argmax_diameter_probe(const ModelSpec& model, const PathEnsemble& ensemble,
                                  const MuView& mu, const BsdeSolution& sol,
                                  MfgDiagnostics& diag, std::uint64_t seed) {
    const ControlSet& A = model.control_set();
    if (A.kind() != ControlSet::Kind::Box) return;
    const int ad = A.dim();
    double a_diam = 0.0;
    for (int i = 0; i < ad; ++i)
        a_diam = std::max(a_diam, A.upper()[static_cast<std::size_t>(i)] -
                                      A.lower()[static_cast<std::size_t>(i)]);
    if (a_diam <= 0.0) return;

    Rng rng = make_rng(derive_seed(seed, 0x6469616dULL));
    std::uniform_int_distribution<int> pick_m(0, ensemble.num_paths() - 1);
    std::uniform_int_distribution<int> pick_k(0, ensemble.grid().num_steps - 1);
    const int probes = 128, G = 65;
    int flagged = 0;
    std::vector<double> a(static_cast<std::size_t>(ad));
    std::vector<double> th(static_cast<std::size_t>(model.state_dim()));
    for (int p = 0; p < probes; ++p) {
        int m = pick_m(rng), k = pick_k(rng);
        PathSlice slice = ensemble.slice(m, k);
        const double* z = sol.z_at(m, k);
        std::span<const double> zs(z, static_cast<std::size_t>(model.state_dim()));
        // Scan a coarse grid of the box, collect near-optimal points.
        double best = -std::numeric_limits<double>::infinity();
        std::vector<int> idx(static_cast<std::size_t>(ad), 0);
        std::vector<double> hvals;
        std::vector<std::vector<double>> pts;
        for (;;) {
            for (int i = 0; i < ad; ++i) {
                auto ii = static_cast<std::size_t>(i);
                a[ii] = A.lower()[ii] + (A.upper()[ii] - A.lower()[ii]) *
                                            static_cast<double>(idx[ii]) / (G - 1);
            }
            double r = model.control_reward(k, slice, mu, a);
            if (std::isfinite(r)) {
                model.theta(k, slice, mu, a, th);
                for (int i = 0; i < model.state_dim(); ++i)
                    r += zs[static_cast<std::size_t>(i)] * th[static_cast<std::size_t>(i)];
                hvals.push_back(r);
                pts.push_back(a);
                best = std::max(best, r);
            }
            int i = ad - 1;
            while (i >= 0 && ++idx[static_cast<std::size_t>(i)] == G) {
                idx[static_cast<std::size_t>(i)] = 0;
                --i;
            }
            if (i < 0) break;
        }
        double diam = 0.0;
        for (std::size_t u = 0; u < pts.size(); ++u) {
            if (hvals[u] < best - 1e-9) continue;
            for (std::size_t v = u + 1; v < pts.size(); ++v) {
                if (hvals[v] < best - 1e-9) continue;
                double d2 = 0.0;
                for (int i = 0; i < ad; ++i) {
                    double di = pts[u][static_cast<std::size_t>(i)] - pts[v][static_cast<std::size_t>(i)];
                    d2 += di * di;
                }
                diam = std::max(diam, std::sqrt(d2));
            }
        }
        diag.argmax_diameter_max = std::max(diag.argmax_diameter_max, diam);
        if (diam > 0.05 * a_diam) ++flagged;
    }
    diag.argmax_diameter_flag = flagged > probes / 100;
}

// The equilibrium driver: simulate the fixed ensemble once, then iterate
//   solve the value BSDE at (mu_i, nu_i)  ->  extract the closed-loop policy
//   ->  push (mu_i, policy) forward       ->  damped update of (mu, nu)
// until the discrepancy between consecutive iterates is below tolerance.
// Non-convergence is a reported outcome, not an exception: the best iterate
// comes back with converged = false.
inline MfgSolution solve_mfg(const ModelSpec& model, const MfgSolveConfig& cfg) {
    cfg.validate();
    const TimeGrid grid = cfg.grid();
    const DiscrepancyConfig disc = cfg.discrepancy(grid);

    MfgSolution sol;
    if (cfg.run_pilot_checks) pilot_check(model, grid, cfg.seed, &sol.diagnostics);

    sol.ensemble = std::make_shared<PathEnsemble>(
        simulate_driftless(model, grid, cfg.num_paths, cfg.seed));
    const PathEnsemble& ensemble = *sol.ensemble;
    const int M = cfg.num_paths;

    // mu_0: the driftless law. nu_0: the flow pushed forward by the maximizer
    // at zero adjoint.
    WeightedMeasure mu_cur = WeightedMeasure::driftless(ensemble);
    ControlLawFlow nu_cur;
    {
        ClosedLoopPolicy p0 = policy_from_z(
            model, mu_cur.view(),
            [](int, const PathSlice&, std::span<double> z) {
                for (double& zi : z) zi = 0.0;
            },
            cfg.maxopt);
        auto [mu_p0, nu0] = pushforward_measure(ensemble, model, p0, mu_cur.view());
        (void)mu_p0;
        nu_cur = std::move(nu0);
    }

    BsdeSolution bsde_cur;
    double best_residual = std::numeric_limits<double>::infinity();
    WeightedMeasure mu_best;
    ControlLawFlow nu_best;
    BsdeSolution bsde_best;
    GirsanovStats stats;

    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        bsde_cur = solve_bsde(ensemble, model, mu_cur.view(), nu_cur, cfg.basis, cfg.maxopt);
        ClosedLoopPolicy policy = optimal_policy(bsde_cur, model, mu_cur.view(), cfg.basis,
                                                 cfg.maxopt);
        auto [mu_star, nu_star] = pushforward_measure(ensemble, model, policy, mu_cur.view(),
                                                      &stats);

        // Damped update: convex combination of densities stays a density.
        WeightedMeasure mu_next;
        mu_next.ensemble = &ensemble;
        mu_next.weights.resize(static_cast<std::size_t>(M));
        const double lam = cfg.damping;
        for (int m = 0; m < M; ++m)
            mu_next.weights[static_cast<std::size_t>(m)] =
                (1.0 - lam) * mu_cur.weights[static_cast<std::size_t>(m)] +
                lam * mu_star.weights[static_cast<std::size_t>(m)];
        mu_next.validate("fixedpoint::solve_mfg");
        ControlLawFlow nu_next = detail::mix_flows(nu_cur, 1.0 - lam, nu_star, lam, M, model);

        MeasureDiscrepancy res = discrepancy(mu_next, mu_cur, nu_next, nu_cur, disc, &model);
        sol.residual_history.push_back(res);

        mu_cur = std::move(mu_next);
        nu_cur = std::move(nu_next);

        if (res.max_component() < best_residual) {
            best_residual = res.max_component();
            mu_best = mu_cur;
            nu_best = nu_cur;
            bsde_best = bsde_cur;
        }
        if (res.within(cfg.tol)) {
            sol.converged = true;
            break;
        }
    }

    if (!sol.converged && best_residual < std::numeric_limits<double>::infinity()) {
        mu_cur = std::move(mu_best);
        nu_cur = std::move(nu_best);
        bsde_cur = std::move(bsde_best);
    }

    sol.mu_hat = std::move(mu_cur);
    sol.nu_hat = std::move(nu_cur);
    sol.bsde = std::move(bsde_cur);
    sol.policy_hat = optimal_policy(sol.bsde, model, sol.mu_hat.view(), cfg.basis, cfg.maxopt);
    double se = 0.0;
    sol.value = evaluate_reward(ensemble, model, sol.mu_hat.view(), sol.nu_hat, sol.policy_hat,
                                &se);
    sol.diagnostics.weight_second_moment = sol.mu_hat.second_moment();
    sol.diagnostics.prenorm_weight_mean = stats.prenorm_mean;
    sol.diagnostics.prenorm_weight_se = stats.prenorm_se;
    sol.diagnostics.bsde_value = sol.bsde.value_estimate;
    sol.diagnostics.z_clip_hits = sol.bsde.z_clip_hits;
    argmax_diameter_probe(model, ensemble, sol.mu_hat.view(), sol.bsde, sol.diagnostics,
                          cfg.seed);
    return sol;
}

// One line of the uniqueness-condition report.
struct MonotonicityResult {
    double estimate = 0.0;  // weighted MC estimate of the pairing integral
    double stderr_ = 0.0;
    bool violated = false;  // estimate > 3 standard errors
};

// Monte Carlo check of the monotonicity pairing
//   int [ g(x,mu) - g(x,mu') + int_0^T (f1(t,x,mu) - f1(t,x,mu')) dt ] d(mu - mu')(x) <= 0
// on given measure pairs (f1 here is the control-free coupling part of the
// running reward). A positive estimate beyond 3 standard errors flags the
// pair.
inline std::vector<MonotonicityResult> check_monotonicity(
    const ModelSpec& model,
    const std::vector<std::pair<const WeightedMeasure*, const WeightedMeasure*>>& pairs) {
    std::vector<MonotonicityResult> out;
    out.reserve(pairs.size());
    for (const auto& [mua, mub] : pairs) {
        if (mua->ensemble != mub->ensemble)
            throw UsageError("fixedpoint::check_monotonicity: pair on different ensembles");
        const PathEnsemble& e = *mua->ensemble;
        const int M = e.num_paths();
        const int N = e.grid().num_steps;
        const double dt = e.grid().dt();
        MuView va = mua->view(), vb = mub->view();

        std::vector<double> samples(static_cast<std::size_t>(M));
        parallel_for(static_cast<std::size_t>(M), [&](std::size_t lo, std::size_t hi) {
            for (std::size_t m = lo; m < hi; ++m) {
                PathSlice path = e.full_path(static_cast<int>(m));
                double G = model.terminal_reward(path, va) - model.terminal_reward(path, vb);
                for (int k = 0; k < N; ++k) {
                    PathSlice slice = e.slice(static_cast<int>(m), k);
                    G += dt * (model.state_reward(k, slice, va) - model.state_reward(k, slice, vb));
                }
                samples[m] = (mua->weights[m] - mub->weights[m]) * G;
            }
        });
        auto [mean, se] = mean_and_se(samples);
        MonotonicityResult r;
        r.estimate = mean;
        r.stderr_ = se;
        r.violated = mean > 3.0 * se;
        out.push_back(r);
    }
    return out;
}

// A posteriori certificate: apply the map once more, undamped, at the
// reported solution and measure the displacement. Pass-through for
// non-converged solutions.
inline MeasureDiscrepancy fixed_point_residual_certificate(const MfgSolution& sol,
                                                           const ModelSpec& model,
                                                           const MfgSolveConfig& cfg) {
    const PathEnsemble& ensemble = *sol.ensemble;
    const DiscrepancyConfig disc = cfg.discrepancy(ensemble.grid());
    BsdeSolution bsde = solve_bsde(ensemble, model, sol.mu_hat.view(), sol.nu_hat, cfg.basis,
                                   cfg.maxopt);
    ClosedLoopPolicy policy = optimal_policy(bsde, model, sol.mu_hat.view(), cfg.basis,
                                             cfg.maxopt);
    auto [mu_star, nu_star] = pushforward_measure(ensemble, model, policy, sol.mu_hat.view());
    return discrepancy(mu_star, sol.mu_hat, nu_star, sol.nu_hat, disc, &model);
}

}  // namespace mfgweak
