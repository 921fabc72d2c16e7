#pragma once

#include <cmath>
#include <mutex>
#include <string>
#include <vector>

#include "mfgweak/bsde.hpp"
#include "mfgweak/common.hpp"
#include "mfgweak/measures.hpp"
#include "mfgweak/model.hpp"
#include "mfgweak/simulate.hpp"

namespace mfgweak {

// One rollout of the finite game under distributed strategies: n players,
// each driven by the shared closed-loop policy applied to his own path, with
// realized rewards computed against the empirical measure mu^n and the
// empirical control flow q^n (both with the player's own contribution
// included).
struct NPlayerRun {
    int n = 0;
    int rollout = 0;
    PathArray paths;          // n controlled paths (strong Euler simulation)
    ControlLawFlow controls;  // empirical q^n, unit weights
    std::vector<double> rewards;  // realized J per player

    MuView empirical_measure() const { return MuView(paths, nullptr); }
};

// Simulate rollouts of the n-player game. Requires a drift without mean-field
// term (distributed play needs each path to be simulatable on its own).
// Player streams are keyed by (seed, rollout, player) and do not depend on n,
// so sweeps over n reuse the same player noise.
inline std::vector<NPlayerRun> simulate_nplayer(const ModelSpec& model,
                                                const ClosedLoopPolicy& policy, int n,
                                                int num_rollouts, const TimeGrid& grid,
                                                std::uint64_t seed) {
    if (n < 1) throw UsageError("nplayer::simulate_nplayer: need at least one player");
    if (model.drift_has_mean_field())
        throw UsageError("nplayer::simulate_nplayer: model " + model.name() +
                         " has a mean-field drift; distributed strategies are not supported");
    const int d = model.state_dim();
    const int N = grid.num_steps;
    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    const int adim = model.control_set().dim();

    std::vector<NPlayerRun> runs(static_cast<std::size_t>(num_rollouts));
    for (int r = 0; r < num_rollouts; ++r) {
        NPlayerRun& run = runs[static_cast<std::size_t>(r)];
        run.n = n;
        run.rollout = r;
        run.paths = PathArray(grid, n, d);
        run.controls = ControlLawFlow::empty(grid, adim, n);

        std::string failure;
        std::mutex failure_mu;
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
            std::vector<double> a(static_cast<std::size_t>(adim));
            std::vector<double> b(static_cast<std::size_t>(d));
            std::vector<double> sigma(static_cast<std::size_t>(d) * d);
            std::vector<double> dw(static_cast<std::size_t>(d));
            MuView no_mu;  // drift is mean-field free by precondition
            for (std::size_t i = lo; i < hi; ++i) {
                Rng rng = make_rng(derive_seed(seed, 0x6e706c61ULL,
                                               static_cast<std::uint64_t>(r),
                                               static_cast<std::uint64_t>(i)));
                std::normal_distribution<double> gauss(0.0, 1.0);
                auto x0 = run.paths.mutable_state(static_cast<int>(i), 0);
                model.sample_initial(rng, x0);
                try {
                    for (int k = 0; k < N; ++k) {
                        PathSlice slice(run.paths, static_cast<int>(i), k);
                        policy.eval(k, slice, a);
                        std::copy(a.begin(), a.end(),
                                  run.controls.sample_ptr(k, static_cast<int>(i)));
                        model.drift(k, slice, no_mu, a, b);
                        model.volatility(k, slice, sigma);
                        for (int u = 0; u < d; ++u) dw[static_cast<std::size_t>(u)] = sqrt_dt * gauss(rng);
                        auto xk = run.paths.state(static_cast<int>(i), k);
                        auto xn = run.paths.mutable_state(static_cast<int>(i), k + 1);
                        for (int u = 0; u < d; ++u) {
                            double diff = 0.0;
                            for (int v = 0; v < d; ++v)
                                diff += sigma[static_cast<std::size_t>(u) * d + v] * dw[static_cast<std::size_t>(v)];
                            xn[static_cast<std::size_t>(u)] =
                                xk[static_cast<std::size_t>(u)] + b[static_cast<std::size_t>(u)] * dt + diff;
                        }
                    }
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(failure_mu);
                    if (failure.empty()) failure = e.what();
                    return;
                }
            }
        });
        if (!failure.empty()) throw SimulationError(failure);

        run.paths.build_iota();
        run.controls.rebuild_feature_means(model);

        // Realized rewards against the empirical environment.
        run.rewards.assign(static_cast<std::size_t>(n), 0.0);
        MuView mu_n = run.empirical_measure();
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                double acc = 0.0;
                for (int k = 0; k < N; ++k) {
                    PathSlice slice(run.paths, static_cast<int>(i), k);
                    std::span<const double> a(run.controls.sample_ptr(k, static_cast<int>(i)),
                                              static_cast<std::size_t>(adim));
                    acc += dt * (model.control_reward(k, slice, mu_n, a) +
                                 model.state_reward(k, slice, mu_n) +
                                 model.flow_reward(k, slice, mu_n, run.controls.view(k)));
                }
                PathSlice full(run.paths, static_cast<int>(i), N);
                acc += model.terminal_reward(full, mu_n);
                run.rewards[i] = acc;
            }
        });
    }
    return runs;
}

// The equilibrium pair a finite-game estimate is measured against: the
// distributed policy and the frozen limit environment it was solved in.
struct EquilibriumRefs {
    const ClosedLoopPolicy* policy = nullptr;
    MuView mu;                           // limit law (solve ensemble backed)
    const ControlLawFlow* nu = nullptr;  // limit control flow
};

// Finite-game deviation report for one player count.
//
//   j_eq        realized reward under all-distributed strategies
//               (player-averaged; players are exchangeable).
//   j_br        value of the deviating player's control problem with the
//               empirical (mu^n, q^n) frozen: backward solve on a fresh
//               training ensemble, realized out-of-sample on an evaluation
//               ensemble.
//   gap         j_br - j_eq, the headline deviation gain. Its two terms are
//               estimated from independent randomness, so its noise floor is
//               se_eq; reopt_gain below is the paired low-noise version.
//   reopt_gain  j_br minus the equilibrium policy's reward against the same
//               frozen empirical environment on the same evaluation ensemble
//               (common random numbers); nonnegative up to solver noise.
//   epsilon_hat the approximation discrepancy driving the Nash bound: twice
//               the largest probe-policy reward difference between the
//               empirical and the limit environment, paired on the same
//               evaluation ensemble. This is the quantity with the root-n
//               decay; the per-rollout samples are kept so a sweep over n can
//               difference them pairwise.
struct EpsilonGapEstimate {
    double j_eq = 0.0, se_eq = 0.0;
    double j_br = 0.0, se_br = 0.0;
    double j_eq_frozen = 0.0;  // equilibrium policy vs frozen empirical env
    double gap = 0.0, se_gap = 0.0;
    double reopt_gain = 0.0, se_reopt = 0.0;
    double epsilon_hat = 0.0, se_epsilon = 0.0;
    double j_br_bsde = 0.0;  // backward-solver value estimate, diagnostic
    std::vector<double> epsilon_samples;  // one per rollout, matched order
};

struct BestResponseConfig {
    int num_paths = 2000;  // fresh ensemble size for the frozen problem
    RegressionBasis basis;
    MaximizeOptions maxopt;
    std::uint64_t seed = 1;
};

inline EpsilonGapEstimate best_response_gap(const ModelSpec& model,
                                            const std::vector<NPlayerRun>& runs,
                                            const EquilibriumRefs& eq_refs,
                                            const BestResponseConfig& cfg) {
    if (runs.empty()) throw UsageError("nplayer::best_response_gap: no rollouts given");
    if (runs.front().n < 2)
        throw UsageError("nplayer::best_response_gap: need at least two players");
    if (!eq_refs.policy || !eq_refs.nu)
        throw UsageError("nplayer::best_response_gap: equilibrium references are required");

    std::vector<double> eq, br, gaps, gains, eqf, eps, br_bsde;
    for (const NPlayerRun& run : runs) {
        double jeq = 0.0;
        for (double v : run.rewards) jeq += v;
        jeq /= static_cast<double>(run.n);

        // Fresh ensembles for the deviating player, keyed by the rollout only
        // so sweeps over n share them: one to train the best response, one to
        // realize rewards out of sample.
        const std::uint64_t rr = static_cast<std::uint64_t>(run.rollout);
        PathEnsemble train = simulate_driftless(model, run.paths.grid(), cfg.num_paths,
                                                derive_seed(cfg.seed, 0x62727472ULL, rr));
        PathEnsemble eval = simulate_driftless(model, run.paths.grid(), cfg.num_paths,
                                               derive_seed(cfg.seed, 0x62726576ULL, rr));
        MuView mu_n = run.empirical_measure();
        BsdeSolution sol = solve_bsde(train, model, mu_n, run.controls, cfg.basis, cfg.maxopt);
        ClosedLoopPolicy br_policy = optimal_policy(sol, model, mu_n, cfg.basis, cfg.maxopt);

        // All probe rewards on the shared evaluation ensemble.
        double jbr = evaluate_reward(eval, model, mu_n, run.controls, br_policy);
        double jeq_frozen = evaluate_reward(eval, model, mu_n, run.controls, *eq_refs.policy);
        double jbr_limit = evaluate_reward(eval, model, eq_refs.mu, *eq_refs.nu, br_policy);
        double jeq_limit = evaluate_reward(eval, model, eq_refs.mu, *eq_refs.nu,
                                           *eq_refs.policy);

        eq.push_back(jeq);
        br.push_back(jbr);
        gaps.push_back(jbr - jeq);
        gains.push_back(jbr - jeq_frozen);
        eqf.push_back(jeq_frozen);
        eps.push_back(2.0 * std::max(std::abs(jeq_frozen - jeq_limit),
                                     std::abs(jbr - jbr_limit)));
        br_bsde.push_back(sol.value_estimate);
    }
    EpsilonGapEstimate out;
    std::tie(out.j_eq, out.se_eq) = mean_and_se(eq);
    std::tie(out.j_br, out.se_br) = mean_and_se(br);
    std::tie(out.gap, out.se_gap) = mean_and_se(gaps);
    std::tie(out.reopt_gain, out.se_reopt) = mean_and_se(gains);
    std::tie(out.epsilon_hat, out.se_epsilon) = mean_and_se(eps);
    auto [meqf, seqf] = mean_and_se(eqf);
    (void)seqf;
    out.j_eq_frozen = meqf;
    auto [mbsde, sebsde] = mean_and_se(br_bsde);
    (void)sebsde;
    out.j_br_bsde = mbsde;
    out.epsilon_samples = std::move(eps);
    return out;
}

struct RatePoint {
    int n = 0;
    EpsilonGapEstimate gap;
};

struct RateReport {
    std::vector<RatePoint> points;
    double slope = 0.0;     // least-squares slope of log epsilon_hat vs log n
    double slope_se = 0.0;  // standard error of the slope
    double slope_ci_lo = 0.0;
    double slope_ci_hi = 0.0;
    bool slope_meaningful = false;  // false when estimates sit at the noise floor
    // Paired adjacent comparisons: mean and standard error of the per-rollout
    // difference epsilon(n_i) - epsilon(n_{i+1}); rollouts share player noise
    // across n, so pairing removes most of the common variation.
    std::vector<std::pair<double, double>> adjacent_drops;
};

// Sweep the player count and fit the decay rate of the deviation estimate.
inline RateReport rate_sweep(const ModelSpec& model, const EquilibriumRefs& eq_refs,
                             const std::vector<int>& n_list, int rollouts, const TimeGrid& grid,
                             const BestResponseConfig& cfg, std::uint64_t seed) {
    if (n_list.size() < 2)
        throw UsageError("nplayer::rate_sweep: need at least two player counts");
    for (std::size_t i = 1; i < n_list.size(); ++i)
        if (n_list[i] <= n_list[i - 1])
            throw UsageError("nplayer::rate_sweep: player counts must be increasing");

    RateReport report;
    for (int n : n_list) {
        std::vector<NPlayerRun> runs =
            simulate_nplayer(model, *eq_refs.policy, n, rollouts, grid, seed);
        RatePoint pt;
        pt.n = n;
        pt.gap = best_response_gap(model, runs, eq_refs, cfg);
        report.points.push_back(pt);
    }

    for (std::size_t i = 0; i + 1 < report.points.size(); ++i) {
        const auto& a = report.points[i].gap.epsilon_samples;
        const auto& b = report.points[i + 1].gap.epsilon_samples;
        std::vector<double> diff(a.size());
        for (std::size_t r = 0; r < a.size(); ++r) diff[r] = a[r] - b[r];
        report.adjacent_drops.push_back(mean_and_se(diff));
    }

    bool positive = true;
    bool above_noise = false;
    for (const RatePoint& pt : report.points) {
        if (!(pt.gap.epsilon_hat > 0.0)) positive = false;
        if (pt.gap.epsilon_hat > 3.0 * pt.gap.se_epsilon) above_noise = true;
    }
    report.slope_meaningful = positive && above_noise;
    if (positive) {
        // OLS of log(epsilon) on log(n).
        const std::size_t K = report.points.size();
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (const RatePoint& pt : report.points) {
            double x = std::log(static_cast<double>(pt.n)), y = std::log(pt.gap.epsilon_hat);
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        double kd = static_cast<double>(K);
        double denom = kd * sxx - sx * sx;
        report.slope = (kd * sxy - sx * sy) / denom;
        double intercept = (sy - report.slope * sx) / kd;
        double ss = 0.0;
        for (const RatePoint& pt : report.points) {
            double x = std::log(static_cast<double>(pt.n)), y = std::log(pt.gap.epsilon_hat);
            double resid = y - intercept - report.slope * x;
            ss += resid * resid;
        }
        if (K > 2) {
            double sigma2 = ss / (kd - 2.0);
            report.slope_se = std::sqrt(sigma2 * kd / denom);
        }
        report.slope_ci_lo = report.slope - 2.0 * report.slope_se;
        report.slope_ci_hi = report.slope + 2.0 * report.slope_se;
    }
    return report;
}

}  // namespace mfgweak
