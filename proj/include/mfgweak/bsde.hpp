#pragma once

#include <cmath>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mfgweak/common.hpp"
#include "mfgweak/hamiltonian.hpp"
#include "mfgweak/measures.hpp"
#include "mfgweak/model.hpp"
#include "mfgweak/paths.hpp"

namespace mfgweak {

// Regression family for the conditional expectations: multivariate state
// monomials up to total degree `degree`, plus the model's extra path
// features. Ridge parameter is ridge_scale * M.
struct RegressionBasis {
    int degree = 3;
    double ridge_scale = 1e-8;
    bool include_extra_features = true;

    // Exponent tuples with total degree <= degree, in graded lexicographic
    // order starting from the constant.
    static std::vector<std::vector<int>> monomials(int dim, int degree) {
        std::vector<std::vector<int>> out;
        std::vector<int> cur(static_cast<std::size_t>(dim), 0);
        std::function<void(int, int)> rec = [&](int i, int left) {
            if (i == dim) {
                out.push_back(cur);
                return;
            }
            for (int p = 0; p <= left; ++p) {
                cur[static_cast<std::size_t>(i)] = p;
                rec(i + 1, left - p);
            }
            cur[static_cast<std::size_t>(i)] = 0;
        };
        rec(0, degree);
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
            int sa = 0, sb = 0;
            for (int v : a) sa += v;
            for (int v : b) sb += v;
            if (sa != sb) return sa < sb;
            return a < b;
        });
        return out;
    }

    int size(const ModelSpec& model) const {
        int n = static_cast<int>(monomials(model.state_dim(), degree).size());
        if (include_extra_features) n += model.num_extra_features();
        return n;
    }
};

// Output of the backward sweep: value and adjoint per (path, step), the
// per-step regression coefficients that realize the adjoint as a function of
// (t, x), and the scalar value estimate (1/M) sum Y[m][0].
struct BsdeSolution {
    TimeGrid grid;
    int num_paths = 0;
    int dim = 0;
    std::vector<double> y;  // [m][k], k = 0..N
    std::vector<double> z;  // [m][k][i], k = 0..N-1
    double value_estimate = 0.0;  // (1/M) sum Y[m][0]
    // Same expectation, far less noise: the martingale control variate
    // (1/M) sum_m [ g + sum_k dt H_k - sum_k Z_k . dW_k ]; the increment sum
    // has mean zero but soaks up the terminal condition's sampling noise.
    double value_estimate_cv = 0.0;
    double value_cv_se = 0.0;

    // Regression surrogate: z_coeffs[k] has basis_size * dim entries, column
    // i holding coefficients of the i-th adjoint component at step k.
    int basis_size = 0;
    std::vector<std::vector<double>> z_coeffs;
    int z_clip_hits = 0;

    double& y_at(int m, int k) { return y[static_cast<std::size_t>(m) * (grid.num_steps + 1) + k]; }
    double y_at(int m, int k) const {
        return y[static_cast<std::size_t>(m) * (grid.num_steps + 1) + k];
    }
    double* z_at(int m, int k) {
        return z.data() + (static_cast<std::size_t>(m) * grid.num_steps + k) * dim;
    }
    const double* z_at(int m, int k) const {
        return z.data() + (static_cast<std::size_t>(m) * grid.num_steps + k) * dim;
    }
};

namespace detail {

inline void eval_basis(const ModelSpec& model, const RegressionBasis& basis,
                       const std::vector<std::vector<int>>& monos, int k, const PathSlice& x,
                       double* out) {
    auto cur = x.current();
    std::size_t j = 0;
    for (const auto& expo : monos) {
        double v = 1.0;
        for (int i = 0; i < x.dim(); ++i)
            for (int p = 0; p < expo[static_cast<std::size_t>(i)]; ++p)
                v *= cur[static_cast<std::size_t>(i)];
        out[j++] = v;
    }
    if (basis.include_extra_features)
        for (int f = 0; f < model.num_extra_features(); ++f) out[j++] = model.extra_feature(f, k, x);
}

}  // namespace detail

// Backward regression solver for the value BSDE
//   Y_t = g(X, mu) + int_t^T H(s, X, mu, nu_s, Z_s) ds - int_t^T Z_s dW_s.
//
// The sweep runs under the driftless law: the importance weights of mu are
// deliberately NOT applied to the regression -- the equation is driven by the
// Brownian motion of the base measure, and mu and nu enter only through the
// driver H and the terminal condition. (This is the single most error-prone
// point of the whole scheme; see the tests that pin it down.)
//
// Explicit scheme, k = N-1 .. 0:
//   Z[.,k]  <- regression of Y[.,k+1] * dW[.,k] / dt on basis(t_k),
//   Y[.,k]  <- regression of Y[.,k+1] on basis(t_k) + dt * H(t_k, ., Z[.,k]).
inline BsdeSolution solve_bsde(const PathEnsemble& ensemble, const ModelSpec& model,
                               const MuView& mu, const ControlLawFlow& nu,
                               const RegressionBasis& basis, const MaximizeOptions& maxopt = {}) {
    const int M = ensemble.num_paths();
    const int N = ensemble.grid().num_steps;
    const int d = ensemble.dim();
    const double dt = ensemble.grid().dt();

    if (nu.grid.num_steps != N)
        throw UsageError("bsde::solve_bsde: control flow grid mismatch");
    if (dt * model.drift_bound() >= 1.0)
        throw UsageError("bsde::solve_bsde: explicit scheme needs dt * drift_bound < 1, got " +
                         std::to_string(dt * model.drift_bound()));

    const auto monos = RegressionBasis::monomials(d, basis.degree);
    const int B = basis.size(model);
    if (M < 20 * B)
        throw UsageError("bsde::solve_bsde: need at least 20 paths per basis function (M = " +
                         std::to_string(M) + ", basis = " + std::to_string(B) + ")");

    BsdeSolution sol;
    sol.grid = ensemble.grid();
    sol.num_paths = M;
    sol.dim = d;
    sol.basis_size = B;
    sol.y.assign(static_cast<std::size_t>(M) * (N + 1), 0.0);
    sol.z.assign(static_cast<std::size_t>(M) * N * d, 0.0);
    sol.z_coeffs.assign(static_cast<std::size_t>(N), {});

    // Terminal condition, set exactly.
    for (int m = 0; m < M; ++m) {
        double g = model.terminal_reward(ensemble.full_path(m), mu);
        if (!std::isfinite(g))
            throw ModelContractViolation("bsde::solve_bsde: non-finite terminal reward on path " +
                                         std::to_string(m));
        sol.y_at(m, N) = g;
    }

    const double z_clip = 1e6;
    Eigen::MatrixXd phi(M, B);
    Eigen::MatrixXd targets(M, d);
    std::vector<double> cv(static_cast<std::size_t>(M), 0.0);  // sum dt H - Z.dW per path

    for (int k = N - 1; k >= 0; --k) {
        // Design matrix at step k.
        parallel_for(static_cast<std::size_t>(M), [&](std::size_t lo, std::size_t hi) {
            std::vector<double> row(static_cast<std::size_t>(B));
            for (std::size_t m = lo; m < hi; ++m) {
                PathSlice slice = ensemble.slice(static_cast<int>(m), k);
                detail::eval_basis(model, basis, monos, k, slice, row.data());
                for (int b = 0; b < B; ++b) phi(static_cast<Eigen::Index>(m), b) = row[static_cast<std::size_t>(b)];
            }
        });

        Eigen::MatrixXd gram = phi.transpose() * phi;
        const double ridge = basis.ridge_scale * static_cast<double>(M);
        // The constant basis function stays unpenalized so conditional
        // expectations of constants are reproduced exactly.
        for (int b = 1; b < B; ++b) gram(b, b) += ridge;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
        if (ldlt.info() != Eigen::Success)
            throw SolverError("bsde::solve_bsde: regression failed at step " + std::to_string(k));

        // Conditional expectation of Y_{k+1} first; the adjoint regression
        // then uses the centered target (Y_{k+1} - E[Y_{k+1}|X_k]) dW / dt,
        // which has the same conditional mean as Y_{k+1} dW / dt but far less
        // variance (the centering term is X_k-measurable).
        Eigen::VectorXd ynext(M);
        for (int m = 0; m < M; ++m) ynext(m) = sol.y_at(m, k + 1);
        Eigen::VectorXd coef_y = ldlt.solve(phi.transpose() * ynext);
        Eigen::VectorXd ce = phi * coef_y;

        for (int m = 0; m < M; ++m) {
            const double centered = ynext(m) - ce(m);
            const double* dw = ensemble.increment_ptr(m, k);
            for (int i = 0; i < d; ++i) targets(m, i) = centered * dw[i] / dt;
        }
        Eigen::MatrixXd coef = ldlt.solve(phi.transpose() * targets);
        if (!coef.allFinite() || !coef_y.allFinite())
            throw SolverError("bsde::solve_bsde: rank-deficient regression at step " +
                              std::to_string(k));

        // Store the adjoint surrogate for closed-loop reuse on fresh paths.
        auto& zc = sol.z_coeffs[static_cast<std::size_t>(k)];
        zc.resize(static_cast<std::size_t>(B) * d);
        for (int i = 0; i < d; ++i)
            for (int b = 0; b < B; ++b) zc[static_cast<std::size_t>(i) * B + b] = coef(b, i);

        // Predictions and driver update.
        Eigen::MatrixXd pred = phi * coef;  // columns 0..d-1: Z components
        std::string failure;
        std::mutex failure_mu;
        std::atomic<int> clip_hits{0};
        parallel_for(static_cast<std::size_t>(M), [&](std::size_t lo, std::size_t hi) {
            std::vector<double> z(static_cast<std::size_t>(d));
            for (std::size_t m = lo; m < hi; ++m) {
                for (int i = 0; i < d; ++i) {
                    double zi = pred(static_cast<Eigen::Index>(m), i);
                    if (std::abs(zi) > z_clip) {
                        zi = std::clamp(zi, -z_clip, z_clip);
                        clip_hits.fetch_add(1);
                    }
                    z[static_cast<std::size_t>(i)] = zi;
                    sol.z_at(static_cast<int>(m), k)[i] = zi;
                }
                PathSlice slice = ensemble.slice(static_cast<int>(m), k);
                try {
                    auto [a_star, H] =
                        maximize_hamiltonian(model, k, slice, mu, nu.view(k), z, maxopt);
                    (void)a_star;
                    if (!std::isfinite(H))
                        throw ModelContractViolation(
                            "bsde::solve_bsde: non-finite driver at step " + std::to_string(k));
                    sol.y_at(static_cast<int>(m), k) = ce(static_cast<Eigen::Index>(m)) + dt * H;
                    const double* dw = ensemble.increment_ptr(static_cast<int>(m), k);
                    double zdw = 0.0;
                    for (int i = 0; i < d; ++i) zdw += z[static_cast<std::size_t>(i)] * dw[i];
                    cv[m] += dt * H - zdw;
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(failure_mu);
                    if (failure.empty()) failure = e.what();
                    return;
                }
            }
        });
        if (!failure.empty()) throw SolverError(failure);
        sol.z_clip_hits += clip_hits.load();
    }
    if (sol.z_clip_hits > 0)
        std::cerr << "[bsde] warning: adjoint clipped on " << sol.z_clip_hits
                  << " (path, step) pairs\n";

    double v = 0.0;
    for (int m = 0; m < M; ++m) v += sol.y_at(m, 0);
    sol.value_estimate = v / static_cast<double>(M);
    for (int m = 0; m < M; ++m) cv[static_cast<std::size_t>(m)] += sol.y_at(m, N);
    auto [cv_mean, cv_se] = mean_and_se(cv);
    sol.value_estimate_cv = cv_mean;
    sol.value_cv_se = cv_se;
    return sol;
}

// The optimal closed-loop control induced by a solved BSDE: evaluate the
// regression surrogate of Z at (t_k, x) and maximize the Hamiltonian there.
// Usable on fresh paths, not just the training ensemble.
inline ClosedLoopPolicy optimal_policy(const BsdeSolution& sol, const ModelSpec& model,
                                       const MuView& mu, const RegressionBasis& basis,
                                       const MaximizeOptions& maxopt = {}) {
    auto monos = RegressionBasis::monomials(model.state_dim(), basis.degree);
    const int B = sol.basis_size;
    const int d = model.state_dim();
    if (B <= 0 || sol.z_coeffs.empty())
        throw UsageError("bsde::optimal_policy: solution carries no regression surrogate");

    ClosedLoopPolicy p;
    p.adim = model.control_set().dim();
    p.eval = [&model, mu, basis, maxopt, monos = std::move(monos), B, d,
              coeffs = sol.z_coeffs](int k, const PathSlice& x, std::span<double> a_out) {
        if (k < 0 || k >= static_cast<int>(coeffs.size()))
            throw UsageError("bsde::optimal_policy: step index out of range");
        std::vector<double> row(static_cast<std::size_t>(B));
        detail::eval_basis(model, basis, monos, k, x, row.data());
        std::vector<double> z(static_cast<std::size_t>(d), 0.0);
        const auto& zc = coeffs[static_cast<std::size_t>(k)];
        for (int i = 0; i < d; ++i) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) acc += zc[static_cast<std::size_t>(i) * B + b] * row[static_cast<std::size_t>(b)];
            z[static_cast<std::size_t>(i)] = std::clamp(acc, -1e6, 1e6);
        }
        auto [a, value] = maximize_control_part(model, k, x, mu, z, maxopt);
        (void)value;
        for (std::size_t i = 0; i < a.size(); ++i) a_out[i] = a[i];
    };
    return p;
}

// Importance-weighted Monte Carlo estimate of the expected reward of a policy
// against frozen (mu, nu): Girsanov weights for the policy, then the weighted
// average of the realized path rewards.
inline double evaluate_reward(const PathEnsemble& ensemble, const ModelSpec& model,
                              const MuView& mu, const ControlLawFlow& nu,
                              const ClosedLoopPolicy& policy, double* standard_error = nullptr) {
    const int M = ensemble.num_paths();
    const int N = ensemble.grid().num_steps;
    const double dt = ensemble.grid().dt();

    WeightedMeasure w = girsanov_weights(ensemble, model, policy, mu);

    std::vector<double> payoff(static_cast<std::size_t>(M), 0.0);
    std::string failure;
    std::mutex failure_mu;
    parallel_for(static_cast<std::size_t>(M), [&](std::size_t lo, std::size_t hi) {
        std::vector<double> a(static_cast<std::size_t>(policy.adim));
        for (std::size_t m = lo; m < hi; ++m) {
            try {
                double acc = 0.0;
                for (int k = 0; k < N; ++k) {
                    PathSlice slice = ensemble.slice(static_cast<int>(m), k);
                    policy.eval(k, slice, a);
                    double f = model.control_reward(k, slice, mu, a) +
                               model.state_reward(k, slice, mu) +
                               model.flow_reward(k, slice, mu, nu.view(k));
                    acc += dt * f;
                }
                acc += model.terminal_reward(ensemble.full_path(static_cast<int>(m)), mu);
                payoff[m] = acc;
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(failure_mu);
                if (failure.empty()) failure = e.what();
                return;
            }
        }
    });
    if (!failure.empty()) throw SolverError(failure);

    std::vector<double> weighted(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) weighted[static_cast<std::size_t>(m)] = w.weights[static_cast<std::size_t>(m)] * payoff[static_cast<std::size_t>(m)];
    auto [mean, se] = mean_and_se(weighted);
    if (standard_error) *standard_error = se;
    return mean;
}

}  // namespace mfgweak
