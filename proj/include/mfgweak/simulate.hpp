#pragma once

#include <cmath>
#include <mutex>
#include <string>
#include <vector>

#include "mfgweak/common.hpp"
#include "mfgweak/model.hpp"
#include "mfgweak/paths.hpp"

namespace mfgweak {

// Euler scheme for dX = sigma(t, X) dW, X_0 ~ lambda_0. The ensemble keeps
// the increments that were used, so the recursion can be replayed exactly.
// Each path draws from its own stream derived from (seed, m); the result is
// a pure function of (model, grid, M, seed).
inline PathEnsemble simulate_driftless(const ModelSpec& model, const TimeGrid& grid, int num_paths,
                                       std::uint64_t seed) {
    if (num_paths < 1)
        throw UsageError("paths::simulate_driftless: need at least one path");
    const int d = model.state_dim();
    const int N = grid.num_steps;
    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);

    PathEnsemble::Builder b;
    b.paths = PathArray(grid, num_paths, d);
    b.increments.assign(static_cast<std::size_t>(num_paths) * N * d, 0.0);
    b.initial.assign(static_cast<std::size_t>(num_paths) * d, 0.0);
    b.seed = seed;

    std::string failure;
    std::mutex failure_mu;

    auto run_path = [&](int m) {
        Rng rng = make_rng(derive_seed(seed, 0x70617468ULL, static_cast<std::uint64_t>(m)));
        std::normal_distribution<double> gauss(0.0, 1.0);

        auto x0 = b.paths.mutable_state(m, 0);
        model.sample_initial(rng, x0);
        for (int i = 0; i < d; ++i)
            b.initial[static_cast<std::size_t>(m) * d + i] = x0[static_cast<std::size_t>(i)];

        std::vector<double> sigma(static_cast<std::size_t>(d) * d, 0.0);
        for (int k = 0; k < N; ++k) {
            double* dw = b.increments.data() + (static_cast<std::size_t>(m) * N + k) * d;
            for (int i = 0; i < d; ++i) dw[i] = sqrt_dt * gauss(rng);

            PathSlice slice(b.paths, m, k);
            model.volatility(k, slice, sigma);
            for (double s : sigma) {
                if (!std::isfinite(s)) {
                    std::lock_guard<std::mutex> lock(failure_mu);
                    if (failure.empty())
                        failure = "paths::simulate_driftless: non-finite volatility at step " +
                                  std::to_string(k) + " on path " + std::to_string(m);
                    return;
                }
            }
            auto xk = b.paths.state(m, k);
            auto xn = b.paths.mutable_state(m, k + 1);
            for (int i = 0; i < d; ++i) {
                double dx = 0.0;
                for (int j = 0; j < d; ++j)
                    dx += sigma[static_cast<std::size_t>(i) * d + j] * dw[j];
                xn[static_cast<std::size_t>(i)] = xk[static_cast<std::size_t>(i)] + dx;
            }
        }
    };

    parallel_for(static_cast<std::size_t>(num_paths), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t m = lo; m < hi; ++m) run_path(static_cast<int>(m));
    });

    if (!failure.empty()) throw SimulationError(failure);
    return std::move(b).finish();
}

}  // namespace mfgweak
