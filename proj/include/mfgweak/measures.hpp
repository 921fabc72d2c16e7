#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfgweak/common.hpp"
#include "mfgweak/model.hpp"
#include "mfgweak/paths.hpp"

namespace mfgweak {

// A candidate law as importance weights over the fixed ensemble. Only the
// measure ever changes; the paths never do. Weights satisfy w >= 0 and
// (1/M) sum w = 1, so integrals are (1/M) sum w[m] phi(X[m]). The driftless
// law has weights identically one.
struct WeightedMeasure {
    const PathEnsemble* ensemble = nullptr;
    std::vector<double> weights;

    static WeightedMeasure driftless(const PathEnsemble& e) {
        WeightedMeasure mu;
        mu.ensemble = &e;
        mu.weights.assign(static_cast<std::size_t>(e.num_paths()), 1.0);
        return mu;
    }

    MuView view() const { return MuView(ensemble->paths(), weights.data()); }

    // Diagnostic: (1/M) sum w^2, the empirical counterpart of the density's
    // second moment. Reported, never enforced.
    double second_moment() const {
        double acc = 0.0;
        for (double w : weights) acc += w * w;
        return acc / static_cast<double>(weights.size());
    }

    void validate(const char* where) const {
        double mean = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0) || !std::isfinite(w))
                throw SolverError(std::string(where) + ": invalid importance weight");
            mean += w;
        }
        mean /= static_cast<double>(weights.size());
        if (std::abs(mean - 1.0) > 1e-12)
            throw SolverError(std::string(where) + ": weight normalization off by " +
                              std::to_string(mean - 1.0));
    }
};

// Per-step weighted control samples representing the flow of control laws,
// plus cached per-step means of the model-declared control features.
struct ControlLawFlow {
    TimeGrid grid;
    int adim = 0;
    int count = 0;                      // samples per step
    std::vector<double> samples;        // [k][m][j], k = 0..N-1
    std::vector<double> weights;        // [k][m], per-step mean 1
    std::vector<double> feature_means;  // [k][j]
    int num_features = 0;

    static ControlLawFlow empty(const TimeGrid& grid, int adim, int count) {
        ControlLawFlow f;
        f.grid = grid;
        f.adim = adim;
        f.count = count;
        f.samples.assign(static_cast<std::size_t>(grid.num_steps) * count * adim, 0.0);
        f.weights.assign(static_cast<std::size_t>(grid.num_steps) * count, 1.0);
        return f;
    }

    double* sample_ptr(int k, int m) {
        return samples.data() + (static_cast<std::size_t>(k) * count + m) * adim;
    }
    const double* sample_ptr(int k, int m) const {
        return samples.data() + (static_cast<std::size_t>(k) * count + m) * adim;
    }
    double* weight_ptr(int k) { return weights.data() + static_cast<std::size_t>(k) * count; }
    const double* weight_ptr(int k) const {
        return weights.data() + static_cast<std::size_t>(k) * count;
    }

    QView view(int k) const {
        if (k < 0 || k >= grid.num_steps)
            throw UsageError("measures::ControlLawFlow: step index out of range");
        return QView(sample_ptr(k, 0), weight_ptr(k), count, adim,
                     num_features > 0
                         ? feature_means.data() + static_cast<std::size_t>(k) * num_features
                         : nullptr,
                     num_features);
    }

    void rebuild_feature_means(const ModelSpec& model) {
        num_features = model.num_control_features();
        feature_means.assign(static_cast<std::size_t>(grid.num_steps) *
                                 std::max(num_features, 1),
                             0.0);
        if (num_features == 0) return;
        for (int k = 0; k < grid.num_steps; ++k) {
            const double* w = weight_ptr(k);
            for (int j = 0; j < num_features; ++j) {
                double acc = 0.0;
                for (int m = 0; m < count; ++m) {
                    std::span<const double> a(sample_ptr(k, m), static_cast<std::size_t>(adim));
                    acc += w[m] * model.control_feature(j, a);
                }
                feature_means[static_cast<std::size_t>(k) * num_features + j] =
                    acc / static_cast<double>(count);
            }
        }
    }
};

// Numerical proxies used by the fixed-point stopping rule. All components are
// nonnegative and vanish when the inputs coincide.
struct MeasureDiscrepancy {
    double moment_residual = 0.0;
    double sliced_w1 = 0.0;
    double control_flow_residual = 0.0;

    double max_component() const {
        return std::max(moment_residual, std::max(sliced_w1, control_flow_residual));
    }
    bool within(const MeasureDiscrepancy& tol) const {
        return moment_residual <= tol.moment_residual && sliced_w1 <= tol.sliced_w1 &&
               control_flow_residual <= tol.control_flow_residual;
    }
};

struct GirsanovStats {
    double prenorm_mean = 1.0;  // sample mean of the raw stochastic exponential
    double prenorm_se = 0.0;    // its Monte Carlo standard error
};

namespace detail {

// One pass over the paths: evaluate the policy, accumulate the log stochastic
// exponential, optionally record the control samples for the flow.
inline std::vector<double> stochastic_exponential(const PathEnsemble& ensemble,
                                                  const ModelSpec& model,
                                                  const ClosedLoopPolicy& policy, const MuView& mu,
                                                  std::vector<double>* controls_out) {
    const int M = ensemble.num_paths();
    const int N = ensemble.grid().num_steps;
    const int d = ensemble.dim();
    const int adim = model.control_set().dim();
    const double dt = ensemble.grid().dt();
    if (policy.adim != adim)
        throw UsageError("measures::girsanov_weights: policy control dimension mismatch");

    std::vector<double> logw(static_cast<std::size_t>(M), 0.0);
    if (controls_out)
        controls_out->assign(static_cast<std::size_t>(N) * M * adim, 0.0);

    std::string failure;
    std::mutex failure_mu;
    auto fail = [&](const std::string& msg) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (failure.empty()) failure = msg;
    };

    parallel_for(static_cast<std::size_t>(M), [&](std::size_t lo, std::size_t hi) {
        std::vector<double> a(static_cast<std::size_t>(adim), 0.0);
        std::vector<double> th(static_cast<std::size_t>(d), 0.0);
        for (std::size_t m = lo; m < hi; ++m) {
            double acc = 0.0;
            for (int k = 0; k < N; ++k) {
                PathSlice slice = ensemble.slice(static_cast<int>(m), k);
                policy.eval(k, slice, a);
                if (!model.control_set().contains(a, 1e-9)) {
                    fail("measures::girsanov_weights: policy value outside control set at step " +
                         std::to_string(k));
                    return;
                }
                if (controls_out) {
                    double* dst = controls_out->data() +
                                  (static_cast<std::size_t>(k) * M + m) * adim;
                    std::copy(a.begin(), a.end(), dst);
                }
                try {
                    eval_theta_checked(model, k, slice, mu, a, th);
                } catch (const std::exception& e) {
                    fail(e.what());
                    return;
                }
                const double* dw = ensemble.increment_ptr(static_cast<int>(m), k);
                double dot = 0.0, n2 = 0.0;
                for (int i = 0; i < d; ++i) {
                    dot += th[static_cast<std::size_t>(i)] * dw[i];
                    n2 += th[static_cast<std::size_t>(i)] * th[static_cast<std::size_t>(i)];
                }
                acc += dot - 0.5 * n2 * dt;
            }
            logw[m] = acc;
        }
    });
    if (!failure.empty()) throw ModelContractViolation(failure);

    for (double& lw : logw) lw = std::exp(lw);
    return logw;  // now raw weights
}

}  // namespace detail

// Girsanov reweighting: the density of the controlled law with respect to the
// driftless law, evaluated on the stored increments,
//   w[m] = exp( sum_k theta.dW - 0.5 sum_k |theta|^2 dt ),
// accumulated in log space and renormalized to mean one afterwards. The
// continuous-time density has mean one exactly; the discretization bias is
// folded into the fixed-point tolerance.
inline WeightedMeasure girsanov_weights(const PathEnsemble& ensemble, const ModelSpec& model,
                                        const ClosedLoopPolicy& policy, const MuView& mu,
                                        GirsanovStats* stats = nullptr) {
    WeightedMeasure out;
    out.ensemble = &ensemble;
    out.weights = detail::stochastic_exponential(ensemble, model, policy, mu, nullptr);

    const double M = static_cast<double>(out.weights.size());
    double mean = 0.0;
    for (double w : out.weights) mean += w;
    mean /= M;
    if (!(mean > 0.0) || !std::isfinite(mean))
        throw SolverError("measures::girsanov_weights: degenerate weight normalization");
    if (stats) {
        double ss = 0.0;
        for (double w : out.weights) ss += (w - mean) * (w - mean);
        stats->prenorm_mean = mean;
        stats->prenorm_se = std::sqrt(ss / std::max(1.0, M - 1.0) / M);
    }
    if (mean != 1.0)
        for (double& w : out.weights) w /= mean;
    out.validate("measures::girsanov_weights");
    return out;
}

// The map Phi: push the candidate (mu, policy) forward to the law of the
// controlled state (as new weights) and the flow of control laws (as per-step
// samples carrying the same weights).
inline std::pair<WeightedMeasure, ControlLawFlow> pushforward_measure(
    const PathEnsemble& ensemble, const ModelSpec& model, const ClosedLoopPolicy& policy,
    const MuView& mu_in, GirsanovStats* stats = nullptr) {
    const int M = ensemble.num_paths();
    const int N = ensemble.grid().num_steps;
    const int adim = model.control_set().dim();

    WeightedMeasure mu_out;
    mu_out.ensemble = &ensemble;
    std::vector<double> controls;
    mu_out.weights = detail::stochastic_exponential(ensemble, model, policy, mu_in, &controls);

    double mean = 0.0;
    for (double w : mu_out.weights) mean += w;
    mean /= static_cast<double>(M);
    if (!(mean > 0.0) || !std::isfinite(mean))
        throw SolverError("measures::pushforward_measure: degenerate weight normalization");
    if (stats) {
        double ss = 0.0;
        for (double w : mu_out.weights) ss += (w - mean) * (w - mean);
        stats->prenorm_mean = mean;
        stats->prenorm_se =
            std::sqrt(ss / std::max(1.0, static_cast<double>(M) - 1.0) / static_cast<double>(M));
    }
    if (mean != 1.0)
        for (double& w : mu_out.weights) w /= mean;
    mu_out.validate("measures::pushforward_measure");

    ControlLawFlow nu;
    nu.grid = ensemble.grid();
    nu.adim = adim;
    nu.count = M;
    nu.samples = std::move(controls);
    nu.weights.resize(static_cast<std::size_t>(N) * M);
    for (int k = 0; k < N; ++k)
        std::copy(mu_out.weights.begin(), mu_out.weights.end(), nu.weight_ptr(k));
    nu.rebuild_feature_means(model);
    return {std::move(mu_out), std::move(nu)};
}

// (1/M) sum w[m] phi(X[m]) for a path functional phi.
inline double expectation(const WeightedMeasure& mu,
                          const std::function<double(const PathSlice&)>& phi) {
    const PathEnsemble& e = *mu.ensemble;
    double acc = 0.0;
    for (int m = 0; m < e.num_paths(); ++m) {
        double v = phi(e.full_path(m));
        if (!std::isfinite(v))
            throw SolverError("measures::expectation: non-finite integrand on path " +
                              std::to_string(m));
        acc += mu.weights[static_cast<std::size_t>(m)] * v;
    }
    return acc / static_cast<double>(e.num_paths());
}

// Smallest sample distance r such that the closed ball B(x, r) carries
// normalized mass at least y. Ties in distance are grouped before the mass
// test, so no tie-breaking rule is needed.
inline double quantile_radius(std::span<const double> points, int dim,
                              const double* weights,  // nullable = equal
                              std::span<const double> x, double y) {
    const std::size_t n = points.size() / static_cast<std::size_t>(dim);
    if (n == 0) throw UsageError("measures::quantile_radius: empty point cloud");
    if (!(y > 0.0) || !(y < 1.0))
        throw UsageError("measures::quantile_radius: mass level must lie in (0,1)");

    std::vector<std::pair<double, double>> dist_w(n);  // (distance, weight)
    double total = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
        double dist;
        if (dim == 1) {
            dist = std::abs(points[m] - x[0]);
        } else {
            double d2 = 0.0;
            for (int i = 0; i < dim; ++i) {
                double di = points[m * dim + i] - x[static_cast<std::size_t>(i)];
                d2 += di * di;
            }
            dist = std::sqrt(d2);
        }
        double w = weights ? weights[m] : 1.0;
        dist_w[m] = {dist, w};
        total += w;
    }
    std::sort(dist_w.begin(), dist_w.end());
    const double target = y * total;
    double cum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        double r = dist_w[i].first;
        while (i < n && dist_w[i].first == r) cum += dist_w[i++].second;
        if (cum >= target) return r;
    }
    return dist_w.back().first;
}

// ---------------------------------------------------------------------------
// 1-d weighted Wasserstein-1 between two weighted samples, by integrating the
// absolute CDF difference over the merged support.
// ---------------------------------------------------------------------------
inline double wasserstein1_1d(std::span<const double> va, const double* wa,
                              std::span<const double> vb, const double* wb) {
    struct Atom {
        double x;
        double p;  // +prob for sample a, -prob for sample b
    };
    std::vector<Atom> atoms;
    atoms.reserve(va.size() + vb.size());
    double ta = 0.0, tb = 0.0;
    for (std::size_t m = 0; m < va.size(); ++m) ta += wa ? wa[m] : 1.0;
    for (std::size_t m = 0; m < vb.size(); ++m) tb += wb ? wb[m] : 1.0;
    if (ta <= 0.0 || tb <= 0.0)
        throw UsageError("measures::wasserstein1_1d: zero total mass");
    for (std::size_t m = 0; m < va.size(); ++m)
        atoms.push_back({va[m], (wa ? wa[m] : 1.0) / ta});
    for (std::size_t m = 0; m < vb.size(); ++m)
        atoms.push_back({vb[m], -(wb ? wb[m] : 1.0) / tb});
    std::sort(atoms.begin(), atoms.end(), [](const Atom& l, const Atom& r) { return l.x < r.x; });
    double w1 = 0.0, diff = 0.0;
    for (std::size_t i = 0; i + 1 < atoms.size(); ++i) {
        diff += atoms[i].p;
        w1 += std::abs(diff) * (atoms[i + 1].x - atoms[i].x);
    }
    return w1;
}

// Averaged 1-d W1 across K seeded random unit projections; dimension one
// needs no projections.
inline double sliced_w1(std::span<const double> pa, const double* wa, std::span<const double> pb,
                        const double* wb, int dim, int projections, std::uint64_t seed) {
    const std::size_t na = pa.size() / static_cast<std::size_t>(dim);
    const std::size_t nb = pb.size() / static_cast<std::size_t>(dim);
    if (dim == 1) return wasserstein1_1d(pa, wa, pb, wb);

    Rng rng = make_rng(derive_seed(seed, 0x736c696365ULL));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> dir(static_cast<std::size_t>(dim));
    std::vector<double> qa(na), qb(nb);
    double acc = 0.0;
    for (int p = 0; p < projections; ++p) {
        double n2 = 0.0;
        do {
            n2 = 0.0;
            for (double& di : dir) {
                di = gauss(rng);
                n2 += di * di;
            }
        } while (n2 < 1e-12);
        double inv = 1.0 / std::sqrt(n2);
        for (double& di : dir) di *= inv;
        for (std::size_t m = 0; m < na; ++m) {
            double s = 0.0;
            for (int i = 0; i < dim; ++i) s += dir[static_cast<std::size_t>(i)] * pa[m * dim + i];
            qa[m] = s;
        }
        for (std::size_t m = 0; m < nb; ++m) {
            double s = 0.0;
            for (int i = 0; i < dim; ++i) s += dir[static_cast<std::size_t>(i)] * pb[m * dim + i];
            qb[m] = s;
        }
        acc += wasserstein1_1d(qa, wa, qb, wb);
    }
    return acc / static_cast<double>(projections);
}

// Time-averaged sliced W1 between two control-law flows on the same grid.
inline double flow_distance(const ControlLawFlow& a, const ControlLawFlow& b, int projections,
                            std::uint64_t seed) {
    if (a.grid.num_steps != b.grid.num_steps || a.adim != b.adim)
        throw UsageError("measures::flow_distance: incompatible control flows");
    double acc = 0.0;
    for (int k = 0; k < a.grid.num_steps; ++k) {
        std::span<const double> sa(a.sample_ptr(k, 0), static_cast<std::size_t>(a.count) * a.adim);
        std::span<const double> sb(b.sample_ptr(k, 0), static_cast<std::size_t>(b.count) * b.adim);
        acc += sliced_w1(sa, a.weight_ptr(k), sb, b.weight_ptr(k), a.adim, projections,
                         seed + static_cast<std::uint64_t>(k));
    }
    return acc / static_cast<double>(a.grid.num_steps);
}

// Configuration of the convergence proxy: which marginal times feed the test
// bank and the sliced distance, the monomial degree, and the projection count.
struct DiscrepancyConfig {
    std::vector<int> marginal_steps;  // grid indices; default = quartiles
    int moment_degree = 4;
    int projections = 16;
    std::uint64_t projection_seed = 0x77317731ULL;

    static DiscrepancyConfig defaults(const TimeGrid& grid) {
        DiscrepancyConfig c;
        int N = grid.num_steps;
        for (int q = 1; q <= 4; ++q) {
            int k = std::max(1, (N * q) / 4);
            if (c.marginal_steps.empty() || c.marginal_steps.back() != k)
                c.marginal_steps.push_back(k);
        }
        return c;
    }
};

// Convergence proxy between two candidate laws on the same ensemble plus the
// matching control flows. The moment bank holds coordinate monomials of the
// marginals up to the configured degree at the configured times, plus the
// model's growth gauge when a model is given.
inline MeasureDiscrepancy discrepancy(const WeightedMeasure& mu, const WeightedMeasure& mu2,
                                      const ControlLawFlow& nu, const ControlLawFlow& nu2,
                                      const DiscrepancyConfig& cfg,
                                      const ModelSpec* model = nullptr) {
    if (mu.ensemble != mu2.ensemble)
        throw UsageError("measures::discrepancy: measures live on different ensembles");
    const PathEnsemble& e = *mu.ensemble;
    const int M = e.num_paths();
    const int d = e.dim();

    MeasureDiscrepancy out;

    // Moment residual: sup over the bank of |int phi d(mu - mu2)|.
    auto weighted_delta = [&](const std::function<double(int)>& phi) {
        double acc = 0.0;
        for (int m = 0; m < M; ++m)
            acc += (mu.weights[static_cast<std::size_t>(m)] -
                    mu2.weights[static_cast<std::size_t>(m)]) *
                   phi(m);
        return std::abs(acc / static_cast<double>(M));
    };
    for (int k : cfg.marginal_steps) {
        for (int i = 0; i < d; ++i) {
            for (int p = 1; p <= cfg.moment_degree; ++p) {
                out.moment_residual = std::max(
                    out.moment_residual, weighted_delta([&](int m) {
                        return std::pow(e.paths().state(m, k)[static_cast<std::size_t>(i)], p);
                    }));
            }
        }
    }
    if (model) {
        out.moment_residual = std::max(out.moment_residual, weighted_delta([&](int m) {
                                           return model->growth_gauge(e.full_path(m));
                                       }));
    }

    // Sliced W1 between the time-marginals (same support, different weights).
    std::vector<double> marg(static_cast<std::size_t>(M) * d);
    double acc_w1 = 0.0;
    for (int k : cfg.marginal_steps) {
        for (int m = 0; m < M; ++m) {
            auto x = e.paths().state(m, k);
            for (int i = 0; i < d; ++i) marg[static_cast<std::size_t>(m) * d + i] = x[static_cast<std::size_t>(i)];
        }
        acc_w1 += sliced_w1(marg, mu.weights.data(), marg, mu2.weights.data(), d,
                            cfg.projections, cfg.projection_seed);
    }
    out.sliced_w1 = acc_w1 / static_cast<double>(cfg.marginal_steps.size());

    // Time-averaged sliced W1 between the control laws.
    if (nu.grid.num_steps != nu2.grid.num_steps || nu.adim != nu2.adim)
        throw UsageError("measures::discrepancy: control flows are incompatible");
    double acc_q = 0.0;
    for (int k = 0; k < nu.grid.num_steps; ++k) {
        std::span<const double> sa(nu.sample_ptr(k, 0),
                                   static_cast<std::size_t>(nu.count) * nu.adim);
        std::span<const double> sb(nu2.sample_ptr(k, 0),
                                   static_cast<std::size_t>(nu2.count) * nu2.adim);
        acc_q += sliced_w1(sa, nu.weight_ptr(k), sb, nu2.weight_ptr(k), nu.adim,
                           cfg.projections, cfg.projection_seed + static_cast<std::uint64_t>(k));
    }
    out.control_flow_residual = acc_q / static_cast<double>(nu.grid.num_steps);
    return out;
}

// ---------------------------------------------------------------------------
// Deterministic compression of weighted samples back to a fixed count.
// ---------------------------------------------------------------------------

// 1-d: values of the weighted quantile function at levels (j + 1/2) / m_out.
inline std::vector<double> weighted_quantile_resample(std::span<const double> values,
                                                      std::span<const double> weights,
                                                      int m_out) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0))
        throw UsageError("measures::weighted_quantile_resample: zero total mass");

    std::vector<double> out(static_cast<std::size_t>(m_out));
    double cum = 0.0;
    std::size_t i = 0;
    for (int j = 0; j < m_out; ++j) {
        double level = (static_cast<double>(j) + 0.5) / static_cast<double>(m_out) * total;
        while (i < order.size() && cum + weights[order[i]] < level) cum += weights[order[i++]];
        out[static_cast<std::size_t>(j)] = values[order[std::min(i, order.size() - 1)]];
    }
    return out;
}

// d-dim: systematic resampling over the given order with fixed offset 1/2.
inline std::vector<std::size_t> systematic_resample_indices(std::span<const double> weights,
                                                            int m_out) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0))
        throw UsageError("measures::systematic_resample_indices: zero total mass");
    std::vector<std::size_t> idx(static_cast<std::size_t>(m_out));
    double cum = 0.0;
    std::size_t i = 0;
    for (int j = 0; j < m_out; ++j) {
        double level = (static_cast<double>(j) + 0.5) / static_cast<double>(m_out) * total;
        while (i < weights.size() && cum + weights[i] < level) cum += weights[i++];
        idx[static_cast<std::size_t>(j)] = std::min(i, weights.size() - 1);
    }
    return idx;
}

// CSV export of time-marginal histograms of a measure (and optionally control
// histograms of a flow), for external plotting.
inline void export_marginal_histograms(const WeightedMeasure& mu, const std::vector<int>& steps,
                                       int bins, const std::string& filename,
                                       const ControlLawFlow* nu = nullptr) {
    std::ofstream out(filename);
    if (!out) throw UsageError("measures::export_marginal_histograms: cannot open " + filename);
    out << "kind,step,time,bin_lo,bin_hi,mass\n";
    char buf[256];
    const PathEnsemble& e = *mu.ensemble;
    const int M = e.num_paths();

    auto emit = [&](const char* kind, int k, double t, std::span<const double> vals,
                    const double* w) {
        double lo = *std::min_element(vals.begin(), vals.end());
        double hi = *std::max_element(vals.begin(), vals.end());
        if (hi <= lo) hi = lo + 1.0;
        std::vector<double> mass(static_cast<std::size_t>(bins), 0.0);
        double total = 0.0;
        for (std::size_t m = 0; m < vals.size(); ++m) {
            int b = std::min(bins - 1, static_cast<int>((vals[m] - lo) / (hi - lo) * bins));
            mass[static_cast<std::size_t>(b)] += w ? w[m] : 1.0;
            total += w ? w[m] : 1.0;
        }
        for (int b = 0; b < bins; ++b) {
            double blo = lo + (hi - lo) * b / bins;
            double bhi = lo + (hi - lo) * (b + 1) / bins;
            std::snprintf(buf, sizeof(buf), "%s,%d,%.12g,%.12g,%.12g,%.12g\n", kind, k, t, blo,
                          bhi, mass[static_cast<std::size_t>(b)] / total);
            out << buf;
        }
    };

    std::vector<double> vals(static_cast<std::size_t>(M));
    for (int k : steps) {
        for (int i = 0; i < e.dim(); ++i) {
            for (int m = 0; m < M; ++m) vals[static_cast<std::size_t>(m)] = e.paths().state(m, k)[static_cast<std::size_t>(i)];
            emit("state", k, e.grid().time(k), vals, mu.weights.data());
        }
    }
    if (nu) {
        std::vector<double> av(static_cast<std::size_t>(nu->count));
        for (int k : steps) {
            int kk = std::min(k, nu->grid.num_steps - 1);
            for (int j = 0; j < nu->adim; ++j) {
                for (int m = 0; m < nu->count; ++m) av[static_cast<std::size_t>(m)] = nu->sample_ptr(kk, m)[j];
                emit("control", kk, nu->grid.time(kk), av, nu->weight_ptr(kk));
            }
        }
    }
}

}  // namespace mfgweak
