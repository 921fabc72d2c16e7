#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mfgweak/common.hpp"
#include "mfgweak/paths.hpp"

namespace mfgweak {

// Compact control set: an axis-aligned box or a finite list of points.
class ControlSet {
  public:
    enum class Kind { Box, Finite };

    static ControlSet box(std::vector<double> lo, std::vector<double> hi) {
        if (lo.empty() || lo.size() != hi.size())
            throw UsageError("model::ControlSet: box bounds must be nonempty and same size");
        for (std::size_t i = 0; i < lo.size(); ++i)
            if (!(lo[i] <= hi[i]))
                throw UsageError("model::ControlSet: box requires lo <= hi per axis");
        ControlSet s;
        s.kind_ = Kind::Box;
        s.dim_ = static_cast<int>(lo.size());
        s.lo_ = std::move(lo);
        s.hi_ = std::move(hi);
        return s;
    }

    static ControlSet interval(double lo, double hi) { return box({lo}, {hi}); }

    static ControlSet finite(std::vector<std::vector<double>> points) {
        if (points.empty())
            throw UsageError("model::ControlSet: finite set needs at least one point");
        ControlSet s;
        s.kind_ = Kind::Finite;
        s.dim_ = static_cast<int>(points.front().size());
        for (const auto& p : points)
            if (static_cast<int>(p.size()) != s.dim_)
                throw UsageError("model::ControlSet: finite points must share a dimension");
        s.points_ = std::move(points);
        return s;
    }

    Kind kind() const { return kind_; }
    int dim() const { return dim_; }
    const std::vector<double>& lower() const { return lo_; }
    const std::vector<double>& upper() const { return hi_; }
    const std::vector<std::vector<double>>& points() const { return points_; }

    bool contains(std::span<const double> a, double tol = 1e-12) const {
        if (static_cast<int>(a.size()) != dim_) return false;
        if (kind_ == Kind::Box) {
            for (int i = 0; i < dim_; ++i)
                if (a[static_cast<std::size_t>(i)] < lo_[static_cast<std::size_t>(i)] - tol ||
                    a[static_cast<std::size_t>(i)] > hi_[static_cast<std::size_t>(i)] + tol)
                    return false;
            return true;
        }
        for (const auto& p : points_) {
            double d2 = 0.0;
            for (int i = 0; i < dim_; ++i) {
                double di = a[static_cast<std::size_t>(i)] - p[static_cast<std::size_t>(i)];
                d2 += di * di;
            }
            if (d2 <= tol * tol) return true;
        }
        return false;
    }

    void clip(std::span<double> a) const {
        if (kind_ == Kind::Box) {
            for (int i = 0; i < dim_; ++i) {
                auto idx = static_cast<std::size_t>(i);
                a[idx] = std::min(std::max(a[idx], lo_[idx]), hi_[idx]);
            }
            return;
        }
        // Nearest finite point, first wins on ties.
        double best = std::numeric_limits<double>::infinity();
        const std::vector<double>* arg = nullptr;
        for (const auto& p : points_) {
            double d2 = 0.0;
            for (int i = 0; i < dim_; ++i) {
                double di = a[static_cast<std::size_t>(i)] - p[static_cast<std::size_t>(i)];
                d2 += di * di;
            }
            if (d2 < best) {
                best = d2;
                arg = &p;
            }
        }
        for (int i = 0; i < dim_; ++i) a[static_cast<std::size_t>(i)] = (*arg)[static_cast<std::size_t>(i)];
    }

    double max_radius() const {
        double r = 0.0;
        if (kind_ == Kind::Box) {
            for (int i = 0; i < dim_; ++i)
                r = std::max(r, std::max(std::abs(lo_[static_cast<std::size_t>(i)]),
                                         std::abs(hi_[static_cast<std::size_t>(i)])));
        } else {
            for (const auto& p : points_)
                for (double x : p) r = std::max(r, std::abs(x));
        }
        return r;
    }

  private:
    Kind kind_ = Kind::Box;
    int dim_ = 1;
    std::vector<double> lo_, hi_;
    std::vector<std::vector<double>> points_;
};

// Initial distribution of the state: a point mass, a Gaussian, or a finite
// empirical list. Covers every worked example; anything fancier can override
// ModelSpec::sample_initial directly.
class InitialLaw {
  public:
    enum class Kind { Point, Gaussian, Empirical };

    static InitialLaw point(std::vector<double> x) {
        InitialLaw l;
        l.kind_ = Kind::Point;
        l.dim_ = static_cast<int>(x.size());
        l.mean_ = std::move(x);
        return l;
    }

    // Covariance is given row-major; a Cholesky factor is taken up front.
    static InitialLaw gaussian(std::vector<double> mean, std::vector<double> cov) {
        InitialLaw l;
        l.kind_ = Kind::Gaussian;
        l.dim_ = static_cast<int>(mean.size());
        l.mean_ = std::move(mean);
        const int d = l.dim_;
        if (static_cast<int>(cov.size()) != d * d)
            throw UsageError("model::InitialLaw: covariance must be d x d");
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            C(cov.data(), d, d);
        Eigen::LLT<Eigen::MatrixXd> llt(C);
        if (llt.info() != Eigen::Success)
            throw UsageError("model::InitialLaw: covariance is not positive definite");
        Eigen::MatrixXd L = llt.matrixL();
        l.chol_.assign(static_cast<std::size_t>(d) * d, 0.0);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) l.chol_[static_cast<std::size_t>(i) * d + j] = L(i, j);
        return l;
    }

    static InitialLaw gaussian1d(double mean, double variance) {
        return gaussian({mean}, {variance});
    }

    static InitialLaw empirical(std::vector<std::vector<double>> points) {
        if (points.empty())
            throw UsageError("model::InitialLaw: empirical law needs at least one point");
        InitialLaw l;
        l.kind_ = Kind::Empirical;
        l.dim_ = static_cast<int>(points.front().size());
        l.points_ = std::move(points);
        return l;
    }

    int dim() const { return dim_; }

    void sample(Rng& rng, std::span<double> out) const {
        switch (kind_) {
            case Kind::Point:
                for (int i = 0; i < dim_; ++i) out[static_cast<std::size_t>(i)] = mean_[static_cast<std::size_t>(i)];
                return;
            case Kind::Gaussian: {
                std::normal_distribution<double> gauss(0.0, 1.0);
                std::vector<double> u(static_cast<std::size_t>(dim_));
                for (double& ui : u) ui = gauss(rng);
                for (int i = 0; i < dim_; ++i) {
                    double acc = mean_[static_cast<std::size_t>(i)];
                    for (int j = 0; j <= i; ++j)
                        acc += chol_[static_cast<std::size_t>(i) * dim_ + j] * u[static_cast<std::size_t>(j)];
                    out[static_cast<std::size_t>(i)] = acc;
                }
                return;
            }
            case Kind::Empirical: {
                std::uniform_int_distribution<std::size_t> pick(0, points_.size() - 1);
                const auto& p = points_[pick(rng)];
                for (int i = 0; i < dim_; ++i) out[static_cast<std::size_t>(i)] = p[static_cast<std::size_t>(i)];
                return;
            }
        }
    }

  private:
    Kind kind_ = Kind::Point;
    int dim_ = 1;
    std::vector<double> mean_;
    std::vector<double> chol_;
    std::vector<std::vector<double>> points_;
};

// Read-only handle a model gets on a candidate law: the common path cloud
// plus importance weights (null weights mean the driftless law, all ones).
// Weights are normalized so (1/M) sum w = 1; a weighted integral of phi is
// (1/M) sum w[m] phi(X[m]).
class MuView {
  public:
    MuView() = default;
    MuView(const PathArray& paths, const double* weights)
        : paths_(&paths), weights_(weights) {}

    bool empty() const { return paths_ == nullptr; }
    const PathArray& paths() const {
        if (!paths_) throw UsageError("model::MuView: view is empty");
        return *paths_;
    }
    int num_paths() const { return paths().num_paths(); }
    double weight(int m) const { return weights_ ? weights_[m] : 1.0; }
    const double* raw_weights() const { return weights_; }

  private:
    const PathArray* paths_ = nullptr;
    const double* weights_ = nullptr;  // length num_paths, mean 1; null = unit
};

// Read-only handle on the control law at one time step: weighted control
// samples plus cached means of the model-declared control features.
class QView {
  public:
    QView() = default;
    QView(const double* samples, const double* weights, int count, int adim,
          const double* feature_means, int num_features)
        : samples_(samples), weights_(weights), count_(count), adim_(adim),
          feature_means_(feature_means), num_features_(num_features) {}

    bool empty() const { return samples_ == nullptr; }
    int count() const { return count_; }
    int adim() const { return adim_; }
    std::span<const double> sample(int m) const {
        return {samples_ + static_cast<std::size_t>(m) * adim_, static_cast<std::size_t>(adim_)};
    }
    double weight(int m) const { return weights_ ? weights_[m] : 1.0; }

    int num_features() const { return num_features_; }
    double feature_mean(int j) const {
        if (j < 0 || j >= num_features_)
            throw UsageError("model::QView: feature index out of range");
        return feature_means_[j];
    }

    // Weighted mean of an arbitrary function of the control. O(count).
    double mean(const std::function<double(std::span<const double>)>& fn) const {
        if (empty() || count_ == 0) return 0.0;
        double acc = 0.0;
        for (int m = 0; m < count_; ++m) acc += weight(m) * fn(sample(m));
        return acc / static_cast<double>(count_);
    }

  private:
    const double* samples_ = nullptr;
    const double* weights_ = nullptr;
    int count_ = 0;
    int adim_ = 0;
    const double* feature_means_ = nullptr;
    int num_features_ = 0;
};

// A control written in closed-loop form: a deterministic function of
// (t_k, path up to t_k), valued in the control set.
struct ClosedLoopPolicy {
    int adim = 0;
    std::function<void(int k, const PathSlice& x, std::span<double> a_out)> eval;

    std::vector<double> operator()(int k, const PathSlice& x) const {
        std::vector<double> a(static_cast<std::size_t>(adim), 0.0);
        eval(k, x, a);
        return a;
    }

    static ClosedLoopPolicy constant(std::vector<double> a) {
        ClosedLoopPolicy p;
        p.adim = static_cast<int>(a.size());
        p.eval = [a = std::move(a)](int, const PathSlice&, std::span<double> out) {
            for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i];
        };
        return p;
    }
};

// ---------------------------------------------------------------------------
// The game data behind one interface: drift b, volatility sigma, running
// reward split f = f1 + f2 with f2 independent of the control, terminal
// reward g, control set A, initial law, and the declared bound on
// |sigma^{-1} b|. The f1 part is further split into a control-dependent term
// and a control-free term so Hamiltonian maximization never pays for the
// mean-field part of the reward.
//
// All evaluations must be pure and reentrant; views never expose mutable
// state.
// ---------------------------------------------------------------------------
class ModelSpec {
  public:
    virtual ~ModelSpec() = default;

    virtual std::string name() const = 0;
    virtual int state_dim() const = 0;
    virtual const ControlSet& control_set() const = 0;

    // Declared uniform bound on |sigma^{-1} b|; runtime-checked wherever the
    // ratio is evaluated.
    virtual double drift_bound() const = 0;

    virtual void drift(int k, const PathSlice& x, const MuView& mu,
                       std::span<const double> a, std::span<double> out) const = 0;

    // Row-major d x d matrix.
    virtual void volatility(int k, const PathSlice& x, std::span<double> out) const = 0;

    // theta = sigma^{-1} b. Default solves the linear system; models with a
    // closed form (constant sigma, geometric dynamics) override it.
    virtual void theta(int k, const PathSlice& x, const MuView& mu,
                       std::span<const double> a, std::span<double> out) const {
        const int d = state_dim();
        drift(k, x, mu, a, out);
        if (d == 1) {
            double s = 0.0;
            volatility(k, x, {&s, 1});
            if (s == 0.0)
                throw ModelContractViolation("model::theta: singular volatility at step " +
                                             std::to_string(k));
            out[0] /= s;
            return;
        }
        std::vector<double> sig(static_cast<std::size_t>(d) * d, 0.0);
        volatility(k, x, sig);
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            S(sig.data(), d, d);
        Eigen::Map<Eigen::VectorXd> b(out.data(), d);
        Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
        if (!lu.isInvertible())
            throw ModelContractViolation("model::theta: singular volatility at step " +
                                         std::to_string(k));
        b = lu.solve(Eigen::VectorXd(b));
    }

    // Control-dependent part of f1.
    virtual double control_reward(int k, const PathSlice& x, const MuView& mu,
                                  std::span<const double> a) const = 0;
    // Control-free part of f1 (the state/measure coupling).
    virtual double state_reward(int, const PathSlice&, const MuView&) const { return 0.0; }
    // f2: the coupling through the law of the control; independent of a.
    virtual double flow_reward(int, const PathSlice&, const MuView&, const QView&) const {
        return 0.0;
    }
    virtual double terminal_reward(const PathSlice& path, const MuView& mu) const = 0;

    virtual void sample_initial(Rng& rng, std::span<double> out) const = 0;

    // Growth gauge psi >= 1; the pilot check reports the empirical second
    // moment as an integrability diagnostic.
    virtual double growth_gauge(const PathSlice& path) const {
        double sup2 = 0.0;
        for (int k = 0; k <= path.step(); ++k) {
            auto x = path.state(k);
            double n2 = 0.0;
            for (double xi : x) n2 += xi * xi;
            sup2 = std::max(sup2, n2);
        }
        return 1.0 + sup2;
    }

    // Hamiltonian maximization support.
    virtual bool has_analytic_argmax() const { return false; }
    virtual void analytic_argmax(int /*k*/, const PathSlice&, const MuView&,
                                 std::span<const double> /*z*/, std::span<double> /*a_out*/) const {
        throw UsageError("model::analytic_argmax: not provided by model " + name());
    }
    virtual bool concave_in_control() const { return false; }

    // True when b depends on the measure argument; such models cannot be used
    // in the finite-player harness.
    virtual bool drift_has_mean_field() const { return false; }

    // Extra regression features (path functionals) beyond state monomials.
    virtual int num_extra_features() const { return 0; }
    virtual double extra_feature(int /*j*/, int /*k*/, const PathSlice&) const { return 0.0; }

    // Control features whose per-step means are cached in control-law flows
    // (e.g. marginal transaction cost for price impact).
    virtual int num_control_features() const { return 0; }
    virtual double control_feature(int /*j*/, std::span<const double> /*a*/) const { return 0.0; }
};

// theta evaluation with the declared bound enforced.
inline void eval_theta_checked(const ModelSpec& model, int k, const PathSlice& x,
                               const MuView& mu, std::span<const double> a,
                               std::span<double> out) {
    model.theta(k, x, mu, a, out);
    double n2 = 0.0;
    for (double v : out) {
        if (!std::isfinite(v))
            throw ModelContractViolation("model::theta: non-finite value at step " +
                                         std::to_string(k) + " in model " + model.name());
        n2 += v * v;
    }
    const double bound = model.drift_bound();
    if (n2 > bound * bound * (1.0 + 1e-9) + 1e-12)
        throw ModelContractViolation(
            "model::theta: |sigma^{-1} b| = " + std::to_string(std::sqrt(n2)) +
            " exceeds declared bound " + std::to_string(bound) + " in model " + model.name());
}

}  // namespace mfgweak
