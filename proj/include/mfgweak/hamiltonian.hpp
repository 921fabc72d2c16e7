#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mfgweak/common.hpp"
#include "mfgweak/model.hpp"

namespace mfgweak {

// h(t, x, mu, q, z, a) = f(t, x, mu, q, a) + z . sigma^{-1} b(t, x, mu, a).
inline double hamiltonian_value(const ModelSpec& model, int k, const PathSlice& x,
                                const MuView& mu, const QView& q, std::span<const double> z,
                                std::span<const double> a) {
    if (!model.control_set().contains(a, 1e-9))
        throw UsageError("hamiltonian::hamiltonian_value: control outside the control set");
    std::vector<double> th(static_cast<std::size_t>(model.state_dim()), 0.0);
    eval_theta_checked(model, k, x, mu, a, th);
    double dot = 0.0;
    for (int i = 0; i < model.state_dim(); ++i)
        dot += z[static_cast<std::size_t>(i)] * th[static_cast<std::size_t>(i)];
    double value = model.control_reward(k, x, mu, a) + model.state_reward(k, x, mu) + dot;
    if (!q.empty()) value += model.flow_reward(k, x, mu, q);
    return value;
}

struct MaximizeOptions {
    int grid_points = 129;      // per axis, before refinement
    int refine_iters = 60;      // golden-section iterations on the bracketing cell
    int coordinate_passes = 4;  // cyclic passes for concave multi-axis search
};

namespace detail {

// The control-dependent part of h; everything else is constant in a.
class HamObjective {
  public:
    HamObjective(const ModelSpec& model, int k, const PathSlice& x, const MuView& mu,
                 std::span<const double> z)
        : model_(model), k_(k), x_(x), mu_(mu), z_(z),
          th_(static_cast<std::size_t>(model.state_dim()), 0.0) {}

    // Returns -inf for excluded controls (infinite cost means the volume is
    // simply not available).
    double operator()(std::span<const double> a) const {
        double r = model_.control_reward(k_, x_, mu_, a);
        if (std::isnan(r))
            throw ModelContractViolation(
                "hamiltonian::maximize_hamiltonian: NaN running reward in model " + model_.name());
        if (r == -std::numeric_limits<double>::infinity()) return r;
        eval_theta_checked(model_, k_, x_, mu_, a, th_);
        double dot = 0.0;
        for (std::size_t i = 0; i < th_.size(); ++i) dot += z_[i] * th_[i];
        return r + dot;
    }

  private:
    const ModelSpec& model_;
    int k_;
    const PathSlice& x_;
    const MuView& mu_;
    std::span<const double> z_;
    mutable std::vector<double> th_;
};

// Golden-section maximization of a unimodal 1-d section. Keeps the midpoint
// of the final bracket.
template <typename F>
double golden_max_1d(const F& f, double lo, double hi, int iters) {
    const double invphi = 0.6180339887498949;
    double a = lo, b = hi;
    double x1 = b - invphi * (b - a);
    double x2 = a + invphi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int i = 0; i < iters && (b - a) > 1e-14; ++i) {
        if (f1 >= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = f(x2);
        }
    }
    // Compare bracket midpoint against the endpoints of the original range so
    // boundary maxima are never lost.
    double xm = 0.5 * (a + b);
    double best = xm, fb = f(xm);
    if (f(lo) > fb) {
        best = lo;
        fb = f(lo);
    }
    if (f(hi) > fb) best = hi;
    return best;
}

}  // namespace detail

// Maximizer of the control-dependent part of h, i.e. of
// control_reward(a) + z . sigma^{-1} b(a). Returns the maximizer and the
// attained value of that part only. Because f2 does not depend on the control
// and neither does the state/measure part of f1, this is the full argmax of
// the Hamiltonian. Strategy: the model's analytic argmax when declared;
// golden-section per axis (cyclic) for concave rewards; otherwise an
// exhaustive grid with one golden refinement pass around the best cell. Ties
// resolve to the lexicographically smallest maximizer.
inline std::pair<std::vector<double>, double> maximize_control_part(
    const ModelSpec& model, int k, const PathSlice& x, const MuView& mu,
    std::span<const double> z, const MaximizeOptions& opt = {}) {
    const ControlSet& A = model.control_set();
    const int ad = A.dim();
    std::vector<double> a_star(static_cast<std::size_t>(ad), 0.0);
    detail::HamObjective h(model, k, x, mu, z);

    double best = -std::numeric_limits<double>::infinity();

    if (model.has_analytic_argmax()) {
        model.analytic_argmax(k, x, mu, z, a_star);
        best = h(a_star);
    } else if (A.kind() == ControlSet::Kind::Finite) {
        for (const auto& p : A.points()) {
            double v = h(p);
            if (v > best) {
                best = v;
                a_star = p;
            }
        }
    } else if (model.concave_in_control()) {
        std::vector<double> a(static_cast<std::size_t>(ad));
        for (int i = 0; i < ad; ++i)
            a[static_cast<std::size_t>(i)] = 0.5 * (A.lower()[static_cast<std::size_t>(i)] +
                                                    A.upper()[static_cast<std::size_t>(i)]);
        for (int pass = 0; pass < opt.coordinate_passes; ++pass) {
            for (int i = 0; i < ad; ++i) {
                auto idx = static_cast<std::size_t>(i);
                auto section = [&](double v) {
                    a[idx] = v;
                    return h(a);
                };
                a[idx] = detail::golden_max_1d(section, A.lower()[idx], A.upper()[idx],
                                               opt.refine_iters);
            }
            if (ad == 1) break;
        }
        a_star = a;
        best = h(a_star);
    } else {
        // Exhaustive grid, lexicographic order, strict improvement keeps the
        // smallest maximizer.
        const int G = opt.grid_points;
        std::vector<int> idx(static_cast<std::size_t>(ad), 0);
        std::vector<double> a(static_cast<std::size_t>(ad));
        bool any = false;
        for (;;) {
            for (int i = 0; i < ad; ++i) {
                auto ii = static_cast<std::size_t>(i);
                double frac = (G == 1) ? 0.0
                                       : static_cast<double>(idx[ii]) / static_cast<double>(G - 1);
                a[ii] = A.lower()[ii] + frac * (A.upper()[ii] - A.lower()[ii]);
            }
            double v = h(a);
            if (v > best) {
                best = v;
                a_star = a;
                any = true;
            }
            int i = ad - 1;
            while (i >= 0 && ++idx[static_cast<std::size_t>(i)] == G) {
                idx[static_cast<std::size_t>(i)] = 0;
                --i;
            }
            if (i < 0) break;
        }
        if (!any)
            throw SolverError(
                "hamiltonian::maximize_hamiltonian: every control is excluded (infinite cost)");
        // One refinement pass: golden-section per axis inside the bracketing
        // cells around the best grid point.
        if (G > 2) {
            for (int i = 0; i < ad; ++i) {
                auto ii = static_cast<std::size_t>(i);
                double span = (A.upper()[ii] - A.lower()[ii]) / static_cast<double>(G - 1);
                double lo = std::max(A.lower()[ii], a_star[ii] - span);
                double hi = std::min(A.upper()[ii], a_star[ii] + span);
                std::vector<double> a_try = a_star;
                auto section = [&](double v) {
                    a_try[ii] = v;
                    return h(a_try);
                };
                double cand = detail::golden_max_1d(section, lo, hi, opt.refine_iters);
                a_try[ii] = cand;
                double v = h(a_try);
                if (v > best) {
                    best = v;
                    a_star = a_try;
                }
            }
        }
    }

    if (!std::isfinite(best))
        throw SolverError("hamiltonian::maximize_hamiltonian: no admissible control at step " +
                          std::to_string(k));
    return {std::move(a_star), best};
}

// Maximized Hamiltonian H(t,x,mu,q,z) = sup_a h together with a maximizer:
// the maximized control part plus the control-free rewards.
inline std::pair<std::vector<double>, double> maximize_hamiltonian(
    const ModelSpec& model, int k, const PathSlice& x, const MuView& mu, const QView& q,
    std::span<const double> z, const MaximizeOptions& opt = {}) {
    auto [a_star, best] = maximize_control_part(model, k, x, mu, z, opt);
    double H = best + model.state_reward(k, x, mu);
    if (!q.empty()) H += model.flow_reward(k, x, mu, q);
    return {std::move(a_star), H};
}

// A per-(path, step) field of adjoint values, e.g. stored regression outputs.
using ZField = std::function<void(int k, const PathSlice& x, std::span<double> z_out)>;

// The measurable maximizer alpha-hat realized as a closed-loop policy: at
// (t_k, x) evaluate the field z and return the maximizer of h. Deterministic
// tie-breaking makes the policy a well-defined function.
inline ClosedLoopPolicy policy_from_z(const ModelSpec& model, const MuView& mu, ZField z_field,
                                      MaximizeOptions opt = {}) {
    ClosedLoopPolicy p;
    p.adim = model.control_set().dim();
    p.eval = [&model, mu, z_field = std::move(z_field), opt](int k, const PathSlice& x,
                                                             std::span<double> a_out) {
        std::vector<double> z(static_cast<std::size_t>(model.state_dim()), 0.0);
        z_field(k, x, z);
        auto [a, value] = maximize_control_part(model, k, x, mu, z, opt);
        (void)value;
        for (std::size_t i = 0; i < a.size(); ++i) a_out[i] = a[i];
    };
    return p;
}

}  // namespace mfgweak
