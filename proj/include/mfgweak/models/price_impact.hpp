#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mfgweak/model.hpp"

namespace mfgweak::models {

// Trading game with permanent price impact, in reduced form: the state is the
// inventory X with dX = a dt + sigma dW, and the interaction enters through
// the law q of the trading rates,
//   f(t, x, mu, q, a) = gamma * x_t * <c', q> - c(a) - f_ag(t, x_t),
// with terminal reward g(x_T). Price and cash never appear: the risk-neutral
// reduction removes them before anything is simulated.
class PriceImpactModel final : public ModelSpec {
  public:
    struct Params {
        double gamma = 1.0;  // permanent impact scale
        double sigma = 1.0;
        double a_min = -1.0;
        double a_max = 1.0;
        // Transaction cost c (convex, c(0) = 0) and its derivative. Defaults
        // to the quadratic book c(a) = a^2.
        std::function<double(double)> cost = [](double a) { return a * a; };
        std::function<double(double)> cost_prime = [](double a) { return 2.0 * a; };
        bool cost_is_quadratic = true;  // enables the closed-form argmax
        // Agency costs: f_ag(t, x) = agency_quad * x^2 + agency_abs * |x|.
        double agency_quad = 0.0;
        double agency_abs = 0.0;
        // Terminal reward g(x) = -terminal_penalty * x^2.
        double terminal_penalty = 0.5;
        InitialLaw initial = InitialLaw::point({1.0});
        double psi_rate = 0.5;  // growth gauge exp(psi_rate * sup |x|)
    };

    explicit PriceImpactModel(Params p)
        : p_(std::move(p)), control_set_(ControlSet::interval(p_.a_min, p_.a_max)) {
        if (!(p_.gamma > 0.0))
            throw UsageError("models::PriceImpactModel: impact scale must be positive");
        if (!(p_.sigma > 0.0))
            throw UsageError("models::PriceImpactModel: volatility must be positive");
        if (!(p_.a_min <= 0.0 && p_.a_max >= 0.0))
            throw UsageError("models::PriceImpactModel: control interval must contain 0");
        if (std::abs(p_.cost(0.0)) > 1e-14)
            throw UsageError("models::PriceImpactModel: transaction cost must vanish at 0");
    }

    std::string name() const override { return "price_impact"; }
    int state_dim() const override { return 1; }
    const ControlSet& control_set() const override { return control_set_; }
    double drift_bound() const override { return control_set_.max_radius() / p_.sigma; }

    void drift(int, const PathSlice&, const MuView&, std::span<const double> a,
               std::span<double> out) const override {
        out[0] = a[0];
    }
    void volatility(int, const PathSlice&, std::span<double> out) const override {
        out[0] = p_.sigma;
    }
    void theta(int, const PathSlice&, const MuView&, std::span<const double> a,
               std::span<double> out) const override {
        out[0] = a[0] / p_.sigma;
    }

    double control_reward(int, const PathSlice&, const MuView&,
                          std::span<const double> a) const override {
        return -p_.cost(a[0]);
    }
    double state_reward(int, const PathSlice& x, const MuView&) const override {
        if (p_.agency_quad == 0.0 && p_.agency_abs == 0.0) return 0.0;
        double xt = x.current()[0];
        return -(p_.agency_quad * xt * xt + p_.agency_abs * std::abs(xt));
    }
    double flow_reward(int, const PathSlice& x, const MuView&, const QView& q) const override {
        return p_.gamma * x.current()[0] * q.feature_mean(0);
    }
    double terminal_reward(const PathSlice& path, const MuView&) const override {
        double x = path.state(path.grid().num_steps)[0];
        return -p_.terminal_penalty * x * x;
    }

    void sample_initial(Rng& rng, std::span<double> out) const override {
        p_.initial.sample(rng, out);
    }

    double growth_gauge(const PathSlice& path) const override {
        double sup = 0.0;
        for (int k = 0; k <= path.step(); ++k) sup = std::max(sup, std::abs(path.state(k)[0]));
        return std::exp(p_.psi_rate * sup);
    }

    bool has_analytic_argmax() const override { return p_.cost_is_quadratic; }
    // argmax of -a^2 + (z/sigma) a on the control interval.
    void analytic_argmax(int, const PathSlice&, const MuView&, std::span<const double> z,
                         std::span<double> a_out) const override {
        a_out[0] = std::min(std::max(z[0] / (2.0 * p_.sigma), p_.a_min), p_.a_max);
    }
    bool concave_in_control() const override { return true; }  // c convex

    // The flow caches the mean marginal cost <c', q_t>.
    int num_control_features() const override { return 1; }
    double control_feature(int, std::span<const double> a) const override {
        return p_.cost_prime(a[0]);
    }

    const Params& params() const { return p_; }

  private:
    Params p_;
    ControlSet control_set_;
};

}  // namespace mfgweak::models
