#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mfgweak/model.hpp"

namespace mfgweak::models {

// Geometric dynamics: b(t, x, a) = a * x_t and sigma(t, x) = sigma_hat * x_t,
// so the drift-to-volatility ratio a / sigma_hat is state-free and the
// declared bound holds for every state, including the absorbing point 0.
class GbmModel final : public ModelSpec {
  public:
    struct Params {
        double sigma_hat = 0.5;
        double control_cost = 1.0;
        double a_min = -0.2;
        double a_max = 0.2;
        double terminal_lin = 1.0;  // g(x) = terminal_lin * x_T
        InitialLaw initial = InitialLaw::point({1.0});
    };

    explicit GbmModel(Params p)
        : p_(std::move(p)), control_set_(ControlSet::interval(p_.a_min, p_.a_max)) {
        if (!(p_.sigma_hat > 0.0))
            throw UsageError("models::GbmModel: volatility scale must be positive");
    }

    std::string name() const override { return "gbm"; }
    int state_dim() const override { return 1; }
    const ControlSet& control_set() const override { return control_set_; }
    double drift_bound() const override { return control_set_.max_radius() / p_.sigma_hat; }

    void drift(int, const PathSlice& x, const MuView&, std::span<const double> a,
               std::span<double> out) const override {
        out[0] = a[0] * x.current()[0];
    }
    void volatility(int, const PathSlice& x, std::span<double> out) const override {
        out[0] = p_.sigma_hat * x.current()[0];
    }
    // The ratio never touches the state.
    void theta(int, const PathSlice&, const MuView&, std::span<const double> a,
               std::span<double> out) const override {
        out[0] = a[0] / p_.sigma_hat;
    }

    double control_reward(int, const PathSlice&, const MuView&,
                          std::span<const double> a) const override {
        return -p_.control_cost * a[0] * a[0];
    }
    double terminal_reward(const PathSlice& path, const MuView&) const override {
        return p_.terminal_lin * path.state(path.grid().num_steps)[0];
    }

    void sample_initial(Rng& rng, std::span<double> out) const override {
        p_.initial.sample(rng, out);
    }

    bool has_analytic_argmax() const override { return p_.control_cost > 0.0; }
    void analytic_argmax(int, const PathSlice&, const MuView&, std::span<const double> z,
                         std::span<double> a_out) const override {
        a_out[0] = std::min(std::max(z[0] / (2.0 * p_.sigma_hat * p_.control_cost), p_.a_min),
                            p_.a_max);
    }
    bool concave_in_control() const override { return true; }

    const Params& params() const { return p_; }

  private:
    Params p_;
    ControlSet control_set_;
};

}  // namespace mfgweak::models
