#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mfgweak/model.hpp"

namespace mfgweak::models {

// Scalar test model with clipped linear-quadratic structure: b = a on a
// compact interval, constant volatility, running reward -cost * a^2 and a
// polynomial terminal reward. Uncoupled from the measure and the control law,
// so it has closed-form maximizers and serves as the solver oracle target.
class ClippedLqModel final : public ModelSpec {
  public:
    struct Params {
        double sigma = 1.0;
        double control_cost = 1.0;  // cost >= 0; zero gives a bang-bang model
        double a_min = -1.0;
        double a_max = 1.0;
        // g(x) = terminal_const + terminal_lin * x_T + terminal_quad * x_T^2
        double terminal_const = 0.0;
        double terminal_lin = 0.0;
        double terminal_quad = 0.0;
        InitialLaw initial = InitialLaw::point({0.0});
    };

    explicit ClippedLqModel(Params p)
        : p_(std::move(p)), control_set_(ControlSet::interval(p_.a_min, p_.a_max)) {
        if (!(p_.sigma > 0.0))
            throw UsageError("models::ClippedLqModel: volatility must be positive");
        if (p_.control_cost < 0.0)
            throw UsageError("models::ClippedLqModel: control cost must be nonnegative");
    }

    std::string name() const override { return "clipped_lq"; }
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
        return -p_.control_cost * a[0] * a[0];
    }

    double terminal_reward(const PathSlice& path, const MuView&) const override {
        double x = path.state(path.grid().num_steps)[0];
        return p_.terminal_const + p_.terminal_lin * x + p_.terminal_quad * x * x;
    }

    void sample_initial(Rng& rng, std::span<double> out) const override {
        p_.initial.sample(rng, out);
    }

    bool has_analytic_argmax() const override { return true; }
    // argmax of -cost a^2 + (z/sigma) a on [a_min, a_max].
    void analytic_argmax(int, const PathSlice&, const MuView&, std::span<const double> z,
                         std::span<double> a_out) const override {
        double zs = z[0] / p_.sigma;
        if (p_.control_cost > 0.0) {
            a_out[0] = std::min(std::max(zs / (2.0 * p_.control_cost), p_.a_min), p_.a_max);
        } else {
            a_out[0] = zs > 0.0 ? p_.a_max : p_.a_min;  // z = 0 keeps the smaller corner
        }
    }
    bool concave_in_control() const override { return true; }

    const Params& params() const { return p_; }

  private:
    Params p_;
    ControlSet control_set_;
};

}  // namespace mfgweak::models
