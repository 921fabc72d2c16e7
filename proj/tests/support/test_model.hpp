#pragma once

// Configurable model for tests: every coefficient is a lambda with a simple
// default (b = a, sigma = 1, zero rewards, point-mass start at 0, A = [-1,1]).

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mfgweak/model.hpp"

namespace mfgweak::testing {

class TestModel : public ModelSpec {
  public:
    int dim = 1;
    ControlSet A = ControlSet::interval(-1.0, 1.0);
    double sigma_const = 1.0;
    double bound = -1.0;  // < 0 = derive from A and sigma_const
    InitialLaw initial = InitialLaw::point({0.0});
    bool concave = false;
    bool analytic = false;
    bool mean_field_drift = false;

    std::function<void(int, const PathSlice&, std::span<double>)> sigma_fn;
    std::function<void(int, const PathSlice&, const MuView&, std::span<const double>,
                       std::span<double>)>
        drift_fn;
    std::function<double(int, const PathSlice&, const MuView&, std::span<const double>)>
        control_reward_fn;
    std::function<double(int, const PathSlice&, const MuView&)> state_reward_fn;
    std::function<double(int, const PathSlice&, const MuView&, const QView&)> flow_reward_fn;
    std::function<double(const PathSlice&, const MuView&)> terminal_fn;
    std::function<void(int, const PathSlice&, const MuView&, std::span<const double>,
                       std::span<double>)>
        argmax_fn;

    std::string name() const override { return "test_model"; }
    int state_dim() const override { return dim; }
    const ControlSet& control_set() const override { return A; }
    double drift_bound() const override {
        if (bound >= 0.0) return bound;
        return std::sqrt(static_cast<double>(dim)) * A.max_radius() /
               std::max(sigma_const, 1e-12);
    }

    void drift(int k, const PathSlice& x, const MuView& mu, std::span<const double> a,
               std::span<double> out) const override {
        if (drift_fn) {
            drift_fn(k, x, mu, a, out);
            return;
        }
        for (int i = 0; i < dim; ++i)
            out[static_cast<std::size_t>(i)] =
                i < static_cast<int>(a.size()) ? a[static_cast<std::size_t>(i)] : 0.0;
    }
    void volatility(int k, const PathSlice& x, std::span<double> out) const override {
        if (sigma_fn) {
            sigma_fn(k, x, out);
            return;
        }
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j)
                out[static_cast<std::size_t>(i) * dim + j] = i == j ? sigma_const : 0.0;
    }

    double control_reward(int k, const PathSlice& x, const MuView& mu,
                          std::span<const double> a) const override {
        return control_reward_fn ? control_reward_fn(k, x, mu, a) : 0.0;
    }
    double state_reward(int k, const PathSlice& x, const MuView& mu) const override {
        return state_reward_fn ? state_reward_fn(k, x, mu) : 0.0;
    }
    double flow_reward(int k, const PathSlice& x, const MuView& mu,
                       const QView& q) const override {
        return flow_reward_fn ? flow_reward_fn(k, x, mu, q) : 0.0;
    }
    double terminal_reward(const PathSlice& path, const MuView& mu) const override {
        return terminal_fn ? terminal_fn(path, mu) : 0.0;
    }

    void sample_initial(Rng& rng, std::span<double> out) const override {
        initial.sample(rng, out);
    }

    bool has_analytic_argmax() const override { return analytic && argmax_fn != nullptr; }
    void analytic_argmax(int k, const PathSlice& x, const MuView& mu, std::span<const double> z,
                         std::span<double> a_out) const override {
        argmax_fn(k, x, mu, z, a_out);
    }
    bool concave_in_control() const override { return concave; }
    bool drift_has_mean_field() const override { return mean_field_drift; }
};

}  // namespace mfgweak::testing
