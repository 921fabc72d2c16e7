#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mfgweak/model.hpp"

namespace mfgweak::models {

// Weighted fraction of the cloud at or below x at step k: mu_k(-inf, x].
inline double rank_fraction(const MuView& mu, int k, double x) {
    const PathArray& cloud = mu.paths();
    double below = 0.0, total = 0.0;
    for (int m = 0; m < cloud.num_paths(); ++m) {
        double w = mu.weight(m);
        total += w;
        if (cloud.state(m, k)[0] <= x) below += w;
    }
    return total > 0.0 ? below / total : 0.0;
}

// Scalar model whose running reward depends on the rank of the own state in
// the population: f1 = -cost a^2 + amplitude * G(mu_k(-inf, x_k]) with G
// continuous on [0,1]. Oil-production style models use decreasing G; the
// default is the identity.
class RankModel final : public ModelSpec {
  public:
    struct Params {
        double sigma = 1.0;
        double control_cost = 1.0;
        double amplitude = 1.0;
        double a_min = -1.0;
        double a_max = 1.0;
        std::function<double(double)> G = [](double u) { return u; };
        InitialLaw initial = InitialLaw::gaussian1d(0.0, 1.0);
    };

    explicit RankModel(Params p)
        : p_(std::move(p)), control_set_(ControlSet::interval(p_.a_min, p_.a_max)) {
        if (!(p_.sigma > 0.0))
            throw UsageError("models::RankModel: volatility must be positive");
        // Continuity cannot be proven numerically; at least require finite
        // values on a probe grid.
        for (int i = 0; i <= 100; ++i) {
            double v = p_.G(static_cast<double>(i) / 100.0);
            if (!std::isfinite(v))
                throw UsageError("models::RankModel: rank functional non-finite on [0,1]");
        }
    }

    std::string name() const override { return "rank"; }
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
    double state_reward(int k, const PathSlice& x, const MuView& mu) const override {
        if (mu.empty()) return 0.0;
        return p_.amplitude * p_.G(rank_fraction(mu, k, x.current()[0]));
    }
    double terminal_reward(const PathSlice&, const MuView&) const override { return 0.0; }

    void sample_initial(Rng& rng, std::span<double> out) const override {
        p_.initial.sample(rng, out);
    }

    bool has_analytic_argmax() const override { return p_.control_cost > 0.0; }
    void analytic_argmax(int, const PathSlice&, const MuView&, std::span<const double> z,
                         std::span<double> a_out) const override {
        a_out[0] = std::min(std::max(z[0] / (2.0 * p_.sigma * p_.control_cost), p_.a_min),
                            p_.a_max);
    }
    bool concave_in_control() const override { return true; }

    const Params& params() const { return p_; }

  private:
    Params p_;
    ControlSet control_set_;
};

}  // namespace mfgweak::models
