#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mfgweak/measures.hpp"
#include "mfgweak/model.hpp"

namespace mfgweak::models {

// Flocking with velocity as the state: dV = a dt + sigma dW, positions
// recovered through the path integral iota(t, v) = int_0^t v_s ds (everyone
// starts at the origin). The running reward is
//   -|a|_R^2 - |alignment(t, v, mu)|_Q^2,
// where the alignment vector averages relative velocities of the crowd,
// weighted by one of three neighborhood rules on positions:
//   CS:   phi(|dx|) with phi(r) = c (1 + r^2)^(-beta),
//   NN:   c * indicator(|dx| <= r) normalized by the ball's mass,
//   KNN:  (c / eta) * indicator(|dx| <= quantile radius at mass eta).
// The NN alignment is zero when the ball carries no mass. Terminal reward is
// zero and there is no coupling through the control law.
class FlockingModel final : public ModelSpec {
  public:
    enum class WeightKind { CuckerSmale, NearestNeighbor, KNearest };

    struct Params {
        int dim = 1;
        WeightKind kind = WeightKind::CuckerSmale;
        double cs_c = 1.0;    // scale c > 0 (all rules)
        double cs_beta = 0.0; // CS decay beta >= 0
        double nn_radius = 0.5;   // NN rule
        double knn_eta = 0.3;     // KNN rule, mass level in (0,1)
        std::vector<double> R;    // d x d PSD, empty = identity
        std::vector<double> Q;    // d x d PSD, empty = identity
        double sigma = 0.7;       // scalar volatility (sigma * I)
        double a_min = -1.0;
        double a_max = 1.0;
        InitialLaw initial = InitialLaw::gaussian1d(0.0, 1.0);
    };

    explicit FlockingModel(Params p) : p_(std::move(p)), control_set_(make_box(p_)) {
        const int d = p_.dim;
        if (p_.R.empty()) {
            p_.R.assign(static_cast<std::size_t>(d) * d, 0.0);
            for (int i = 0; i < d; ++i) p_.R[static_cast<std::size_t>(i) * d + i] = 1.0;
        }
        if (p_.Q.empty()) {
            p_.Q.assign(static_cast<std::size_t>(d) * d, 0.0);
            for (int i = 0; i < d; ++i) p_.Q[static_cast<std::size_t>(i) * d + i] = 1.0;
        }
        check_psd(p_.R, d, "R");
        check_psd(p_.Q, d, "Q");
        if (!(p_.sigma > 0.0))
            throw UsageError("models::FlockingModel: volatility must be positive");
        if (!(p_.cs_c > 0.0))
            throw UsageError("models::FlockingModel: alignment scale must be positive");
        if (p_.cs_beta < 0.0)
            throw UsageError("models::FlockingModel: decay exponent must be nonnegative");
        if (p_.kind == WeightKind::NearestNeighbor && !(p_.nn_radius > 0.0))
            throw UsageError("models::FlockingModel: neighbor radius must be positive");
        if (p_.kind == WeightKind::KNearest && !(p_.knn_eta > 0.0 && p_.knn_eta < 1.0))
            throw UsageError("models::FlockingModel: neighbor fraction must lie in (0,1)");
        r_diagonal_ = is_diagonal(p_.R, d);
    }

    std::string name() const override {
        switch (p_.kind) {
            case WeightKind::CuckerSmale: return "flocking_cs";
            case WeightKind::NearestNeighbor: return "flocking_nn";
            case WeightKind::KNearest: return "flocking_knn";
        }
        return "flocking";
    }
    int state_dim() const override { return p_.dim; }
    const ControlSet& control_set() const override { return control_set_; }
    double drift_bound() const override {
        // |sigma^{-1} a| <= sqrt(d) * max|a_i| / sigma on the box.
        return std::sqrt(static_cast<double>(p_.dim)) * control_set_.max_radius() / p_.sigma;
    }

    void drift(int, const PathSlice&, const MuView&, std::span<const double> a,
               std::span<double> out) const override {
        for (int i = 0; i < p_.dim; ++i) out[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)];
    }
    void volatility(int, const PathSlice&, std::span<double> out) const override {
        const int d = p_.dim;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                out[static_cast<std::size_t>(i) * d + j] = (i == j) ? p_.sigma : 0.0;
    }
    void theta(int, const PathSlice&, const MuView&, std::span<const double> a,
               std::span<double> out) const override {
        for (int i = 0; i < p_.dim; ++i) out[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)] / p_.sigma;
    }

    double control_reward(int, const PathSlice&, const MuView&,
                          std::span<const double> a) const override {
        return -quad_form(p_.R, a);
    }

    double state_reward(int k, const PathSlice& x, const MuView& mu) const override {
        std::vector<double> w(static_cast<std::size_t>(p_.dim), 0.0);
        alignment(k, x, mu, w);
        return -quad_form(p_.Q, w);
    }

    double terminal_reward(const PathSlice&, const MuView&) const override { return 0.0; }

    void sample_initial(Rng& rng, std::span<double> out) const override {
        p_.initial.sample(rng, out);
    }

    bool has_analytic_argmax() const override { return r_diagonal_; }
    // Per axis: argmax of -R_ii a_i^2 + (z_i / sigma) a_i on the box.
    void analytic_argmax(int, const PathSlice&, const MuView&, std::span<const double> z,
                         std::span<double> a_out) const override {
        const int d = p_.dim;
        for (int i = 0; i < d; ++i) {
            auto ii = static_cast<std::size_t>(i);
            double rii = p_.R[ii * d + ii];
            double zi = z[ii] / p_.sigma;
            double lo = control_set_.lower()[ii], hi = control_set_.upper()[ii];
            if (rii > 0.0)
                a_out[ii] = std::min(std::max(zi / (2.0 * rii), lo), hi);
            else
                a_out[ii] = zi > 0.0 ? hi : lo;
        }
    }
    bool concave_in_control() const override { return true; }

    // Positions and their interactions with velocity enter the value process,
    // so the regression basis is extended with iota, iota^2 and v * iota.
    int num_extra_features() const override { return 3 * p_.dim; }
    double extra_feature(int j, int k, const PathSlice& x) const override {
        const int d = p_.dim;
        int which = j / d, i = j % d;
        double pos = x.iota(k)[static_cast<std::size_t>(i)];
        if (which == 0) return pos;
        if (which == 1) return pos * pos;
        return x.current()[static_cast<std::size_t>(i)] * pos;
    }

    // The weighted average of relative velocities under the configured rule.
    void alignment(int k, const PathSlice& x, const MuView& mu, std::span<double> out) const {
        const int d = p_.dim;
        for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(i)] = 0.0;
        if (mu.empty()) return;
        const PathArray& cloud = mu.paths();
        const int M = cloud.num_paths();
        auto vt = x.current();
        auto own_pos = x.iota(k);

        double radius = 0.0;
        if (p_.kind == WeightKind::NearestNeighbor) {
            radius = p_.nn_radius;
        } else if (p_.kind == WeightKind::KNearest) {
            radius = knn_radius(k, cloud, mu, own_pos);
        }

        double num[8] = {0, 0, 0, 0, 0, 0, 0, 0};
        double denom = 0.0, total = 0.0;
        const double phi_const = p_.cs_c;  // beta = 0 and the neighbor rules
        const bool cs = p_.kind == WeightKind::CuckerSmale;
        const bool cs_flat = cs && p_.cs_beta == 0.0;
        for (int m = 0; m < M; ++m) {
            const double wt = mu.weight(m);
            total += wt;
            const double* vm = cloud.state_ptr(m, k);
            const double* pm = cloud.iota_ptr(m, k);
            double dist2 = 0.0;
            for (int i = 0; i < d; ++i) {
                double dp = pm[i] - own_pos[static_cast<std::size_t>(i)];
                dist2 += dp * dp;
            }
            if (cs) {
                double phi = cs_flat ? phi_const
                             : p_.cs_beta == 1.0
                                 ? p_.cs_c / (1.0 + dist2)
                                 : p_.cs_c * std::pow(1.0 + dist2, -p_.cs_beta);
                for (int i = 0; i < d; ++i)
                    num[i] += wt * (vm[i] - vt[static_cast<std::size_t>(i)]) * phi;
                denom += wt;
            } else if (dist2 <= radius * radius) {
                for (int i = 0; i < d; ++i)
                    num[i] += wt * (vm[i] - vt[static_cast<std::size_t>(i)]) * phi_const;
                denom += wt;
            }
        }
        if (p_.kind == WeightKind::KNearest) denom = p_.knn_eta * total;
        if (denom <= 0.0) return;  // empty neighborhood: alignment is zero
        for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(i)] = num[i] / denom;
    }

    // Quantile radius of the position cloud around the own position. Scalar
    // positions use a cached sort of the cloud and expand a closed ball over
    // it; anything else falls back to the generic routine.
    double knn_radius(int k, const PathArray& cloud, const MuView& mu,
                      std::span<const double> own_pos) const {
        const int d = p_.dim;
        const int M = cloud.num_paths();
        if (d != 1) {
            std::vector<double> positions(static_cast<std::size_t>(M) * d);
            std::vector<double> wts(static_cast<std::size_t>(M));
            for (int m = 0; m < M; ++m) {
                const double* pm = cloud.iota_ptr(m, k);
                for (int i = 0; i < d; ++i) positions[static_cast<std::size_t>(m) * d + i] = pm[i];
                wts[static_cast<std::size_t>(m)] = mu.weight(m);
            }
            return quantile_radius(positions, d, wts.data(), own_pos, p_.knn_eta);
        }

        auto sorted_ptr = sorted_positions(k, cloud);
        const auto& sorted = *sorted_ptr;
        double total = 0.0;
        for (int m = 0; m < M; ++m) total += mu.weight(m);
        const double target = p_.knn_eta * total;
        const double x = own_pos[0];

        // Two cursors expanding the closed ball outward; entries at equal
        // distance are absorbed together before the mass test, matching the
        // generic routine's tie handling.
        auto cmp = [](const std::pair<double, int>& a, double v) { return a.first < v; };
        int j = static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), x, cmp) -
                                 sorted.begin());
        int i = j - 1;
        double cum = 0.0, r = 0.0;
        while (i >= 0 || j < M) {
            double dl = i >= 0 ? std::abs(sorted[static_cast<std::size_t>(i)].first - x)
                               : std::numeric_limits<double>::infinity();
            double dr = j < M ? std::abs(sorted[static_cast<std::size_t>(j)].first - x)
                              : std::numeric_limits<double>::infinity();
            r = std::min(dl, dr);
            while (i >= 0 && std::abs(sorted[static_cast<std::size_t>(i)].first - x) == r)
                cum += mu.weight(sorted[static_cast<std::size_t>(i--)].second);
            while (j < M && std::abs(sorted[static_cast<std::size_t>(j)].first - x) == r)
                cum += mu.weight(sorted[static_cast<std::size_t>(j++)].second);
            if (cum >= target) return r;
        }
        return r;
    }

    const Params& params() const { return p_; }

  private:
    static ControlSet make_box(const Params& p) {
        std::vector<double> lo(static_cast<std::size_t>(p.dim), p.a_min);
        std::vector<double> hi(static_cast<std::size_t>(p.dim), p.a_max);
        return ControlSet::box(std::move(lo), std::move(hi));
    }

    static void check_psd(const std::vector<double>& m, int d, const char* which) {
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            M(m.data(), d, d);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
        if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < -1e-10)
            throw UsageError(std::string("models::FlockingModel: matrix ") + which +
                             " must be positive semidefinite");
    }

    static bool is_diagonal(const std::vector<double>& m, int d) {
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                if (i != j && m[static_cast<std::size_t>(i) * d + j] != 0.0) return false;
        return true;
    }

    double quad_form(const std::vector<double>& m, std::span<const double> v) const {
        const int d = p_.dim;
        double acc = 0.0;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                acc += v[static_cast<std::size_t>(i)] * m[static_cast<std::size_t>(i) * d + j] *
                       v[static_cast<std::size_t>(j)];
        return acc;
    }

    // Sorted scalar positions per (cloud, step). Path arrays are immutable
    // once built, so entries are computed once; the map is bounded to keep
    // long runs from accumulating dead ensembles.
    using SortedPositions = std::vector<std::pair<double, int>>;
    std::shared_ptr<const SortedPositions> sorted_positions(int k, const PathArray& cloud) const {
        auto key = std::make_pair(cloud.uid(), k);
        {
            std::lock_guard<std::mutex> lock(cache_mu_);
            auto it = pos_cache_.find(key);
            if (it != pos_cache_.end()) return it->second;
        }
        auto sorted = std::make_shared<SortedPositions>(
            static_cast<std::size_t>(cloud.num_paths()));
        for (int m = 0; m < cloud.num_paths(); ++m)
            (*sorted)[static_cast<std::size_t>(m)] = {cloud.iota_ptr(m, k)[0], m};
        std::sort(sorted->begin(), sorted->end());
        std::lock_guard<std::mutex> lock(cache_mu_);
        if (pos_cache_.size() > 4096) pos_cache_.clear();
        return pos_cache_.emplace(key, std::move(sorted)).first->second;
    }

    Params p_;
    ControlSet control_set_;
    bool r_diagonal_ = true;
    mutable std::mutex cache_mu_;
    mutable std::map<std::pair<std::uint64_t, int>, std::shared_ptr<const SortedPositions>>
        pos_cache_;
};

}  // namespace mfgweak::models
