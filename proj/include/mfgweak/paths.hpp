#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mfgweak/common.hpp"

namespace mfgweak {

// Uniform time discretization of [0, T].
struct TimeGrid {
    double horizon = 1.0;  // T
    int num_steps = 1;     // N

    TimeGrid() = default;
    TimeGrid(double T, int N) : horizon(T), num_steps(N) {
        if (!(T > 0.0) || N < 1)
            throw UsageError("paths::TimeGrid: need horizon > 0 and num_steps >= 1");
    }

    double dt() const { return horizon / static_cast<double>(num_steps); }
    double time(int k) const { return static_cast<double>(k) * dt(); }
};

// A set of d-dimensional discrete paths on a common grid, row-major
// states[m][k][i]. Immutable once built. The running path integral
// iota[m][k] = dt * sum_{j<k} X[m][j] is materialized at construction time
// because position-from-velocity models need it for every path of the cloud.
class PathArray {
  public:
    PathArray() : uid_(next_uid()) {}
    PathArray(TimeGrid grid, int num_paths, int dim)
        : grid_(grid), num_paths_(num_paths), dim_(dim),
          states_(static_cast<std::size_t>(num_paths) * (grid.num_steps + 1) * dim, 0.0),
          uid_(next_uid()) {}

    const TimeGrid& grid() const { return grid_; }
    int num_paths() const { return num_paths_; }
    int dim() const { return dim_; }
    // Distinguishes array instances for caches keyed on immutable path data.
    std::uint64_t uid() const { return uid_; }

    std::span<const double> state(int m, int k) const {
        return {states_.data() + offset(m, k), static_cast<std::size_t>(dim_)};
    }
    std::span<double> mutable_state(int m, int k) {
        return {states_.data() + offset(m, k), static_cast<std::size_t>(dim_)};
    }
    const double* state_ptr(int m, int k) const { return states_.data() + offset(m, k); }

    // iota(t_k, X[m]) = dt * sum_{j<k} X[m][j], defined for k = 0..N.
    std::span<const double> iota(int m, int k) const {
        return {iota_.data() + offset(m, k), static_cast<std::size_t>(dim_)};
    }
    const double* iota_ptr(int m, int k) const { return iota_.data() + offset(m, k); }

    void build_iota() {
        iota_.assign(states_.size(), 0.0);
        const double dt = grid_.dt();
        for (int m = 0; m < num_paths_; ++m) {
            for (int k = 1; k <= grid_.num_steps; ++k) {
                const double* prev = iota_.data() + offset(m, k - 1);
                const double* x = states_.data() + offset(m, k - 1);
                double* cur = iota_.data() + offset(m, k);
                for (int i = 0; i < dim_; ++i) cur[i] = prev[i] + dt * x[i];
            }
        }
    }

  private:
    std::size_t offset(int m, int k) const {
        return (static_cast<std::size_t>(m) * (grid_.num_steps + 1) + static_cast<std::size_t>(k)) *
               static_cast<std::size_t>(dim_);
    }

    static std::uint64_t next_uid() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1);
    }

    TimeGrid grid_;
    int num_paths_ = 0;
    int dim_ = 0;
    std::vector<double> states_;
    std::vector<double> iota_;
    std::uint64_t uid_ = 0;
};

// A view of one path restricted to steps 0..step(). Coefficients receive
// slices instead of whole paths, so progressive measurability holds by
// construction: the future of the path is simply not reachable.
class PathSlice {
  public:
    PathSlice(const PathArray& src, int path, int step)
        : src_(&src), path_(path), step_(step) {}

    int step() const { return step_; }
    int dim() const { return src_->dim(); }
    const TimeGrid& grid() const { return src_->grid(); }

    std::span<const double> state(int j) const {
        if (j < 0 || j > step_)
            throw UsageError("paths::PathSlice: state index " + std::to_string(j) +
                             " outside visible range [0, " + std::to_string(step_) + "]");
        return src_->state(path_, j);
    }
    std::span<const double> current() const { return src_->state(path_, step_); }

    // Path integral up to t_k; needs states j < k, so k <= step()+1 is visible.
    std::span<const double> iota(int k) const {
        if (k < 0 || k > step_ + 1)
            throw UsageError("paths::PathSlice: iota index outside visible range");
        return src_->iota(path_, k);
    }

  private:
    const PathArray* src_;
    int path_;
    int step_;
};

// iota(t_k, v) = dt * sum_{j<k} v_j computed directly from a slice
// (left-endpoint Riemann sum). The PathArray caches the same quantity; this
// form exists for callers holding only a slice.
inline std::vector<double> path_functional_iota(const PathSlice& v, int k, const TimeGrid& grid) {
    if (k < 0 || k > grid.num_steps)
        throw UsageError("paths::path_functional_iota: step index out of range");
    std::vector<double> out(static_cast<std::size_t>(v.dim()), 0.0);
    const double dt = grid.dt();
    for (int j = 0; j < k; ++j) {
        auto xj = v.state(j);
        for (int i = 0; i < v.dim(); ++i) out[static_cast<std::size_t>(i)] += dt * xj[static_cast<std::size_t>(i)];
    }
    return out;
}

// The fixed Monte Carlo substrate: driftless paths plus the exact Brownian
// increments that produced them. Girsanov weights and the backward regression
// both need those increments, so they are stored, never regenerated.
class PathEnsemble {
  public:
    PathEnsemble() = default;

    const PathArray& paths() const { return paths_; }
    const TimeGrid& grid() const { return paths_.grid(); }
    int num_paths() const { return paths_.num_paths(); }
    int dim() const { return paths_.dim(); }
    std::uint64_t seed() const { return seed_; }

    std::span<const double> increment(int m, int k) const {
        return {increments_.data() + inc_offset(m, k), static_cast<std::size_t>(paths_.dim())};
    }
    const double* increment_ptr(int m, int k) const { return increments_.data() + inc_offset(m, k); }

    std::span<const double> initial_draw(int m) const {
        return {initial_.data() + static_cast<std::size_t>(m) * paths_.dim(),
                static_cast<std::size_t>(paths_.dim())};
    }

    PathSlice slice(int m, int k) const { return PathSlice(paths_, m, k); }
    PathSlice full_path(int m) const { return PathSlice(paths_, m, grid().num_steps); }

    // Internal: used by simulate_driftless only.
    struct Builder;

  private:
    std::size_t inc_offset(int m, int k) const {
        return (static_cast<std::size_t>(m) * paths_.grid().num_steps + static_cast<std::size_t>(k)) *
               static_cast<std::size_t>(paths_.dim());
    }

    PathArray paths_;
    std::vector<double> increments_;
    std::vector<double> initial_;
    std::uint64_t seed_ = 0;

    friend struct Builder;
};

struct PathEnsemble::Builder {
    PathArray paths;
    std::vector<double> increments;
    std::vector<double> initial;
    std::uint64_t seed = 0;

    PathEnsemble finish() && {
        PathEnsemble e;
        e.paths_ = std::move(paths);
        e.increments_ = std::move(increments);
        e.initial_ = std::move(initial);
        e.seed_ = seed;
        e.paths_.build_iota();
        return e;
    }
};

// CSV dump for reproducibility audits: one header line, then one row per
// (path, step) with the state coordinates.
inline void dump_ensemble_csv(const PathEnsemble& e, const std::string& filename) {
    std::ofstream out(filename);
    if (!out)
        throw UsageError("paths::dump_ensemble_csv: cannot open " + filename);
    char buf[64];
    out << "# M=" << e.num_paths() << " N=" << e.grid().num_steps << " d=" << e.dim()
        << " T=";
    std::snprintf(buf, sizeof(buf), "%.17g", e.grid().horizon);
    out << buf << " seed=" << e.seed() << "\n";
    out << "path,step";
    for (int i = 0; i < e.dim(); ++i) out << ",x" << i;
    out << "\n";
    for (int m = 0; m < e.num_paths(); ++m) {
        for (int k = 0; k <= e.grid().num_steps; ++k) {
            out << m << "," << k;
            auto x = e.paths().state(m, k);
            for (int i = 0; i < e.dim(); ++i) {
                std::snprintf(buf, sizeof(buf), "%.17g", x[static_cast<std::size_t>(i)]);
                out << "," << buf;
            }
            out << "\n";
        }
    }
}

}  // namespace mfgweak
