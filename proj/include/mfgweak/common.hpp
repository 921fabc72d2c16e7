#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace mfgweak {

// Error taxonomy. Every message is prefixed "module::operation:" by the
// throw site so failures can be traced without a debugger.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SimulationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// A model evaluation broke one of its own declared guarantees (drift bound,
// finiteness, control-set membership). Distinct from SolverError so the CLI
// can map it to its own exit code.
struct ModelContractViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic seed derivation (splitmix64). Streams for path m of a run
// with base seed s are derived as derive_seed(s, tag..., m) so that the same
// (seed, index) always yields the same stream regardless of thread schedule.
// ---------------------------------------------------------------------------
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = splitmix64(base ^ 0x6a09e667f3bcc908ULL);
    s = splitmix64(s ^ a);
    s = splitmix64(s ^ b);
    return splitmix64(s ^ c);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// ---------------------------------------------------------------------------
// Parallel loop over [0, n). Work is split into a fixed number of chunks that
// does not depend on the thread count, and any reductions done by callers are
// accumulated per chunk and combined in chunk order, so results are bitwise
// reproducible for any --threads value.
// ---------------------------------------------------------------------------
inline int& global_thread_count() {
    static int n = 0;  // 0 = use hardware_concurrency
    return n;
}

inline void set_thread_count(int n) { global_thread_count() = n; }

inline int effective_threads() {
    int n = global_thread_count();
    if (n > 0) return n;
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    const int threads = effective_threads();
    if (threads <= 1 || n < 256) {
        body(0, n);
        return;
    }
    const std::size_t chunks = std::min<std::size_t>(64, n);
    const std::size_t chunk_size = (n + chunks - 1) / chunks;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    std::atomic<std::size_t> next{0};
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                std::size_t c = next.fetch_add(1);
                if (c >= chunks) return;
                std::size_t lo = c * chunk_size;
                std::size_t hi = std::min(n, lo + chunk_size);
                if (lo < hi) body(lo, hi);
            }
        });
    }
    for (auto& th : pool) th.join();
}

// Mean and standard error of a sample.
inline std::pair<double, double> mean_and_se(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    double var = ss / static_cast<double>(xs.size() - 1);
    return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

}  // namespace mfgweak
