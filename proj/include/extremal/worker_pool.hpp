#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace extremal {

/// Runs body(i) for i in [0, count) on up to `threads` workers.  Work items
/// claim indices from a shared counter, so results must be written to
/// index-addressed slots by the body; completion order never leaks into the
/// output.  The first exception wins and is rethrown on the calling thread
/// after all workers stop.
inline void parallel_for(long count, int threads, const std::function<void(long)>& body) {
    if (count <= 0) return;
    int n_workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    if (n_workers < 1) n_workers = 1;
    if (n_workers > count) n_workers = static_cast<int>(count);

    if (n_workers == 1) {
        for (long i = 0; i < count; ++i) body(i);
        return;
    }

    std::atomic<long> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&] {
        while (!failed.load(std::memory_order_relaxed)) {
            const long i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= count) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                failed.store(true, std::memory_order_relaxed);
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

/// splitmix64: tiny deterministic stream seeded per task so work-stealing
/// order cannot change the random numbers a task sees.
struct SplitMix64 {
    uint64_t state;

    explicit SplitMix64(uint64_t seed) : state(seed) {}
    SplitMix64(uint64_t seed, uint64_t task_index)
        : state(seed ^ (0x9e3779b97f4a7c15ULL * (task_index + 1))) {}

    uint64_t next() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
};

} // namespace extremal
