#pragma once

#include <cstddef>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace hsq {

// Worker cap: explicit value > 0 wins, else HSQ_THREADS, else hardware.
inline int resolve_threads(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("HSQ_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

// Splits [0, n) into one contiguous chunk per worker and runs
// fn(worker, begin, end). Chunk boundaries depend only on (n, threads), so
// per-chunk outputs merged in worker order are deterministic for a fixed
// thread count.
inline void parallel_chunks(std::size_t n, int threads,
                            const std::function<void(int, std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const auto workers = static_cast<std::size_t>(threads < 1 ? 1 : threads);
    if (workers == 1 || n == 1) {
        fn(0, 0, n);
        return;
    }
    const std::size_t used = std::min(workers, n);
    const std::size_t chunk = (n + used - 1) / used;
    std::vector<std::thread> pool;
    pool.reserve(used);
    for (std::size_t w = 0; w < used; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, w, begin, end] { fn(static_cast<int>(w), begin, end); });
    }
    for (auto& t : pool) t.join();
}

} // namespace hsq
