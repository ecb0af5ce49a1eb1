#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace cse {

// Worker count: CSE_THREADS env var when set, hardware concurrency otherwise.
inline int worker_count() {
    if (const char* env = std::getenv("CSE_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw >= 1 ? static_cast<int>(hw) : 1;
}

// Static partition of [0, n) over the workers. Results are deterministic as
// long as f(i) writes only to slot i.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f,
                         int workers = worker_count()) {
    if (n == 0) return;
    if (workers <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    std::vector<std::thread> threads;
    threads.reserve(w);
    for (std::size_t t = 0; t < w; ++t)
        threads.emplace_back([&, t]() {
            for (std::size_t i = t; i < n; i += w) f(i);
        });
    for (auto& th : threads) th.join();
}

} // namespace cse
