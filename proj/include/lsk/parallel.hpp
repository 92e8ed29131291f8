#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace lsk {

namespace detail {
inline std::atomic<unsigned>& thread_cap() {
    static std::atomic<unsigned> cap{1};
    return cap;
}
}  // namespace detail

/// Upper bound on worker threads used inside kernels. 0 means hardware concurrency.
inline void set_max_threads(unsigned n) {
    if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
    detail::thread_cap().store(n);
}

inline unsigned max_threads() { return detail::thread_cap().load(); }

/// Applies LSK_THREADS from the environment, if set.
inline void configure_threads_from_env() {
    if (const char* env = std::getenv("LSK_THREADS")) {
        try {
            set_max_threads(static_cast<unsigned>(std::stoul(env)));
        } catch (const std::exception&) {
            // leave the current cap untouched on garbage input
        }
    }
}

/// Runs fn(i) for i in [0, count). Each index is processed by exactly one
/// thread, so results stay bit-identical as long as fn(i) only writes
/// outputs owned by i. `work_per_item` gates threading for tiny jobs.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn, std::size_t work_per_item = 1) {
    const unsigned cap = max_threads();
    const std::size_t total_work = count * std::max<std::size_t>(work_per_item, 1);
    if (cap <= 1 || count < 2 || total_work < (1u << 15)) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(cap, count);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::atomic<std::size_t> next{0};
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace lsk
