#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <type_traits>
#include <vector>

namespace latentad {

/// Runs fn(i) or fn(i, worker) for i in [0, n) on up to `workers` threads, each task
/// claimed dynamically. The first exception thrown by any task is rethrown after all
/// threads join.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    auto call = [&](std::size_t i, std::size_t w) {
        if constexpr (std::is_invocable_v<Fn&, std::size_t, std::size_t>) {
            fn(i, w);
        } else {
            fn(i);
        }
    };
    const std::size_t threads =
        std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) call(i, 0);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    call(i, w);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace latentad
