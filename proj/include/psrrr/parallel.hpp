#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace psrrr {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Items are claimed dynamically,
/// so fn must write only to slot i of any shared output. The first exception thrown by
/// any item is rethrown after all threads join.
template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        while (!failed.load(std::memory_order_relaxed)) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                failed = true;
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const auto count = std::min<std::size_t>(workers, n);
        pool.reserve(count);
        for (std::size_t t = 0; t < count; ++t) pool.emplace_back(body);
    }
    if (error) std::rethrow_exception(error);
}

/// Maps fn over [0, n) in parallel; output order is the index order.
template <class T, class Fn>
std::vector<T> parallel_map(std::size_t n, unsigned workers, Fn&& fn) {
    std::vector<T> out(n);
    parallel_for(n, workers, [&](std::size_t i) { out[i] = fn(i); });
    return out;
}

} // namespace psrrr
