#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace mrp {

// Runs fn(i) for i in [0, n) over `threads` workers with a static
// contiguous partition. fn must write only to slot i of its outputs, which
// keeps results independent of the thread count. The first exception thrown
// by any worker is rethrown on the calling thread.
template <class F>
void parallel_for(int n, int threads, F&& fn) {
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> workers;
    workers.reserve(threads);
    for (int t = 0; t < threads; ++t) {
        const int lo = static_cast<int>(static_cast<long long>(n) * t / threads);
        const int hi = static_cast<int>(static_cast<long long>(n) * (t + 1) / threads);
        workers.emplace_back([&, t, lo, hi] {
            try {
                for (int i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace mrp
