// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include "swin3d/parallel.hpp"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

#include "swin3d/memory.hpp"

namespace swin3d {

std::size_t worker_count(std::size_t n, std::size_t threads) noexcept {
    if (n == 0) return 0;
    return std::clamp<std::size_t>(threads, 1, n);
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    const std::size_t workers = worker_count(n, threads);
    if (workers == 0) return;
    if (workers == 1) {
        fn(0, n, 0);
        return;
    }
    MemoryTracker* tracker = MemoryTracker::current();
    const MemoryTag tag = MemoryTracker::current_tag();
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = n * w / workers;
        const std::size_t end = n * (w + 1) / workers;
        pool.emplace_back([&, begin, end, w] {
            TrackerScope tracking(tracker);
            TagScope tagging(tag);
            try {
                fn(begin, end, w);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace swin3d
