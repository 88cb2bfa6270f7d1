// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace swin3d {

// Splits [0, n) into at most `threads` contiguous chunks and runs
// fn(begin, end, worker) for each. Chunk boundaries depend only on n and
// threads. Worker threads inherit the caller's memory tracker and tag.
// threads <= 1 runs inline.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

// Number of chunks parallel_for will use.
std::size_t worker_count(std::size_t n, std::size_t threads) noexcept;

}  // namespace swin3d
