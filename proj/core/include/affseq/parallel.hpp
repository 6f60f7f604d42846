// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace affseq {

/// Process-wide worker count used by parallel kernels. Defaults to 1.
void set_num_threads(std::size_t n);
std::size_t num_threads() noexcept;

/// Runs fn(i) for i in [begin, end), split into contiguous blocks across the
/// configured workers. Each index is visited by exactly one worker, so any
/// kernel that writes only to slot i is deterministic regardless of the worker
/// count. Falls back to a serial loop when the range is below min_parallel.
/// A zero `workers` uses num_threads().
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn, std::size_t min_parallel = 2,
                  std::size_t workers = 0);

}  // namespace affseq
