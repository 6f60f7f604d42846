// SPDX-License-Identifier: Apache-2.0
#include "affseq/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace affseq {
namespace {
std::atomic<std::size_t> g_threads{1};
}

void set_num_threads(std::size_t n) { g_threads.store(std::max<std::size_t>(1, n)); }

std::size_t num_threads() noexcept { return g_threads.load(); }

void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn, std::size_t min_parallel,
                  std::size_t workers) {
  if (end <= begin) return;
  std::size_t count = end - begin;
  workers = std::min(workers == 0 ? num_threads() : workers, count);
  if (workers <= 1 || count < min_parallel) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }

  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run_block = [&](std::size_t lo, std::size_t hi) {
    try {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  std::size_t block = (count + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    std::size_t lo = begin + w * block;
    std::size_t hi = std::min(end, lo + block);
    if (lo >= hi) break;
    pool.emplace_back(run_block, lo, hi);
  }
  run_block(begin, std::min(end, begin + block));
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace affseq
