#pragma once

#include <algorithm>
#include <exception>
#include <span>
#include <thread>
#include <vector>

#include "streambayes/learning.hpp"

namespace streambayes::detail {

// Runs `body(worker, begin, end)` over `count` items split into contiguous chunks; rethrows the
// first failure in chunk order.
template <class Body>
void fan_out(std::size_t count, int workers, Body body) {
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || count <= 1) {
    body(std::size_t{0}, std::size_t{0}, count);
    return;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> threads;
  threads.reserve(w - 1);
  const auto run = [&](std::size_t k) {
    try {
      body(k, k * count / w, (k + 1) * count / w);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  for (std::size_t k = 1; k < w; ++k) threads.emplace_back(run, k);
  run(0);
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Throws Schema when a row's width or values do not fit the model.
void check_rows(const LearnableModel& m, std::span<const DataInstance> rows);

}  // namespace streambayes::detail
