#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace patrolscope {

// Applies fn to items [0, n) across `workers` threads and keeps results in
// input order, so downstream reductions are independent of the worker count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  if (n == 0) return;
  if (workers <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const unsigned t = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(t);
  threads.reserve(t);
  for (unsigned w = 0; w < t; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += t) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

template <typename In, typename Fn>
auto parallel_map(const std::vector<In>& items, unsigned workers, Fn&& fn) {
  using Out = decltype(fn(items.front()));
  std::vector<Out> out(items.size());
  parallel_for(items.size(), workers, [&](std::size_t i) { out[i] = fn(items[i]); });
  return out;
}

}  // namespace patrolscope
