#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace subflow {

// Resolves a requested thread count: values < 1 fall back to the
// SUBFLOW_THREADS environment variable, then to 1.
int resolve_threads(int requested);

// Splits [0, n) into `chunks` contiguous ranges and calls fn(chunk, begin, end)
// for each, one thread per chunk. The partition depends only on (n, chunks).
template <typename Fn>
void parallel_chunks(int n, int chunks, Fn&& fn) {
  chunks = std::max(1, std::min(chunks, n));
  if (chunks <= 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chunks));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(chunks));
  for (int c = 0; c < chunks; ++c) {
    const int begin = static_cast<int>(static_cast<long long>(n) * c / chunks);
    const int end = static_cast<int>(static_cast<long long>(n) * (c + 1) / chunks);
    pool.emplace_back([&, c, begin, end] {
      try {
        fn(c, begin, end);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace subflow
