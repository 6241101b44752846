#include "evrecon/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace evrecon {

int worker_thread_count() {
  if (const char* env = std::getenv("EVRECON_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(int begin, int end, const std::function<void(int)>& fn) {
  const int count = end - begin;
  if (count <= 0) return;

  const int num_threads = std::min(worker_thread_count(), count);
  if (num_threads <= 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }

  std::vector<std::exception_ptr> errors(num_threads);
  std::vector<std::thread> threads;
  threads.reserve(num_threads);
  for (int t = 0; t < num_threads; ++t) {
    const int chunk_begin = begin + static_cast<int>(int64_t(count) * t / num_threads);
    const int chunk_end = begin + static_cast<int>(int64_t(count) * (t + 1) / num_threads);
    threads.emplace_back([&, t, chunk_begin, chunk_end] {
      try {
        for (int i = chunk_begin; i < chunk_end; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& thread : threads) thread.join();
  for (const auto& error : errors) {
    if (error) std::rethrow_exception(error);
  }
}

}  // namespace evrecon
