#include "pmedit/harness.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

namespace pmedit {

namespace {
thread_local bool t_inside_worker = false;
}

std::int64_t worker_count() {
  if (const char* env = std::getenv("PM_EDIT_THREADS")) {
    try {
      const long long n = std::stoll(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return std::max<std::int64_t>(1, std::thread::hardware_concurrency());
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  const std::int64_t workers = std::min(worker_count(), n);
  if (workers <= 1 || t_inside_worker) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::mutex mu;
  std::int64_t failed_index = n;
  std::exception_ptr failure;

  auto run = [&](std::int64_t start) {
    t_inside_worker = true;
    for (std::int64_t i = start; i < n; i += workers) {
      try {
        fn(i);
      } catch (...) {
        // Keep the lowest failing index so the surfaced error does not depend on scheduling.
        std::lock_guard lock(mu);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
        break;
      }
    }
    t_inside_worker = false;
  };

  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  for (std::int64_t w = 1; w < workers; ++w) threads.emplace_back(run, w);
  run(0);
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace pmedit
