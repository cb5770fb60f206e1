#include "caldpm/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace caldpm::parallel {

namespace {
std::atomic<int> g_workers{1};
}

void set_workers(int workers) { g_workers = std::max(1, workers); }

int workers() { return g_workers; }

void for_chunks(Eigen::Index n, const std::function<void(Eigen::Index, Eigen::Index, Eigen::Index)>& fn,
                Eigen::Index chunk) {
  const Eigen::Index chunks = chunk_count(n, chunk);
  const int pool = static_cast<int>(std::min<Eigen::Index>(workers(), chunks));
  auto run = [&](Eigen::Index c) { fn(c, c * chunk, std::min(n, (c + 1) * chunk)); };
  if (pool <= 1) {
    for (Eigen::Index c = 0; c < chunks; ++c) run(c);
    return;
  }

  std::atomic<Eigen::Index> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> threads;
  threads.reserve(pool);
  for (int w = 0; w < pool; ++w) {
    threads.emplace_back([&] {
      for (Eigen::Index c = next++; c < chunks; c = next++) {
        try {
          run(c);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  threads.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace caldpm::parallel
