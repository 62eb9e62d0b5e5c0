#include "hvc/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace hvc {

namespace {
std::atomic<int> g_max_threads{0};

int hardware_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}
}  // namespace

void set_max_threads(int n) { g_max_threads.store(n < 0 ? 0 : n); }

int max_threads() {
  int n = g_max_threads.load();
  return n > 0 ? n : hardware_threads();
}

int plan_threads(std::size_t n, int threads) {
  int want = threads > 0 ? threads : max_threads();
  if (n < static_cast<std::size_t>(want)) want = static_cast<int>(n);
  return std::max(want, 1);
}

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t, int)>& body,
                  int threads) {
  if (n == 0) return;
  const int workers = plan_threads(n, threads);
  if (workers == 1) {
    body(0, n, 0);
    return;
  }
  const std::size_t chunk = n / workers;
  const std::size_t rem = n % workers;
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](int w) {
    std::size_t begin = w * chunk + std::min<std::size_t>(w, rem);
    std::size_t end = begin + chunk + (static_cast<std::size_t>(w) < rem ? 1 : 0);
    try {
      body(begin, end, w);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) pool.emplace_back(run, w);
  run(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace hvc
