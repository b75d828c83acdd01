#include "lrlc/exec.hpp"

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace lrlc::exec {

namespace {
std::atomic<bool> g_test_mode{false};
std::atomic<unsigned> g_threads{0};
}  // namespace

bool test_mode() { return g_test_mode.load(std::memory_order_relaxed); }
void set_test_mode(bool on) { g_test_mode.store(on, std::memory_order_relaxed); }

unsigned threads() {
  if (test_mode()) return 1;
  unsigned n = g_threads.load(std::memory_order_relaxed);
  if (n == 0) n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

void set_threads(unsigned n) { g_threads.store(n, std::memory_order_relaxed); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
  const unsigned t = threads();
  if (n == 0) return;
  if (t <= 1 || n == 1) {
    body(0, n);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(t, n);
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  std::exception_ptr first_error;
  std::atomic<bool> failed{false};
  auto run = [&](std::size_t begin, std::size_t end) {
    try {
      body(begin, end);
    } catch (...) {
      if (!failed.exchange(true)) first_error = std::current_exception();
    }
  };
  for (std::size_t w = 1; w < workers; ++w) {
    std::size_t begin = w * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(run, begin, end);
  }
  run(0, std::min(chunk, n));
  for (auto& th : pool) th.join();
  if (failed.load()) std::rethrow_exception(first_error);
}

}  // namespace lrlc::exec
