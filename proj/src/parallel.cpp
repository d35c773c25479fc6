#include "nlab/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace nlab::parallel {

namespace {

std::atomic<unsigned> g_threads{0};

}  // namespace

void set_threads(unsigned n) { g_threads = n; }

unsigned threads() {
  unsigned n = g_threads.load();
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

void for_blocks(std::size_t n_blocks, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n_blocks);
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads(), n_blocks));
  if (workers <= 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) {
      try {
        fn(b);
      } catch (...) {
        errors[b] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t b = next++; b < n_blocks; b = next++) {
          try {
            fn(b);
          } catch (...) {
            errors[b] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace nlab::parallel
