#pragma once

#include <cstddef>
#include <functional>

namespace nlab::parallel {

/// Worker count used by ensemble simulation and Monte Carlo reductions.
/// Results never depend on it: work is split into fixed blocks reduced in block order.
void set_threads(unsigned n);
unsigned threads();

/// Paths per reduction block. Fixed so that summation order is thread-count independent.
inline constexpr std::size_t kBlock = 2048;

inline std::size_t block_count(std::size_t n) { return (n + kBlock - 1) / kBlock; }

/// Calls fn(b) for every block b in [0, n_blocks). If any call throws, the
/// exception from the lowest block index is rethrown after all workers finish.
void for_blocks(std::size_t n_blocks, const std::function<void(std::size_t)>& fn);

}  // namespace nlab::parallel
