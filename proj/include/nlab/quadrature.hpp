#pragma once

#include <span>
#include <vector>

namespace nlab {

/// Composite Simpson weights on a strictly increasing (possibly non-uniform) grid.
///
/// Pairs of intervals use the three-point rule; an odd trailing interval is
/// integrated with the quadratic through the last three nodes. Needs >= 3 nodes.
std::vector<double> simpson_weights(std::span<const double> grid);

template <class T>
T simpson(std::span<const double> grid, std::span<const T> values) {
  auto w = simpson_weights(grid);
  T sum = T(0.0);
  for (std::size_t i = 0; i < w.size(); ++i) sum = sum + w[i] * values[i];
  return sum;
}

}  // namespace nlab
