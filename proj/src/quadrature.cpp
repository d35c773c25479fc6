#include "nlab/quadrature.hpp"

#include "nlab/errors.hpp"

namespace nlab {

std::vector<double> simpson_weights(std::span<const double> grid) {
  const std::size_t n = grid.size();
  if (n < 3) throw ArgumentError("Simpson quadrature needs at least 3 grid points");
  for (std::size_t i = 1; i < n; ++i)
    if (!(grid[i] > grid[i - 1])) throw ArgumentError("quadrature grid must be strictly increasing");

  std::vector<double> w(n, 0.0);
  const std::size_t intervals = n - 1;
  const std::size_t paired = intervals - intervals % 2;
  for (std::size_t i = 0; i < paired; i += 2) {
    double h0 = grid[i + 1] - grid[i];
    double h1 = grid[i + 2] - grid[i + 1];
    double s = (h0 + h1) / 6.0;
    w[i] += s * (2.0 - h1 / h0);
    w[i + 1] += s * (h0 + h1) * (h0 + h1) / (h0 * h1);
    w[i + 2] += s * (2.0 - h0 / h1);
  }
  if (intervals % 2) {
    double h0 = grid[n - 2] - grid[n - 3];
    double h1 = grid[n - 1] - grid[n - 2];
    w[n - 1] += (2.0 * h1 * h1 + 3.0 * h0 * h1) / (6.0 * (h0 + h1));
    w[n - 2] += (h1 * h1 + 3.0 * h0 * h1) / (6.0 * h0);
    w[n - 3] -= h1 * h1 * h1 / (6.0 * h0 * (h0 + h1));
  }
  return w;
}

}  // namespace nlab
