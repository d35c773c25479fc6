#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlab/errors.hpp"

namespace nlab {

/// Affine drift b(t,x) = drift0 + rate·x with isotropic constant diffusion sigma·I.
///
/// With a Gaussian (or point) initial law the time marginals stay Gaussian, so
/// densities and Nelson drifts are available in closed form.
struct LinearGaussian {
  Eigen::VectorXd drift0;
  double rate = 0.0;
  double sigma = 0.0;
};

/// dX = b(t,X) dt + σ(t,X) dW on [t_start, t_end].
struct SdeSpec {
  using DriftFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
  /// Writes σ(t,x) as a row-major d×d matrix.
  using DiffusionFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;

  std::string name;
  int dim = 1;
  DriftFn drift;
  DiffusionFn diffusion;
  Eigen::VectorXd x0;       ///< initial mean
  double x0_std = 0.0;      ///< > 0: isotropic Gaussian initial law around x0
  double t_start = 0.0;
  double t_end = 1.0;
  double lipschitz_K = 0.0;
  std::optional<LinearGaussian> linear;

  bool deterministic_start() const { return x0_std == 0.0; }
};

/// Catalog. All are linear-Gaussian specs with closed-form marginals.
SdeSpec linear_gaussian_spec(std::string name, const LinearGaussian& lg, const Eigen::VectorXd& x0, double t_start,
                             double t_end, double x0_std = 0.0);
SdeSpec brownian(double sigma = 1.0, int dim = 1, double t_end = 1.0);
SdeSpec constant_drift(const Eigen::VectorXd& b, double sigma, const Eigen::VectorXd& x0, double t_end = 1.0);
SdeSpec ornstein_uhlenbeck(double theta, double sigma, double x0 = 0.0, double t_end = 1.0);

/// Lipschitz and linear-growth spot check on 10⁴ random pairs in [-10,10]^d.
/// Throws SpecRejectedError on violation of the declared constant.
void validate_spec(const SdeSpec& spec, int samples = 10000);

/// Euler–Maruyama sample paths stored row-major as [path][step][component].
struct Ensemble {
  std::shared_ptr<const SdeSpec> spec;  ///< null for loaded or transformed ensembles
  std::size_t n_paths = 0;
  std::size_t steps = 0;  ///< M; the grid has M + 1 nodes
  int dim = 1;
  double dt = 0.0;        ///< spacing of the stored grid
  std::uint64_t seed = 0;
  std::vector<double> grid;
  std::vector<double> data;

  std::size_t nodes() const { return steps + 1; }
  std::span<const double> state(std::size_t path, std::size_t k) const {
    return {data.data() + (path * nodes() + k) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<double> state(std::size_t path, std::size_t k) {
    return {data.data() + (path * nodes() + k) * dim, static_cast<std::size_t>(dim)};
  }
  double at(std::size_t path, std::size_t k, int i = 0) const { return data[(path * nodes() + k) * dim + i]; }

  /// Grid index of time t, or nullopt when t is not a grid node.
  std::optional<std::size_t> index_of(double t) const;
  /// As index_of but throws ArgumentError naming `what`.
  std::size_t require_index(double t, const char* what) const;
};

struct SimulateOptions {
  /// Euler steps per stored grid interval.
  int substeps = 1;
};

/// Euler–Maruyama with normals keyed by (seed, path, step), independent of thread count.
/// Throws SpecRejectedError, ArgumentError, or BlowUpError naming the first failing path.
Ensemble simulate(const SdeSpec& spec, std::size_t n_paths, std::size_t M, std::uint64_t seed,
                  const SimulateOptions& opts = {});

/// Suffix marking the Brownian increments of one stream; initial-law draws use a separate stream.
inline constexpr std::uint64_t kInitialStream = 0x8000000000000000ULL;

struct DensityEstimate {
  double t = 0.0;
  std::vector<double> grid_x;
  std::vector<double> p;
  std::vector<double> dp;  ///< ∂p/∂x of the kernel estimate
  double bandwidth = 0.0;
  double floor = 0.0;      ///< p below this is treated as zero
  bool degenerate = false; ///< all samples coincide; p and dp are empty

  /// Linear interpolation of p and dp; zero outside the grid.
  double density(double x) const;
  double derivative(double x) const;
};

/// Silverman's rule 1.06·s·n^{-1/5}.
double silverman_bandwidth(std::span<const double> samples);

/// Gaussian-kernel estimate of the time-t marginal (d = 1, n_paths >= 1000).
/// bandwidth <= 0 selects Silverman's rule.
DensityEstimate estimate_density(const Ensemble& ens, double t, std::span<const double> grid_x,
                                 double bandwidth = 0.0);

/// Flat little-endian binary: magic "NLAB", u32 version, u64 n_paths, u64 M, u32 d,
/// f64 dt, u64 seed, then row-major f64 path data.
void write_binary(std::ostream& os, const Ensemble& ens);
/// Reads the binary format. The spec is not stored; the grid restarts at t = 0.
Ensemble read_binary(std::istream& is);

/// One row per path, one column per (node, component); header holds the node times.
void write_csv(std::ostream& os, const Ensemble& ens);

}  // namespace nlab
