#include "nlab/sde.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "nlab/parallel.hpp"
#include "nlab/philox.hpp"

namespace nlab {

SdeSpec linear_gaussian_spec(std::string name, const LinearGaussian& lg, const Eigen::VectorXd& x0, double t_start,
                             double t_end, double x0_std) {
  const int d = static_cast<int>(x0.size());
  if (d < 1 || lg.drift0.size() != d) throw ArgumentError("linear-Gaussian spec: drift and x0 dimensions differ");
  if (lg.sigma < 0.0 || x0_std < 0.0) throw ArgumentError("linear-Gaussian spec: negative diffusion");
  SdeSpec s;
  s.name = std::move(name);
  s.dim = d;
  s.x0 = x0;
  s.x0_std = x0_std;
  s.t_start = t_start;
  s.t_end = t_end;
  s.linear = lg;
  s.drift = [lg](double, std::span<const double> x, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lg.drift0[i] + lg.rate * x[i];
  };
  s.diffusion = [lg, d](double, std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (int i = 0; i < d; ++i) out[i * d + i] = lg.sigma;
  };
  s.lipschitz_K = std::max(std::abs(lg.rate), lg.drift0.norm() + lg.sigma * std::sqrt(double(d)));
  return s;
}

SdeSpec brownian(double sigma, int dim, double t_end) {
  return linear_gaussian_spec("brownian", {Eigen::VectorXd::Zero(dim), 0.0, sigma}, Eigen::VectorXd::Zero(dim), 0.0,
                              t_end);
}

SdeSpec constant_drift(const Eigen::VectorXd& b, double sigma, const Eigen::VectorXd& x0, double t_end) {
  return linear_gaussian_spec("constant-drift", {b, 0.0, sigma}, x0, 0.0, t_end);
}

SdeSpec ornstein_uhlenbeck(double theta, double sigma, double x0, double t_end) {
  if (!(theta > 0.0)) throw ArgumentError("Ornstein-Uhlenbeck needs theta > 0");
  return linear_gaussian_spec("ou", {Eigen::VectorXd::Zero(1), -theta, sigma}, Eigen::VectorXd::Constant(1, x0), 0.0,
                              t_end);
}

void validate_spec(const SdeSpec& spec, int samples) {
  const int d = spec.dim;
  if (d < 1 || spec.x0.size() != d) throw SpecRejectedError("spec '" + spec.name + "': x0 has the wrong dimension");
  if (!spec.drift || !spec.diffusion) throw SpecRejectedError("spec '" + spec.name + "': missing drift or diffusion");
  if (!(spec.t_end > spec.t_start)) throw SpecRejectedError("spec '" + spec.name + "': empty horizon");
  const double K = spec.lipschitz_K;
  const double R = 10.0;
  std::vector<double> x(d), y(d), bx(d), by(d), sx(d * d), sy(d * d);
  constexpr std::uint64_t kCheckSeed = 0x5eed5eedULL;
  for (int s = 0; s < samples; ++s) {
    std::uint64_t idx = 0;
    auto draw = [&] { return keyed_uniform(kCheckSeed, static_cast<std::uint64_t>(s), idx++); };
    double t = spec.t_start + (spec.t_end - spec.t_start) * draw();
    // Half the pairs are close together so local Lipschitz violations show up.
    double spread = (s % 2) ? 1e-3 : 2.0 * R;
    for (int i = 0; i < d; ++i) {
      x[i] = -R + 2.0 * R * draw();
      y[i] = x[i] + spread * (draw() - 0.5);
    }
    spec.drift(t, x, bx);
    spec.drift(t, y, by);
    spec.diffusion(t, x, sx);
    spec.diffusion(t, y, sy);
    double db = 0, ds = 0, dx = 0, nb = 0, ns = 0, nx = 0;
    for (int i = 0; i < d; ++i) {
      db += (bx[i] - by[i]) * (bx[i] - by[i]);
      dx += (x[i] - y[i]) * (x[i] - y[i]);
      nb += bx[i] * bx[i];
      nx += x[i] * x[i];
    }
    for (int i = 0; i < d * d; ++i) {
      ds += (sx[i] - sy[i]) * (sx[i] - sy[i]);
      ns += sx[i] * sx[i];
    }
    const double slack = 1.0 + 1e-9;
    if (std::sqrt(ds) + std::sqrt(db) > K * std::sqrt(dx) * slack + 1e-12)
      throw SpecRejectedError(fmt::format("spec '{}' violates the Lipschitz bound K={} near t={}", spec.name, K, t));
    if (std::sqrt(ns) + std::sqrt(nb) > K * (1.0 + std::sqrt(nx)) * slack + 1e-12)
      throw SpecRejectedError(fmt::format("spec '{}' violates the linear-growth bound K={} near t={}", spec.name, K, t));
  }
}

std::optional<std::size_t> Ensemble::index_of(double t) const {
  if (grid.empty()) return std::nullopt;
  auto it = std::lower_bound(grid.begin(), grid.end(), t);
  const double tol = 1e-6 * dt;
  std::optional<std::size_t> best;
  for (auto cand : {it, it == grid.begin() ? it : it - 1}) {
    if (cand == grid.end()) continue;
    if (std::abs(*cand - t) <= tol) best = static_cast<std::size_t>(cand - grid.begin());
  }
  return best;
}

std::size_t Ensemble::require_index(double t, const char* what) const {
  auto k = index_of(t);
  if (!k) throw ArgumentError(fmt::format("{}: time {} is not on the ensemble grid", what, t));
  return *k;
}

Ensemble simulate(const SdeSpec& spec, std::size_t n_paths, std::size_t M, std::uint64_t seed,
                  const SimulateOptions& opts) {
  validate_spec(spec);
  if (M < 2) throw ArgumentError("simulate: need M >= 2");
  if (n_paths < 1) throw ArgumentError("simulate: need at least one path");
  if (opts.substeps < 1) throw ArgumentError("simulate: substeps must be >= 1");

  const int d = spec.dim;
  const std::size_t sub = static_cast<std::size_t>(opts.substeps);
  Ensemble ens;
  ens.spec = std::make_shared<const SdeSpec>(spec);
  ens.n_paths = n_paths;
  ens.steps = M;
  ens.dim = d;
  ens.dt = (spec.t_end - spec.t_start) / static_cast<double>(M);
  ens.seed = seed;
  ens.data.assign(n_paths * (M + 1) * d, 0.0);

  // Times accumulate by repeated addition, exactly as the states do, so a
  // unit-drift deterministic path reproduces the grid bit for bit.
  const double h = ens.dt / static_cast<double>(sub);
  const double sqrt_h = std::sqrt(h);
  std::vector<double> internal_times(M * sub + 1);
  internal_times[0] = spec.t_start;
  for (std::size_t n = 1; n < internal_times.size(); ++n) internal_times[n] = internal_times[n - 1] + h;
  ens.grid.resize(M + 1);
  for (std::size_t k = 0; k <= M; ++k) ens.grid[k] = internal_times[k * sub];

  // Normals are drawn a Box–Muller pair at a time; the draw index runs
  // sequentially along a path, so the second member is always used next.
  struct NormalStream {
    std::uint64_t seed, path, cached_pair = ~std::uint64_t{0};
    double second = 0.0;
    double operator()(std::uint64_t index) {
      if (index & 1) {
        if ((index >> 1) == cached_pair) return second;
        return keyed_normal(seed, path, index);
      }
      auto pr = keyed_normal_pair(seed, path, index >> 1);
      cached_pair = index >> 1;
      second = pr[1];
      return pr[0];
    }
  };

  const bool affine = spec.linear.has_value();
  parallel::for_blocks(parallel::block_count(n_paths), [&](std::size_t block) {
    std::vector<double> x(d), b(d), sig(d * d), xi(d);
    const std::size_t first = block * parallel::kBlock;
    const std::size_t last = std::min(n_paths, first + parallel::kBlock);
    for (std::size_t p = first; p < last; ++p) {
      for (int i = 0; i < d; ++i)
        x[i] = spec.x0[i] + (spec.x0_std > 0.0 ? spec.x0_std * keyed_normal(seed, kInitialStream | p, i) : 0.0);
      std::copy(x.begin(), x.end(), ens.state(p, 0).begin());
      NormalStream normal{seed, p};
      std::size_t n = 0;
      for (std::size_t k = 1; k <= M; ++k) {
        for (std::size_t j = 0; j < sub; ++j, ++n) {
          const double t = internal_times[n];
          for (int i = 0; i < d; ++i) xi[i] = sqrt_h * normal(n * d + i);
          if (affine) {
            const auto& lg = *spec.linear;
            for (int i = 0; i < d; ++i) x[i] = x[i] + (lg.drift0[i] + lg.rate * x[i]) * h + lg.sigma * xi[i];
          } else {
            spec.drift(t, x, b);
            spec.diffusion(t, x, sig);
            for (int i = 0; i < d; ++i) {
              double noise = 0.0;
              for (int c = 0; c < d; ++c) noise += sig[i * d + c] * xi[c];
              x[i] = x[i] + b[i] * h + noise;
            }
          }
          for (int i = 0; i < d; ++i)
            if (!std::isfinite(x[i]))
              throw BlowUpError(fmt::format("non-finite state on path {} at step {} (t={})", p, n + 1, t + h));
        }
        std::copy(x.begin(), x.end(), ens.state(p, k).begin());
      }
    }
  });
  return ens;
}

double DensityEstimate::density(double x) const {
  if (degenerate || grid_x.empty() || x < grid_x.front() || x > grid_x.back()) return 0.0;
  auto it = std::upper_bound(grid_x.begin(), grid_x.end(), x);
  if (it == grid_x.end()) return p.back();
  std::size_t j = static_cast<std::size_t>(it - grid_x.begin());
  double w = (x - grid_x[j - 1]) / (grid_x[j] - grid_x[j - 1]);
  return (1 - w) * p[j - 1] + w * p[j];
}

double DensityEstimate::derivative(double x) const {
  if (degenerate || grid_x.empty() || x < grid_x.front() || x > grid_x.back()) return 0.0;
  auto it = std::upper_bound(grid_x.begin(), grid_x.end(), x);
  if (it == grid_x.end()) return dp.back();
  std::size_t j = static_cast<std::size_t>(it - grid_x.begin());
  double w = (x - grid_x[j - 1]) / (grid_x[j] - grid_x[j - 1]);
  return (1 - w) * dp[j - 1] + w * dp[j];
}

double silverman_bandwidth(std::span<const double> samples) {
  const double n = static_cast<double>(samples.size());
  if (samples.size() < 2) return 0.0;
  double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  double sd = std::sqrt(ss / (n - 1.0));
  return 1.06 * sd * std::pow(n, -0.2);
}

DensityEstimate estimate_density(const Ensemble& ens, double t, std::span<const double> grid_x, double bandwidth) {
  if (ens.dim != 1) throw ArgumentError("estimate_density supports one-dimensional ensembles only");
  if (ens.n_paths < 1000) throw ArgumentError("estimate_density needs at least 1000 paths");
  const std::size_t k = ens.require_index(t, "estimate_density");
  for (std::size_t j = 1; j < grid_x.size(); ++j)
    if (!(grid_x[j] > grid_x[j - 1])) throw ArgumentError("density grid must be strictly increasing");

  std::vector<double> samples(ens.n_paths);
  for (std::size_t p = 0; p < ens.n_paths; ++p) samples[p] = ens.at(p, k);

  DensityEstimate est;
  est.t = ens.grid[k];
  est.grid_x.assign(grid_x.begin(), grid_x.end());
  const auto [lo, hi] = std::ranges::minmax(samples);
  if (lo == hi) {
    est.degenerate = true;
    return est;
  }
  const double bw = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(samples);
  est.bandwidth = bw;
  est.p.assign(grid_x.size(), 0.0);
  est.dp.assign(grid_x.size(), 0.0);
  const double norm = 1.0 / (static_cast<double>(samples.size()) * bw * std::sqrt(2.0 * std::numbers::pi));
  parallel::for_blocks(grid_x.size(), [&](std::size_t j) {
    double sum = 0.0, dsum = 0.0;
    for (double s : samples) {
      double u = (grid_x[j] - s) / bw;
      double kern = std::exp(-0.5 * u * u);
      sum += kern;
      dsum -= u * kern;
    }
    est.p[j] = sum * norm;
    est.dp[j] = dsum * norm / bw;
  });
  est.floor = 1e-6 * *std::ranges::max_element(est.p);
  return est;
}

namespace {

template <class T>
void put(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw ArgumentError("ensemble file is truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

constexpr std::uint32_t kFormatVersion = 1;

}  // namespace

void write_binary(std::ostream& os, const Ensemble& ens) {
  os.write("NLAB", 4);
  put<std::uint32_t>(os, kFormatVersion);
  put<std::uint64_t>(os, ens.n_paths);
  put<std::uint64_t>(os, ens.steps);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ens.dim));
  put<double>(os, ens.dt);
  put<std::uint64_t>(os, ens.seed);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(ens.data.data()),
             static_cast<std::streamsize>(ens.data.size() * sizeof(double)));
  } else {
    for (double v : ens.data) put<double>(os, v);
  }
}

Ensemble read_binary(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "NLAB", 4) != 0) throw ArgumentError("not an NLAB ensemble file");
  if (get<std::uint32_t>(is) != kFormatVersion) throw ArgumentError("unsupported ensemble file version");
  Ensemble ens;
  ens.n_paths = get<std::uint64_t>(is);
  ens.steps = get<std::uint64_t>(is);
  ens.dim = static_cast<int>(get<std::uint32_t>(is));
  ens.dt = get<double>(is);
  ens.seed = get<std::uint64_t>(is);
  ens.data.resize(ens.n_paths * (ens.steps + 1) * ens.dim);
  for (auto& v : ens.data) v = get<double>(is);
  ens.grid.resize(ens.steps + 1);
  ens.grid[0] = 0.0;
  for (std::size_t k = 1; k <= ens.steps; ++k) ens.grid[k] = ens.grid[k - 1] + ens.dt;
  return ens;
}

void write_csv(std::ostream& os, const Ensemble& ens) {
  for (std::size_t k = 0; k < ens.nodes(); ++k)
    for (int i = 0; i < ens.dim; ++i) {
      if (k || i) os << ',';
      os << (ens.dim == 1 ? fmt::format("{}", ens.grid[k]) : fmt::format("{}#{}", ens.grid[k], i + 1));
    }
  os << '\n';
  std::string line;
  for (std::size_t p = 0; p < ens.n_paths; ++p) {
    line.clear();
    for (std::size_t k = 0; k < ens.nodes(); ++k)
      for (int i = 0; i < ens.dim; ++i) {
        if (k || i) line += ',';
        line += fmt::format("{}", ens.at(p, k, i));
      }
    os << line << '\n';
  }
}

}  // namespace nlab
