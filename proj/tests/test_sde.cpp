#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "nlab/parallel.hpp"
#include "nlab/philox.hpp"
#include "nlab/sde.hpp"
#include "support.hpp"

using namespace nlab;
using nlab::testing::vec;

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments_at(const Ensemble& ens, std::size_t k) {
  Moments m;
  const double n = static_cast<double>(ens.n_paths);
  for (std::size_t p = 0; p < ens.n_paths; ++p) m.mean += ens.at(p, k);
  m.mean /= n;
  for (std::size_t p = 0; p < ens.n_paths; ++p) m.var += (ens.at(p, k) - m.mean) * (ens.at(p, k) - m.mean);
  m.var /= n - 1.0;
  return m;
}

double normal_pdf(double x, double var) { return std::exp(-0.5 * x * x / var) / std::sqrt(2.0 * std::numbers::pi * var); }

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) xs[i] = lo + (hi - lo) * i / (n - 1);
  return xs;
}

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return s;
}

}  // namespace

TEST_CASE("Philox4x32-10 reproduces the published known-answer vectors") {
  using C = Philox4x32::Counter;
  CHECK(Philox4x32::block(C{0, 0, 0, 0}, {0, 0}) == C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(Philox4x32::block(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(Philox4x32::block(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("keyed normals have unit moments and are addressable") {
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double z = keyed_normal(7, 3, i);
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(s2 / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
  CHECK(keyed_normal(7, 3, 11) == keyed_normal(7, 3, 11));
  CHECK(keyed_normal(7, 3, 11) != keyed_normal(7, 4, 11));
  CHECK(keyed_normal(7, 3, 11) != keyed_normal(8, 3, 11));
}

TEST_CASE("zero-noise unit drift reproduces the grid exactly") {
  auto spec = constant_drift(vec({1.0}), 0.0, vec({0.0}), 1.0);
  auto ens = simulate(spec, 50, 1000, 1);
  REQUIRE(ens.grid.size() == 1001);
  CHECK(ens.grid.front() == 0.0);
  CHECK(ens.grid.back() == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t p = 0; p < ens.n_paths; ++p)
    for (std::size_t k = 0; k < ens.nodes(); ++k) REQUIRE(ens.at(p, k) == ens.grid[k]);
}

TEST_CASE("deterministic initial state is shared by every path") {
  auto ens = simulate(constant_drift(vec({0.2, -0.1}), 0.5, vec({1.5, -2.0}), 1.0), 300, 10, 9);
  for (std::size_t p = 0; p < ens.n_paths; ++p) {
    CHECK(ens.at(p, 0, 0) == 1.5);
    CHECK(ens.at(p, 0, 1) == -2.0);
  }
}

TEST_CASE("Brownian moments at t = 1") {
  auto ens = simulate(brownian(1.0), 100000, 100, 20240101);
  auto m = moments_at(ens, ens.steps);
  CHECK(std::abs(m.mean) <= 4.0 / std::sqrt(1e5));
  CHECK(std::abs(m.var - 1.0) <= 0.02);
}

TEST_CASE("Ornstein-Uhlenbeck reaches its stationary variance") {
  auto ens = simulate(ornstein_uhlenbeck(1.0, std::sqrt(2.0), 0.0, 5.0), 100000, 50, 77, {.substeps = 20});
  auto m = moments_at(ens, ens.steps);
  CHECK(std::abs(m.mean) <= 4.0 / std::sqrt(1e5));
  CHECK(std::abs(m.var - 1.0) <= 0.02);
}

TEST_CASE("Gaussian initial law has the requested spread") {
  auto spec = linear_gaussian_spec("spread", {vec({0.0}), 0.0, 0.0}, vec({3.0}), 0.0, 1.0, 0.5);
  auto ens = simulate(spec, 50000, 4, 5);
  auto m = moments_at(ens, 0);
  CHECK(std::abs(m.mean - 3.0) <= 4.0 * 0.5 / std::sqrt(5e4));
  CHECK(std::abs(m.var - 0.25) <= 0.01);
}

TEST_CASE("Euler bias on the OU mean shrinks at first order") {
  auto bias = [](std::size_t M) {
    auto ens = simulate(ornstein_uhlenbeck(1.0, 0.1, 1.0, 1.0), 10000, M, 3);
    return std::abs(moments_at(ens, M).mean - std::exp(-1.0));
  };
  double coarse = bias(10), fine = bias(20);
  CHECK(coarse / fine == doctest::Approx(2.0).epsilon(0.2));
}

TEST_CASE("ensembles are bit-identical across thread counts") {
  auto spec = ornstein_uhlenbeck(0.7, 1.1, 0.3, 2.0);
  parallel::set_threads(1);
  auto a = simulate(spec, 5000, 64, 42, {.substeps = 2});
  parallel::set_threads(8);
  auto b = simulate(spec, 5000, 64, 42, {.substeps = 2});
  parallel::set_threads(0);
  CHECK(a.data == b.data);
  auto c = simulate(spec, 5000, 64, 43, {.substeps = 2});
  CHECK(a.data != c.data);
}

TEST_CASE("spec validation rejects a declared constant that is too small") {
  auto spec = ornstein_uhlenbeck(2.0, 1.0);
  spec.lipschitz_K = 1.0;
  CHECK_THROWS_AS(validate_spec(spec), SpecRejectedError);
  CHECK_THROWS_AS(simulate(spec, 10, 10, 1), SpecRejectedError);
  CHECK_NOTHROW(validate_spec(ornstein_uhlenbeck(2.0, 1.0)));
  CHECK_THROWS_AS(simulate(brownian(), 10, 1, 1), ArgumentError);
}

TEST_CASE("unstable Euler iteration reports the first failing path") {
  auto spec = linear_gaussian_spec("stiff", {vec({0.0}), 1000.0, 1.0}, vec({1.0}), 0.0, 100.0);
  try {
    simulate(spec, 3000, 200, 1);
    FAIL("expected a blow-up");
  } catch (const BlowUpError& e) {
    CHECK(std::string(e.what()).find("path 0") != std::string::npos);
  }
}

TEST_CASE("kernel density matches the Brownian marginal") {
  auto ens = simulate(brownian(1.0), 100000, 20, 11);
  auto xs = linspace(-2.0, 2.0, 81);
  auto est = estimate_density(ens, 1.0, xs);
  REQUIRE_FALSE(est.degenerate);
  CHECK(est.bandwidth == doctest::Approx(1.06 * std::pow(1e5, -0.2)).epsilon(0.02));
  double sup = 0.0, dsup = 0.0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    CHECK(est.p[j] >= 0.0);
    sup = std::max(sup, std::abs(est.p[j] - normal_pdf(xs[j], 1.0)));
    dsup = std::max(dsup, std::abs(est.dp[j] + xs[j] * normal_pdf(xs[j], 1.0)));
  }
  CHECK(sup <= 0.02);
  CHECK(dsup <= 0.05);
  auto wide = linspace(-6.0, 6.0, 241);
  auto full = estimate_density(ens, 1.0, wide);
  CHECK(trapezoid(wide, full.p) == doctest::Approx(1.0).epsilon(0.02));
  CHECK(est.density(0.025) == doctest::Approx(0.5 * (est.p[40] + est.p[41])));
}

TEST_CASE("kernel density matches the stationary OU law") {
  auto ens = simulate(ornstein_uhlenbeck(1.0, std::sqrt(2.0), 0.0, 5.0), 100000, 50, 13, {.substeps = 20});
  auto xs = linspace(-2.0, 2.0, 41);
  auto est = estimate_density(ens, 5.0, xs);
  double sup = 0.0;
  for (std::size_t j = 0; j < xs.size(); ++j) sup = std::max(sup, std::abs(est.p[j] - normal_pdf(xs[j], 1.0)));
  CHECK(sup <= 0.02);
}

TEST_CASE("density estimation preconditions") {
  auto flat = simulate(constant_drift(vec({1.0}), 0.0, vec({0.0}), 1.0), 1000, 10, 1);
  auto xs = linspace(0.0, 2.0, 5);
  auto est = estimate_density(flat, 0.5, xs);
  CHECK(est.degenerate);
  CHECK(est.density(1.0) == 0.0);
  CHECK_THROWS_AS(estimate_density(flat, 0.55, xs), ArgumentError);
  auto few = simulate(brownian(), 999, 10, 1);
  CHECK_THROWS_AS(estimate_density(few, 1.0, xs), ArgumentError);
}

TEST_CASE("binary round trip preserves the ensemble") {
  auto ens = simulate(constant_drift(vec({0.3, 0.1}), 0.4, vec({0.0, 1.0}), 1.0), 17, 9, 99);
  std::stringstream buf;
  write_binary(buf, ens);
  CHECK(buf.str().substr(0, 4) == "NLAB");
  CHECK(buf.str().size() == 4 + 4 + 8 + 8 + 4 + 8 + 8 + ens.data.size() * 8);
  auto back = read_binary(buf);
  CHECK(back.n_paths == 17);
  CHECK(back.steps == 9);
  CHECK(back.dim == 2);
  CHECK(back.dt == ens.dt);
  CHECK(back.seed == 99);
  CHECK(back.data == ens.data);
  CHECK(back.grid == ens.grid);

  std::stringstream bad("NLAX....");
  CHECK_THROWS_AS(read_binary(bad), ArgumentError);
  std::stringstream truncated;
  write_binary(truncated, ens);
  std::stringstream shortened(truncated.str().substr(0, 60));
  CHECK_THROWS_AS(read_binary(shortened), ArgumentError);
}

TEST_CASE("CSV export has one row per path") {
  auto ens = simulate(brownian(), 3, 4, 1);
  std::stringstream out;
  write_csv(out, ens);
  std::string line;
  std::getline(out, line);
  CHECK(line == "0,0.25,0.5,0.75,1");
  int rows = 0;
  while (std::getline(out, line)) ++rows;
  CHECK(rows == 3);
}
