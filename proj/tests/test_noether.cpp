#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "nlab/noether.hpp"
#include "support.hpp"

using namespace nlab;
using nlab::testing::vec;
using std::numbers::pi;

namespace {

Extremal line_through(double slope, double offset, double lo, double hi, int N) {
  return Extremal::sample([=](double t) { return vec({slope * t + offset}); }, [=](double) { return vec({slope}); },
                          [](double) { return vec({0.0}); }, lo, hi, N);
}

Lagrangian harmonic_like_unit() {
  // v² − x²
  return harmonic(1.0);
}

GeneratorPair identity_generator(int dim) {
  AffineGenerator g{0.0, 0.0, Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim),
                    Eigen::MatrixXd::Zero(dim, dim)};
  return affine_generator(g, "identity");
}

}  // namespace

TEST_CASE("generator partials match finite differences") {
  AffineGenerator a{0.3, -1.2, vec({0.4, 2.0}), vec({1.0, -0.5}), vec({0.7, 0.2}), Eigen::MatrixXd(2, 2)};
  a.Xx << 0.1, -2.0, 1.5, 0.3;
  // Non-affine pair: T = t·x₁², X = (sin(t x₂), x₁ x₂).
  GeneratorPair curved(
      2, [](const Dual1& t, std::span<const Dual1> x) { return t * x[0] * x[0]; },
      [](const Dual1& t, std::span<const Dual1> x, std::span<Dual1> out) {
        out[0] = sin(t * x[1]);
        out[1] = x[0] * x[1];
      },
      "curved");
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (const GeneratorPair& g : {affine_generator(a), curved, rotation_2d()}) {
    for (int s = 0; s < 100; ++s) {
      double t = u(rng);
      Eigen::VectorXd x = vec({u(rng), u(rng)});
      auto e = g.evaluate(t, x);
      const double h = 1e-5;
      auto at = [&](double tt, const Eigen::VectorXd& xx) { return g.evaluate(tt, xx); };
      CHECK(nlab::testing::close_rel(e.T_t, (at(t + h, x).T - at(t - h, x).T) / (2 * h), 1e-6));
      for (int i = 0; i < 2; ++i)
        CHECK(nlab::testing::close_rel(e.X_t[i], (at(t + h, x).X[i] - at(t - h, x).X[i]) / (2 * h), 1e-6));
      for (int j = 0; j < 2; ++j) {
        Eigen::VectorXd up = x, dn = x;
        up[j] += h;
        dn[j] -= h;
        CHECK(nlab::testing::close_rel(e.T_x[j], (at(t, up).T - at(t, dn).T) / (2 * h), 1e-6));
        for (int i = 0; i < 2; ++i)
          CHECK(nlab::testing::close_rel(e.X_x(i, j), (at(t, up).X[i] - at(t, dn).X[i]) / (2 * h), 1e-6));
      }
    }
  }
}

TEST_CASE("invariance_residual examples") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int s = 0; s < 200; ++s) {
    double t = u(rng);
    Eigen::VectorXd x = vec({u(rng)}), v = vec({u(rng)});
    CHECK(invariance_residual(free_square(), scaling(1.0), t, x, v) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(invariance_residual(harmonic(0.7), translation_t(), t, x, v) == 0.0);
    CHECK(invariance_residual(harmonic_like_unit(), translation_x(), t, x, v) == doctest::Approx(-2.0 * x[0]));
  }
}

TEST_CASE("invariance residual is linear in the generators") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  auto random_affine = [&] {
    AffineGenerator g{u(rng), u(rng), vec({u(rng)}), vec({u(rng)}), vec({u(rng)}), Eigen::MatrixXd(1, 1)};
    g.Xx(0, 0) = u(rng);
    return g;
  };
  for (const auto& L : {free_square(), harmonic(0.25), momentum_free({{1.0, 1, 2}})}) {
    for (int s = 0; s < 50; ++s) {
      AffineGenerator a = random_affine(), b = random_affine(), sum = a;
      sum.t0 += b.t0;
      sum.tt += b.tt;
      sum.tx += b.tx;
      sum.x0 += b.x0;
      sum.xt += b.xt;
      sum.Xx += b.Xx;
      double t = u(rng);
      Eigen::VectorXd x = vec({u(rng)}), v = vec({u(rng)});
      double ra = invariance_residual(L, affine_generator(a), t, x, v);
      double rb = invariance_residual(L, affine_generator(b), t, x, v);
      CHECK(invariance_residual(L, affine_generator(sum), t, x, v) == doctest::Approx(ra + rb).epsilon(1e-10));
    }
  }
  // Two symmetries of v² combine into a symmetry.
  AffineGenerator combo{1.0, 2.0, vec({0.0}), vec({3.0}), vec({0.0}), Eigen::MatrixXd::Constant(1, 1, 1.0)};
  CHECK(std::abs(invariance_residual(free_square(), affine_generator(combo), 0.4, vec({1.1}), vec({-0.8}))) <= 1e-12);
}

TEST_CASE("finite_invariance_gap") {
  SUBCASE("scaling symmetry of v^2 is second order in eps") {
    Extremal e = line_through(1.0, 0.0, 0.0, 1.0, 100);
    double eps = 1e-3;
    double gap = finite_invariance_gap(free_square(), scaling(1.0), e, eps);
    CHECK(gap <= 5e-6);
    CHECK(gap == doctest::Approx(eps * eps / (1 + 2 * eps)).epsilon(1e-6));
    CHECK(gap / finite_invariance_gap(free_square(), scaling(1.0), e, eps / 2) >= 3.5);
  }
  SUBCASE("identity transformation has no gap") {
    Extremal e = line_through(2.0, 1.0, 0.0, 1.0, 30);
    CHECK(finite_invariance_gap(harmonic(0.3), identity_generator(1), e, 0.5) == 0.0);
  }
  SUBCASE("x-translation of v^2 - x^2 is first order") {
    Extremal e = Extremal::sample([](double t) { return vec({std::sin(t)}); },
                                  [](double t) { return vec({std::cos(t)}); },
                                  [](double t) { return vec({-std::sin(t)}); }, 0.0, pi, 200);
    double ratio = finite_invariance_gap(harmonic_like_unit(), translation_x(), e, 1e-2) /
                   finite_invariance_gap(harmonic_like_unit(), translation_x(), e, 5e-3);
    CHECK(ratio == doctest::Approx(2.0).epsilon(0.01));
  }
  SUBCASE("non-monotone transformed time") {
    Extremal e = line_through(1.0, 0.0, 0.0, 1.0, 10);
    CHECK_THROWS_AS(finite_invariance_gap(free_square(), scaling(1.0), e, -0.6), ArgumentError);
  }
}

TEST_CASE("noether_charge examples") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Lagrangian tv2 = momentum_free({{1.0, 1, 2}});
  for (int s = 0; s < 100; ++s) {
    double t = u(rng);
    Eigen::VectorXd x = vec({u(rng)}), v = vec({u(rng)});
    CHECK(noether_charge(tv2, translation_x(), t, x, v) == doctest::Approx(2 * t * v[0]));
    Partials p = eval_partials(harmonic(0.25), t, x, v);
    CHECK(noether_charge(harmonic(0.25), translation_t(), t, x, v) == doctest::Approx(p.value - v[0] * p.d_v[0]));
  }
  SUBCASE("scaling charge along x = t + 1 is constant with the adopted sign") {
    for (double t : {0.0, 0.25, 0.5, 1.0, 3.0}) {
      CHECK(noether_charge(free_square(), scaling(1.0), t, vec({t + 1}), vec({1.0})) == doctest::Approx(2.0));
      // Regression: the alternate sign gives 2 + 4t, not conserved.
      CHECK(noether_charge_flipped(free_square(), scaling(1.0), t, vec({t + 1}), vec({1.0})) ==
            doctest::Approx(2.0 + 4.0 * t));
    }
  }
}

TEST_CASE("verify_conservation") {
  SUBCASE("harmonic energy") {
    Extremal e = solve_bvp(harmonic(0.25), {0.0, pi, vec({0.0}), vec({1.0})}, 3142);
    auto r = verify_conservation(harmonic(0.25), translation_t(), e);
    CHECK(r.extremal);
    CHECK(r.pass);
    CHECK(r.relative_drift <= 1e-5);
    // Energy of sin(t/2): v² + k x² = 1/4.
    CHECK(r.charge.front() == doctest::Approx(-0.25).epsilon(1e-9));
  }
  SUBCASE("momentum of t v^2") {
    Lagrangian L = momentum_free({{1.0, 1, 2}});
    Extremal e = solve_bvp(L, {1.0, 2.0, vec({0.0}), vec({1.0})}, 1000);
    auto r = verify_conservation(L, translation_x(), e);
    CHECK(r.pass);
    CHECK(r.charge.front() == doctest::Approx(2.0 / std::log(2.0)).epsilon(1e-8));
  }
  SUBCASE("non-extremal is flagged and drifts") {
    Extremal e = Extremal::sample([](double t) { return vec({t * t}); }, [](double t) { return vec({2 * t}); },
                                  [](double) { return vec({2.0}); }, 0.0, 1.0, 50);
    auto r = verify_conservation(free_square(), translation_t(), e);
    CHECK_FALSE(r.extremal);
    CHECK_FALSE(r.pass);
    CHECK(r.drift > 0.1);
    std::ostringstream os;
    write_csv(os, r);
    CHECK(os.str().rfind("t,Q\n0,0\n", 0) == 0);
    CHECK(os.str().find("drift,relative_drift,pass\n4,") != std::string::npos);
  }
}

TEST_CASE("Noether chain on random boundary data") {
  struct Triple {
    Lagrangian L;
    GeneratorPair g;
    double a, b;
  };
  std::vector<Triple> triples{{harmonic(0.25), translation_t(), 0.0, pi},
                              {momentum_free({{1.0, 1, 2}}), translation_x(), 1.0, 2.0},
                              {free_square(), scaling(1.0), 0.0, 1.0}};
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (const auto& tr : triples) {
    CAPTURE(tr.L.name());
    double worst = 0.0;
    for (int s = 0; s < 1000; ++s) {
      double t = tr.a + (tr.b - tr.a) * (u(rng) + 2.0) / 4.0;
      worst = std::max(worst, std::abs(invariance_residual(tr.L, tr.g, t, vec({u(rng)}), vec({u(rng)}))));
    }
    CHECK(worst <= 1e-9);
    for (int s = 0; s < 5; ++s) {
      Extremal e = solve_bvp(tr.L, {tr.a, tr.b, vec({u(rng)}), vec({u(rng)})}, 800);
      auto r = verify_conservation(tr.L, tr.g, e);
      CHECK(r.extremal);
      CHECK(r.relative_drift <= 1e-5);
      // Centered time differences of Q vanish to O(h²).
      double h = e.grid[1] - e.grid[0];
      for (std::size_t i = 1; i + 1 < e.size(); ++i)
        CHECK(std::abs(r.charge[i + 1] - r.charge[i - 1]) / (2 * h) <= 1e-6);
    }
  }
}
