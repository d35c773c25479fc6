#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "nlab/quadrature.hpp"
#include "nlab/variational.hpp"
#include "support.hpp"

using namespace nlab;
using nlab::testing::vec;
using std::numbers::pi;

namespace {

Extremal curve(double (*x)(double), double (*v)(double), double (*a)(double), double lo, double hi, int N) {
  return Extremal::sample([x](double t) { return vec({x(t)}); }, [v](double t) { return vec({v(t)}); },
                          [a](double t) { return vec({a(t)}); }, lo, hi, N);
}

Extremal line(double lo, double hi, int N) {
  return curve([](double t) { return t; }, [](double) { return 1.0; }, [](double) { return 0.0; }, lo, hi, N);
}

Extremal parabola(double lo, double hi, int N) {
  return curve([](double t) { return t * t; }, [](double t) { return 2 * t; }, [](double) { return 2.0; }, lo, hi, N);
}

Extremal sine(double lo, double hi, int N) {
  return curve([](double t) { return std::sin(t); }, [](double t) { return std::cos(t); },
               [](double t) { return -std::sin(t); }, lo, hi, N);
}

double max_abs_el(const Lagrangian& L, const Extremal& e) {
  double m = 0.0;
  for (std::size_t i = 1; i + 1 < e.size(); ++i) m = std::max(m, el_residual(L, e, i).cwiseAbs().maxCoeff());
  return m;
}

double max_abs_dr(const Lagrangian& L, const Extremal& e) {
  double m = 0.0;
  for (std::size_t i = 1; i + 1 < e.size(); ++i) m = std::max(m, std::abs(dubois_reymond_residual(L, e, i)));
  return m;
}

double sup_error(const Extremal& e, double (*exact)(double)) {
  double m = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) m = std::max(m, std::abs(e.states[i][0] - exact(e.grid[i])));
  return m;
}

}  // namespace

TEST_CASE("Simpson weights integrate quadratics exactly on non-uniform grids") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.3);
  for (int n : {3, 4, 7, 10, 31}) {
    std::vector<double> grid{0.0};
    for (int i = 1; i < n; ++i) grid.push_back(grid.back() + u(rng));
    std::vector<double> f;
    for (double t : grid) f.push_back(3 * t * t - t + 2);
    double b = grid.back();
    CHECK(simpson<double>(grid, f) == doctest::Approx(b * b * b - b * b / 2 + 2 * b).epsilon(1e-12));
  }
  std::vector<double> two{0.0, 1.0};
  CHECK_THROWS_AS(simpson_weights(two), ArgumentError);
}

TEST_CASE("action_value") {
  CHECK(std::abs(action_value(free_square(), line(0, 1, 100)) - 1.0) <= 1e-8);
  CHECK(std::abs(action_value(harmonic(1.0), sine(0, pi, 100))) <= 1e-6);
  CHECK(action_value(kinetic(), line(0, 1, 100)) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(action_value(kinetic(), line(0, 1, 1)), ArgumentError);
}

TEST_CASE("el_residual") {
  Extremal s = sine(0, pi, 50);
  CHECK(max_abs_el(harmonic(1.0), s) <= 1e-8);
  CHECK(max_abs_el(free_square(), line(0, 1, 20)) == 0.0);
  Extremal p = parabola(0, 1, 20);
  for (std::size_t i = 1; i + 1 < p.size(); ++i) CHECK(el_residual(free_square(), p, i)[0] == doctest::Approx(-4.0));
  CHECK_THROWS_AS(el_residual(free_square(), p, 0), ArgumentError);
  CHECK_THROWS_AS(el_residual(free_square(), p, p.size() - 1), ArgumentError);
}

TEST_CASE("dubois_reymond_residual") {
  const double k = 0.25;
  Extremal s = curve([](double t) { return std::sin(0.5 * t); }, [](double t) { return 0.5 * std::cos(0.5 * t); },
                     [](double t) { return -0.25 * std::sin(0.5 * t); }, 0, 2 * pi, 40);
  CHECK(max_abs_dr(harmonic(k), s) <= 1e-8);
  CHECK(max_abs_dr(free_square(), line(0, 1, 20)) == 0.0);
  Extremal p = parabola(0, 1, 20);
  for (std::size_t i = 1; i + 1 < p.size(); ++i)
    CHECK(dubois_reymond_residual(free_square(), p, i) == doctest::Approx(8.0 * p.grid[i]));
  CHECK_THROWS_AS(dubois_reymond_residual(free_square(), p, 0), ArgumentError);
}

TEST_CASE("solve_bvp examples") {
  SUBCASE("straight line for v^2") {
    Extremal e = solve_bvp(free_square(), {0.0, 1.0, vec({0.0}), vec({1.0})}, 100);
    CHECK(sup_error(e, [](double t) { return t; }) <= 1e-10);
  }
  SUBCASE("harmonic k=0.25 on [0, pi]") {
    Extremal e = solve_bvp(harmonic(0.25), {0.0, pi, vec({0.0}), vec({1.0})}, 3142);
    CHECK(sup_error(e, [](double t) { return std::sin(0.5 * t); }) <= 1e-6);
    CHECK(std::abs(e.states.back()[0] - 1.0) <= 1e-8);
  }
  SUBCASE("resonant harmonic k=1 has a family of extremals") {
    CHECK_THROWS_AS(solve_bvp(harmonic(1.0), {0.0, pi, vec({0.0}), vec({0.0})}, 3142), DegenerateFamilyError);
    CHECK_THROWS_AS(solve_bvp(harmonic(1.0), {0.0, pi, vec({0.0}), vec({0.0})}, 3142), NoConvergenceError);
  }
  SUBCASE("linear-in-v Lagrangian is degenerate") {
    Lagrangian L = Lagrangian::polynomial(Polynomial(1, {{1.0, 0, {1}, {1}}}), "linear");
    CHECK_THROWS_AS(solve_bvp(L, {0.0, 1.0, vec({0.0}), vec({1.0})}, 10), DegenerateLagrangianError);
  }
  SUBCASE("invalid arguments") {
    CHECK_THROWS_AS(solve_bvp(kinetic(), {1.0, 0.0, vec({0.0}), vec({1.0})}, 10), ArgumentError);
    CHECK_THROWS_AS(solve_bvp(kinetic(), {0.0, 1.0, vec({0.0, 1.0}), vec({1.0})}, 10), ArgumentError);
  }
}

TEST_CASE("solved extremals satisfy the residual invariants") {
  struct Case {
    Lagrangian L;
    BoundaryProblem bp;
  };
  std::vector<Case> cases{
      {harmonic(0.25), {0.0, pi, vec({0.0}), vec({1.0})}},
      {harmonic(2.0), {0.0, 1.0, vec({0.5}), vec({-0.3})}},
      {momentum_free({{1.0, 1, 2}}), {1.0, 2.0, vec({0.0}), vec({1.0})}},
      {free_square(), {0.0, 1.0, vec({1.0}), vec({2.0})}},
      {kinetic(2), {0.0, 1.0, vec({0.0, 1.0}), vec({2.0, -1.0})}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.L.name());
    Extremal e = solve_bvp(c.L, c.bp, 400);
    CHECK(max_abs_el(c.L, e) <= 1e-6);
    CHECK(max_abs_dr(c.L, e) <= 1e-5);
    CHECK((e.states.back() - c.bp.B).cwiseAbs().maxCoeff() <= 1e-8);
    // Stored velocities agree with centered differences of the states to O(h^2).
    double h = e.grid[1] - e.grid[0];
    for (std::size_t i = 1; i + 1 < e.size(); ++i) {
      Eigen::VectorXd cd = (e.states[i + 1] - e.states[i - 1]) / (2 * h);
      CHECK((cd - e.velocities[i]).cwiseAbs().maxCoeff() <= 10 * h * h);
    }
  }
}

TEST_CASE("first variation of the action vanishes at solved extremals") {
  struct Case {
    Lagrangian L;
    BoundaryProblem bp;
  };
  std::vector<Case> cases{{harmonic(0.25), {0.0, pi, vec({0.0}), vec({1.0})}},
                          {momentum_free({{1.0, 1, 2}}), {1.0, 2.0, vec({0.0}), vec({1.0})}}};
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (const auto& c : cases) {
    Extremal e = solve_bvp(c.L, c.bp, 1000);
    const double span = c.bp.b - c.bp.a;
    for (int trial = 0; trial < 10; ++trial) {
      double c1 = g(rng), c2 = g(rng), c3 = g(rng);
      auto phi = [&](double t) {
        double s = pi * (t - c.bp.a) / span;
        return c1 * std::sin(s) + c2 * std::sin(2 * s) + c3 * std::sin(3 * s);
      };
      auto dphi = [&](double t) {
        double s = pi * (t - c.bp.a) / span;
        return pi / span * (c1 * std::cos(s) + 2 * c2 * std::cos(2 * s) + 3 * c3 * std::cos(3 * s));
      };
      auto perturbed = [&](double eps) {
        Extremal p = e;
        for (std::size_t i = 0; i < p.size(); ++i) {
          p.states[i][0] += eps * phi(p.grid[i]);
          p.velocities[i][0] += eps * dphi(p.grid[i]);
        }
        return action_value(c.L, p);
      };
      const double eps = 1e-5;
      CHECK(std::abs((perturbed(eps) - perturbed(-eps)) / (2 * eps)) <= 1e-6);
    }
  }
}

TEST_CASE("RK4 convergence order on the harmonic benchmark") {
  auto error_for = [](int N) {
    Extremal e = solve_bvp(harmonic(0.25), {0.0, pi, vec({0.0}), vec({1.0})}, N);
    return sup_error(e, [](double t) { return std::sin(0.5 * t); });
  };
  for (int N : {4, 8, 16}) {
    double ratio = error_for(N) / error_for(2 * N);
    CAPTURE(N);
    CHECK(ratio >= 12.0);
  }
}

TEST_CASE("extremal CSV round trip is bit exact") {
  Extremal e = solve_bvp(kinetic(2), {0.0, 1.0, vec({0.1, 1.0}), vec({2.0 / 3.0, -1.0})}, 17);
  std::stringstream ss;
  write_csv(ss, e);
  std::string first_line = ss.str().substr(0, ss.str().find('\n'));
  CHECK(first_line == "t,x_1,x_2,v_1,v_2,a_1,a_2");
  Extremal back = read_extremal_csv(ss);
  REQUIRE(back.size() == e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    CHECK(back.grid[i] == e.grid[i]);
    CHECK(back.states[i] == e.states[i]);
    CHECK(back.velocities[i] == e.velocities[i]);
    CHECK(back.accelerations[i] == e.accelerations[i]);
  }
}
