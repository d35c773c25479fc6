#include "nlab/variational.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "nlab/quadrature.hpp"

namespace nlab {

void Extremal::validate() const {
  const std::size_t n = grid.size();
  if (states.size() != n || velocities.size() != n || accelerations.size() != n)
    throw ArgumentError("extremal arrays must share the grid length");
  for (std::size_t i = 1; i < n; ++i)
    if (!(grid[i] > grid[i - 1])) throw ArgumentError("extremal grid must be strictly increasing");
  const int d = dim();
  for (std::size_t i = 0; i < n; ++i)
    if (states[i].size() != d || velocities[i].size() != d || accelerations[i].size() != d)
      throw ArgumentError("extremal samples must share one dimension");
}

Extremal Extremal::sample(const CurveFn& x, const CurveFn& v, const CurveFn& acc, double a, double b, int N) {
  if (N < 1 || !(b > a)) throw ArgumentError("sample: need N >= 1 and a < b");
  Extremal e;
  for (int i = 0; i <= N; ++i) {
    double t = (i == N) ? b : a + (b - a) * i / N;
    e.grid.push_back(t);
    e.states.push_back(x(t));
    e.velocities.push_back(v(t));
    e.accelerations.push_back(acc(t));
  }
  return e;
}

double action_value(const Lagrangian& L, const Extremal& traj) {
  traj.validate();
  if (traj.size() < 3) throw ArgumentError("action_value: grid needs at least 3 points");
  std::vector<double> values(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i)
    values[i] = L.eval(traj.grid[i], traj.states[i], traj.velocities[i]);
  return simpson<double>(traj.grid, values);
}

namespace {

void require_interior(const Extremal& traj, std::size_t i) {
  traj.validate();
  if (i == 0 || i + 1 >= traj.size()) throw ArgumentError("residual requires an interior grid index");
}

// d/dt ∂L/∂v along the curve, expanded by the chain rule.
Eigen::VectorXd total_dt_momentum(const Partials& p, const Eigen::VectorXd& v, const Eigen::VectorXd& acc) {
  return p.d2_tv + p.d2_xv.transpose() * v + p.d2_vv * acc;
}

}  // namespace

Eigen::VectorXd el_residual(const Lagrangian& L, const Extremal& traj, std::size_t i) {
  require_interior(traj, i);
  const auto& v = traj.velocities[i];
  Partials p = eval_partials(L, traj.grid[i], traj.states[i], v);
  return p.d_x - total_dt_momentum(p, v, traj.accelerations[i]);
}

double dubois_reymond_residual(const Lagrangian& L, const Extremal& traj, std::size_t i) {
  require_interior(traj, i);
  const auto& v = traj.velocities[i];
  const auto& acc = traj.accelerations[i];
  Partials p = eval_partials(L, traj.grid[i], traj.states[i], v);
  double dL_dt = p.d_t + p.d_x.dot(v) + p.d_v.dot(acc);
  double d_momentum_v = total_dt_momentum(p, v, acc).dot(v) + p.d_v.dot(acc);
  return p.d_t - (dL_dt - d_momentum_v);
}

Eigen::VectorXd el_acceleration(const Lagrangian& L, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& v) {
  Partials p = eval_partials(L, t, x, v);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(p.d2_vv);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible())
    throw DegenerateLagrangianError(fmt::format("d2L/dv2 is singular at t={}", t));
  Eigen::VectorXd rhs = p.d_x - p.d2_tv - p.d2_xv.transpose() * v;
  return lu.solve(rhs);
}

Extremal integrate_el(const Lagrangian& L, double a, double b, const Eigen::VectorXd& x0, const Eigen::VectorXd& v0,
                      int N) {
  if (N < 2 || !(b > a)) throw ArgumentError("integrate_el: need N >= 2 and a < b");
  const double h = (b - a) / N;
  Extremal e;
  e.grid.reserve(N + 1);
  e.states.reserve(N + 1);
  e.velocities.reserve(N + 1);
  e.accelerations.reserve(N + 1);

  Eigen::VectorXd x = x0, v = v0;
  for (int k = 0; k <= N; ++k) {
    double t = (k == N) ? b : a + h * k;
    Eigen::VectorXd acc = el_acceleration(L, t, x, v);
    e.grid.push_back(t);
    e.states.push_back(x);
    e.velocities.push_back(v);
    e.accelerations.push_back(acc);
    if (k == N) break;

    Eigen::VectorXd k1x = v, k1v = acc;
    Eigen::VectorXd k2x = v + 0.5 * h * k1v;
    Eigen::VectorXd k2v = el_acceleration(L, t + 0.5 * h, x + 0.5 * h * k1x, k2x);
    Eigen::VectorXd k3x = v + 0.5 * h * k2v;
    Eigen::VectorXd k3v = el_acceleration(L, t + 0.5 * h, x + 0.5 * h * k2x, k3x);
    Eigen::VectorXd k4x = v + h * k3v;
    Eigen::VectorXd k4v = el_acceleration(L, t + h, x + h * k3x, k4x);
    x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    if (!x.allFinite() || !v.allFinite())
      throw NoConvergenceError(fmt::format("Euler-Lagrange integration blew up near t={}", t));
  }
  return e;
}

namespace {

class Shooter {
 public:
  Shooter(const Lagrangian& L, const BoundaryProblem& bp, int N) : L_(L), bp_(bp), N_(N) {}

  Eigen::VectorXd mismatch(const Eigen::VectorXd& v0) const {
    Extremal e = integrate_el(L_, bp_.a, bp_.b, bp_.A, v0, N_);
    return e.states.back() - bp_.B;
  }

  Eigen::MatrixXd jacobian(const Eigen::VectorXd& v0) const {
    const int d = static_cast<int>(v0.size());
    Eigen::MatrixXd J(d, d);
    for (int j = 0; j < d; ++j) {
      double step = 1e-6 * std::max(1.0, std::abs(v0[j]));
      Eigen::VectorXd up = v0, dn = v0;
      up[j] += step;
      dn[j] -= step;
      J.col(j) = (mismatch(up) - mismatch(dn)) / (2.0 * step);
    }
    return J;
  }

  // Terminal state insensitive to the initial velocity: the boundary data sit
  // on a conjugate point and the extremal is not unique.
  void check_sensitivity(const Eigen::VectorXd& v0) const {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jacobian(v0));
    double smallest = svd.singularValues().minCoeff();
    if (smallest <= 1e-8 * (bp_.b - bp_.a))
      throw DegenerateFamilyError(fmt::format(
          "terminal state insensitive to initial velocity (sensitivity {:.3e}): infinitely many extremals", smallest));
  }

 private:
  const Lagrangian& L_;
  const BoundaryProblem& bp_;
  int N_;
};

double scalar_shoot(const Shooter& s, const BoundaryProblem& bp, int max_iter, double tol) {
  auto f = [&](double v0) { return s.mismatch(Eigen::VectorXd::Constant(1, v0))[0]; };
  double va = (bp.B[0] - bp.A[0]) / (bp.b - bp.a);
  double vb = 0.0;
  if (va == vb) vb = va + 1.0;
  double fa = f(va);
  if (std::abs(fa) <= tol) return va;
  double fb = f(vb);

  bool bracketed = false;
  double lo = 0.0, hi = 0.0;
  auto note_bracket = [&](double x1, double f1, double x2, double f2) {
    if (f1 * f2 < 0.0) {
      bracketed = true;
      lo = std::min(x1, x2);
      hi = std::max(x1, x2);
    }
  };
  note_bracket(va, fa, vb, fb);

  const double degenerate_slope = 1e-8 * (bp.b - bp.a);
  for (int it = 0; it < max_iter; ++it) {
    if (std::abs(fb) <= tol) return vb;
    double slope = (fb - fa) / (vb - va);
    if (std::abs(slope) <= degenerate_slope)
      throw DegenerateFamilyError(
          fmt::format("shooting slope {:.3e} vanishes: terminal state insensitive to initial velocity", slope));
    double vn = vb - fb / slope;
    if (bracketed && !(vn > lo && vn < hi)) vn = 0.5 * (lo + hi);
    double fn = f(vn);
    if (!std::isfinite(fn)) throw NoConvergenceError("shooting produced a non-finite terminal state");
    note_bracket(vb, fb, vn, fn);
    va = vb;
    fa = fb;
    vb = vn;
    fb = fn;
    if (std::abs(vb - va) <= 1e-15 * (1.0 + std::abs(vb)) && std::abs(fb) <= 1e-8) return vb;
  }
  if (std::abs(fb) <= 1e-8) return vb;
  throw NoConvergenceError(fmt::format("shooting did not converge in {} iterations (mismatch {:.3e})", max_iter, fb));
}

Eigen::VectorXd newton_shoot(const Shooter& s, const BoundaryProblem& bp, int max_iter, double tol) {
  Eigen::VectorXd v0 = (bp.B - bp.A) / (bp.b - bp.a);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd m = s.mismatch(v0);
    if (m.norm() <= tol) return v0;
    Eigen::MatrixXd J = s.jacobian(v0);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
    lu.setThreshold(1e-8 * (bp.b - bp.a));
    if (!lu.isInvertible())
      throw DegenerateFamilyError("shooting Jacobian is singular: terminal state insensitive to initial velocity");
    v0 -= lu.solve(m);
  }
  if (s.mismatch(v0).norm() <= 1e-8) return v0;
  throw NoConvergenceError(fmt::format("shooting did not converge in {} iterations", max_iter));
}

}  // namespace

Extremal solve_bvp(const Lagrangian& L, const BoundaryProblem& bp, int N, const ShootingOptions& opts) {
  const int d = L.dim();
  if (!(bp.a < bp.b)) throw ArgumentError("boundary problem needs a < b");
  if (bp.A.size() != d || bp.B.size() != d) throw ArgumentError("boundary states must have the Lagrangian dimension");
  if (N < 2) throw ArgumentError("solve_bvp: need N >= 2");

  Shooter shooter(L, bp, N);
  const double tol = 1e-12 * (1.0 + bp.B.cwiseAbs().maxCoeff());
  Eigen::VectorXd v0 = d == 1 ? Eigen::VectorXd::Constant(1, scalar_shoot(shooter, bp, opts.max_iterations, tol))
                              : newton_shoot(shooter, bp, opts.max_iterations, tol);
  shooter.check_sensitivity(v0);
  return integrate_el(L, bp.a, bp.b, bp.A, v0, N);
}

void write_csv(std::ostream& os, const Extremal& traj) {
  traj.validate();
  const int d = traj.dim();
  os << "t";
  for (const char* prefix : {"x", "v", "a"})
    for (int i = 1; i <= d; ++i) os << ',' << prefix << '_' << i;
  os << '\n';
  for (std::size_t k = 0; k < traj.size(); ++k) {
    os << fmt::format("{}", traj.grid[k]);
    for (const auto* series : {&traj.states, &traj.velocities, &traj.accelerations})
      for (int i = 0; i < d; ++i) os << fmt::format(",{}", (*series)[k][i]);
    os << '\n';
  }
}

Extremal read_extremal_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ArgumentError("extremal CSV is empty");
  std::size_t columns = 1;
  for (char c : line) columns += (c == ',');
  if (line.rfind("t,", 0) != 0 || (columns - 1) % 3 != 0 || columns < 4)
    throw ArgumentError("extremal CSV header must be t,x_1..x_d,v_1..v_d,a_1..a_d");
  const int d = static_cast<int>((columns - 1) / 3);

  Extremal e;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      double value = 0.0;
      auto [next, ec] = std::from_chars(p, end, value);
      if (ec != std::errc()) throw ArgumentError("malformed number in extremal CSV: " + line);
      row.push_back(value);
      p = (next < end && *next == ',') ? next + 1 : next;
      if (next == end) break;
    }
    if (row.size() != columns) throw ArgumentError("extremal CSV row has the wrong column count");
    e.grid.push_back(row[0]);
    e.states.emplace_back(Eigen::Map<Eigen::VectorXd>(row.data() + 1, d));
    e.velocities.emplace_back(Eigen::Map<Eigen::VectorXd>(row.data() + 1 + d, d));
    e.accelerations.emplace_back(Eigen::Map<Eigen::VectorXd>(row.data() + 1 + 2 * d, d));
  }
  e.validate();
  return e;
}

}  // namespace nlab
