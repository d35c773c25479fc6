#include "nlab/noether.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "nlab/quadrature.hpp"

namespace nlab {

GeneratorPair::GeneratorPair(int dim, TimeFn T, StateFn X, std::string name)
    : dim_(dim), T_(std::move(T)), X_(std::move(X)), name_(std::move(name)) {
  if (dim_ < 1) throw ArgumentError("generator dimension must be >= 1");
}

GeneratorPair::Eval GeneratorPair::evaluate(double t, const Eigen::VectorXd& x) const {
  const int d = dim_;
  if (x.size() != d) throw ArgumentError("generator evaluated at a point of the wrong dimension");
  Eval e;
  e.X = Eigen::VectorXd::Zero(d);
  e.T_x = Eigen::VectorXd::Zero(d);
  e.X_t = Eigen::VectorXd::Zero(d);
  e.X_x = Eigen::MatrixXd::Zero(d, d);

  std::vector<Dual1> xs(d), out(d);
  // Direction 0 is t, 1..d are the state components.
  for (int dir = 0; dir <= d; ++dir) {
    Dual1 tj(t, dir == 0 ? 1.0 : 0.0);
    for (int i = 0; i < d; ++i) xs[i] = Dual1(x[i], dir == i + 1 ? 1.0 : 0.0);
    Dual1 T = T_(tj, xs);
    X_(tj, xs, out);
    e.T = T.v;
    for (int i = 0; i < d; ++i) e.X[i] = out[i].v;
    if (dir == 0) {
      e.T_t = T.d;
      for (int i = 0; i < d; ++i) e.X_t[i] = out[i].d;
    } else {
      e.T_x[dir - 1] = T.d;
      for (int i = 0; i < d; ++i) e.X_x(i, dir - 1) = out[i].d;
    }
  }
  return e;
}

GeneratorPair affine_generator(const AffineGenerator& g, std::string name) {
  const int d = static_cast<int>(g.x0.size());
  if (d < 1 || g.tx.size() != d || g.xt.size() != d || g.Xx.rows() != d || g.Xx.cols() != d)
    throw ArgumentError("affine generator blocks must share one dimension");
  auto T = [g](const Dual1& t, std::span<const Dual1> x) {
    Dual1 r = g.t0 + g.tt * t;
    for (std::size_t j = 0; j < x.size(); ++j) r = r + g.tx[j] * x[j];
    return r;
  };
  auto X = [g](const Dual1& t, std::span<const Dual1> x, std::span<Dual1> out) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      Dual1 r = g.x0[i] + g.xt[i] * t;
      for (std::size_t j = 0; j < x.size(); ++j) r = r + g.Xx(i, j) * x[j];
      out[i] = r;
    }
  };
  return GeneratorPair(d, T, X, std::move(name));
}

namespace {

AffineGenerator zero_affine(int dim) {
  return {0.0, 0.0, Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim),
          Eigen::MatrixXd::Zero(dim, dim)};
}

}  // namespace

GeneratorPair translation_t(int dim) {
  AffineGenerator g = zero_affine(dim);
  g.t0 = 1.0;
  return affine_generator(g, "translation-t");
}

GeneratorPair translation_x(int dim, int axis) {
  if (axis < 0 || axis >= dim) throw ArgumentError("translation axis out of range");
  AffineGenerator g = zero_affine(dim);
  g.x0[axis] = 1.0;
  return affine_generator(g, "translation-x");
}

GeneratorPair scaling(double c, double b1, double b2) {
  AffineGenerator g = zero_affine(1);
  g.Xx(0, 0) = c;
  g.x0[0] = b1;
  g.tt = 2.0 * c;
  g.t0 = b2;
  return affine_generator(g, "scaling");
}

GeneratorPair rotation_2d() {
  AffineGenerator g = zero_affine(2);
  g.Xx << 0.0, -1.0, 1.0, 0.0;
  return affine_generator(g, "rotation-2d");
}

double invariance_residual(const Lagrangian& L, const GeneratorPair& g, double t, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& v) {
  Partials p = eval_partials(L, t, x, v);
  GeneratorPair::Eval e = g.evaluate(t, x);
  Eigen::VectorXd X_dot = e.X_t + e.X_x * v;
  double T_dot = e.T_t + e.T_x.dot(v);
  return p.d_t * e.T + p.d_x.dot(e.X) + p.d_v.dot(X_dot - v * T_dot) + p.value * T_dot;
}

double finite_invariance_gap(const Lagrangian& L, const GeneratorPair& g, const Extremal& traj, double eps) {
  traj.validate();
  const std::size_t n = traj.size();
  std::vector<double> t_bar(n), original(n), transformed(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = traj.grid[i];
    const auto& x = traj.states[i];
    const auto& v = traj.velocities[i];
    GeneratorPair::Eval e = g.evaluate(t, x);
    Eigen::VectorXd X_dot = e.X_t + e.X_x * v;
    double T_dot = e.T_t + e.T_x.dot(v);
    t_bar[i] = t + eps * e.T;
    if (i > 0 && !(t_bar[i] > t_bar[i - 1]))
      throw ArgumentError(fmt::format("transformed time is not increasing at node {} (eps={})", i, eps));
    Eigen::VectorXd x_bar = x + eps * e.X;
    Eigen::VectorXd v_bar = (v + eps * X_dot) / (1.0 + eps * T_dot);
    original[i] = L.eval(t, x, v);
    transformed[i] = L.eval(t_bar[i], x_bar, v_bar);
  }
  return std::abs(simpson<double>(traj.grid, original) - simpson<double>(t_bar, transformed));
}

namespace {

double charge_with_sign(const Lagrangian& L, const GeneratorPair& g, double t, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& v, double sign) {
  Partials p = eval_partials(L, t, x, v);
  GeneratorPair::Eval e = g.evaluate(t, x);
  return p.d_v.dot(e.X) + sign * (p.value - p.d_v.dot(v)) * e.T;
}

}  // namespace

double noether_charge(const Lagrangian& L, const GeneratorPair& g, double t, const Eigen::VectorXd& x,
                      const Eigen::VectorXd& v) {
  return charge_with_sign(L, g, t, x, v, 1.0);
}

double noether_charge_flipped(const Lagrangian& L, const GeneratorPair& g, double t, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& v) {
  return charge_with_sign(L, g, t, x, v, -1.0);
}

ConservationReport verify_conservation(const Lagrangian& L, const GeneratorPair& g, const Extremal& traj) {
  traj.validate();
  ConservationReport r;
  r.grid = traj.grid;
  r.charge.reserve(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i)
    r.charge.push_back(noether_charge(L, g, traj.grid[i], traj.states[i], traj.velocities[i]));
  for (std::size_t i = 1; i + 1 < traj.size(); ++i)
    r.max_el_residual = std::max(r.max_el_residual, el_residual(L, traj, i).cwiseAbs().maxCoeff());
  for (double q : r.charge) r.drift = std::max(r.drift, std::abs(q - r.charge.front()));
  r.relative_drift = r.drift / std::max(1.0, std::abs(r.charge.front()));
  r.extremal = r.max_el_residual <= kExtremalTolerance;
  r.pass = r.relative_drift <= kConservationTolerance;
  return r;
}

void write_csv(std::ostream& os, const ConservationReport& report) {
  os << "t,Q\n";
  for (std::size_t i = 0; i < report.grid.size(); ++i) os << fmt::format("{},{}\n", report.grid[i], report.charge[i]);
  os << "\ndrift,relative_drift,pass\n";
  os << fmt::format("{},{},{}\n", report.drift, report.relative_drift, report.pass ? "true" : "false");
}

}  // namespace nlab
