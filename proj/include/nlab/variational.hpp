#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "nlab/lagrangian.hpp"

namespace nlab {

/// Sampled trajectory: states, velocities and accelerations on a time grid.
struct Extremal {
  std::vector<double> grid;
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> velocities;
  std::vector<Eigen::VectorXd> accelerations;

  std::size_t size() const { return grid.size(); }
  int dim() const { return states.empty() ? 0 : static_cast<int>(states.front().size()); }

  /// Throws ArgumentError unless the grid is strictly increasing and all arrays align.
  void validate() const;

  using CurveFn = std::function<Eigen::VectorXd(double)>;
  /// Uniform sampling of a closed-form curve on [a, b] with N intervals.
  static Extremal sample(const CurveFn& x, const CurveFn& v, const CurveFn& acc, double a, double b, int N);
};

/// Two-point boundary data x(a) = A, x(b) = B.
struct BoundaryProblem {
  double a = 0.0;
  double b = 1.0;
  Eigen::VectorXd A;
  Eigen::VectorXd B;
};

struct ShootingOptions {
  int max_iterations = 100;
};

/// ∫ L(t, x, ẋ) dt by composite Simpson over the trajectory grid.
double action_value(const Lagrangian& L, const Extremal& traj);

/// L_x − d/dt L_v at interior node i, the total derivative expanded through second partials.
Eigen::VectorXd el_residual(const Lagrangian& L, const Extremal& traj, std::size_t i);

/// ∂L/∂t − d/dt{L − L_v·ẋ} at interior node i.
double dubois_reymond_residual(const Lagrangian& L, const Extremal& traj, std::size_t i);

/// Explicit second-order form ẍ = g(t, x, ẋ) of the Euler–Lagrange equation.
/// Throws DegenerateLagrangianError when ∂²L/∂v² is singular.
Eigen::VectorXd el_acceleration(const Lagrangian& L, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& v);

/// Classical RK4 for the Euler–Lagrange ODE from (a, x0, v0) over N uniform steps.
Extremal integrate_el(const Lagrangian& L, double a, double b, const Eigen::VectorXd& x0, const Eigen::VectorXd& v0,
                      int N);

/// Shooting solver for the two-point problem.
///
/// Throws DegenerateLagrangianError, NoConvergenceError, or DegenerateFamilyError
/// when the terminal state is insensitive to the initial velocity (conjugate point).
Extremal solve_bvp(const Lagrangian& L, const BoundaryProblem& bp, int N, const ShootingOptions& opts = {});

/// CSV `t,x_1..x_d,v_1..v_d,a_1..a_d` with round-trip decimal precision.
void write_csv(std::ostream& os, const Extremal& traj);
Extremal read_extremal_csv(std::istream& is);

}  // namespace nlab
