#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlab/dual.hpp"
#include "nlab/lagrangian.hpp"
#include "nlab/variational.hpp"

namespace nlab {

/// Infinitesimal generators T(t,x), X(t,x) of a one-parameter group of
/// transformations t̄ = t + εT, x̄ = x + εX.
class GeneratorPair {
 public:
  using TimeFn = std::function<Dual1(const Dual1& t, std::span<const Dual1> x)>;
  using StateFn = std::function<void(const Dual1& t, std::span<const Dual1> x, std::span<Dual1> out)>;

  GeneratorPair(int dim, TimeFn T, StateFn X, std::string name);

  struct Eval {
    double T = 0.0;
    Eigen::VectorXd X;
    double T_t = 0.0;
    Eigen::VectorXd T_x;
    Eigen::VectorXd X_t;
    Eigen::MatrixXd X_x;  ///< (i,j) = ∂X_i/∂x_j
  };

  /// Values and exact first partials (dual numbers).
  Eval evaluate(double t, const Eigen::VectorXd& x) const;

  int dim() const { return dim_; }
  const std::string& name() const { return name_; }

 private:
  int dim_;
  TimeFn T_;
  StateFn X_;
  std::string name_;
};

/// Affine generators T = t0 + tt·t + tx·x, X = x0 + xt·t + Xx·x.
struct AffineGenerator {
  double t0 = 0.0;
  double tt = 0.0;
  Eigen::VectorXd tx;
  Eigen::VectorXd x0;
  Eigen::VectorXd xt;
  Eigen::MatrixXd Xx;
};

GeneratorPair affine_generator(const AffineGenerator& g, std::string name = "affine");
GeneratorPair translation_t(int dim = 1);                 ///< T ≡ 1, X ≡ 0
GeneratorPair translation_x(int dim = 1, int axis = 0);   ///< T ≡ 0, X ≡ e_axis
GeneratorPair scaling(double c, double b1 = 0.0, double b2 = 0.0);  ///< X = c x + b1, T = 2c t + b2 (d = 1)
GeneratorPair rotation_2d();                              ///< T ≡ 0, X = (−x₂, x₁)

/// L_t·T + L_x·X + L_v·(Ẋ − v Ṫ) + L·Ṫ with Ẋ = X_t + X_x v and Ṫ = T_t + T_x·v.
double invariance_residual(const Lagrangian& L, const GeneratorPair& g, double t, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& v);

/// |∫L dt − ∫L dt̄| under the first-order transformed curve (t + εT, x + εX).
/// Vanishes to O(ε²) for an invariant pair.
double finite_invariance_gap(const Lagrangian& L, const GeneratorPair& g, const Extremal& traj, double eps);

/// Q = L_v·X + (L − L_v·v)·T.
double noether_charge(const Lagrangian& L, const GeneratorPair& g, double t, const Eigen::VectorXd& x,
                      const Eigen::VectorXd& v);

/// L_v·X − (L − L_v·v)·T. Not conserved in general; kept to pin the sign convention in tests.
double noether_charge_flipped(const Lagrangian& L, const GeneratorPair& g, double t, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& v);

struct ConservationReport {
  std::vector<double> grid;
  std::vector<double> charge;
  double drift = 0.0;
  double relative_drift = 0.0;
  double max_el_residual = 0.0;
  bool extremal = false;  ///< max interior |el_residual| <= 1e-6
  bool pass = false;      ///< relative_drift <= 1e-5
};

inline constexpr double kExtremalTolerance = 1e-6;
inline constexpr double kConservationTolerance = 1e-5;

ConservationReport verify_conservation(const Lagrangian& L, const GeneratorPair& g, const Extremal& traj);

/// CSV `t,Q` followed by a blank line and the summary `drift,relative_drift,pass`.
void write_csv(std::ostream& os, const ConservationReport& report);

}  // namespace nlab
