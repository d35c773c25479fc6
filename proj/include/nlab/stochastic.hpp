#pragma once

#include <complex>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlab/lagrangian.hpp"
#include "nlab/nelson.hpp"
#include "nlab/sde.hpp"

namespace nlab {

/// Autonomous Lagrangian L(x, v), polynomial (hence holomorphic) in the velocity,
/// together with the state box on which second-derivative bounds are certified.
class AdmissibleLagrangian {
 public:
  /// Throws UnsupportedClassError unless L is an autonomous polynomial Lagrangian.
  explicit AdmissibleLagrangian(Lagrangian L, double box_radius = 10.0);

  const Lagrangian& base() const { return base_; }
  int dim() const { return base_.dim(); }
  double box_radius() const { return radius_; }

  std::complex<double> value(const Eigen::VectorXd& x, const Eigen::VectorXcd& v) const;
  Eigen::VectorXcd d_x(const Eigen::VectorXd& x, const Eigen::VectorXcd& v) const;
  Eigen::VectorXcd d_v(const Eigen::VectorXd& x, const Eigen::VectorXcd& v) const;

  /// ∂L/∂x_k and ∂L/∂v_k on complex jets.
  CJet d_x_jet(int k, std::span<const CJet> x, std::span<const CJet> v) const;
  CJet d_v_jet(int k, std::span<const CJet> x, std::span<const CJet> v) const;

  /// Largest |second partial| of L over sampled points of the box with |Re v|, |Im v| <= radius.
  double second_derivative_bound(int samples = 2000) const;

 private:
  Lagrangian base_;
  double radius_;
  std::vector<Polynomial> dx_, dv_;
};

/// One-parameter group of diffeomorphisms φ_s of state space.
struct DiffeoGroup {
  std::string name;
  int dim = 1;
  std::function<Eigen::VectorXd(double s, const Eigen::VectorXd& x)> phi;
  std::function<Eigen::VectorXd(const Eigen::VectorXd& x)> dphi_ds_at0;
  std::function<Eigen::MatrixXd(double s, const Eigen::VectorXd& x)> dphi_dx;

  /// Checks φ_0 = id (1e-12) and φ_s∘φ_u = φ_{s+u} (1e-9) on sampled points; throws ArgumentError.
  void validate(int samples = 200) const;
};

DiffeoGroup translation_group(const Eigen::VectorXd& direction);  ///< φ_s(x) = x + s·e
DiffeoGroup rotation_group_2d();                                  ///< φ_s(x) = R(s)x
DiffeoGroup scaling_group(int dim = 1);                           ///< φ_s(x) = e^s x

/// Pathwise application of φ_s; grid, dt and seed are kept, the spec is dropped.
Ensemble suspend(const DiffeoGroup& group, const Ensemble& ens, double s);

/// Ensemble of n identical copies of a deterministic curve sampled on M + 1 nodes.
Ensemble curve_ensemble(std::function<Eigen::VectorXd(double)> x, int dim, double t0, double t1, std::size_t M,
                        std::size_t n_paths = 1);

/// Nelson field of a deterministic curve: forward = backward = ẋ(t), a = 0.
/// `velocity` receives the time as a jet and writes ẋ(t) componentwise.
NelsonField curve_field(int dim, std::function<void(const RJet& t, std::span<RJet> out)> velocity);

/// Monte Carlo mean of a complex quantity with its standard error sqrt(var Re + var Im)/√n.
struct ComplexEstimate {
  std::complex<double> value;
  double stderr = 0.0;
};

struct Window {
  double a = 0.0;
  double b = 1.0;
};

/// E[∫_a^b L(X_t, 𝒟_μX_t) dt] by Simpson's rule on the grid nodes of the window.
/// Throws XiViolationError on non-finite sample values.
ComplexEstimate action_functional(const AdmissibleLagrangian& L, const Ensemble& ens, const NelsonField& field,
                                  int mu, Window window);

/// Deterministic variation Z(t) = z(t)·e.
struct Variation {
  std::string name;
  std::function<double(double)> z;
  std::function<double(double)> zdot;
  Eigen::VectorXd direction;
};
/// Catalog: "zero", "sine" (sin(π(t−a)/(b−a))), "bump" (compact C^∞ bump on the window),
/// "linear" ((t−a)/(b−a), nonzero at b). Throws ArgumentError for unknown names.
Variation make_variation(const std::string& name, Window window, const Eigen::VectorXd& direction);
std::vector<std::string> variation_names();

enum class VariationSpace { C1, N1 };

struct GateauxReport {
  ComplexEstimate formula;     ///< residual integral plus boundary terms
  ComplexEstimate difference;  ///< [F(X+εZ) − F(X−εZ)]/(2ε)
  double eps = 1e-4;
  /// Discretisation error bar: |Simpson − trapezoid| of each side on the same nodes, combined.
  double quadrature_error = 0.0;
  double gap = 0.0;
  double tolerance = 0.0;      ///< 3 combined (statistical and quadrature) error bars, floored at 1e-6·(1 + |difference|)
  bool pass = false;
};

/// Differential of the action in direction Z: 𝒟_{−μ} (C¹) or 𝒟_{μ} (N¹) acting on ∂_vL,
/// cross-checked against a central difference of action_functional. Needs a field with jets.
GateauxReport gateaux_differential(const AdmissibleLagrangian& L, const Ensemble& ens, const NelsonField& field,
                                   const Variation& Z, int mu, VariationSpace space, Window window,
                                   double eps = 1e-4);

/// ∂_xL(x, 𝒟_μX) − 𝒟_{−μ}[∂_vL(X, 𝒟_μX)] at (t, x), with the second term from the
/// closed-form field. Throws ArgumentError if the field has no jets.
Eigen::VectorXcd stochastic_el_residual(const AdmissibleLagrangian& L, const NelsonField& field, double t,
                                        const Eigen::VectorXd& x, int mu);
/// Same residual with 𝒟_{−μ} of the process ∂_vL(X, 𝒟_μX) estimated by kernel regression.
Eigen::VectorXcd stochastic_el_residual_empirical(const AdmissibleLagrangian& L, const NelsonField& field,
                                                  const Ensemble& ens, double t, const Eigen::VectorXd& x, int mu,
                                                  const RegressionOptions& opts = {});

struct InvarianceReport {
  double max_gap = 0.0;
  Eigen::VectorXd worst_x;
  Eigen::VectorXcd worst_v;
  double worst_s = 0.0;
  bool pass = false;
};
/// Samples (x, complex v, s) and compares L(φ_s(x), ∂φ_s/∂x·v) with L(x, v) (tolerance 1e-9).
InvarianceReport invariance_check(const AdmissibleLagrangian& L, const DiffeoGroup& group, int samples = 1000);

struct NoetherTrace {
  std::vector<double> grid;
  std::vector<std::complex<double>> Q;
  std::vector<double> stderr;
  std::complex<double> mean;  ///< time average Q̄
  double drift = 0.0;         ///< max |Q(t_i) − Q̄|
  double threshold = 0.0;     ///< 3·max stderr, floored at 1e-10·max(1, |Q̄|)
  bool pass = false;
};

/// Q(t) = E[∂_vL(X, 𝒟_μX) · ∂φ_s(X)/∂s|_{s=0}] (componentwise complex bilinear sum)
/// on every grid node in [t_lo, t_hi]. Throws InvarianceError when L is not invariant.
NoetherTrace noether_quantity(const AdmissibleLagrangian& L, const DiffeoGroup& group, const Ensemble& ens,
                              const NelsonField& field, int mu, double t_lo, double t_hi);

/// `t,Re_Q,Im_Q,stderr` rows, a blank line, then `drift,threshold,pass`.
void write_csv(std::ostream& os, const NoetherTrace& trace);

}  // namespace nlab
