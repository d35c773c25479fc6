#pragma once

#include <complex>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlab/dual.hpp"
#include "nlab/errors.hpp"
#include "nlab/sde.hpp"

namespace nlab {

/// Forward drift DX, backward drift D_*X and diffusion matrix a = σσ* of a
/// diffusion, as fields over (t, x).
///
/// The jet versions (optional) evaluate the drifts on second-order jets so
/// that functionals of the complex velocity can be differentiated exactly.
struct NelsonField {
  using VecFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
  using JetFn = std::function<void(const RJet& t, std::span<const RJet> x, std::span<RJet> out)>;

  std::string label;
  int dim = 1;
  VecFn forward;
  VecFn backward;  ///< empty when no density information is available
  VecFn a;         ///< row-major d×d
  JetFn forward_jet;
  JetFn backward_jet;
  /// Backward quantities are refused for t < t_min (1/t singularity of deterministic starts).
  double t_min = 0.0;

  bool has_backward() const { return static_cast<bool>(backward); }
  bool has_jets() const { return forward_jet && backward_jet; }

  Eigen::VectorXd forward_at(double t, const Eigen::VectorXd& x) const;
  /// Throws ArgumentError without backward information or below t_min.
  Eigen::VectorXd backward_at(double t, const Eigen::VectorXd& x) const;
  Eigen::MatrixXd a_at(double t, const Eigen::VectorXd& x) const;
  /// 𝒟_μX(t, x).
  Eigen::VectorXcd d_mu_at(double t, const Eigen::VectorXd& x, int mu) const;
};

/// Closed-form field of a spec. Linear-Gaussian specs get forward, backward and
/// jets; other specs get the forward drift only.
NelsonField analytic_field(const SdeSpec& spec, double t_min = 0.1);

/// DX(t, x) = b(t, x).
Eigen::VectorXd forward_analytic(const SdeSpec& spec, double t, const Eigen::VectorXd& x);
/// b_* from the closed-form Gaussian marginal (linear-Gaussian specs only).
Eigen::VectorXd backward_analytic(const SdeSpec& spec, double t, const Eigen::VectorXd& x, double t_min = 0.1);
/// b_* = b − ∂_x(a p)/p from an estimated density (d = 1); the correction is 0 where p < floor.
double backward_from_density(const SdeSpec& spec, const DensityEstimate& density, double x, double t_min = 0.1);

/// 𝒟_μ = (D + D_*)/2 + iμ(D − D_*)/2 componentwise. μ must be ±1.
Eigen::VectorXcd d_mu(const Eigen::VectorXd& forward, const Eigen::VectorXd& backward, int mu);

/// Value and partials of a (possibly complex) scalar field f(t, x).
struct FieldJet {
  std::complex<double> value;
  std::complex<double> d_t;
  Eigen::VectorXcd grad;
  Eigen::MatrixXcd hess;
};

/// Real scalar field written once for S = double and S = RJet.
using RealFieldJetFn = std::function<RJet(const RJet& t, std::span<const RJet> x)>;
/// Complex scalar field on jets.
using ComplexFieldJetFn = std::function<CJet(const RJet& t, std::span<const RJet> x)>;

/// Exact partials by nested duals: one pass per unordered pair of variables.
FieldJet field_jet(const ComplexFieldJetFn& f, double t, const Eigen::VectorXd& x);
FieldJet field_jet(const RealFieldJetFn& f, double t, const Eigen::VectorXd& x);

enum class Direction { forward, backward };

/// Nelson derivative of f(t, X_t): ∂_t f + DX·∇f ± ½a:∂²f.
std::complex<double> d_of_functional(const NelsonField& field, const FieldJet& f, double t, const Eigen::VectorXd& x,
                                     Direction dir);
/// 𝒟_μ f(t, X_t) = ∂_t f + 𝒟_μX·∇f + (iμ/2)a:∂²f.
std::complex<double> d_mu_of_functional(const NelsonField& field, const FieldJet& f, double t,
                                        const Eigen::VectorXd& x, int mu);

/// Kernel regression settings for conditional-expectation estimates.
struct RegressionOptions {
  int lag = 1;                 ///< h in grid steps
  double bandwidth = 0.0;      ///< <= 0: Silverman's rule on X_t (per component)
  double time_window = 0.0;    ///< half-width for pooling neighbouring nodes; 0 uses node t only
  std::size_t min_local = 50;  ///< paths required within one bandwidth of the query point
};

/// Value of a process observed along the ensemble: out = V(path, node).
using ProcessValue = std::function<void(std::size_t path, std::size_t k, std::span<std::complex<double>> out)>;

/// Nadaraya–Watson regression of the lagged increments of V on X_t:
/// forward (V_{k+h} − V_k)/h, backward (V_k − V_{k−h})/h, evaluated at each query point.
std::vector<Eigen::VectorXcd> regress_increments(const Ensemble& ens, double t,
                                                 const std::vector<Eigen::VectorXd>& queries, Direction dir,
                                                 int value_dim, const ProcessValue& value,
                                                 const RegressionOptions& opts = {});

Eigen::VectorXd forward_empirical(const Ensemble& ens, double t, const Eigen::VectorXd& x,
                                  const RegressionOptions& opts = {});
Eigen::VectorXd backward_empirical(const Ensemble& ens, double t, const Eigen::VectorXd& x,
                                   const RegressionOptions& opts = {});
/// One-dimensional batch versions.
std::vector<double> drift_empirical(const Ensemble& ens, double t, std::span<const double> xs, Direction dir,
                                    const RegressionOptions& opts = {});

/// Estimates at lags h and h/2 and their linear extrapolation to h → 0 (lag must be even).
struct RefinementStudy {
  double coarse = 0.0;
  double fine = 0.0;
  double extrapolated = 0.0;
};
RefinementStudy refine_drift(const Ensemble& ens, double t, double x, Direction dir,
                             const RegressionOptions& opts);

/// Quantile of the time-t marginal of component 0.
double marginal_quantile(const Ensemble& ens, std::size_t k, double q);

/// Scalar process P_t = f(t, X_t) with its forward and backward Nelson derivatives.
struct ScalarProcess {
  using Fn = std::function<double(double t, std::span<const double> x)>;
  std::string name;
  Fn value;
  Fn forward;
  Fn backward;
};
/// P_t = X_t^i.
ScalarProcess coordinate_process(const NelsonField& field, int component = 0);
/// P_t = f(t, X_t), derivatives from the Itô-type formulas.
ScalarProcess functional_process(const NelsonField& field, RealFieldJetFn f, std::string name);
/// P_t = x(t), a deterministic curve with derivative xdot.
ScalarProcess deterministic_process(std::function<double(double)> x, std::function<double(double)> xdot,
                                    std::string name);

struct ProductRuleReport {
  double lhs = 0.0;         ///< centered difference of E[X Y]
  double rhs = 0.0;         ///< E[DX·Y + X·D_*Y]
  double gap = 0.0;
  double lhs_stderr = 0.0;
  double rhs_stderr = 0.0;
};
/// d/dt E[XY] by centered differencing over ±delta (both on the grid).
ProductRuleReport product_rule_gap(const Ensemble& ens, const ScalarProcess& X, const ScalarProcess& Y, double t,
                                   double delta);

struct ImIdentityReport {
  double left = 0.0;   ///< E[Im(𝒟_μX)·Y]
  double right = 0.0;  ///< E[X·Im(𝒟_μY)]
  double gap = 0.0;
  double stderr = 0.0;  ///< of the pathwise difference
};
ImIdentityReport im_identity_gap(const Ensemble& ens, const ScalarProcess& X, const ScalarProcess& Y, double t,
                                 int mu = 1);

/// One evaluation of the drift fields, for CSV export.
struct DriftRow {
  double t, x, forward, backward, analytic_forward, analytic_backward;
};
/// Header `t,x,forward,backward,analytic_forward,analytic_backward`.
void write_drift_csv(std::ostream& os, const std::vector<DriftRow>& rows);

}  // namespace nlab
