#pragma once

#include <complex>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlab/dual.hpp"
#include "nlab/errors.hpp"

namespace nlab {

/// One term c · t^p · Π x_i^{a_i} · Π v_i^{b_i}.
struct Monomial {
  double coeff = 0.0;
  int t_pow = 0;
  std::vector<int> x_pow;
  std::vector<int> v_pow;
};

/// Real polynomial in (t, x, v). All catalog Lagrangians have this form.
class Polynomial {
 public:
  Polynomial() = default;
  Polynomial(int dim, std::vector<Monomial> terms);

  int dim() const { return dim_; }
  const std::vector<Monomial>& terms() const { return terms_; }

  bool depends_on_t() const;
  bool depends_on_x() const;

  /// Partial derivative with respect to v_k (k < dim).
  Polynomial d_dv(int k) const;
  /// Partial derivative with respect to x_k (k < dim).
  Polynomial d_dx(int k) const;

  template <class S>
  S eval(const S& t, std::span<const S> x, std::span<const S> v) const {
    S sum = S(0.0);
    for (const auto& m : terms_) {
      S term = S(m.coeff);
      if (m.t_pow) term = term * ipow(t, m.t_pow);
      for (int i = 0; i < dim_; ++i) {
        if (m.x_pow[i]) term = term * ipow(x[i], m.x_pow[i]);
        if (m.v_pow[i]) term = term * ipow(v[i], m.v_pow[i]);
      }
      sum = sum + term;
    }
    return sum;
  }

 private:
  int dim_ = 0;
  std::vector<Monomial> terms_;
};

struct LagrangianFlags {
  bool autonomous = false;
  bool independent_of_x = false;
};

/// Scalar field L(t, x, v) over a d-dimensional configuration space.
///
/// Either a polynomial (supports complex velocities) or a custom generic
/// callable instantiated for double and for real second-order jets.
class Lagrangian {
 public:
  using RealFn = std::function<double(double, std::span<const double>, std::span<const double>)>;
  using JetFn = std::function<RJet(const RJet&, std::span<const RJet>, std::span<const RJet>)>;

  static Lagrangian polynomial(Polynomial p, std::string name);

  /// `f` must be callable as f(S t, std::span<const S> x, std::span<const S> v) for S = double and RJet.
  template <class F>
  static Lagrangian custom(int dim, F f, LagrangianFlags flags, std::string name) {
    Lagrangian l;
    l.dim_ = dim;
    l.flags_ = flags;
    l.name_ = std::move(name);
    l.real_ = [f](double t, std::span<const double> x, std::span<const double> v) { return f(t, x, v); };
    l.jet_ = [f](const RJet& t, std::span<const RJet> x, std::span<const RJet> v) { return f(t, x, v); };
    return l;
  }

  int dim() const { return dim_; }
  const std::string& name() const { return name_; }
  bool autonomous() const { return flags_.autonomous; }
  bool independent_of_x() const { return flags_.independent_of_x; }
  bool polynomial_in_v() const { return is_poly_; }
  /// Null for custom Lagrangians.
  const Polynomial* as_polynomial() const { return is_poly_ ? &poly_ : nullptr; }

  double eval(double t, std::span<const double> x, std::span<const double> v) const;
  double eval(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& v) const;
  RJet eval_jet(const RJet& t, std::span<const RJet> x, std::span<const RJet> v) const;

 private:
  int dim_ = 0;
  std::string name_;
  LagrangianFlags flags_;
  bool is_poly_ = false;
  Polynomial poly_;
  RealFn real_;
  JetFn jet_;
};

/// Value, first partials and the second-derivative blocks used by total time derivatives.
struct Partials {
  double value = 0.0;
  double d_t = 0.0;
  Eigen::VectorXd d_x;
  Eigen::VectorXd d_v;
  Eigen::MatrixXd d2_vv;  ///< (j,k) = ∂²L/∂v_j∂v_k
  Eigen::MatrixXd d2_xv;  ///< (i,j) = ∂²L/∂x_i∂v_j
  Eigen::VectorXd d2_tv;  ///< (j) = ∂²L/∂t∂v_j
};

/// Exact partials by nested dual numbers. Throws DomainError on non-finite output.
Partials eval_partials(const Lagrangian& L, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& v);

/// L(x, v) with complex velocity. Requires an autonomous polynomial Lagrangian.
std::complex<double> eval_complex(const Lagrangian& L, const Eigen::VectorXd& x, const Eigen::VectorXcd& v);

// Catalog.
Lagrangian kinetic(int dim = 1);        ///< |v|²/2
Lagrangian free_square(int dim = 1);    ///< |v|²
Lagrangian harmonic(double k);          ///< v² − k x²
Lagrangian velocity_sum(int dim = 1);   ///< Σ v_i
/// L = f(t, v) with f given as terms (coeff, t power, v power).
struct TimeVelocityTerm {
  double coeff;
  int t_pow;
  int v_pow;
};
Lagrangian momentum_free(const std::vector<TimeVelocityTerm>& terms);

}  // namespace nlab
