#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "nlab/lagrangian.hpp"

namespace nlab::testing {

inline Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

/// L evaluated on the flattened variable vector z = (t, x, v).
inline double eval_flat(const Lagrangian& L, const Eigen::VectorXd& z) {
  const int d = L.dim();
  return L.eval(z[0], Eigen::VectorXd(z.segment(1, d)), Eigen::VectorXd(z.segment(1 + d, d)));
}

/// Central finite-difference oracle for the first partials and mixed second partials.
struct FdPartials {
  Eigen::VectorXd grad;  // over z = (t, x, v)
  Eigen::MatrixXd hess;
};

inline FdPartials fd_partials(const Lagrangian& L, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& v,
                              double h1 = 1e-5, double h2 = 1e-4) {
  const int d = L.dim();
  const int n = 1 + 2 * d;
  Eigen::VectorXd z(n);
  z << t, x, v;
  FdPartials out{Eigen::VectorXd(n), Eigen::MatrixXd(n, n)};
  for (int a = 0; a < n; ++a) {
    Eigen::VectorXd up = z, dn = z;
    up[a] += h1;
    dn[a] -= h1;
    out.grad[a] = (eval_flat(L, up) - eval_flat(L, dn)) / (2 * h1);
  }
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      auto shifted = [&](double sa, double sb) {
        Eigen::VectorXd w = z;
        w[a] += sa;
        w[b] += sb;
        return eval_flat(L, w);
      };
      out.hess(a, b) =
          (shifted(h2, h2) - shifted(h2, -h2) - shifted(-h2, h2) + shifted(-h2, -h2)) / (4 * h2 * h2);
    }
  return out;
}

inline bool close_rel(double a, double b, double rel) { return std::abs(a - b) <= rel * std::max(1.0, std::abs(b)); }

}  // namespace nlab::testing
