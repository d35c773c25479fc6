#include "nlab/lagrangian.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace nlab {

namespace {

std::string describe_point(double t, std::span<const double> x, std::span<const double> v) {
  std::ostringstream os;
  os.precision(17);
  os << "t=" << t << " x=(";
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? "," : "") << x[i];
  os << ") v=(";
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  os << ")";
  return os.str();
}

}  // namespace

Polynomial::Polynomial(int dim, std::vector<Monomial> terms) : dim_(dim), terms_(std::move(terms)) {
  if (dim_ < 1) throw ArgumentError("polynomial dimension must be >= 1");
  for (auto& m : terms_) {
    if (m.x_pow.empty()) m.x_pow.assign(dim_, 0);
    if (m.v_pow.empty()) m.v_pow.assign(dim_, 0);
    if (static_cast<int>(m.x_pow.size()) != dim_ || static_cast<int>(m.v_pow.size()) != dim_)
      throw ArgumentError("monomial exponent vectors must have the polynomial dimension");
    auto negative = [](int p) { return p < 0; };
    if (m.t_pow < 0 || std::ranges::any_of(m.x_pow, negative) || std::ranges::any_of(m.v_pow, negative))
      throw ArgumentError("monomial exponents must be non-negative");
  }
}

bool Polynomial::depends_on_t() const {
  return std::ranges::any_of(terms_, [](const Monomial& m) { return m.coeff != 0.0 && m.t_pow > 0; });
}

bool Polynomial::depends_on_x() const {
  return std::ranges::any_of(terms_, [](const Monomial& m) {
    return m.coeff != 0.0 && std::ranges::any_of(m.x_pow, [](int p) { return p > 0; });
  });
}

Polynomial Polynomial::d_dv(int k) const {
  std::vector<Monomial> out;
  for (const auto& m : terms_) {
    if (m.v_pow[k] == 0 || m.coeff == 0.0) continue;
    Monomial d = m;
    d.coeff *= m.v_pow[k];
    d.v_pow[k] -= 1;
    out.push_back(std::move(d));
  }
  return Polynomial(dim_, std::move(out));
}

Polynomial Polynomial::d_dx(int k) const {
  std::vector<Monomial> out;
  for (const auto& m : terms_) {
    if (m.x_pow[k] == 0 || m.coeff == 0.0) continue;
    Monomial d = m;
    d.coeff *= m.x_pow[k];
    d.x_pow[k] -= 1;
    out.push_back(std::move(d));
  }
  return Polynomial(dim_, std::move(out));
}

Lagrangian Lagrangian::polynomial(Polynomial p, std::string name) {
  Lagrangian l;
  l.dim_ = p.dim();
  l.name_ = std::move(name);
  l.flags_.autonomous = !p.depends_on_t();
  l.flags_.independent_of_x = !p.depends_on_x();
  l.is_poly_ = true;
  l.poly_ = std::move(p);
  return l;
}

double Lagrangian::eval(double t, std::span<const double> x, std::span<const double> v) const {
  if (is_poly_) return poly_.eval<double>(t, x, v);
  return real_(t, x, v);
}

double Lagrangian::eval(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& v) const {
  return eval(t, std::span<const double>(x.data(), x.size()), std::span<const double>(v.data(), v.size()));
}

RJet Lagrangian::eval_jet(const RJet& t, std::span<const RJet> x, std::span<const RJet> v) const {
  if (is_poly_) return poly_.eval<RJet>(t, x, v);
  return jet_(t, x, v);
}

Partials eval_partials(const Lagrangian& L, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& v) {
  const int d = L.dim();
  if (x.size() != d || v.size() != d) throw ArgumentError("eval_partials: x and v must have the Lagrangian dimension");
  const int n = 1 + 2 * d;

  Partials p;
  p.d_x = Eigen::VectorXd::Zero(d);
  p.d_v = Eigen::VectorXd::Zero(d);
  p.d2_vv = Eigen::MatrixXd::Zero(d, d);
  p.d2_xv = Eigen::MatrixXd::Zero(d, d);
  p.d2_tv = Eigen::VectorXd::Zero(d);

  std::vector<RJet> xs(d), vs(d);
  // Variable ordering: 0 = t, 1..d = x, d+1..2d = v.
  for (int j = 0; j < d; ++j) {
    const int outer = 1 + d + j;
    for (int inner = 0; inner < n; ++inner) {
      auto seed = [&](int var, double val) {
        return seed_jet(val, var == outer ? 1.0 : 0.0, var == inner ? 1.0 : 0.0);
      };
      RJet tj = seed(0, t);
      for (int i = 0; i < d; ++i) {
        xs[i] = seed(1 + i, x[i]);
        vs[i] = seed(1 + d + i, v[i]);
      }
      RJet r = L.eval_jet(tj, xs, vs);
      p.value = r.v.v;
      if (inner == 0) {
        p.d_t = r.v.d;
        p.d2_tv[j] = r.d.d;
      } else if (inner <= d) {
        p.d_x[inner - 1] = r.v.d;
        p.d2_xv(inner - 1, j) = r.d.d;
      } else {
        p.d_v[inner - 1 - d] = r.v.d;
        p.d2_vv(j, inner - 1 - d) = r.d.d;
      }
    }
  }

  bool finite = std::isfinite(p.value) && std::isfinite(p.d_t) && p.d_x.allFinite() && p.d_v.allFinite() &&
                p.d2_vv.allFinite() && p.d2_xv.allFinite() && p.d2_tv.allFinite();
  if (!finite)
    throw DomainError("Lagrangian '" + L.name() + "' is not finite at " +
                      describe_point(t, std::span<const double>(x.data(), d), std::span<const double>(v.data(), d)));
  return p;
}

std::complex<double> eval_complex(const Lagrangian& L, const Eigen::VectorXd& x, const Eigen::VectorXcd& v) {
  const Polynomial* poly = L.as_polynomial();
  if (!poly) throw UnsupportedClassError("Lagrangian '" + L.name() + "' is not polynomial in v");
  if (!L.autonomous()) throw UnsupportedClassError("Lagrangian '" + L.name() + "' depends on t");
  const int d = L.dim();
  if (x.size() != d || v.size() != d) throw ArgumentError("eval_complex: x and v must have the Lagrangian dimension");
  using C = std::complex<double>;
  std::vector<C> xc(x.data(), x.data() + d);
  return poly->eval<C>(C(0.0), xc, std::span<const C>(v.data(), d));
}

namespace {

Monomial velocity_square(int dim, int axis, double coeff) {
  Monomial m{coeff, 0, std::vector<int>(dim, 0), std::vector<int>(dim, 0)};
  m.v_pow[axis] = 2;
  return m;
}

}  // namespace

Lagrangian kinetic(int dim) {
  std::vector<Monomial> terms;
  for (int i = 0; i < dim; ++i) terms.push_back(velocity_square(dim, i, 0.5));
  return Lagrangian::polynomial(Polynomial(dim, std::move(terms)), "kinetic");
}

Lagrangian free_square(int dim) {
  std::vector<Monomial> terms;
  for (int i = 0; i < dim; ++i) terms.push_back(velocity_square(dim, i, 1.0));
  return Lagrangian::polynomial(Polynomial(dim, std::move(terms)), "free-square");
}

Lagrangian harmonic(double k) {
  std::vector<Monomial> terms{{1.0, 0, {0}, {2}}, {-k, 0, {2}, {0}}};
  return Lagrangian::polynomial(Polynomial(1, std::move(terms)), "harmonic");
}

Lagrangian velocity_sum(int dim) {
  std::vector<Monomial> terms;
  for (int i = 0; i < dim; ++i) {
    Monomial m{1.0, 0, std::vector<int>(dim, 0), std::vector<int>(dim, 0)};
    m.v_pow[i] = 1;
    terms.push_back(std::move(m));
  }
  return Lagrangian::polynomial(Polynomial(dim, std::move(terms)), "velocity-sum");
}

Lagrangian momentum_free(const std::vector<TimeVelocityTerm>& terms) {
  std::vector<Monomial> monos;
  for (const auto& term : terms) monos.push_back({term.coeff, term.t_pow, {0}, {term.v_pow}});
  return Lagrangian::polynomial(Polynomial(1, std::move(monos)), "momentum-free");
}

}  // namespace nlab
