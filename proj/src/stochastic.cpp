#include "nlab/stochastic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include <fmt/format.h>

#include "nlab/parallel.hpp"
#include "nlab/philox.hpp"
#include "nlab/quadrature.hpp"

namespace nlab {

namespace {

using C = std::complex<double>;

void require_mu(int mu) {
  if (mu != 1 && mu != -1) throw ArgumentError(fmt::format("mu must be +1 or -1, got {}", mu));
}

std::vector<C> to_complex_vec(std::span<const double> x) { return {x.begin(), x.end()}; }

/// Complex velocity 𝒟_μX(t, x) evaluated into reusable buffers.
class VelocityEval {
 public:
  VelocityEval(const NelsonField& field, int mu) : field_(field), mu_(mu), fw_(field.dim), bw_(field.dim) {
    require_mu(mu);
    if (!field.has_backward())
      throw ArgumentError(fmt::format("field '{}' has no backward drift (no density available)", field.label));
  }
  void operator()(double t, std::span<const double> x, std::span<C> out) {
    field_.forward(t, x, fw_);
    field_.backward(t, x, bw_);
    const C half_i_mu(0.0, 0.5 * mu_);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = 0.5 * (fw_[i] + bw_[i]) + half_i_mu * (fw_[i] - bw_[i]);
  }

 private:
  const NelsonField& field_;
  int mu_;
  std::vector<double> fw_, bw_;
};

struct NodeRange {
  std::size_t first = 0;
  std::size_t last = 0;  // inclusive
};

NodeRange window_nodes(const Ensemble& ens, Window w, const NelsonField& field) {
  if (!(w.b > w.a)) throw ArgumentError("window must satisfy a < b");
  if (w.a < field.t_min)
    throw ArgumentError(fmt::format("window start {} lies below t_min={} of the Nelson field", w.a, field.t_min));
  NodeRange r{ens.require_index(w.a, "window start"), ens.require_index(w.b, "window end")};
  if (r.last < r.first + 2) throw ArgumentError("window needs at least three grid nodes");
  return r;
}

ComplexEstimate summarize(const std::vector<C>& samples) {
  ComplexEstimate e;
  const double n = static_cast<double>(samples.size());
  C sum = 0.0;
  for (const C& s : samples) sum += s;
  e.value = sum / n;
  double ss = 0.0;
  for (const C& s : samples) ss += std::norm(s - e.value);
  e.stderr = samples.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return e;
}

/// Runs fn(path, out) for every path in deterministic blocks and collects one complex value per path.
template <class Fn>
std::vector<C> per_path(std::size_t n_paths, Fn&& fn) {
  std::vector<C> out(n_paths);
  parallel::for_blocks(parallel::block_count(n_paths), [&](std::size_t block) {
    auto local = fn.make_state();
    const std::size_t first = block * parallel::kBlock;
    const std::size_t last = std::min(n_paths, first + parallel::kBlock);
    for (std::size_t p = first; p < last; ++p) out[p] = fn(local, p);
  });
  return out;
}

void require_finite(C value, std::size_t path, double t) {
  if (!std::isfinite(value.real()) || !std::isfinite(value.imag()))
    throw XiViolationError(fmt::format("non-finite Lagrangian value on path {} at t={}", path, t));
}

CJet complex_constant(C c) { return CJet(Dual<C>(c)); }

/// 𝒟_μX on jets for a field with jet drifts.
std::vector<CJet> velocity_jet(const NelsonField& field, int mu, const RJet& t, std::span<const RJet> x) {
  const int d = field.dim;
  std::vector<RJet> fw(d), bw(d);
  field.forward_jet(t, x, fw);
  field.backward_jet(t, x, bw);
  std::vector<CJet> v(d);
  const CJet half_i_mu = complex_constant(C(0.0, 0.5 * mu));
  for (int i = 0; i < d; ++i) v[i] = to_complex((fw[i] + bw[i]) * RJet(0.5)) + half_i_mu * to_complex(fw[i] - bw[i]);
  return v;
}

/// g(t, x) = Σ_j w_j ∂_{v_j}L(x, 𝒟_μX(t, x)) as a complex field on jets.
ComplexFieldJetFn momentum_field(const AdmissibleLagrangian& L, const NelsonField& field, int mu,
                                 Eigen::VectorXcd weights) {
  return [&L, &field, mu, weights](const RJet& t, std::span<const RJet> x) {
    auto v = velocity_jet(field, mu, t, x);
    std::vector<CJet> xc(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xc[i] = to_complex(x[i]);
    CJet acc(0.0);
    for (int j = 0; j < L.dim(); ++j)
      if (weights[j] != C(0.0)) acc = acc + complex_constant(weights[j]) * L.d_v_jet(j, xc, v);
    return acc;
  };
}

void require_jets(const NelsonField& field, const char* what) {
  if (!field.has_jets())
    throw ArgumentError(fmt::format("{}: field '{}' is not closed-form; use the empirical mode", what, field.label));
}

}  // namespace

// ---------------------------------------------------------------------------
// Admissible Lagrangians

AdmissibleLagrangian::AdmissibleLagrangian(Lagrangian L, double box_radius) : base_(std::move(L)), radius_(box_radius) {
  const Polynomial* p = base_.as_polynomial();
  if (!p) throw UnsupportedClassError(fmt::format("Lagrangian '{}' is not polynomial in the velocity", base_.name()));
  if (!base_.autonomous()) throw UnsupportedClassError(fmt::format("Lagrangian '{}' is not autonomous", base_.name()));
  if (!(box_radius > 0.0)) throw ArgumentError("admissible Lagrangian needs a positive box radius");
  for (int k = 0; k < base_.dim(); ++k) {
    dx_.push_back(p->d_dx(k));
    dv_.push_back(p->d_dv(k));
  }
}

C AdmissibleLagrangian::value(const Eigen::VectorXd& x, const Eigen::VectorXcd& v) const {
  return eval_complex(base_, x, v);
}

Eigen::VectorXcd AdmissibleLagrangian::d_x(const Eigen::VectorXd& x, const Eigen::VectorXcd& v) const {
  auto xc = to_complex_vec({x.data(), static_cast<std::size_t>(x.size())});
  Eigen::VectorXcd out(dim());
  for (int k = 0; k < dim(); ++k)
    out[k] = dx_[k].eval<C>(C(0.0), xc, std::span<const C>(v.data(), static_cast<std::size_t>(v.size())));
  return out;
}

Eigen::VectorXcd AdmissibleLagrangian::d_v(const Eigen::VectorXd& x, const Eigen::VectorXcd& v) const {
  auto xc = to_complex_vec({x.data(), static_cast<std::size_t>(x.size())});
  Eigen::VectorXcd out(dim());
  for (int k = 0; k < dim(); ++k)
    out[k] = dv_[k].eval<C>(C(0.0), xc, std::span<const C>(v.data(), static_cast<std::size_t>(v.size())));
  return out;
}

CJet AdmissibleLagrangian::d_x_jet(int k, std::span<const CJet> x, std::span<const CJet> v) const {
  return dx_[k].eval<CJet>(CJet(0.0), x, v);
}

CJet AdmissibleLagrangian::d_v_jet(int k, std::span<const CJet> x, std::span<const CJet> v) const {
  return dv_[k].eval<CJet>(CJet(0.0), x, v);
}

double AdmissibleLagrangian::second_derivative_bound(int samples) const {
  const int d = dim();
  std::vector<Polynomial> second;
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) {
      second.push_back(dv_[j].d_dv(k));
      second.push_back(dv_[j].d_dx(k));
      second.push_back(dx_[j].d_dx(k));
    }
  double worst = 0.0;
  std::vector<C> x(d), v(d);
  for (int s = 0; s < samples; ++s) {
    std::uint64_t idx = 0;
    auto draw = [&] { return radius_ * (2.0 * keyed_uniform(0xb0b0, static_cast<std::uint64_t>(s), idx++) - 1.0); };
    for (int i = 0; i < d; ++i) {
      x[i] = draw();
      v[i] = C(draw(), draw());
    }
    for (const auto& p : second) worst = std::max(worst, std::abs(p.eval<C>(C(0.0), x, v)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Groups and suspensions

void DiffeoGroup::validate(int samples) const {
  Eigen::VectorXd x(dim);
  for (int s = 0; s < samples; ++s) {
    std::uint64_t idx = 0;
    auto draw = [&] { return 2.0 * keyed_uniform(0xd1ff, static_cast<std::uint64_t>(s), idx++) - 1.0; };
    for (int i = 0; i < dim; ++i) x[i] = 3.0 * draw();
    const double a = draw(), b = draw();
    if ((phi(0.0, x) - x).cwiseAbs().maxCoeff() > 1e-12)
      throw ArgumentError(fmt::format("group '{}': phi_0 is not the identity", name));
    if ((phi(a, phi(b, x)) - phi(a + b, x)).cwiseAbs().maxCoeff() > 1e-9)
      throw ArgumentError(fmt::format("group '{}': composition law fails at s={}, u={}", name, a, b));
  }
}

DiffeoGroup translation_group(const Eigen::VectorXd& direction) {
  const int d = static_cast<int>(direction.size());
  if (d < 1) throw ArgumentError("translation group needs a direction");
  DiffeoGroup g;
  g.name = "translation";
  g.dim = d;
  g.phi = [direction](double s, const Eigen::VectorXd& x) -> Eigen::VectorXd { return x + s * direction; };
  g.dphi_ds_at0 = [direction](const Eigen::VectorXd&) -> Eigen::VectorXd { return direction; };
  g.dphi_dx = [d](double, const Eigen::VectorXd&) -> Eigen::MatrixXd { return Eigen::MatrixXd::Identity(d, d); };
  return g;
}

DiffeoGroup rotation_group_2d() {
  DiffeoGroup g;
  g.name = "rotation-2d";
  g.dim = 2;
  auto R = [](double s) {
    Eigen::Matrix2d r;
    r << std::cos(s), -std::sin(s), std::sin(s), std::cos(s);
    return r;
  };
  g.phi = [R](double s, const Eigen::VectorXd& x) -> Eigen::VectorXd { return R(s) * x; };
  g.dphi_ds_at0 = [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return Eigen::Vector2d(-x[1], x[0]); };
  g.dphi_dx = [R](double s, const Eigen::VectorXd&) -> Eigen::MatrixXd { return R(s); };
  return g;
}

DiffeoGroup scaling_group(int dim) {
  DiffeoGroup g;
  g.name = "scaling";
  g.dim = dim;
  g.phi = [](double s, const Eigen::VectorXd& x) -> Eigen::VectorXd { return std::exp(s) * x; };
  g.dphi_ds_at0 = [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x; };
  g.dphi_dx = [dim](double s, const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return std::exp(s) * Eigen::MatrixXd::Identity(dim, dim);
  };
  return g;
}

Ensemble suspend(const DiffeoGroup& group, const Ensemble& ens, double s) {
  if (group.dim != ens.dim) throw ArgumentError("suspension: group and ensemble dimensions differ");
  Ensemble out = ens;
  out.spec.reset();
  Eigen::VectorXd x(ens.dim);
  for (std::size_t p = 0; p < ens.n_paths; ++p)
    for (std::size_t k = 0; k < ens.nodes(); ++k) {
      auto src = ens.state(p, k);
      std::copy(src.begin(), src.end(), x.data());
      Eigen::VectorXd y = group.phi(s, x);
      std::copy(y.data(), y.data() + ens.dim, out.state(p, k).begin());
    }
  return out;
}

Ensemble curve_ensemble(std::function<Eigen::VectorXd(double)> x, int dim, double t0, double t1, std::size_t M,
                        std::size_t n_paths) {
  if (M < 2 || n_paths < 1 || !(t1 > t0)) throw ArgumentError("curve ensemble needs M >= 2, n >= 1 and t0 < t1");
  Ensemble ens;
  ens.n_paths = n_paths;
  ens.steps = M;
  ens.dim = dim;
  ens.dt = (t1 - t0) / static_cast<double>(M);
  ens.grid.resize(M + 1);
  ens.grid[0] = t0;
  for (std::size_t k = 1; k <= M; ++k) ens.grid[k] = ens.grid[k - 1] + ens.dt;
  ens.data.resize(n_paths * (M + 1) * dim);
  for (std::size_t k = 0; k <= M; ++k) {
    Eigen::VectorXd v = x(ens.grid[k]);
    if (v.size() != dim) throw ArgumentError("curve returned the wrong dimension");
    for (std::size_t p = 0; p < n_paths; ++p) std::copy(v.data(), v.data() + dim, ens.state(p, k).begin());
  }
  return ens;
}

NelsonField curve_field(int dim, std::function<void(const RJet& t, std::span<RJet> out)> velocity) {
  NelsonField f;
  f.label = "curve";
  f.dim = dim;
  f.t_min = -std::numeric_limits<double>::infinity();
  f.forward = [velocity, dim](double t, std::span<const double>, std::span<double> out) {
    std::vector<RJet> v(dim);
    velocity(RJet(t), v);
    for (int i = 0; i < dim; ++i) out[i] = v[i].v.v;
  };
  f.backward = f.forward;
  f.a = [](double, std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
  f.forward_jet = [velocity](const RJet& t, std::span<const RJet>, std::span<RJet> out) { velocity(t, out); };
  f.backward_jet = f.forward_jet;
  return f;
}

// ---------------------------------------------------------------------------
// Action functional and its differential

ComplexEstimate action_functional(const AdmissibleLagrangian& L, const Ensemble& ens, const NelsonField& field,
                                  int mu, Window window) {
  if (L.dim() != ens.dim || field.dim != ens.dim) throw ArgumentError("action: dimension mismatch");
  const NodeRange r = window_nodes(ens, window, field);
  std::span<const double> nodes(ens.grid.data() + r.first, r.last - r.first + 1);
  const auto w = simpson_weights(nodes);
  const Polynomial& poly = *L.base().as_polynomial();
  const int d = ens.dim;

  struct Integrand {
    const Ensemble& ens;
    const NelsonField& field;
    int mu;
    const Polynomial& poly;
    const std::vector<double>& w;
    NodeRange r;
    int d;
    struct State {
      VelocityEval vel;
      std::vector<C> v, x;
    };
    State make_state() const { return {VelocityEval(field, mu), std::vector<C>(d), std::vector<C>(d)}; }
    C operator()(State& s, std::size_t p) const {
      C sum = 0.0;
      for (std::size_t k = r.first; k <= r.last; ++k) {
        auto xs = ens.state(p, k);
        s.vel(ens.grid[k], xs, s.v);
        for (int i = 0; i < d; ++i) s.x[i] = xs[i];
        const C l = poly.eval<C>(C(0.0), s.x, s.v);
        require_finite(l, p, ens.grid[k]);
        sum += w[k - r.first] * l;
      }
      return sum;
    }
  } integrand{ens, field, mu, poly, w, r, d};
  return summarize(per_path(ens.n_paths, integrand));
}

std::vector<std::string> variation_names() { return {"zero", "sine", "bump", "linear"}; }

Variation make_variation(const std::string& name, Window window, const Eigen::VectorXd& direction) {
  const double a = window.a, len = window.b - window.a;
  if (!(len > 0.0)) throw ArgumentError("variation window must satisfy a < b");
  Variation v;
  v.name = name;
  v.direction = direction;
  if (name == "zero") {
    v.z = [](double) { return 0.0; };
    v.zdot = [](double) { return 0.0; };
  } else if (name == "sine") {
    const double k = std::numbers::pi / len;
    v.z = [=](double t) { return std::sin(k * (t - a)); };
    v.zdot = [=](double t) { return k * std::cos(k * (t - a)); };
  } else if (name == "bump") {
    // exp(−1/(1−u²)) on u ∈ (−1, 1), u = 2(t−a)/len − 1, scaled to peak 1.
    v.z = [=](double t) {
      const double u = 2.0 * (t - a) / len - 1.0;
      return std::abs(u) < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - u * u)) : 0.0;
    };
    v.zdot = [=](double t) {
      const double u = 2.0 * (t - a) / len - 1.0;
      if (std::abs(u) >= 1.0) return 0.0;
      const double q = 1.0 - u * u;
      return std::exp(1.0 - 1.0 / q) * (-2.0 * u / (q * q)) * (2.0 / len);
    };
  } else if (name == "linear") {
    v.z = [=](double t) { return (t - a) / len; };
    v.zdot = [=](double) { return 1.0 / len; };
  } else {
    throw ArgumentError(fmt::format("unknown variation '{}' (catalog: zero, sine, bump, linear)", name));
  }
  return v;
}

GateauxReport gateaux_differential(const AdmissibleLagrangian& L, const Ensemble& ens, const NelsonField& field,
                                   const Variation& Z, int mu, VariationSpace space, Window window, double eps) {
  require_mu(mu);
  require_jets(field, "gateaux_differential");
  if (Z.direction.size() != ens.dim) throw ArgumentError("variation direction has the wrong dimension");
  if (!(eps > 0.0)) throw ArgumentError("finite-difference step must be positive");
  const NodeRange r = window_nodes(ens, window, field);
  std::span<const double> nodes(ens.grid.data() + r.first, r.last - r.first + 1);
  const auto w = simpson_weights(nodes);
  std::vector<double> tw(nodes.size(), 0.0);  // trapezoid weights, for the quadrature error bar
  for (std::size_t j = 0; j + 1 < nodes.size(); ++j) {
    tw[j] += 0.5 * (nodes[j + 1] - nodes[j]);
    tw[j + 1] += 0.5 * (nodes[j + 1] - nodes[j]);
  }
  const int d = ens.dim;
  const int mu_outer = space == VariationSpace::C1 ? -mu : mu;
  const Eigen::VectorXcd e = Z.direction.cast<C>();
  const ComplexFieldJetFn momentum = momentum_field(L, field, mu, e);
  const Polynomial& poly = *L.base().as_polynomial();

  std::vector<double> z(nodes.size()), zdot(nodes.size());
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    z[j] = Z.z(nodes[j]);
    zdot[j] = Z.zdot(nodes[j]);
  }

  std::vector<C> formula(ens.n_paths), difference(ens.n_paths);
  std::vector<C> formula_shift(ens.n_paths), difference_shift(ens.n_paths);  // Simpson minus trapezoid
  parallel::for_blocks(parallel::block_count(ens.n_paths), [&](std::size_t block) {
    VelocityEval vel(field, mu);
    std::vector<C> v(d), xc(d), xp(d), vp(d), xm(d), vm(d);
    Eigen::VectorXd x(d);
    const std::size_t first = block * parallel::kBlock;
    const std::size_t last = std::min(ens.n_paths, first + parallel::kBlock);
    for (std::size_t p = first; p < last; ++p) {
      C formula_sum = 0.0, fd = 0.0, formula_shift_sum = 0.0, fd_shift = 0.0;
      for (std::size_t k = r.first; k <= r.last; ++k) {
        const std::size_t j = k - r.first;
        const double t = ens.grid[k];
        auto xs = ens.state(p, k);
        std::copy(xs.begin(), xs.end(), x.data());
        vel(t, xs, v);
        for (int i = 0; i < d; ++i) {
          xc[i] = xs[i];
          xp[i] = xs[i] + eps * z[j] * Z.direction[i];
          xm[i] = xs[i] - eps * z[j] * Z.direction[i];
          vp[i] = v[i] + eps * zdot[j] * Z.direction[i];
          vm[i] = v[i] - eps * zdot[j] * Z.direction[i];
        }
        const C lp = poly.eval<C>(C(0.0), xp, vp), lm = poly.eval<C>(C(0.0), xm, vm);
        require_finite(lp, p, t);
        require_finite(lm, p, t);
        fd += w[j] * (lp - lm) / (2.0 * eps);
        fd_shift += (w[j] - tw[j]) * (lp - lm) / (2.0 * eps);

        if (z[j] == 0.0 && j != 0 && k != r.last) continue;
        const FieldJet g = field_jet(momentum, t, x);
        C dx = 0.0;
        for (int i = 0; i < d; ++i)
          if (e[i] != C(0.0)) dx += e[i] * L.d_x_jet(i, std::vector<CJet>(xc.begin(), xc.end()),
                                                   std::vector<CJet>(v.begin(), v.end())).v.v;
        const C transported = d_mu_of_functional(field, g, t, x, mu_outer);
        formula_sum += w[j] * (dx - transported) * z[j];
        formula_shift_sum += (w[j] - tw[j]) * (dx - transported) * z[j];
        if (j == 0) formula_sum -= z[j] * g.value;
        if (k == r.last) formula_sum += z[j] * g.value;
      }
      formula[p] = formula_sum;
      difference[p] = fd;
      formula_shift[p] = formula_shift_sum;
      difference_shift[p] = fd_shift;
    }
  });

  GateauxReport rep;
  rep.eps = eps;
  rep.formula = summarize(formula);
  rep.difference = summarize(difference);
  rep.quadrature_error =
      std::hypot(std::abs(summarize(formula_shift).value), std::abs(summarize(difference_shift).value));
  rep.gap = std::abs(rep.formula.value - rep.difference.value);
  const double bars = std::sqrt(rep.formula.stderr * rep.formula.stderr +
                                rep.difference.stderr * rep.difference.stderr +
                                rep.quadrature_error * rep.quadrature_error);
  rep.tolerance = std::max(3.0 * bars, 1e-6 * (1.0 + std::abs(rep.difference.value)));
  rep.pass = rep.gap <= rep.tolerance;
  return rep;
}

// ---------------------------------------------------------------------------
// Euler–Lagrange residual

Eigen::VectorXcd stochastic_el_residual(const AdmissibleLagrangian& L, const NelsonField& field, double t,
                                        const Eigen::VectorXd& x, int mu) {
  require_mu(mu);
  require_jets(field, "stochastic_el_residual");
  if (t < field.t_min) throw ArgumentError(fmt::format("residual requested at t={} below t_min={}", t, field.t_min));
  const int d = L.dim();
  const Eigen::VectorXcd v = field.d_mu_at(t, x, mu);
  const Eigen::VectorXcd dx = L.d_x(x, v);
  Eigen::VectorXcd out(d);
  for (int k = 0; k < d; ++k) {
    Eigen::VectorXcd unit = Eigen::VectorXcd::Zero(d);
    unit[k] = 1.0;
    const FieldJet f = field_jet(momentum_field(L, field, mu, unit), t, x);
    out[k] = dx[k] - d_mu_of_functional(field, f, t, x, -mu);
  }
  return out;
}

Eigen::VectorXcd stochastic_el_residual_empirical(const AdmissibleLagrangian& L, const NelsonField& field,
                                                  const Ensemble& ens, double t, const Eigen::VectorXd& x, int mu,
                                                  const RegressionOptions& opts) {
  require_mu(mu);
  const int d = L.dim();
  if (ens.dim != d || field.dim != d) throw ArgumentError("residual: dimension mismatch");
  // The process P_t = ∂_vL(X_t, 𝒟_μX_t), observed along the ensemble.
  ProcessValue momentum = [&](std::size_t p, std::size_t k, std::span<C> out) {
    auto xs = ens.state(p, k);
    Eigen::VectorXd xv = Eigen::Map<const Eigen::VectorXd>(xs.data(), d);
    const Eigen::VectorXcd pv = L.d_v(xv, field.d_mu_at(ens.grid[k], xv, mu));
    for (int i = 0; i < d; ++i) out[i] = pv[i];
  };
  const auto fw = regress_increments(ens, t, {x}, Direction::forward, d, momentum, opts)[0];
  const auto bw = regress_increments(ens, t, {x}, Direction::backward, d, momentum, opts)[0];
  const C half_i(0.0, -0.5 * mu);
  const Eigen::VectorXcd transported = 0.5 * (fw + bw) + half_i * (fw - bw);
  return L.d_x(x, field.d_mu_at(t, x, mu)) - transported;
}

// ---------------------------------------------------------------------------
// Invariance and the Noether quantity

InvarianceReport invariance_check(const AdmissibleLagrangian& L, const DiffeoGroup& group, int samples) {
  if (group.dim != L.dim()) throw ArgumentError("invariance check: group and Lagrangian dimensions differ");
  const int d = L.dim();
  InvarianceReport rep;
  rep.worst_x = Eigen::VectorXd::Zero(d);
  rep.worst_v = Eigen::VectorXcd::Zero(d);
  Eigen::VectorXd x(d);
  Eigen::VectorXcd v(d);
  for (int s = 0; s < samples; ++s) {
    std::uint64_t idx = 0;
    auto draw = [&] { return 2.0 * keyed_uniform(0x1a7a, static_cast<std::uint64_t>(s), idx++) - 1.0; };
    for (int i = 0; i < d; ++i) {
      x[i] = 2.0 * draw();
      v[i] = C(2.0 * draw(), 2.0 * draw());
    }
    const double sp = draw();
    const Eigen::VectorXcd moved = group.dphi_dx(sp, x).cast<C>() * v;
    const double gap = std::abs(L.value(group.phi(sp, x), moved) - L.value(x, v));
    if (gap > rep.max_gap) {
      rep.max_gap = gap;
      rep.worst_x = x;
      rep.worst_v = v;
      rep.worst_s = sp;
    }
  }
  rep.pass = rep.max_gap <= 1e-9;
  return rep;
}

namespace {

/// Mean and sum of squared deviations of complex samples, mergeable in a fixed order.
struct ComplexAccumulator {
  double n = 0.0;
  C mean = 0.0;
  double m2 = 0.0;
  void add(C z) {
    n += 1.0;
    const C delta = z - mean;
    mean += delta / n;
    m2 += std::real(std::conj(delta) * (z - mean));
  }
  void merge(const ComplexAccumulator& o) {
    if (o.n == 0.0) return;
    const double total = n + o.n;
    const C delta = o.mean - mean;
    mean += delta * (o.n / total);
    m2 += o.m2 + std::norm(delta) * n * o.n / total;
    n = total;
  }
};

}  // namespace

NoetherTrace noether_quantity(const AdmissibleLagrangian& L, const DiffeoGroup& group, const Ensemble& ens,
                              const NelsonField& field, int mu, double t_lo, double t_hi) {
  require_mu(mu);
  if (L.dim() != ens.dim || group.dim != ens.dim || field.dim != ens.dim)
    throw ArgumentError("noether quantity: dimension mismatch");
  const auto inv = invariance_check(L, group);
  if (!inv.pass)
    throw InvarianceError(fmt::format("'{}' is not invariant under '{}': max gap {:.3e} at s={}", L.base().name(),
                                      group.name, inv.max_gap, inv.worst_s));
  if (t_lo < field.t_min)
    throw ArgumentError(fmt::format("trace start {} lies below t_min={} of the Nelson field", t_lo, field.t_min));
  std::vector<std::size_t> nodes;
  const double tol = 1e-6 * ens.dt;
  for (std::size_t k = 0; k < ens.nodes(); ++k)
    if (ens.grid[k] >= t_lo - tol && ens.grid[k] <= t_hi + tol) nodes.push_back(k);
  if (nodes.empty()) throw ArgumentError("noether quantity: no grid nodes in the requested range");

  const int d = ens.dim;
  const std::size_t blocks = parallel::block_count(ens.n_paths);
  std::vector<ComplexAccumulator> acc(blocks * nodes.size());
  parallel::for_blocks(blocks, [&](std::size_t block) {
    VelocityEval vel(field, mu);
    Eigen::VectorXcd v(d);
    Eigen::VectorXd x(d);
    const std::size_t first = block * parallel::kBlock;
    const std::size_t last = std::min(ens.n_paths, first + parallel::kBlock);
    for (std::size_t p = first; p < last; ++p)
      for (std::size_t j = 0; j < nodes.size(); ++j) {
        auto xs = ens.state(p, nodes[j]);
        std::copy(xs.begin(), xs.end(), x.data());
        vel(ens.grid[nodes[j]], xs, {v.data(), static_cast<std::size_t>(d)});
        const Eigen::VectorXcd pv = L.d_v(x, v);
        const Eigen::VectorXd gen = group.dphi_ds_at0(x);
        C q = 0.0;
        for (int i = 0; i < d; ++i) q += pv[i] * gen[i];
        require_finite(q, p, ens.grid[nodes[j]]);
        acc[block * nodes.size() + j].add(q);
      }
  });

  NoetherTrace tr;
  double max_se = 0.0;
  C total = 0.0;
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    ComplexAccumulator a;
    for (std::size_t b = 0; b < blocks; ++b) a.merge(acc[b * nodes.size() + j]);
    tr.grid.push_back(ens.grid[nodes[j]]);
    tr.Q.push_back(a.mean);
    const double se = a.n > 1.0 ? std::sqrt(a.m2 / (a.n - 1.0) / a.n) : 0.0;
    tr.stderr.push_back(se);
    max_se = std::max(max_se, se);
    total += a.mean;
  }
  tr.mean = total / static_cast<double>(nodes.size());
  for (const C& q : tr.Q) tr.drift = std::max(tr.drift, std::abs(q - tr.mean));
  tr.threshold = std::max(3.0 * max_se, 1e-10 * std::max(1.0, std::abs(tr.mean)));
  tr.pass = tr.drift <= tr.threshold;
  return tr;
}

void write_csv(std::ostream& os, const NoetherTrace& trace) {
  os << "t,Re_Q,Im_Q,stderr\n";
  for (std::size_t i = 0; i < trace.grid.size(); ++i)
    os << fmt::format("{},{},{},{}\n", trace.grid[i], trace.Q[i].real(), trace.Q[i].imag(), trace.stderr[i]);
  os << "\ndrift,threshold,pass\n";
  os << fmt::format("{},{},{}\n", trace.drift, trace.threshold, trace.pass ? "true" : "false");
}

}  // namespace nlab
