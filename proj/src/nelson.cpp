#include "nlab/nelson.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "nlab/parallel.hpp"

namespace nlab {

namespace {

using C = std::complex<double>;

void require_mu(int mu) {
  if (mu != 1 && mu != -1) throw ArgumentError(fmt::format("mu must be +1 or -1, got {}", mu));
}

/// Forward and backward drifts of a linear-Gaussian spec, written once for doubles and jets.
///
/// The marginal is N(m(τ), v(τ)·I) with τ = t − t_start, and b_* = b + σ²(x − m)/v.
template <class S>
void linear_gaussian_drifts(const SdeSpec& spec, const LinearGaussian& lg, const S& t, std::span<const S> x,
                            std::span<S> fwd, std::span<S> bwd) {
  const int d = spec.dim;
  for (int i = 0; i < d; ++i) fwd[i] = S(lg.drift0[i]) + S(lg.rate) * x[i];
  if (bwd.empty()) return;
  if (lg.sigma == 0.0) {
    for (int i = 0; i < d; ++i) bwd[i] = fwd[i];
    return;
  }
  const S tau = t - S(spec.t_start);
  const double s2 = lg.sigma * lg.sigma;
  const double init_var = spec.x0_std * spec.x0_std;
  S var;
  std::vector<S> mean(d);
  if (lg.rate == 0.0) {
    var = S(s2) * tau + S(init_var);
    for (int i = 0; i < d; ++i) mean[i] = S(spec.x0[i]) + S(lg.drift0[i]) * tau;
  } else {
    using std::exp;
    const S growth = exp(S(lg.rate) * tau);
    var = S(s2 / (2.0 * lg.rate)) * (growth * growth - S(1.0)) + S(init_var) * growth * growth;
    for (int i = 0; i < d; ++i) {
      const double shift = lg.drift0[i] / lg.rate;
      mean[i] = S(spec.x0[i] + shift) * growth - S(shift);
    }
  }
  double var_value;
  if constexpr (std::is_same_v<S, double>)
    var_value = var;
  else
    var_value = var.v.v;
  if (!(var_value > 0.0)) throw DomainError("backward drift undefined: the marginal has zero variance at this time");
  for (int i = 0; i < d; ++i) bwd[i] = fwd[i] + S(s2) * (x[i] - mean[i]) / var;
}

CJet complex_constant(C c) { return CJet(Dual<C>(c)); }

}  // namespace

Eigen::VectorXd NelsonField::forward_at(double t, const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(dim);
  forward(t, {x.data(), static_cast<std::size_t>(dim)}, {out.data(), static_cast<std::size_t>(dim)});
  return out;
}

Eigen::VectorXd NelsonField::backward_at(double t, const Eigen::VectorXd& x) const {
  if (!backward) throw ArgumentError(fmt::format("field '{}' has no backward drift (no density available)", label));
  if (t < t_min) throw ArgumentError(fmt::format("backward drift requested at t={} below t_min={}", t, t_min));
  Eigen::VectorXd out(dim);
  backward(t, {x.data(), static_cast<std::size_t>(dim)}, {out.data(), static_cast<std::size_t>(dim)});
  return out;
}

Eigen::MatrixXd NelsonField::a_at(double t, const Eigen::VectorXd& x) const {
  std::vector<double> flat(dim * dim);
  a(t, {x.data(), static_cast<std::size_t>(dim)}, flat);
  Eigen::MatrixXd m(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) m(i, j) = flat[i * dim + j];
  return m;
}

Eigen::VectorXcd NelsonField::d_mu_at(double t, const Eigen::VectorXd& x, int mu) const {
  return d_mu(forward_at(t, x), backward_at(t, x), mu);
}

NelsonField analytic_field(const SdeSpec& spec, double t_min) {
  NelsonField f;
  f.label = spec.name;
  f.dim = spec.dim;
  f.t_min = t_min;
  auto shared = std::make_shared<const SdeSpec>(spec);
  f.forward = [shared](double t, std::span<const double> x, std::span<double> out) { shared->drift(t, x, out); };
  const int d = spec.dim;
  f.a = [shared, d](double t, std::span<const double> x, std::span<double> out) {
    std::vector<double> s(d * d);
    shared->diffusion(t, x, s);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += s[i * d + c] * s[j * d + c];
        out[i * d + j] = acc;
      }
  };
  if (spec.linear) {
    const LinearGaussian lg = *spec.linear;
    f.backward = [shared, lg, d](double t, std::span<const double> x, std::span<double> out) {
      std::vector<double> fwd(d);
      linear_gaussian_drifts<double>(*shared, lg, t, x, fwd, out);
    };
    f.forward_jet = [shared, lg](const RJet& t, std::span<const RJet> x, std::span<RJet> out) {
      linear_gaussian_drifts<RJet>(*shared, lg, t, x, out, {});
    };
    f.backward_jet = [shared, lg, d](const RJet& t, std::span<const RJet> x, std::span<RJet> out) {
      std::vector<RJet> fwd(d);
      linear_gaussian_drifts<RJet>(*shared, lg, t, x, fwd, out);
    };
  }
  return f;
}

Eigen::VectorXd forward_analytic(const SdeSpec& spec, double t, const Eigen::VectorXd& x) {
  if (x.size() != spec.dim) throw ArgumentError("forward_analytic: dimension mismatch");
  Eigen::VectorXd out(spec.dim);
  spec.drift(t, {x.data(), static_cast<std::size_t>(x.size())}, {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

Eigen::VectorXd backward_analytic(const SdeSpec& spec, double t, const Eigen::VectorXd& x, double t_min) {
  if (!spec.linear) throw ArgumentError("backward_analytic: closed-form density only for linear-Gaussian specs");
  if (x.size() != spec.dim) throw ArgumentError("backward_analytic: dimension mismatch");
  return analytic_field(spec, t_min).backward_at(t, x);
}

double backward_from_density(const SdeSpec& spec, const DensityEstimate& density, double x, double t_min) {
  if (spec.dim != 1) throw ArgumentError("backward_from_density supports d = 1 only");
  const double t = density.t;
  if (t < t_min) throw ArgumentError(fmt::format("backward drift requested at t={} below t_min={}", t, t_min));
  double b;
  spec.drift(t, {&x, 1}, {&b, 1});
  if (density.degenerate) return b;
  const double p = density.density(x);
  if (p < density.floor || p <= 0.0) return b;
  auto a_of = [&](double y) {
    double s;
    spec.diffusion(t, {&y, 1}, {&s, 1});
    return s * s;
  };
  const double step = 1e-5 * (1.0 + std::abs(x));
  const double a = a_of(x);
  const double da = (a_of(x + step) - a_of(x - step)) / (2.0 * step);
  return b - (da * p + a * density.derivative(x)) / p;
}

Eigen::VectorXcd d_mu(const Eigen::VectorXd& forward, const Eigen::VectorXd& backward, int mu) {
  require_mu(mu);
  if (forward.size() != backward.size()) throw ArgumentError("d_mu: forward and backward sizes differ");
  const C half_i_mu(0.0, 0.5 * mu);
  Eigen::VectorXcd out(forward.size());
  for (Eigen::Index i = 0; i < forward.size(); ++i)
    out[i] = 0.5 * (forward[i] + backward[i]) + half_i_mu * (forward[i] - backward[i]);
  return out;
}

FieldJet field_jet(const ComplexFieldJetFn& f, double t, const Eigen::VectorXd& x) {
  const int d = static_cast<int>(x.size());
  const int n = d + 1;
  FieldJet out;
  out.grad = Eigen::VectorXcd::Zero(d);
  out.hess = Eigen::MatrixXcd::Zero(d, d);
  std::vector<RJet> xs(d);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      auto seed = [&](int k, double value) { return seed_jet(value, k == i ? 1.0 : 0.0, k == j ? 1.0 : 0.0); };
      RJet tj = seed(0, t);
      for (int k = 0; k < d; ++k) xs[k] = seed(k + 1, x[k]);
      CJet r = f(tj, xs);
      out.value = r.v.v;
      if (i == 0) {
        if (j == 0) out.d_t = r.d.v;
        else out.grad[j - 1] = r.v.d;
      } else {
        out.hess(i - 1, j - 1) = r.d.d;
        out.hess(j - 1, i - 1) = r.d.d;
      }
      if (!std::isfinite(std::abs(r.v.v)) || !std::isfinite(std::abs(r.d.d)))
        throw DomainError(fmt::format("field is not finite at t={}", t));
    }
  return out;
}

FieldJet field_jet(const RealFieldJetFn& f, double t, const Eigen::VectorXd& x) {
  return field_jet(ComplexFieldJetFn([&f](const RJet& tj, std::span<const RJet> xs) { return to_complex(f(tj, xs)); }),
                   t, x);
}

namespace {

C second_order_term(const Eigen::MatrixXd& a, const Eigen::MatrixXcd& hess) {
  C acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) acc += a(i, j) * hess(i, j);
  return acc;
}

}  // namespace

std::complex<double> d_of_functional(const NelsonField& field, const FieldJet& f, double t, const Eigen::VectorXd& x,
                                     Direction dir) {
  const Eigen::VectorXd drift = dir == Direction::forward ? field.forward_at(t, x) : field.backward_at(t, x);
  const double sign = dir == Direction::forward ? 0.5 : -0.5;
  C acc = f.d_t + sign * second_order_term(field.a_at(t, x), f.hess);
  for (Eigen::Index i = 0; i < drift.size(); ++i) acc += drift[i] * f.grad[i];
  return acc;
}

std::complex<double> d_mu_of_functional(const NelsonField& field, const FieldJet& f, double t,
                                        const Eigen::VectorXd& x, int mu) {
  require_mu(mu);
  const Eigen::VectorXcd vel = field.d_mu_at(t, x, mu);
  C acc = f.d_t + C(0.0, 0.5 * mu) * second_order_term(field.a_at(t, x), f.hess);
  for (Eigen::Index i = 0; i < vel.size(); ++i) acc += vel[i] * f.grad[i];
  return acc;
}

std::vector<Eigen::VectorXcd> regress_increments(const Ensemble& ens, double t,
                                                 const std::vector<Eigen::VectorXd>& queries, Direction dir,
                                                 int value_dim, const ProcessValue& value,
                                                 const RegressionOptions& opts) {
  const std::size_t k = ens.require_index(t, "regression time t");
  if (opts.lag < 1) throw ArgumentError("regression lag must be at least one grid step");
  const std::size_t lag = static_cast<std::size_t>(opts.lag);
  const std::size_t M = ens.steps;
  const int d = ens.dim;
  if (dir == Direction::forward && k + lag > M) throw ArgumentError(fmt::format("t+h is off the grid at t={}", t));
  if (dir == Direction::backward && k < lag) throw ArgumentError(fmt::format("t-h is off the grid at t={}", t));
  for (const auto& q : queries)
    if (q.size() != d) throw ArgumentError("regression query has the wrong dimension");

  // Pool a symmetric set of nodes k ± j, clipped so that every node has its lagged partner.
  std::size_t J = opts.time_window > 0.0 ? static_cast<std::size_t>(opts.time_window / ens.dt + 1e-9) : 0;
  if (dir == Direction::forward)
    J = std::min({J, k, M - lag - k});
  else
    J = std::min({J, k - lag, M - k});

  // Bandwidth per component from the marginal at node k.
  const double n = static_cast<double>(ens.n_paths);
  Eigen::VectorXd bw(d);
  for (int i = 0; i < d; ++i) {
    if (opts.bandwidth > 0.0) {
      bw[i] = opts.bandwidth;
      continue;
    }
    double mean = 0.0, ss = 0.0;
    for (std::size_t p = 0; p < ens.n_paths; ++p) mean += ens.at(p, k, i);
    mean /= n;
    for (std::size_t p = 0; p < ens.n_paths; ++p) ss += (ens.at(p, k, i) - mean) * (ens.at(p, k, i) - mean);
    const double sd = ens.n_paths > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    bw[i] = 1.06 * sd * std::pow(n, -1.0 / (d + 4.0));
    // A degenerate marginal collapses the kernel onto exact matches.
    if (!(bw[i] > 0.0)) bw[i] = 1e-9 * (1.0 + std::abs(mean));
  }

  for (const auto& q : queries) {
    std::size_t local = 0;
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
      bool inside = true;
      for (int i = 0; i < d && inside; ++i) inside = std::abs(ens.at(p, k, i) - q[i]) <= bw[i];
      local += inside;
    }
    if (local < opts.min_local)
      throw InsufficientDataError(fmt::format("only {} paths within one bandwidth of the query at t={} (need {})",
                                              local, t, opts.min_local));
  }

  const std::size_t nq = queries.size();
  const std::size_t stride = 1 + static_cast<std::size_t>(value_dim);
  const std::size_t blocks = parallel::block_count(ens.n_paths);
  std::vector<C> partial(blocks * nq * stride, C(0.0));
  const double h = static_cast<double>(lag) * ens.dt;
  constexpr double kCut = 2.0 * 18.0;  // Σu² beyond this contributes below e^-18

  parallel::for_blocks(blocks, [&](std::size_t block) {
    std::vector<C> now(value_dim), other(value_dim), inc(value_dim);
    std::vector<C> acc(nq * stride, C(0.0));
    const std::size_t first = block * parallel::kBlock;
    const std::size_t last = std::min(ens.n_paths, first + parallel::kBlock);
    for (std::size_t p = first; p < last; ++p) {
      for (std::size_t kk = k - J; kk <= k + J; ++kk) {
        auto xs = ens.state(p, kk);
        bool any = false;
        for (std::size_t q = 0; q < nq; ++q) {
          double u2 = 0.0;
          for (int i = 0; i < d; ++i) {
            const double u = (xs[i] - queries[q][i]) / bw[i];
            u2 += u * u;
          }
          if (u2 > kCut) continue;
          if (!any) {
            value(p, kk, now);
            value(p, dir == Direction::forward ? kk + lag : kk - lag, other);
            for (int m = 0; m < value_dim; ++m)
              inc[m] = dir == Direction::forward ? (other[m] - now[m]) / h : (now[m] - other[m]) / h;
            any = true;
          }
          const double w = std::exp(-0.5 * u2);
          C* slot = &acc[q * stride];
          slot[0] += w;
          for (int m = 0; m < value_dim; ++m) slot[1 + m] += w * inc[m];
        }
      }
    }
    std::copy(acc.begin(), acc.end(), partial.begin() + static_cast<std::ptrdiff_t>(block * nq * stride));
  });

  std::vector<Eigen::VectorXcd> out(nq, Eigen::VectorXcd::Zero(value_dim));
  for (std::size_t q = 0; q < nq; ++q) {
    C wsum = 0.0;
    Eigen::VectorXcd vsum = Eigen::VectorXcd::Zero(value_dim);
    for (std::size_t b = 0; b < blocks; ++b) {
      const C* slot = &partial[(b * nq + q) * stride];
      wsum += slot[0];
      for (int m = 0; m < value_dim; ++m) vsum[m] += slot[1 + m];
    }
    if (!(wsum.real() > 0.0)) throw InsufficientDataError(fmt::format("no kernel mass near the query at t={}", t));
    out[q] = vsum / wsum.real();
  }
  return out;
}

namespace {

ProcessValue state_value(const Ensemble& ens) {
  return [&ens](std::size_t p, std::size_t k, std::span<C> out) {
    auto s = ens.state(p, k);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s[i];
  };
}

Eigen::VectorXd real_part(const Eigen::VectorXcd& v) { return v.real(); }

}  // namespace

Eigen::VectorXd forward_empirical(const Ensemble& ens, double t, const Eigen::VectorXd& x,
                                  const RegressionOptions& opts) {
  return real_part(regress_increments(ens, t, {x}, Direction::forward, ens.dim, state_value(ens), opts)[0]);
}

Eigen::VectorXd backward_empirical(const Ensemble& ens, double t, const Eigen::VectorXd& x,
                                   const RegressionOptions& opts) {
  return real_part(regress_increments(ens, t, {x}, Direction::backward, ens.dim, state_value(ens), opts)[0]);
}

std::vector<double> drift_empirical(const Ensemble& ens, double t, std::span<const double> xs, Direction dir,
                                    const RegressionOptions& opts) {
  if (ens.dim != 1) throw ArgumentError("drift_empirical batch form supports d = 1 only");
  std::vector<Eigen::VectorXd> queries;
  for (double x : xs) queries.push_back(Eigen::VectorXd::Constant(1, x));
  auto est = regress_increments(ens, t, queries, dir, 1, state_value(ens), opts);
  std::vector<double> out;
  for (const auto& e : est) out.push_back(e[0].real());
  return out;
}

RefinementStudy refine_drift(const Ensemble& ens, double t, double x, Direction dir, const RegressionOptions& opts) {
  if (opts.lag < 2 || opts.lag % 2 != 0) throw ArgumentError("refinement needs an even lag of at least two steps");
  if (ens.dim != 1) throw ArgumentError("refine_drift supports d = 1 only");
  RegressionOptions half = opts;
  half.lag = opts.lag / 2;
  const double xs[] = {x};
  RefinementStudy r;
  r.coarse = drift_empirical(ens, t, xs, dir, opts)[0];
  r.fine = drift_empirical(ens, t, xs, dir, half)[0];
  r.extrapolated = 2.0 * r.fine - r.coarse;
  return r;
}

double marginal_quantile(const Ensemble& ens, std::size_t k, double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw ArgumentError("quantile level must lie in [0, 1]");
  std::vector<double> s(ens.n_paths);
  for (std::size_t p = 0; p < ens.n_paths; ++p) s[p] = ens.at(p, k);
  std::sort(s.begin(), s.end());
  const double pos = q * static_cast<double>(s.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

ScalarProcess coordinate_process(const NelsonField& field, int component) {
  if (component < 0 || component >= field.dim) throw ArgumentError("coordinate index out of range");
  auto to_vec = [](std::span<const double> x) { return Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()).eval(); };
  ScalarProcess p;
  p.name = fmt::format("X{}", component + 1);
  p.value = [component](double, std::span<const double> x) { return x[component]; };
  p.forward = [field, component, to_vec](double t, std::span<const double> x) {
    return field.forward_at(t, to_vec(x))[component];
  };
  p.backward = [field, component, to_vec](double t, std::span<const double> x) {
    return field.backward_at(t, to_vec(x))[component];
  };
  return p;
}

ScalarProcess functional_process(const NelsonField& field, RealFieldJetFn f, std::string name) {
  auto to_vec = [](std::span<const double> x) { return Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()).eval(); };
  ScalarProcess p;
  p.name = std::move(name);
  p.value = [f](double t, std::span<const double> x) {
    std::vector<RJet> xs(x.begin(), x.end());
    return f(RJet(t), xs).v.v;
  };
  p.forward = [field, f, to_vec](double t, std::span<const double> x) {
    auto xv = to_vec(x);
    return d_of_functional(field, field_jet(f, t, xv), t, xv, Direction::forward).real();
  };
  p.backward = [field, f, to_vec](double t, std::span<const double> x) {
    auto xv = to_vec(x);
    return d_of_functional(field, field_jet(f, t, xv), t, xv, Direction::backward).real();
  };
  return p;
}

ScalarProcess deterministic_process(std::function<double(double)> x, std::function<double(double)> xdot,
                                    std::string name) {
  ScalarProcess p;
  p.name = std::move(name);
  p.value = [x](double t, std::span<const double>) { return x(t); };
  p.forward = [xdot](double t, std::span<const double>) { return xdot(t); };
  p.backward = p.forward;
  return p;
}

namespace {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& s) {
  MeanSe r;
  const double n = static_cast<double>(s.size());
  for (double v : s) r.mean += v;
  r.mean /= n;
  double ss = 0.0;
  for (double v : s) ss += (v - r.mean) * (v - r.mean);
  r.se = s.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return r;
}

}  // namespace

ProductRuleReport product_rule_gap(const Ensemble& ens, const ScalarProcess& X, const ScalarProcess& Y, double t,
                                   double delta) {
  if (!(delta > 0.0)) throw ArgumentError("product rule: delta must be positive");
  const std::size_t k = ens.require_index(t, "product rule time");
  const std::size_t lo = ens.require_index(t - delta, "product rule t-delta");
  const std::size_t hi = ens.require_index(t + delta, "product rule t+delta");
  const double tl = ens.grid[lo], th = ens.grid[hi], tk = ens.grid[k];
  std::vector<double> lhs(ens.n_paths), rhs(ens.n_paths);
  for (std::size_t p = 0; p < ens.n_paths; ++p) {
    auto a = ens.state(p, lo), b = ens.state(p, hi), c = ens.state(p, k);
    lhs[p] = (X.value(th, b) * Y.value(th, b) - X.value(tl, a) * Y.value(tl, a)) / (th - tl);
    rhs[p] = X.forward(tk, c) * Y.value(tk, c) + X.value(tk, c) * Y.backward(tk, c);
  }
  auto l = mean_se(lhs), r = mean_se(rhs);
  return {l.mean, r.mean, std::abs(l.mean - r.mean), l.se, r.se};
}

ImIdentityReport im_identity_gap(const Ensemble& ens, const ScalarProcess& X, const ScalarProcess& Y, double t,
                                 int mu) {
  require_mu(mu);
  const std::size_t k = ens.require_index(t, "identity time");
  const double tk = ens.grid[k];
  std::vector<double> left(ens.n_paths), right(ens.n_paths), diff(ens.n_paths);
  for (std::size_t p = 0; p < ens.n_paths; ++p) {
    auto x = ens.state(p, k);
    const double im_x = 0.5 * mu * (X.forward(tk, x) - X.backward(tk, x));
    const double im_y = 0.5 * mu * (Y.forward(tk, x) - Y.backward(tk, x));
    left[p] = im_x * Y.value(tk, x);
    right[p] = X.value(tk, x) * im_y;
    diff[p] = left[p] - right[p];
  }
  auto l = mean_se(left), r = mean_se(right), g = mean_se(diff);
  return {l.mean, r.mean, std::abs(g.mean), g.se};
}

void write_drift_csv(std::ostream& os, const std::vector<DriftRow>& rows) {
  os << "t,x,forward,backward,analytic_forward,analytic_backward\n";
  for (const auto& r : rows)
    os << fmt::format("{},{},{},{},{},{}\n", r.t, r.x, r.forward, r.backward, r.analytic_forward, r.analytic_backward);
}

}  // namespace nlab
