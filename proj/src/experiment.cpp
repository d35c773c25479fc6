#include "nlab/experiment.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "nlab/errors.hpp"
#include "nlab/nelson.hpp"
#include "nlab/noether.hpp"
#include "nlab/philox.hpp"
#include "nlab/sde.hpp"
#include "nlab/stochastic.hpp"
#include "nlab/variational.hpp"

namespace nlab {

using json = nlohmann::json;
using C = std::complex<double>;

void Summary::add(std::string key, double value) { add(std::move(key), fmt::format("{}", value)); }

std::optional<std::string> Summary::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

bool Summary::all_pass() const {
  for (const auto& [k, v] : entries_)
    if (k.size() >= 5 && k.compare(k.size() - 5, 5, "_pass") == 0 && v != "true") return false;
  return true;
}

namespace {

constexpr const char* kSchema = "nlab-experiment/1";

// ---------------------------------------------------------------------------
// Strict JSON access: every key must be consumed, types are checked.

class Obj {
 public:
  Obj(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{} must be a JSON object", where_));
  }

  bool has(const std::string& k) const { return j_.contains(k); }

  const json& raw(const std::string& k) {
    if (!j_.contains(k)) throw ConfigError(fmt::format("missing required key '{}' in {}", k, where_));
    seen_.insert(k);
    return j_.at(k);
  }

  double number(const std::string& k) {
    const json& v = raw(k);
    if (!v.is_number()) throw ConfigError(fmt::format("'{}' in {} must be a number", k, where_));
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(fmt::format("'{}' in {} must be finite", k, where_));
    return d;
  }
  double number(const std::string& k, double fallback) { return has(k) ? number(k) : fallback; }

  double positive(const std::string& k) {
    const double d = number(k);
    if (!(d > 0.0)) throw ConfigError(fmt::format("'{}' in {} must be positive", k, where_));
    return d;
  }
  double positive(const std::string& k, double fallback) { return has(k) ? positive(k) : fallback; }

  double non_negative(const std::string& k, double fallback) {
    if (!has(k)) return fallback;
    const double d = number(k);
    if (d < 0.0) throw ConfigError(fmt::format("'{}' in {} must not be negative", k, where_));
    return d;
  }

  std::uint64_t count(const std::string& k) {
    const json& v = raw(k);
    if (!v.is_number_integer() || v.get<std::int64_t>() <= 0)
      throw ConfigError(fmt::format("'{}' in {} must be a positive integer", k, where_));
    return v.get<std::uint64_t>();
  }
  std::uint64_t count(const std::string& k, std::uint64_t fallback) { return has(k) ? count(k) : fallback; }

  std::uint64_t seed(const std::string& k) {
    const json& v = raw(k);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw ConfigError(fmt::format("'{}' in {} must be a non-negative integer", k, where_));
    return v.get<std::uint64_t>();
  }

  std::string string(const std::string& k) {
    const json& v = raw(k);
    if (!v.is_string()) throw ConfigError(fmt::format("'{}' in {} must be a string", k, where_));
    return v.get<std::string>();
  }
  std::string string(const std::string& k, const std::string& fallback) { return has(k) ? string(k) : fallback; }

  /// A number or an array of numbers.
  std::vector<double> numbers(const std::string& k) {
    const json& v = raw(k);
    std::vector<double> out;
    if (v.is_number()) {
      out.push_back(v.get<double>());
    } else if (v.is_array()) {
      for (const auto& e : v) {
        if (!e.is_number()) throw ConfigError(fmt::format("'{}' in {} must contain numbers only", k, where_));
        out.push_back(e.get<double>());
      }
    } else {
      throw ConfigError(fmt::format("'{}' in {} must be a number or an array of numbers", k, where_));
    }
    for (double d : out)
      if (!std::isfinite(d)) throw ConfigError(fmt::format("'{}' in {} must be finite", k, where_));
    return out;
  }

  std::vector<std::string> strings(const std::string& k) {
    const json& v = raw(k);
    std::vector<std::string> out;
    if (v.is_string()) {
      out.push_back(v.get<std::string>());
    } else if (v.is_array()) {
      for (const auto& e : v) {
        if (!e.is_string()) throw ConfigError(fmt::format("'{}' in {} must contain strings only", k, where_));
        out.push_back(e.get<std::string>());
      }
    } else {
      throw ConfigError(fmt::format("'{}' in {} must be a string or an array of strings", k, where_));
    }
    return out;
  }

  Obj object(const std::string& k) { return Obj(raw(k), fmt::format("{}.{}", where_, k)); }

  const std::string& where() const { return where_; }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError(fmt::format("unknown key '{}' in {}", item.key(), where_));
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Broadcast a scalar to `dim` entries, or check the length of an array.
Eigen::VectorXd sized(const std::vector<double>& v, int dim, const std::string& what) {
  if (v.size() == 1) return Eigen::VectorXd::Constant(dim, v[0]);
  if (static_cast<int>(v.size()) != dim) throw ConfigError(fmt::format("{} must have {} entries", what, dim));
  return to_vector(v);
}

// ---------------------------------------------------------------------------
// Catalog parsing

struct LagrangianChoice {
  std::string key;
  Lagrangian L;
  double k = 0.0;  // harmonic stiffness, for the closed-form reference
};

LagrangianChoice parse_lagrangian(Obj o) {
  const std::string key = o.string("key");
  LagrangianChoice c{key, kinetic(1)};
  if (key == "kinetic") {
    c.L = kinetic(static_cast<int>(o.count("dim", 1)));
  } else if (key == "free-square") {
    c.L = free_square(static_cast<int>(o.count("dim", 1)));
  } else if (key == "velocity-sum") {
    c.L = velocity_sum(static_cast<int>(o.count("dim", 1)));
  } else if (key == "harmonic") {
    c.k = o.number("k");
    c.L = harmonic(c.k);
  } else if (key == "momentum-free") {
    std::vector<TimeVelocityTerm> terms;
    const json& arr = o.raw("terms");
    if (!arr.is_array() || arr.empty()) throw ConfigError("lagrangian.terms must be a non-empty array");
    for (const auto& t : arr) {
      if (!t.is_array() || t.size() != 3 || !t[0].is_number() || !t[1].is_number_integer() ||
          !t[2].is_number_integer() || t[1].get<int>() < 0 || t[2].get<int>() < 0)
        throw ConfigError("lagrangian.terms entries must be [coeff, t_power, v_power] with non-negative powers");
      terms.push_back({t[0].get<double>(), t[1].get<int>(), t[2].get<int>()});
    }
    c.L = momentum_free(terms);
  } else {
    throw ConfigError(fmt::format("unknown lagrangian key '{}'", key));
  }
  o.finish();
  return c;
}

GeneratorPair parse_generators(Obj o) {
  const std::string key = o.string("key");
  std::optional<GeneratorPair> g;
  if (key == "energy" || key == "translation-t") {
    g = translation_t(static_cast<int>(o.count("dim", 1)));
  } else if (key == "translation-x" || key == "momentum") {
    const int dim = static_cast<int>(o.count("dim", 1));
    const int axis = static_cast<int>(o.non_negative("axis", 0));
    if (axis >= dim) throw ConfigError("generators.axis out of range");
    g = translation_x(dim, axis);
  } else if (key == "scaling") {
    g = scaling(o.number("c", 1.0), o.number("b1", 0.0), o.number("b2", 0.0));
  } else if (key == "rotation-2d") {
    g = rotation_2d();
  } else {
    throw ConfigError(fmt::format("unknown generators key '{}'", key));
  }
  o.finish();
  return *g;
}

DiffeoGroup parse_group(Obj o) {
  const std::string key = o.string("key");
  std::optional<DiffeoGroup> g;
  if (key == "translation") {
    g = translation_group(to_vector(o.numbers("direction")));
  } else if (key == "rotation-2d") {
    g = rotation_group_2d();
  } else if (key == "scaling") {
    g = scaling_group(static_cast<int>(o.count("dim", 1)));
  } else {
    throw ConfigError(fmt::format("unknown group key '{}'", key));
  }
  o.finish();
  return *g;
}

struct SdeChoice {
  std::string key;
  std::optional<SdeSpec> spec;  // empty for deterministic curves
  std::vector<double> coeffs;   // curve x(t) = Σ c_i t^i
  double t_end = 1.0;
  int dim = 1;
  bool stochastic() const { return spec.has_value(); }
};

SdeChoice parse_sde(Obj o) {
  SdeChoice c;
  c.key = o.string("key");
  c.t_end = o.positive("t_end", 1.0);
  if (c.key == "brownian") {
    c.dim = static_cast<int>(o.count("dim", 1));
    c.spec = brownian(o.non_negative("sigma", 1.0), c.dim, c.t_end);
  } else if (c.key == "constant-drift") {
    auto b = o.numbers("b");
    c.dim = static_cast<int>(o.count("dim", b.size()));
    const Eigen::VectorXd x0 = o.has("x0") ? sized(o.numbers("x0"), c.dim, "sde.x0") : Eigen::VectorXd::Zero(c.dim);
    c.spec = constant_drift(sized(b, c.dim, "sde.b"), o.non_negative("sigma", 0.0), x0, c.t_end);
  } else if (c.key == "ou") {
    c.spec = ornstein_uhlenbeck(o.positive("theta"), o.non_negative("sigma", 1.0), o.number("x0", 0.0), c.t_end);
  } else if (c.key == "linear-gaussian") {
    auto drift0 = o.numbers("drift0");
    c.dim = static_cast<int>(drift0.size());
    const Eigen::VectorXd x0 = o.has("x0") ? sized(o.numbers("x0"), c.dim, "sde.x0") : Eigen::VectorXd::Zero(c.dim);
    const double rate = o.number("rate", 0.0), sigma = o.non_negative("sigma", 1.0);
    const double x0_std = o.non_negative("x0_std", 0.0);
    c.spec = linear_gaussian_spec("linear-gaussian", {to_vector(drift0), rate, sigma}, x0, 0.0, c.t_end, x0_std);
  } else if (c.key == "curve") {
    c.coeffs = o.numbers("coeffs");
  } else {
    throw ConfigError(fmt::format("unknown sde key '{}'", c.key));
  }
  o.finish();
  if (c.spec) c.spec->name = c.key;
  return c;
}

// ---------------------------------------------------------------------------
// Numeric settings

struct Numeric {
  std::optional<int> N;
  std::optional<std::size_t> n_paths;
  std::optional<double> dt;
  int substeps = 1;
  std::optional<std::uint64_t> seed;
  double bandwidth = 0.0;
  std::optional<double> h;
  double t_min = 0.1;
  std::optional<Window> window;
  double time_window = 0.0;
  double eps = 1e-4;
  std::vector<double> times;
  int points = 11;
  double band = 0.8;
};

Numeric parse_numeric(Obj o) {
  Numeric n;
  if (o.has("N")) n.N = static_cast<int>(o.count("N"));
  if (o.has("n_paths")) n.n_paths = o.count("n_paths");
  if (o.has("dt")) n.dt = o.positive("dt");
  n.substeps = static_cast<int>(o.count("substeps", 1));
  if (o.has("seed")) n.seed = o.seed("seed");
  n.bandwidth = o.non_negative("bandwidth", 0.0);
  if (o.has("h")) n.h = o.positive("h");
  n.t_min = o.non_negative("t_min", 0.1);
  if (o.has("window")) {
    auto w = o.numbers("window");
    if (w.size() != 2 || !(w[1] > w[0])) throw ConfigError("numeric.window must be [a, b] with a < b");
    n.window = Window{w[0], w[1]};
  }
  n.time_window = o.non_negative("time_window", 0.0);
  n.eps = o.positive("eps", 1e-4);
  if (o.has("times")) n.times = o.numbers("times");
  n.points = static_cast<int>(o.count("points", 11));
  if (n.points < 2) throw ConfigError("numeric.points must be at least 2");
  n.band = o.positive("band", 0.8);
  if (n.band > 1.0) throw ConfigError("numeric.band must not exceed 1");
  o.finish();
  return n;
}

template <class T>
T require(const std::optional<T>& v, const char* what) {
  if (!v) throw ConfigError(fmt::format("numeric.{} is required for this kind", what));
  return *v;
}

std::size_t steps_for(double span, double dt) {
  const double m = span / dt;
  const double r = std::round(m);
  if (r < 2.0 || std::abs(m - r) > 1e-9 * std::max(1.0, m))
    throw ConfigError(fmt::format("numeric.dt={} must divide the horizon {} into at least two steps", dt, span));
  return static_cast<std::size_t>(r);
}

// ---------------------------------------------------------------------------
// Ensembles and fields for a choice

Ensemble build_ensemble(const SdeChoice& c, const Numeric& n) {
  const double dt = require(n.dt, "dt");
  const std::size_t M = steps_for(c.t_end, dt);
  if (!c.stochastic()) {
    auto coeffs = c.coeffs;
    return curve_ensemble(
        [coeffs](double t) {
          double x = 0.0, p = 1.0;
          for (double a : coeffs) {
            x += a * p;
            p *= t;
          }
          return Eigen::VectorXd::Constant(1, x);
        },
        1, 0.0, c.t_end, M, n.n_paths.value_or(1));
  }
  SimulateOptions opts;
  opts.substeps = n.substeps;
  return simulate(*c.spec, require(n.n_paths, "n_paths"), M, require(n.seed, "seed"), opts);
}

NelsonField build_field(const SdeChoice& c, const Numeric& n) {
  if (c.stochastic()) return analytic_field(*c.spec, n.t_min);
  auto coeffs = c.coeffs;
  return curve_field(1, [coeffs](const RJet& t, std::span<RJet> out) {
    RJet v(0.0), p(1.0);
    for (std::size_t i = 1; i < coeffs.size(); ++i) {
      v = v + RJet(coeffs[i] * static_cast<double>(i)) * p;
      p = p * t;
    }
    out[0] = v;
  });
}

// ---------------------------------------------------------------------------
// Artifact output

class Artifacts {
 public:
  explicit Artifacts(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }
  std::ofstream open(const std::string& name) const {
    std::ofstream os(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!os) throw ArgumentError(fmt::format("cannot write {}", (dir_ / name).string()));
    return os;
  }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// Pipelines

struct Config {
  std::string kind;
  std::optional<LagrangianChoice> lagrangian;
  std::optional<GeneratorPair> generators;
  std::optional<DiffeoGroup> group;
  std::optional<SdeChoice> sde;
  std::optional<BoundaryProblem> boundary;
  std::vector<std::string> variations;
  int mu = 1;
  std::vector<VariationSpace> spaces{VariationSpace::C1, VariationSpace::N1};
  Numeric numeric;
  std::vector<std::string> checks;
  std::optional<json> expect;
};

template <class T>
const T& need(const std::optional<T>& v, const char* what, const std::string& kind) {
  if (!v) throw ConfigError(fmt::format("kind '{}' requires '{}'", kind, what));
  return *v;
}

/// Closed-form extremal of L = v² − k x² through the boundary data, when one is unique.
std::optional<std::function<double(double)>> harmonic_reference(double k, const BoundaryProblem& bp) {
  const double A = bp.A[0], B = bp.B[0];
  if (k == 0.0) {
    const double slope = (B - A) / (bp.b - bp.a);
    return [=](double t) { return A + slope * (t - bp.a); };
  }
  if (k < 0.0) return std::nullopt;
  const double w = std::sqrt(k);
  Eigen::Matrix2d m;
  m << std::cos(w * bp.a), std::sin(w * bp.a), std::cos(w * bp.b), std::sin(w * bp.b);
  if (std::abs(m.determinant()) < 1e-8) return std::nullopt;
  const Eigen::Vector2d coef = m.fullPivLu().solve(Eigen::Vector2d(A, B));
  return [=](double t) { return coef[0] * std::cos(w * t) + coef[1] * std::sin(w * t); };
}

void run_extremal(const Config& cfg, const Artifacts& out, Summary& s) {
  const auto& lc = need(cfg.lagrangian, "lagrangian", cfg.kind);
  const auto& bp = need(cfg.boundary, "boundary", cfg.kind);
  const int N = require(cfg.numeric.N, "N");
  const Extremal ex = solve_bvp(lc.L, bp, N);
  {
    auto os = out.open("extremal.csv");
    write_csv(os, ex);
  }
  double worst = 0.0;
  for (std::size_t i = 1; i + 1 < ex.size(); ++i) worst = std::max(worst, el_residual(lc.L, ex, i).cwiseAbs().maxCoeff());
  s.add("lagrangian", lc.key);
  s.add("N", static_cast<double>(N));
  s.add("action", action_value(lc.L, ex));
  s.add("max_el_residual", worst);
  s.add("el_tolerance", kExtremalTolerance);
  s.add("el_pass", worst <= kExtremalTolerance);
  if (lc.key == "harmonic" && ex.dim() == 1) {
    if (auto ref = harmonic_reference(lc.k, bp)) {
      double err = 0.0;
      for (std::size_t i = 0; i < ex.size(); ++i) err = std::max(err, std::abs(ex.states[i][0] - (*ref)(ex.grid[i])));
      s.add("reference_sup_error", err);
      s.add("reference_tolerance", 1e-6);
      s.add("reference_pass", err <= 1e-6);
    }
  }
}

void run_noether_check(const Config& cfg, const Artifacts& out, Summary& s) {
  const auto& lc = need(cfg.lagrangian, "lagrangian", cfg.kind);
  const auto& g = need(cfg.generators, "generators", cfg.kind);
  const auto& bp = need(cfg.boundary, "boundary", cfg.kind);
  const int N = require(cfg.numeric.N, "N");
  if (g.dim() != lc.L.dim()) throw ConfigError("generators and lagrangian dimensions differ");

  // Invariance on random points of [a, b] × [−2, 2]^d × [−2, 2]^d.
  const int d = lc.L.dim();
  double inv = 0.0;
  Eigen::VectorXd x(d), v(d);
  for (int i = 0; i < 1000; ++i) {
    std::uint64_t idx = 0;
    auto draw = [&] { return keyed_uniform(0x4e6f, static_cast<std::uint64_t>(i), idx++); };
    const double t = bp.a + (bp.b - bp.a) * draw();
    for (int j = 0; j < d; ++j) {
      x[j] = 4.0 * draw() - 2.0;
      v[j] = 4.0 * draw() - 2.0;
    }
    inv = std::max(inv, std::abs(invariance_residual(lc.L, g, t, x, v)));
  }
  const Extremal ex = solve_bvp(lc.L, bp, N);
  const ConservationReport rep = verify_conservation(lc.L, g, ex);
  {
    auto os = out.open("extremal.csv");
    write_csv(os, ex);
  }
  {
    auto os = out.open("charge.csv");
    write_csv(os, rep);
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    const double q = noether_charge_flipped(lc.L, g, ex.grid[i], ex.states[i], ex.velocities[i]);
    lo = std::min(lo, q);
    hi = std::max(hi, q);
  }
  s.add("lagrangian", lc.key);
  s.add("generators", g.name());
  s.add("invariance_max_residual", inv);
  s.add("invariance_tolerance", 1e-9);
  s.add("invariance_pass", inv <= 1e-9);
  s.add("max_el_residual", rep.max_el_residual);
  s.add("charge_initial", rep.charge.empty() ? 0.0 : rep.charge.front());
  s.add("drift", rep.drift);
  s.add("relative_drift", rep.relative_drift);
  s.add("conservation_tolerance", kConservationTolerance);
  s.add("conservation_pass", rep.pass);
  s.add("flipped_sign_range", hi - lo);
}

void write_summary_moments(const Ensemble& ens, Summary& s) {
  const std::size_t k = ens.steps;
  for (int i = 0; i < ens.dim; ++i) {
    double mean = 0.0, ss = 0.0;
    for (std::size_t p = 0; p < ens.n_paths; ++p) mean += ens.at(p, k, i);
    mean /= static_cast<double>(ens.n_paths);
    for (std::size_t p = 0; p < ens.n_paths; ++p) ss += (ens.at(p, k, i) - mean) * (ens.at(p, k, i) - mean);
    s.add(fmt::format("final_mean_{}", i + 1), mean);
    s.add(fmt::format("final_variance_{}", i + 1),
          ens.n_paths > 1 ? ss / static_cast<double>(ens.n_paths - 1) : 0.0);
  }
}

void run_simulate(const Config& cfg, const Artifacts& out, Summary& s) {
  const auto& sde = need(cfg.sde, "sde", cfg.kind);
  const Ensemble ens = build_ensemble(sde, cfg.numeric);
  {
    auto os = out.open("ensemble.bin");
    write_binary(os, ens);
  }
  const bool small = ens.n_paths * ens.nodes() * static_cast<std::size_t>(ens.dim) <= 2'000'000;
  if (small) {
    auto os = out.open("paths.csv");
    write_csv(os, ens);
  }
  s.add("sde", sde.key);
  s.add("n_paths", static_cast<double>(ens.n_paths));
  s.add("steps", static_cast<double>(ens.steps));
  s.add("seed", fmt::format("{}", ens.seed));
  s.add("paths_csv", small);
  write_summary_moments(ens, s);
}

double expect_number(const Config& cfg, const std::string& key, double fallback) {
  if (!cfg.expect || !cfg.expect->contains(key)) return fallback;
  const json& v = cfg.expect->at(key);
  if (!v.is_number()) throw ConfigError(fmt::format("expect.{} must be a number", key));
  return v.get<double>();
}

std::optional<C> expect_complex(const Config& cfg, const std::string& key) {
  if (!cfg.expect || !cfg.expect->contains(key)) return std::nullopt;
  const json& v = cfg.expect->at(key);
  if (v.is_number()) return C(v.get<double>(), 0.0);
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number())
    return C(v[0].get<double>(), v[1].get<double>());
  throw ConfigError(fmt::format("expect.{} must be a number or [re, im]", key));
}

bool wants(const Config& cfg, const std::string& check) {
  return std::find(cfg.checks.begin(), cfg.checks.end(), check) != cfg.checks.end();
}

RegressionOptions regression_options(const Numeric& n, const Ensemble& ens) {
  RegressionOptions o;
  o.bandwidth = n.bandwidth;
  o.time_window = n.time_window;
  if (n.h) {
    const double lag = *n.h / ens.dt;
    if (std::abs(lag - std::round(lag)) > 1e-9 * std::max(1.0, lag) || std::round(lag) < 1.0)
      throw ConfigError("numeric.h must be a positive multiple of the stored grid step");
    o.lag = static_cast<int>(std::round(lag));
  }
  return o;
}

void run_nelson_estimate(const Config& cfg, const Artifacts& out, Summary& s) {
  const auto& sde = need(cfg.sde, "sde", cfg.kind);
  if (!sde.stochastic() || sde.dim != 1) throw ConfigError("nelson-estimate needs a one-dimensional diffusion");
  const Ensemble ens = build_ensemble(sde, cfg.numeric);
  const NelsonField field = build_field(sde, cfg.numeric);
  const RegressionOptions opts = regression_options(cfg.numeric, ens);
  s.add("sde", sde.key);
  s.add("lag_steps", static_cast<double>(opts.lag));
  s.add("time_window", opts.time_window);

  if (wants(cfg, "drift")) {
    auto times = cfg.numeric.times;
    if (times.empty()) throw ConfigError("numeric.times is required for the drift check");
    std::vector<DriftRow> rows;
    double sf = 0.0, sb = 0.0;
    const double tail = 0.5 * (1.0 - cfg.numeric.band);
    for (double t : times) {
      if (t < field.t_min) throw ConfigError(fmt::format("drift time {} lies below numeric.t_min", t));
      const std::size_t k = ens.require_index(t, "numeric.times entry");
      const double lo = marginal_quantile(ens, k, tail), hi = marginal_quantile(ens, k, 1.0 - tail);
      std::vector<double> xs;
      for (int i = 0; i < cfg.numeric.points; ++i) xs.push_back(lo + (hi - lo) * i / (cfg.numeric.points - 1));
      const auto fw = drift_empirical(ens, t, xs, Direction::forward, opts);
      const auto bw = drift_empirical(ens, t, xs, Direction::backward, opts);
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, xs[i]);
        const double af = field.forward_at(t, x)[0], ab = field.backward_at(t, x)[0];
        rows.push_back({ens.grid[k], xs[i], fw[i], bw[i], af, ab});
        sf += (fw[i] - af) * (fw[i] - af);
        sb += (bw[i] - ab) * (bw[i] - ab);
      }
    }
    {
      auto os = out.open("drift.csv");
      write_drift_csv(os, rows);
    }
    const double rf = std::sqrt(sf / static_cast<double>(rows.size()));
    const double rb = std::sqrt(sb / static_cast<double>(rows.size()));
    const double tf = expect_number(cfg, "forward_rmse", 0.05), tb = expect_number(cfg, "backward_rmse", 0.08);
    s.add("forward_rmse", rf);
    s.add("forward_tolerance", tf);
    s.add("forward_pass", rf <= tf);
    s.add("backward_rmse", rb);
    s.add("backward_tolerance", tb);
    s.add("backward_pass", rb <= tb);
  }

  if (wants(cfg, "product-rule")) {
    const double t = expect_number(cfg, "product_rule_t", 1.0);
    const double delta = expect_number(cfg, "product_rule_delta", 0.1);
    const double tol = expect_number(cfg, "product_rule_tolerance", 0.05);
    const auto W = coordinate_process(field);
    const auto W2 = functional_process(
        field, [](const RJet&, std::span<const RJet> x) { return x[0] * x[0]; }, "X^2");
    const auto pr = product_rule_gap(ens, W, W, t, delta);
    const auto im = im_identity_gap(ens, W, W2, t, cfg.mu);
    {
      auto os = out.open("product_rule.csv");
      os << "check,left,right,gap,stderr\n";
      os << fmt::format("product_rule,{},{},{},{}\n", pr.lhs, pr.rhs, pr.gap, std::hypot(pr.lhs_stderr, pr.rhs_stderr));
      os << fmt::format("im_identity,{},{},{},{}\n", im.left, im.right, im.gap, im.stderr);
    }
    s.add("product_rule_lhs", pr.lhs);
    s.add("product_rule_rhs", pr.rhs);
    s.add("product_rule_gap", pr.gap);
    s.add("product_rule_tolerance", tol);
    s.add("product_rule_pass", pr.gap <= tol);
    s.add("im_identity_gap", im.gap);
    s.add("im_identity_stderr", im.stderr);
    s.add("im_identity_pass", im.gap <= tol);
  }
}

void run_stochastic_noether(const Config& cfg, const Artifacts& out, Summary& s) {
  const auto& sde = need(cfg.sde, "sde", cfg.kind);
  const auto& lc = need(cfg.lagrangian, "lagrangian", cfg.kind);
  const auto& group = need(cfg.group, "group", cfg.kind);
  const AdmissibleLagrangian L(lc.L);
  const Ensemble ens = build_ensemble(sde, cfg.numeric);
  const NelsonField field = build_field(sde, cfg.numeric);
  const Window w = cfg.numeric.window.value_or(Window{cfg.numeric.t_min, sde.t_end});
  const auto inv = invariance_check(L, group);
  const NoetherTrace tr = noether_quantity(L, group, ens, field, cfg.mu, w.a, w.b);
  {
    auto os = out.open("trace.csv");
    write_csv(os, tr);
  }
  double max_se = 0.0;
  for (double se : tr.stderr) max_se = std::max(max_se, se);
  s.add("sde", sde.key);
  s.add("lagrangian", lc.key);
  s.add("group", group.name);
  s.add("mu", static_cast<double>(cfg.mu));
  s.add("invariance_max_gap", inv.max_gap);
  s.add("nodes", static_cast<double>(tr.grid.size()));
  s.add("Q_mean_re", tr.mean.real());
  s.add("Q_mean_im", tr.mean.imag());
  s.add("max_stderr", max_se);
  s.add("drift", tr.drift);
  s.add("threshold", tr.threshold);
  s.add("constancy_pass", tr.pass);
  if (auto target = expect_complex(cfg, "Q")) {
    double worst = 0.0;
    bool ok = true;
    for (std::size_t i = 0; i < tr.Q.size(); ++i) {
      const double dev = std::abs(tr.Q[i] - *target);
      const double band = 3.0 * tr.stderr[i] + 1e-10 * std::max(1.0, std::abs(*target));
      ok = ok && dev <= band;
      worst = std::max(worst, tr.stderr[i] > 0 ? dev / tr.stderr[i] : (dev > band ? INFINITY : 0.0));
    }
    s.add("target_re", target->real());
    s.add("target_im", target->imag());
    s.add("max_deviation_in_stderr", worst);
    s.add("target_pass", ok);
  }
}

std::string space_name(VariationSpace s) { return s == VariationSpace::C1 ? "C1" : "N1"; }

void run_differential_check(const Config& cfg, const Artifacts& out, Summary& s) {
  const auto& sde = need(cfg.sde, "sde", cfg.kind);
  const auto& lc = need(cfg.lagrangian, "lagrangian", cfg.kind);
  const AdmissibleLagrangian L(lc.L);
  const Ensemble ens = build_ensemble(sde, cfg.numeric);
  const NelsonField field = build_field(sde, cfg.numeric);
  const Window w = cfg.numeric.window.value_or(Window{cfg.numeric.t_min, sde.t_end});
  s.add("sde", sde.key);
  s.add("lagrangian", lc.key);
  s.add("mu", static_cast<double>(cfg.mu));
  s.add("window_a", w.a);
  s.add("window_b", w.b);

  if (wants(cfg, "action")) {
    const ComplexEstimate a = action_functional(L, ens, field, cfg.mu, w);
    s.add("action_re", a.value.real());
    s.add("action_im", a.value.imag());
    s.add("action_stderr", a.stderr);
    if (auto target = expect_complex(cfg, "action")) {
      const double max_se = expect_number(cfg, "action_max_stderr", INFINITY);
      const double band = 3.0 * a.stderr + 1e-10 * std::max(1.0, std::abs(*target));
      s.add("action_target_re", target->real());
      s.add("action_target_im", target->imag());
      s.add("action_pass", std::abs(a.value - *target) <= band && a.stderr <= max_se);
    }
  }

  if (wants(cfg, "gateaux")) {
    const Eigen::VectorXd dir = Eigen::VectorXd::Unit(ens.dim, 0);
    auto names = cfg.variations.empty() ? variation_names() : cfg.variations;
    auto os = out.open("gateaux.csv");
    os << "variation,space,formula_re,formula_im,formula_stderr,difference_re,difference_im,difference_stderr,"
          "quadrature_error,gap,tolerance,pass\n";
    bool all = true;
    const auto oracle = expect_complex(cfg, "gateaux");
    const double oracle_tol = expect_number(cfg, "gateaux_tolerance", 1e-4);
    bool oracle_ok = true;
    for (const auto& name : names)
      for (auto space : cfg.spaces) {
        const auto r = gateaux_differential(L, ens, field, make_variation(name, w, dir), cfg.mu, space, w,
                                            cfg.numeric.eps);
        os << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", name, space_name(space), r.formula.value.real(),
                          r.formula.value.imag(), r.formula.stderr, r.difference.value.real(),
                          r.difference.value.imag(), r.difference.stderr, r.quadrature_error, r.gap, r.tolerance,
                          r.pass ? "true" : "false");
        all = all && r.pass;
        if (oracle) oracle_ok = oracle_ok && std::abs(r.formula.value - *oracle) <= oracle_tol;
      }
    s.add("gateaux_cases", static_cast<double>(names.size() * cfg.spaces.size()));
    s.add("gateaux_pass", all);
    if (oracle) {
      s.add("gateaux_oracle_re", oracle->real());
      s.add("gateaux_oracle_im", oracle->imag());
      s.add("gateaux_oracle_pass", oracle_ok);
    }
  }

  if (wants(cfg, "residual")) {
    if (!cfg.expect || !cfg.expect->contains("residual_points"))
      throw ConfigError("the residual check needs expect.residual_points = [[t, x, re, im], ...]");
    const json& pts = cfg.expect->at("residual_points");
    if (!pts.is_array() || pts.empty()) throw ConfigError("expect.residual_points must be a non-empty array");
    auto os = out.open("residual.csv");
    os << "t,x,residual_re,residual_im,expected_re,expected_im\n";
    double worst = 0.0;
    for (const auto& p : pts) {
      if (!p.is_array() || p.size() != 4)
        throw ConfigError("expect.residual_points entries must be [t, x, re, im]");
      for (const auto& e : p)
        if (!e.is_number()) throw ConfigError("expect.residual_points entries must be numbers");
      const double t = p[0].get<double>(), x = p[1].get<double>();
      const C expected(p[2].get<double>(), p[3].get<double>());
      const C r = stochastic_el_residual(L, field, t, Eigen::VectorXd::Constant(ens.dim, x), cfg.mu)[0];
      worst = std::max(worst, std::abs(r - expected));
      os << fmt::format("{},{},{},{},{},{}\n", t, x, r.real(), r.imag(), expected.real(), expected.imag());
    }
    const double tol = expect_number(cfg, "residual_tolerance", 1e-10);
    s.add("residual_max_error", worst);
    s.add("residual_tolerance", tol);
    s.add("residual_pass", worst <= tol);
  }
}

// ---------------------------------------------------------------------------
// Top level

const std::vector<std::string>& kinds() {
  static const std::vector<std::string> k{"extremal",         "noether-check",      "simulate", "nelson-estimate",
                                          "stochastic-noether", "differential-check"};
  return k;
}

bool is_stochastic_kind(const std::string& kind) {
  return kind == "simulate" || kind == "nelson-estimate" || kind == "stochastic-noether" ||
         kind == "differential-check";
}

struct Parsed {
  Config cfg;
  std::filesystem::path output;
};

Parsed parse_config(const json& root, const RunOverrides& ov) {
  Obj o(root, "config");
  const std::string schema = o.string("schema");
  if (schema != kSchema) throw ConfigError(fmt::format("unsupported schema '{}' (expected '{}')", schema, kSchema));
  Parsed p;
  Config& cfg = p.cfg;
  cfg.kind = o.string("kind");
  if (std::find(kinds().begin(), kinds().end(), cfg.kind) == kinds().end())
    throw ConfigError(fmt::format("unknown kind '{}'", cfg.kind));
  o.string("description", "");
  if (o.has("lagrangian")) cfg.lagrangian = parse_lagrangian(o.object("lagrangian"));
  if (o.has("generators")) cfg.generators = parse_generators(o.object("generators"));
  if (o.has("group")) cfg.group = parse_group(o.object("group"));
  if (o.has("sde")) cfg.sde = parse_sde(o.object("sde"));
  if (o.has("boundary")) {
    Obj b = o.object("boundary");
    BoundaryProblem bp;
    bp.a = b.number("a");
    bp.b = b.number("b");
    if (!(bp.b > bp.a)) throw ConfigError("boundary must satisfy a < b");
    const int d = cfg.lagrangian ? cfg.lagrangian->L.dim() : 1;
    bp.A = sized(b.numbers("A"), d, "boundary.A");
    bp.B = sized(b.numbers("B"), d, "boundary.B");
    b.finish();
    cfg.boundary = bp;
  }
  if (o.has("variation")) cfg.variations = o.strings("variation");
  if (o.has("mu")) {
    const double mu = o.number("mu");
    if (mu != 1.0 && mu != -1.0) throw ConfigError("mu must be +1 or -1");
    cfg.mu = static_cast<int>(mu);
  }
  if (o.has("space")) {
    const std::string sp = o.string("space");
    if (sp == "C1") cfg.spaces = {VariationSpace::C1};
    else if (sp == "N1") cfg.spaces = {VariationSpace::N1};
    else if (sp == "both") cfg.spaces = {VariationSpace::C1, VariationSpace::N1};
    else throw ConfigError("space must be 'C1', 'N1' or 'both'");
  }
  if (o.has("numeric")) cfg.numeric = parse_numeric(o.object("numeric"));
  if (o.has("checks")) {
    cfg.checks = o.strings("checks");
    static const std::set<std::string> known{"drift", "product-rule", "action", "gateaux", "residual"};
    for (const auto& c : cfg.checks)
      if (!known.count(c)) throw ConfigError(fmt::format("unknown check '{}'", c));
  } else if (cfg.kind == "nelson-estimate") {
    cfg.checks = {"drift"};
  } else if (cfg.kind == "differential-check") {
    cfg.checks = {"action", "gateaux"};
  }
  if (o.has("expect")) {
    const json& e = o.raw("expect");
    if (!e.is_object()) throw ConfigError("expect must be an object");
    cfg.expect = e;
  }
  const std::string output = o.string("output", "");
  o.finish();

  for (const auto& v : cfg.variations) {
    const auto names = variation_names();
    if (std::find(names.begin(), names.end(), v) == names.end())
      throw ConfigError(fmt::format("unknown variation '{}'", v));
  }
  if (ov.seed) cfg.numeric.seed = ov.seed;
  const bool needs_seed = is_stochastic_kind(cfg.kind) && !(cfg.sde && !cfg.sde->stochastic());
  if (needs_seed && !cfg.numeric.seed) throw ConfigError(fmt::format("kind '{}' requires numeric.seed", cfg.kind));
  if (ov.output) p.output = *ov.output;
  else if (!output.empty()) p.output = output;
  else throw ConfigError("no output directory: set 'output' or pass --output");
  return p;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const DegenerateFamilyError*>(&e)) return "DegenerateFamilyError";
  if (dynamic_cast<const NoConvergenceError*>(&e)) return "NoConvergenceError";
  if (dynamic_cast<const DegenerateLagrangianError*>(&e)) return "DegenerateLagrangianError";
  if (dynamic_cast<const BlowUpError*>(&e)) return "BlowUpError";
  if (dynamic_cast<const XiViolationError*>(&e)) return "XiViolationError";
  if (dynamic_cast<const NumericalError*>(&e)) return "NumericalError";
  if (dynamic_cast<const InsufficientDataError*>(&e)) return "InsufficientDataError";
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const SpecRejectedError*>(&e)) return "SpecRejectedError";
  if (dynamic_cast<const UnsupportedClassError*>(&e)) return "UnsupportedClassError";
  if (dynamic_cast<const InvarianceError*>(&e)) return "InvarianceError";
  if (dynamic_cast<const DomainError*>(&e)) return "DomainError";
  if (dynamic_cast<const ArgumentError*>(&e)) return "ArgumentError";
  return "Error";
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const InsufficientDataError*>(&e) ||
      dynamic_cast<const DomainError*>(&e))
    return kExitNumerical;
  return kExitInvalid;
}

void write_summary(const Artifacts& out, const Summary& s) {
  auto os = out.open("summary");
  for (const auto& [k, v] : s.entries()) os << k << '=' << v << '\n';
}

}  // namespace

RunResult run_experiment_text(const std::string& json_text, const RunOverrides& overrides) {
  RunResult res;
  std::optional<Artifacts> out;
  try {
    json root;
    try {
      root = json::parse(json_text);
    } catch (const json::parse_error& e) {
      throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
    }
    Parsed p;
    try {
      p = parse_config(root, overrides);
    } catch (const json::exception& e) {
      throw ConfigError(e.what());
    }
    res.output = p.output;
    out.emplace(p.output);
    Summary& s = res.summary;
    s.add("kind", p.cfg.kind);
    if (p.cfg.numeric.seed) s.add("seed", fmt::format("{}", *p.cfg.numeric.seed));
    const std::string& kind = p.cfg.kind;
    if (kind == "extremal") run_extremal(p.cfg, *out, s);
    else if (kind == "noether-check") run_noether_check(p.cfg, *out, s);
    else if (kind == "simulate") run_simulate(p.cfg, *out, s);
    else if (kind == "nelson-estimate") run_nelson_estimate(p.cfg, *out, s);
    else if (kind == "stochastic-noether") run_stochastic_noether(p.cfg, *out, s);
    else run_differential_check(p.cfg, *out, s);
    const bool ok = s.all_pass();
    s.add("pass", ok);
    res.exit_code = ok ? kExitPass : kExitVerdictFailed;
  } catch (const std::exception& e) {
    res.exit_code = exit_code_for(e);
    res.error = fmt::format("{}: {}", error_kind(e), e.what());
    res.summary.add("error", res.error);
    res.summary.add("pass", false);
  }
  if (out) write_summary(*out, res.summary);
  return res;
}

RunResult run_experiment_file(const std::filesystem::path& config, const RunOverrides& overrides) {
  std::ifstream is(config, std::ios::binary);
  if (!is) {
    RunResult res;
    res.exit_code = kExitInvalid;
    res.error = fmt::format("ConfigError: cannot read {}", config.string());
    return res;
  }
  std::ostringstream buf;
  buf << is.rdbuf();
  return run_experiment_text(buf.str(), overrides);
}

std::string catalog_listing() {
  return R"(lagrangians:
  kinetic         |v|^2/2                      params: dim (int, default 1)
  free-square     |v|^2                        params: dim (int, default 1)
  harmonic        v^2 - k x^2                  params: k (number)
  momentum-free   sum c t^p v^q                params: terms ([[c, p, q], ...])
  velocity-sum    sum v_i                      params: dim (int, default 1)
generators:
  energy          T = 1, X = 0                 params: dim (int, default 1)
  translation-t   T = 1, X = 0                 params: dim (int, default 1)
  translation-x   T = 0, X = e_axis            params: dim (int, default 1), axis (int, default 0)
  momentum        alias of translation-x
  scaling         X = c x + b1, T = 2c t + b2  params: c (default 1), b1 (default 0), b2 (default 0)
  rotation-2d     T = 0, X = (-x2, x1)         params: none
groups:
  translation     phi_s(x) = x + s e           params: direction (number or array)
  rotation-2d     phi_s(x) = R(s) x            params: none
  scaling         phi_s(x) = e^s x             params: dim (int, default 1)
sde:
  brownian        b = 0, sigma I               params: sigma (default 1), dim (default 1), t_end (default 1)
  constant-drift  b const, sigma I             params: b (number or array), sigma (default 0), x0, dim, t_end
  ou              b = -theta x, sigma          params: theta (> 0), sigma (default 1), x0 (default 0), t_end
  linear-gaussian b = drift0 + rate x, sigma I params: drift0 (array), rate, sigma, x0, x0_std, t_end
  curve           deterministic x(t) = sum c_i t^i   params: coeffs (array), t_end
variations:
  zero sine bump linear
kinds:
  extremal noether-check simulate nelson-estimate stochastic-noether differential-check
)";
}

}  // namespace nlab
