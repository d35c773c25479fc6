// End-to-end acceptance run: every criterion is checked through the shipped
// configs (the same path the `nlab run` command takes) plus direct library
// calls where a criterion needs more than one pipeline. Prints one line per
// criterion and exits non-zero if any is red.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "nlab/errors.hpp"
#include "nlab/experiment.hpp"
#include "nlab/lagrangian.hpp"
#include "nlab/nelson.hpp"
#include "nlab/noether.hpp"
#include "nlab/parallel.hpp"
#include "nlab/sde.hpp"
#include "nlab/stochastic.hpp"
#include "nlab/variational.hpp"

using namespace nlab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using C = std::complex<double>;

namespace {

const fs::path kConfigs = NLAB_CONFIG_DIR;
const fs::path kScratch = fs::temp_directory_path() / "nlab_acceptance";

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;
  void require(bool ok, const std::string& note) {
    pass = pass && ok;
    notes.push_back(ok ? note : "FAILED " + note);
  }
};

struct Timed {
  RunResult result;
  double seconds;
};

/// Runs a shipped config into `<scratch>/<pass>/<name>`.
Timed run_config(const std::string& name, const std::string& pass = "first") {
  const auto start = Clock::now();
  RunResult r = run_experiment_file(kConfigs / (name + ".json"), {.output = kScratch / pass / name, .seed = {}});
  return {std::move(r), std::chrono::duration<double>(Clock::now() - start).count()};
}

std::string field(const RunResult& r, const std::string& key) { return r.summary.get(key).value_or("?"); }

double number(const RunResult& r, const std::string& key) {
  const auto v = r.summary.get(key);
  return v ? std::stod(*v) : NAN;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

Eigen::VectorXd one(double x) { return Eigen::VectorXd::Constant(1, x); }

Verdict criterion1() {
  Verdict v;
  const auto ok = run_config("c1_harmonic_bvp");
  v.require(ok.result.exit_code == kExitPass && number(ok.result, "reference_sup_error") <= 1e-6,
            fmt::format("sup error vs sin(t/2) = {:.2e}", number(ok.result, "reference_sup_error")));
  v.require(ok.seconds < 1.0, fmt::format("runtime {:.2f} s", ok.seconds));
  const auto res = run_config("c1_resonant");
  v.require(res.result.exit_code == kExitNumerical && res.result.error.rfind("DegenerateFamilyError", 0) == 0,
            "resonant k=1 raises DegenerateFamilyError");
  return v;
}

Verdict criterion2() {
  Verdict v;
  double total = 0.0;
  for (const char* name : {"c2_harmonic_energy", "c2_tv2_momentum", "c2_square_scaling"}) {
    const auto r = run_config(name);
    total += r.seconds;
    v.require(r.result.exit_code == kExitPass,
              fmt::format("{}: invariance {:.1e}, relative drift {:.1e}", name,
                          number(r.result, "invariance_max_residual"), number(r.result, "relative_drift")));
  }
  // The alternate sign convention is not conserved on the scaling extremal x = 1 + t.
  const Extremal e = solve_bvp(free_square(), {0.0, 1.0, one(1.0), one(2.0)}, 1000);
  double worst = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double q = noether_charge_flipped(free_square(), scaling(1.0), e.grid[i], e.states[i], e.velocities[i]);
    worst = std::max(worst, std::abs(q - (2.0 + 4.0 * e.grid[i])));
  }
  v.require(worst <= 1e-6, fmt::format("flipped sign gives 2+4t (max dev {:.1e})", worst));
  v.require(total < 5.0, fmt::format("runtime {:.2f} s", total));
  return v;
}

Verdict criterion3() {
  Verdict v;
  double total = 0.0;
  for (const char* name : {"c3_brownian_drift", "c3_ou_drift"}) {
    const auto r = run_config(name);
    total += r.seconds;
    v.require(r.result.exit_code == kExitPass,
              fmt::format("{}: forward RMSE {:.4f}, backward RMSE {:.4f}", name, number(r.result, "forward_rmse"),
                          number(r.result, "backward_rmse")));
  }
  const NelsonField bm = analytic_field(brownian(1.0, 1, 1.1));
  double worst = 0.0;
  for (double t : {0.5, 0.75, 1.0})
    for (double x : {-2.0, -0.5, 0.3, 1.7}) worst = std::max(worst, std::abs(bm.backward_at(t, one(x))[0] - x / t));
  v.require(worst <= 1e-12, fmt::format("Brownian backward drift = x/t (max dev {:.1e})", worst));
  v.require(total < 60.0, fmt::format("runtime {:.1f} s", total));
  return v;
}

Verdict criterion4() {
  Verdict v;
  const auto r = run_config("c4_product_rule");
  v.require(r.result.summary.get("product_rule_pass") == std::optional<std::string>("true"),
            fmt::format("product rule gap {:.4f}", number(r.result, "product_rule_gap")));
  v.require(r.result.summary.get("im_identity_pass") == std::optional<std::string>("true"),
            fmt::format("Im identity gap {:.4f}", number(r.result, "im_identity_gap")));
  return v;
}

Verdict criterion5() {
  Verdict v;
  const auto r = run_config("c5_brownian_action");
  v.require(r.result.exit_code == kExitPass,
            fmt::format("action {:.4f}{:+.4f}i vs -0.1733i, stderr {:.4f}", number(r.result, "action_re"),
                        number(r.result, "action_im"), number(r.result, "action_stderr")));
  return v;
}

Verdict criterion6() {
  Verdict v;
  const auto bm = run_config("c6_brownian_residual");
  v.require(bm.result.exit_code == kExitPass,
            fmt::format("Brownian residual max error {}", field(bm.result, "residual_max_error")));
  const auto line = run_config("c6_line_residual");
  v.require(line.result.exit_code == kExitPass,
            fmt::format("straight line residual max error {}", field(line.result, "residual_max_error")));
  return v;
}

Verdict criterion7() {
  Verdict v;
  const auto r = run_config("c7_stochastic_noether");
  v.require(r.result.exit_code == kExitPass,
            fmt::format("Q mean {:.4f}, drift {:.4f} <= {:.4f}", number(r.result, "Q_mean_re"),
                        number(r.result, "drift"), number(r.result, "threshold")));
  v.require(r.seconds < 60.0, fmt::format("runtime {:.1f} s", r.seconds));
  // σ = 0: the stochastic quantity is the classical momentum, path by path.
  const SdeSpec line = constant_drift(one(0.35), 0.0, one(-1.0), 1.0);
  const Ensemble ens = simulate(line, 3, 100, 1);
  const NoetherTrace tr = noether_quantity(AdmissibleLagrangian(kinetic()), translation_group(one(1.0)), ens,
                                           analytic_field(line, 0.0), 1, 0.0, 1.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < tr.Q.size(); ++i)
    worst = std::max(worst, std::abs(tr.Q[i] - noether_charge(kinetic(), translation_x(1), tr.grid[i],
                                                              one(ens.at(0, i)), one(0.35))));
  v.require(worst <= 1e-12, fmt::format("deterministic reduction vs classical momentum {:.1e}", worst));
  return v;
}

Verdict criterion8() {
  Verdict v;
  const auto parabola = run_config("c8_parabola_gateaux");
  v.require(parabola.result.exit_code == kExitPass, "x=t^2 along sin(pi t) gives -4/pi within 1e-4");
  const auto bm = run_config("c8_brownian_gateaux");
  v.require(bm.result.exit_code == kExitPass, "Brownian config: formula = finite difference");
  // Every catalog diffusion × admissible catalog Lagrangian × variation × space × sign of mu.
  const std::vector<SdeSpec> specs{
      brownian(1.0, 1, 1.0), constant_drift(one(0.7), 0.5, one(0.2), 1.0), ornstein_uhlenbeck(1.0, 1.0, 1.0, 1.0),
      linear_gaussian_spec("linear-gaussian", {one(0.3), -0.5, 0.8}, one(0.5), 0.0, 1.0, 0.4)};
  const std::vector<Lagrangian> lagrangians{kinetic(), free_square(), harmonic(0.5), velocity_sum(1)};
  const Window w{0.5, 1.0};
  int total = 0, agree = 0;
  for (const auto& spec : specs) {
    const Ensemble ens = simulate(spec, 4000, 50, 21, {.substeps = 4});
    const NelsonField field = analytic_field(spec);
    for (const auto& L : lagrangians)
      for (const auto& name : variation_names())
        for (auto space : {VariationSpace::C1, VariationSpace::N1})
          for (int mu : {1, -1}) {
            const auto r = gateaux_differential(AdmissibleLagrangian(L), ens, field,
                                                make_variation(name, w, one(1.0)), mu, space, w);
            ++total;
            agree += r.pass ? 1 : 0;
          }
  }
  v.require(agree == total, fmt::format("{}/{} catalog cases within 3 combined error bars", agree, total));
  return v;
}

const std::vector<std::string> kAllConfigs{
    "c1_harmonic_bvp",   "c1_resonant",          "c2_harmonic_energy",   "c2_tv2_momentum",
    "c2_square_scaling", "c3_brownian_drift",    "c3_ou_drift",          "c4_product_rule",
    "c5_brownian_action", "c6_brownian_residual", "c6_line_residual",     "c7_stochastic_noether",
    "c8_parabola_gateaux", "c8_brownian_gateaux", "c9_simulate_unit_drift"};

/// Replays every shipped config with 8 workers and compares all artifacts with
/// the first (single-worker) pass byte for byte.
Verdict criterion9() {
  Verdict v;
  run_config("c9_simulate_unit_drift");
  parallel::set_threads(8);
  int files = 0, identical = 0;
  std::string first_mismatch;
  for (const auto& name : kAllConfigs) {
    run_config(name, "second");
    const fs::path a = kScratch / "first" / name, b = kScratch / "second" / name;
    for (const auto& entry : fs::directory_iterator(a)) {
      ++files;
      const fs::path other = b / entry.path().filename();
      if (fs::exists(other) && slurp(entry.path()) == slurp(other)) ++identical;
      else if (first_mismatch.empty()) first_mismatch = (fs::path(name) / entry.path().filename()).string();
    }
    for (const auto& entry : fs::directory_iterator(b))
      if (!fs::exists(a / entry.path().filename())) {
        ++files;
        if (first_mismatch.empty()) first_mismatch = (fs::path(name) / entry.path().filename()).string();
      }
  }
  parallel::set_threads(1);
  v.require(identical == files && files > 0,
            fmt::format("{}/{} artifacts byte-identical across runs and --threads 1 vs 8{}", identical, files,
                        first_mismatch.empty() ? "" : " (first mismatch: " + first_mismatch + ")"));
  return v;
}

}  // namespace

int main() {
  fs::remove_all(kScratch);
  parallel::set_threads(1);
  const std::vector<std::pair<const char*, Verdict (*)()>> criteria{
      {"harmonic boundary value problem and resonant family", criterion1},
      {"deterministic Noether chain", criterion2},
      {"Nelson drifts: analytic vs empirical", criterion3},
      {"complex product rule and Im identity", criterion4},
      {"stochastic action closed form", criterion5},
      {"stochastic Euler-Lagrange residual", criterion6},
      {"stochastic Noether quantity", criterion7},
      {"Gateaux differential consistency", criterion8},
      {"reproducibility", criterion9}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.require(false, fmt::format("exception: {}", e.what()));
    }
    std::string notes;
    for (const auto& n : v.notes) notes += (notes.empty() ? "" : "; ") + n;
    std::cout << fmt::format("criterion {}: {} - {} [{}]", i + 1, v.pass ? "PASS" : "FAIL", criteria[i].first, notes)
              << std::endl;
    failed += v.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
