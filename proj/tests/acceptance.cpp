// Acceptance run: one PASS/FAIL line per criterion. Exit status 1 when any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bound_trial.hpp"
#include "gradcheck.hpp"
#include "sorel/pil.hpp"
#include "sorel/regret.hpp"
#include "sorel/sorel_loop.hpp"
#include "sorel/torel.hpp"
#include "support.hpp"

using namespace sorel;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gaussian PIL decomposition
// ---------------------------------------------------------------------------

Dataset random_continuous_data(std::mt19937_64& rng, int sd, int ad, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.1);
  Dataset d;
  d.header.discrete = false;
  d.header.state_dim = sd;
  d.header.action_dim = ad;
  const double slope = u(rng);
  for (std::size_t i = 0; i < n; ++i) {
    Transition t;
    t.s = Vec(sd);
    t.a = Vec(ad);
    t.s_next = Vec(sd);
    for (int k = 0; k < sd; ++k) t.s[k] = u(rng);
    for (int k = 0; k < ad; ++k) t.a[k] = u(rng);
    for (int k = 0; k < sd; ++k) t.s_next[k] = t.s[k] + slope * t.a[0] + noise(rng);
    t.r = -t.s.squaredNorm() + noise(rng);
    d.transitions.push_back(t);
  }
  return d;
}

/// E and V recomputed from per-member raw predictions.
std::pair<double, double> gaussian_pil_oracle(const EnsembleModel& m, const Dataset& val) {
  double e = 0.0, v = 0.0;
  const int dims = m.out_dim();
  for (const auto& t : val.transitions) {
    const Vec y = (m.raw_target(t) - m.target_norm.mean).cwiseQuotient(m.target_norm.std);
    std::vector<Vec> mu, var;
    for (int k : m.elites) {
      const auto p = predict(m, k, t.s, t.a);
      Vec raw_mu(dims), raw_var(dims);
      raw_mu << p.mean_r, p.mean_delta;
      raw_var << p.var_r, p.var_delta;
      mu.push_back((raw_mu - m.target_norm.mean).cwiseQuotient(m.target_norm.std));
      var.push_back(raw_var.cwiseQuotient(m.target_norm.std.cwiseProduct(m.target_norm.std)));
    }
    Vec mean = Vec::Zero(dims);
    for (const auto& x : mu) mean += x;
    mean /= static_cast<double>(mu.size());
    e += 0.5 * (mean - y).squaredNorm();
    double spread = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) spread += (mu[k] - mean).squaredNorm() + var[k].sum();
    v += 0.5 * spread / static_cast<double>(mu.size());
  }
  return {e / static_cast<double>(val.size()), v / static_cast<double>(val.size())};
}

Outcome gaussian_decomposition() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 3), members(2, 4);
  double worst_identity = 0.0, worst_oracle = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig mc;
    mc.n_layers = 2;
    mc.hidden = 8;
    InferenceConfig ic;
    ic.n_members = members(rng);
    ic.n_elites = std::max(1, ic.n_members - 1);
    ic.batch_size = 16;
    ic.epochs = 3;
    const Dataset data = random_continuous_data(rng, dim(rng), dim(rng), 200);
    const auto trained = train_ensemble(data, mc, ic, rng());
    const PilReport r = pil_gaussian(trained.model, trained.validation);
    worst_identity = std::max(worst_identity, std::abs(r.pil - (r.mse_term + r.var_term)));
    const auto [e, v] = gaussian_pil_oracle(trained.model, trained.validation);
    worst_oracle = std::max(worst_oracle, std::abs(r.mse_term - e) / std::max(1.0, e));
    worst_oracle = std::max(worst_oracle, std::abs(r.var_term - v) / std::max(1.0, v));
  }

  // Two constant members, one input and one state dimension, identity
  // normalisers: outputs (0.5, -0.2) and (1.5, 0.4) with raw log-variances
  // well inside the clamp bounds.
  ModelConfig mc;
  mc.n_layers = 1;
  mc.hidden = 2;
  mc.prior_scale = 0.0;
  mc.logvar_max_init = 5.0;
  mc.logvar_min_init = -50.0;
  InferenceConfig ic;
  ic.n_members = 2;
  ic.n_elites = 2;
  EnsembleModel m = EnsembleModel::init(mc, ic, 1, 1, 0);
  const double means[2][2] = {{0.5, -0.2}, {1.5, 0.4}};
  const double raws[2][2] = {{-1.0, 0.3}, {-2.0, -0.7}};
  for (int k = 0; k < 2; ++k) {
    for (auto& w : m.members[static_cast<std::size_t>(k)].weights) w.setZero();
    auto& b = m.members[static_cast<std::size_t>(k)].biases.back();
    b << means[k][0], means[k][1], raws[k][0], raws[k][1];
  }
  m.elites = {0, 1};
  m.trained = true;
  Dataset val;
  val.header.discrete = false;
  val.header.state_dim = 1;
  val.header.action_dim = 1;
  for (const auto& row : {std::array<double, 4>{0.0, 0.0, 1.0, 0.1}, std::array<double, 4>{0.5, 1.0, -1.0, 0.2},
                          std::array<double, 4>{-1.0, 0.3, 2.0, -1.0}}) {
    Transition t;
    t.s = Vec::Constant(1, row[0]);
    t.a = Vec::Constant(1, row[1]);
    t.r = row[2];
    t.s_next = Vec::Constant(1, row[3]);
    val.transitions.push_back(t);
  }
  // Soft clamp of x in [lo, hi] far from both bounds is x up to ~exp(-44).
  auto clamp = [&](double raw) {
    const double lo = m.logvar_min[0], hi = m.logvar_max[0];
    const double x1 = hi - std::log1p(std::exp(hi - raw));
    return std::min(lo + std::log1p(std::exp(x1 - lo)), hi);
  };
  // Mean prediction (1, 0.1); targets (1, 0.1), (-1, -0.3), (2, 0).
  const double e = (0.0 + 0.5 * (4.0 + 0.16) + 0.5 * (1.0 + 0.01)) / 3.0;
  const double ev = std::exp(clamp(-1.0)) + std::exp(clamp(0.3)) + std::exp(clamp(-2.0)) + std::exp(clamp(-0.7));
  const double v = 0.5 * ((0.25 + 0.09) + ev / 2.0);
  const PilReport r = pil_gaussian(m, val);
  const double closed_form_err = std::max({std::abs(r.mse_term - e), std::abs(r.var_term - v), std::abs(r.pil - e - v)});

  Outcome o;
  o.pass = worst_identity <= 1e-12 && worst_oracle <= 1e-9 && closed_form_err <= 1e-8;
  o.detail = "max |I-(E+V)| " + fmt("%.2e", worst_identity) + ", recomputed E/V rel err " +
             fmt("%.2e", worst_oracle) + ", two-member closed form err " + fmt("%.2e", closed_form_err);
  return o;
}

// ---------------------------------------------------------------------------
// 2. Per-policy value-gap bound
// ---------------------------------------------------------------------------

Outcome value_gap_bound() {
  int holds = 0;
  const int trials = 200;
  double worst_excess = -1e300;
  for (int i = 0; i < trials; ++i) {
    const auto t = test::run_bound_trial(static_cast<std::uint64_t>(i), 10000);
    holds += t.holds() ? 1 : 0;
    worst_excess = std::max(worst_excess, t.gap() - t.bound - 3.0 * t.bayes_se);
  }
  Outcome o;
  o.pass = holds >= static_cast<int>(std::ceil(0.99 * trials));
  o.detail = std::to_string(holds) + "/" + std::to_string(trials) + " hold, worst gap - bound - 3SE " +
             fmt("%.3g", worst_excess);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Normalised regret curves
// ---------------------------------------------------------------------------

Outcome curve_shape() {
  const auto grid = log_grid(1.0, 1e9, 20);
  bool monotone = true;
  for (double g : {0.9, 0.99, 0.999}) {
    for (int d : {10, 100, 1000, 10000}) {
      const auto c = regret_curve_thm2(1.0, d, g, grid);
      for (std::size_t i = 1; i < c.values.size(); ++i) monotone = monotone && c.values[i] <= c.values[i - 1];
    }
  }
  std::ostringstream detail;
  bool in_d = true, in_gamma = true;
  double prev = 0.0;
  detail << "N(0.25) by d:";
  for (int d : {10, 100, 1000, 10000}) {
    const auto n = first_n_below(regret_curve_thm2(1.0, d, 0.99, grid), 0.25);
    in_d = in_d && n && *n > prev;
    prev = n ? *n : 1e300;
    detail << ' ' << (n ? *n : -1.0);
  }
  prev = 0.0;
  detail << "; by gamma:";
  for (double g : {0.9, 0.99, 0.999}) {
    const auto n = first_n_below(regret_curve_thm2(1.0, 100, g, grid), 0.25);
    in_gamma = in_gamma && n && *n > prev;
    prev = n ? *n : 1e300;
    detail << ' ' << (n ? *n : -1.0);
  }
  return {monotone && in_d && in_gamma, (monotone ? "monotone, " : "NOT monotone, ") + detail.str()};
}

// ---------------------------------------------------------------------------
// 4. Tabular PIL monotonicity
// ---------------------------------------------------------------------------

Outcome tabular_pil_monotone() {
  const TabularMdp mdp = make_chain_benchmark();
  const auto rho = rho_weights(mdp, TabularPolicy::uniform(mdp.n_states, mdp.n_actions), mdp.gamma);
  const ConjugatePosterior prior(TabularEnvSpec::of(mdp), {});
  const auto behaviors = default_behaviors(mdp);
  std::vector<double> means;
  for (std::size_t n : {10, 100, 1000, 10000}) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      total += pil_tabular_exact(conjugate_update(prior, sample_dataset(mdp, behaviors, n, seed)), mdp, rho).pil;
    }
    means.push_back(total / 50.0);
  }
  bool pass = true;
  std::ostringstream detail;
  detail << "mean PIL";
  for (std::size_t i = 0; i < means.size(); ++i) {
    detail << ' ' << means[i];
    if (i > 0) pass = pass && means[i] < means[i - 1];
  }
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 5. Gradient check
// ---------------------------------------------------------------------------

Outcome gradient_check() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    worst = std::max(worst, test::max_gradient_rel_error(test::random_gradcheck_case(seed)));
  }
  return {worst <= 1e-4, "max relative error " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------------------
// 6 and 7. SOReL end to end and approximate-regret fidelity
// ---------------------------------------------------------------------------

struct SorelSweep {
  int seeds = 0;
  int deployed_ok = 0;
  int gate_violations = 0;
  int correlated = 0;
  std::vector<double> deployed_regrets;
  std::vector<double> pearson;
};

TabularHyperGrid prior_grid() {
  TabularHyperGrid g;
  for (double a : {0.1, 1.0}) g.phi_I.push_back({a, 0.0, 1.0});
  g.phi_II = {TabularInferenceConfig{}};
  g.phi_III = {SolverConfig{}};
  return g;
}

/// The loop plans with the cross-entropy policy search. Its softmax policies
/// make the exact regret vary continuously with N; the mean-MDP solver returns
/// deterministic policies whose regret on the chain is either 0 or 0.58.
TabularHyperGrid sorel_grid() {
  TabularHyperGrid g = prior_grid();
  SolverConfig c;
  c.kind = SolverKind::kCrossEntropy;
  c.iterations = 30;
  c.population = 64;
  c.init_std = 5.0;
  g.phi_III = {c};
  return g;
}

const SorelSweep& sorel_sweep() {
  static const SorelSweep sweep = [] {
    SorelSweep s;
    const TabularMdp mdp = make_chain_benchmark();
    const auto behaviors = default_behaviors(mdp);
    const std::vector<std::size_t> prefixes = {100, 1000, 10000, 100000};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      ++s.seeds;
      const Dataset data = sample_dataset(mdp, behaviors, prefixes.back(), seed);
      SorelOptions opt;
      opt.r_deploy = 0.1;
      opt.continue_after_deploy = true;
      opt.seed = seed;
      const auto report = sorel_loop(data, prefixes, TabularEnvSpec::of(mdp), sorel_grid(), opt, &mdp);
      std::vector<double> approx, truth;
      for (std::size_t i = 0; i < report.rows.size(); ++i) {
        const auto& row = report.rows[i];
        if (row.deployed && !(balance_check(row.pil, opt.balance_threshold) && row.approx_regret <= opt.r_deploy)) {
          ++s.gate_violations;
        }
        if (row.deployed != (report.deployed_row && *report.deployed_row == i)) ++s.gate_violations;
        if ((!report.deployed_row || i < *report.deployed_row) && balance_check(row.pil, opt.balance_threshold) &&
            row.approx_regret <= opt.r_deploy) {
          ++s.gate_violations;
        }
        approx.push_back(row.approx_regret);
        truth.push_back(*row.true_regret);
      }
      if (report.deployed_row) {
        const double r = *report.rows[*report.deployed_row].true_regret;
        s.deployed_regrets.push_back(r);
        s.deployed_ok += r <= 0.2 ? 1 : 0;
      }
      const double r = correlation_report(approx, truth).r;
      s.pearson.push_back(r);
      s.correlated += r >= 0.5 ? 1 : 0;
    }
    return s;
  }();
  return sweep;
}

Outcome sorel_end_to_end() {
  const auto& s = sorel_sweep();
  Outcome o;
  o.pass = s.deployed_ok >= static_cast<int>(std::ceil(0.9 * s.seeds)) && s.gate_violations == 0;
  double worst = 0.0;
  for (double r : s.deployed_regrets) worst = std::max(worst, r);
  o.detail = std::to_string(s.deployed_ok) + "/" + std::to_string(s.seeds) + " seeds deploy with true regret <= 0.2 (" +
             std::to_string(s.deployed_regrets.size()) + " deploy, worst " + fmt("%.3f", worst) + "), " +
             std::to_string(s.gate_violations) + " gate violations";
  return o;
}

Outcome approx_regret_fidelity() {
  const auto& s = sorel_sweep();
  double lowest = 1.0;
  for (double r : s.pearson) lowest = std::isnan(r) ? -2.0 : std::min(lowest, r);
  Outcome o;
  o.pass = s.correlated >= static_cast<int>(std::ceil(0.8 * s.seeds));
  o.detail = std::to_string(s.correlated) + "/" + std::to_string(s.seeds) + " seeds with Pearson r >= 0.5, lowest " +
             fmt("%.3f", lowest);
  return o;
}

// ---------------------------------------------------------------------------
// 8 and 9. Offline tuning against online UCB tuning
// ---------------------------------------------------------------------------

struct TuningTask {
  TabularMdp mdp;
  Dataset data;
  std::uint64_t seed;
};

/// The chain with 300 mixed-behaviour transitions, and five sparse random
/// MDPs (Dirichlet 0.3 rows) with 200 uniform-behaviour transitions each.
std::vector<TuningTask> tuning_tasks() {
  std::vector<TuningTask> tasks;
  const TabularMdp chain = make_chain_benchmark();
  tasks.push_back({chain, sample_dataset(chain, default_behaviors(chain), 300, 1), 1});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TabularMdp mdp = make_random_mdp(6, 3, 0.9, seed, 0.1, 0.3);
    const TabularPolicy uniform = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
    tasks.push_back({mdp, sample_dataset(mdp, std::span(&uniform, 1), 200, seed + 100), seed + 2});
  }
  return tasks;
}

const std::vector<double> kLambdaGrid = {0.0, 0.1, 1.0, 10.0, 100.0};

struct TaskResult {
  TuningReport report;
  std::size_t torel_steps = 0;
  UcbResult ucb;
  std::optional<std::size_t> ucb_samples;
};

const std::vector<TaskResult>& tuning_results() {
  static const std::vector<TaskResult> results = [] {
    std::vector<TaskResult> out;
    const PessimisticPlanner planner;
    const TabularHyperGrid grid = prior_grid();
    for (const auto& task : tuning_tasks()) {
      TaskResult tr;
      OnlineEnv env(task.mdp);
      TorelOptions opt;
      opt.seed = task.seed;
      const std::size_t before = env.steps();
      tr.report = torel_tune(planner, kLambdaGrid, task.data, TabularEnvSpec::of(task.mdp), grid, opt, &env.mdp());
      tr.torel_steps = env.steps() - before;

      std::vector<TabularPolicy> arms;
      std::vector<double> truths;
      for (const auto& row : tr.report.rows) {
        arms.push_back(row.policy);
        truths.push_back(*row.true_regret);
      }
      UcbConfig cfg;
      cfg.seed = task.seed;
      tr.ucb = ucb_online_tune(arms, truths, env, 400, norm_constants_for(task.mdp), cfg);
      tr.ucb_samples = samples_to_reach(tr.ucb, *tr.report.rows[tr.report.selected].true_regret);
      out.push_back(std::move(tr));
    }
    return out;
  }();
  return results;
}

Outcome torel_selection() {
  int better = 0, positive = 0;
  std::ostringstream detail;
  for (const auto& t : tuning_results()) {
    const double sel = *t.report.rows[t.report.selected].true_regret;
    const double mean = *t.report.mean_true_regret;
    const double r = t.report.correlation ? t.report.correlation->r : std::nan("");
    better += sel <= mean ? 1 : 0;
    positive += r > 0.0 ? 1 : 0;
    detail << " [sel " << fmt("%.3f", sel) << " mean " << fmt("%.3f", mean) << " r " << fmt("%.2f", r) << ']';
  }
  return {better >= 5 && positive >= 4,
          std::to_string(better) + "/6 at or below grid mean, " + std::to_string(positive) + "/6 r > 0;" +
              detail.str()};
}

Outcome sample_efficiency() {
  bool zero_offline = true, ucb_needs_steps = true, monotone = true;
  std::ostringstream detail;
  detail << "UCB samples to match:";
  for (const auto& t : tuning_results()) {
    zero_offline = zero_offline && t.torel_steps == 0;
    ucb_needs_steps = ucb_needs_steps && t.ucb_samples && *t.ucb_samples > 0;
    for (std::size_t i = 1; i < t.ucb.trace.size(); ++i) {
      monotone = monotone && t.ucb.trace[i].best_regret <= t.ucb.trace[i - 1].best_regret &&
                 t.ucb.trace[i].samples > t.ucb.trace[i - 1].samples;
    }
    detail << ' ' << (t.ucb_samples ? std::to_string(*t.ucb_samples) : std::string("never"));
  }
  detail << (zero_offline ? "; offline tuning took 0 steps" : "; offline tuning touched the environment");
  if (!monotone) detail << "; trace not monotone";
  return {zero_offline && ucb_needs_steps && monotone, detail.str()};
}

// ---------------------------------------------------------------------------
// 10. Regret normalisation arithmetic
// ---------------------------------------------------------------------------

Outcome normalisation_arithmetic() {
  const bool conversion = infinite_horizon_return(1.0, 0.5, 1) == 2.0;
  const double r_min = -13.3, r_max = -0.2, gamma = 0.99;
  const int steps = 200;
  // Finite-horizon returns whose converted value is exactly R_max / R_min.
  const double scale = 1.0 - std::pow(gamma, steps);
  const double at_max = normalize_regret(r_max / (1.0 - gamma) * scale, gamma, steps, r_min, r_max);
  const double at_min = normalize_regret(r_min / (1.0 - gamma) * scale, gamma, steps, r_min, r_max);
  const bool round_trip = std::abs(at_max) <= 1e-12 && std::abs(at_min - 1.0) <= 1e-12;
  return {conversion && round_trip, "R_inf(1, 0.5, 1) = " + fmt("%.17g", infinite_horizon_return(1.0, 0.5, 1)) +
                                        ", regret at R_max " + fmt("%.2e", at_max) + ", at R_min " +
                                        fmt("%.15g", at_min)};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "Gaussian PIL equals its error plus variance terms", 60.0, gaussian_decomposition},
      {2, "per-policy value gap within the PIL bound", 600.0, value_gap_bound},
      {3, "normalised regret curve shape", 1.0, curve_shape},
      {4, "tabular PIL decreases with data", 300.0, tabular_pil_monotone},
      {5, "loss gradients match finite differences", 60.0, gradient_check},
      {6, "offline loop deploys a low-regret policy", 900.0, sorel_end_to_end},
      {7, "approximate regret tracks true regret", 900.0, approx_regret_fidelity},
      {8, "offline hyperparameter selection quality", 600.0, torel_selection},
      {9, "offline tuning needs no online steps, UCB does", 600.0, sample_efficiency},
      {10, "regret normalisation arithmetic", 1.0, normalisation_arithmetic},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.time_limit_s;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("%s [%d] %s: %s (%.2fs%s)\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(), secs,
                in_time ? "" : ", over time limit");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
