#include "sorel/sorel_loop.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "sorel/special.hpp"

namespace sorel {

void TabularHyperGrid::validate() const {
  if (phi_I.empty() || phi_II.empty() || phi_III.empty()) {
    throw ConfigError("every hyperparameter list of the grid must be nonempty");
  }
  for (const auto& p : phi_I) p.validate();
  for (const auto& p : phi_II) {
    if (!(p.validation_split > 0.0 && p.validation_split < 1.0)) {
      throw ConfigError("validation_split must lie in (0, 1)");
    }
  }
  for (const auto& p : phi_III) p.validate();
}

void ContinuousHyperGrid::validate() const {
  if (phi_I.empty() || phi_II.empty() || phi_III.empty()) {
    throw ConfigError("every hyperparameter list of the grid must be nonempty");
  }
  for (const auto& p : phi_I) p.validate();
  for (const auto& p : phi_II) p.validate();
  for (const auto& p : phi_III) p.validate();
}

ModelChoice choose_model(std::vector<ModelCandidate> candidates, double threshold,
                         bool require_balance) {
  const ModelCandidate* best = nullptr;
  bool best_balanced = false;
  for (const auto& c : candidates) {
    if (!c.report) continue;
    const bool balanced = balance_check(*c.report, threshold);
    if (best == nullptr) {
      best = &c;
      best_balanced = balanced;
      continue;
    }
    if (require_balance) {
      if (balanced && !best_balanced) {
        best = &c;
        best_balanced = true;
        continue;
      }
      if (!balanced && best_balanced) continue;
      if (!balanced) {
        if (c.report->balance_ratio < best->report->balance_ratio) best = &c;
        continue;
      }
    }
    if (c.report->pil < best->report->pil) {
      best = &c;
      best_balanced = balanced;
    }
  }
  if (best == nullptr) {
    std::string why = candidates.empty() ? "empty grid" : candidates.front().error;
    throw DataError("every model combination failed: " + why);
  }
  ModelChoice choice;
  choice.phi_I = best->phi_I;
  choice.phi_II = best->phi_II;
  choice.report = *best->report;
  choice.balanced = balance_check(choice.report, threshold);
  choice.candidates = std::move(candidates);
  return choice;
}

namespace {

/// Rethrows the most specific failure when no candidate produced a report.
void ensure_some_success(const std::vector<ModelCandidate>& cands,
                         const std::vector<ErrorCode>& codes) {
  for (const auto& c : cands) {
    if (c.report) return;
  }
  const std::string msg = "every model combination failed: " + (cands.empty() ? "" : cands[0].error);
  if (!codes.empty() && codes[0] == ErrorCode::kUndefinedPil) throw UndefinedPilError(msg);
  if (!codes.empty() && codes[0] == ErrorCode::kNumeric) throw NumericError(msg);
  throw DataError(msg);
}

}  // namespace

TabularModelResult tune_model(const TabularHyperGrid& grid, const TabularEnvSpec& env,
                              const Dataset& data, double threshold, std::uint64_t seed,
                              bool require_balance) {
  if (grid.phi_I.empty() || grid.phi_II.empty()) throw ConfigError("model grid is empty");
  std::vector<ModelCandidate> cands;
  std::vector<ErrorCode> codes;
  for (std::size_t j = 0; j < grid.phi_II.size(); ++j) {
    const auto& inf = grid.phi_II[j];
    const auto [train, val] = split_dataset(data, inf.validation_split, derive_seed(seed, 7));
    for (std::size_t i = 0; i < grid.phi_I.size(); ++i) {
      ModelCandidate c{i, j, std::nullopt, {}};
      try {
        if (val.size() < std::max<std::size_t>(inf.min_validation, 1)) {
          throw UndefinedPilError("validation split has " + std::to_string(val.size()) +
                                  " transitions; PIL is undefined");
        }
        const auto post = conjugate_update(ConjugatePosterior(env, grid.phi_I[i]), train);
        c.report = pil_tabular_validation(post, train, val);
      } catch (const Error& e) {
        c.error = e.what();
        codes.push_back(e.code());
      }
      cands.push_back(std::move(c));
    }
  }
  ensure_some_success(cands, codes);
  ModelChoice choice = choose_model(std::move(cands), threshold, require_balance);
  ConjugatePosterior post =
      conjugate_update(ConjugatePosterior(env, grid.phi_I[choice.phi_I]), data);
  return {std::move(choice), std::move(post)};
}

ContinuousModelResult tune_model(const ContinuousHyperGrid& grid, const Dataset& data,
                                 double threshold, std::uint64_t seed, bool require_balance) {
  if (grid.phi_I.empty() || grid.phi_II.empty()) throw ConfigError("model grid is empty");
  std::vector<ModelCandidate> cands;
  std::vector<ErrorCode> codes;
  std::vector<std::optional<EnsembleModel>> models;
  for (std::size_t j = 0; j < grid.phi_II.size(); ++j) {
    for (std::size_t i = 0; i < grid.phi_I.size(); ++i) {
      ModelCandidate c{i, j, std::nullopt, {}};
      try {
        auto trained = train_ensemble(data, grid.phi_I[i], grid.phi_II[j], derive_seed(seed, 8));
        c.report = pil_gaussian(trained.model, trained.validation,
                                static_cast<std::size_t>(grid.phi_II[j].batch_size));
        models.emplace_back(std::move(trained.model));
      } catch (const Error& e) {
        c.error = e.what();
        codes.push_back(e.code());
        models.emplace_back(std::nullopt);
      }
      cands.push_back(std::move(c));
    }
  }
  ensure_some_success(cands, codes);
  ModelChoice choice = choose_model(std::move(cands), threshold, require_balance);
  const std::size_t flat = choice.phi_II * grid.phi_I.size() + choice.phi_I;
  return {std::move(choice), std::move(*models[flat])};
}

const RegretEstimate& RegretSummary::get(RegretStat stat) const {
  for (const auto& e : estimates) {
    if (e.stat == stat) return e;
  }
  throw DataError("regret statistic missing from summary");
}

RegretSummary summarize_regret(std::vector<double> returns, double r_max_hat) {
  RegretSummary s;
  s.r_max_hat = r_max_hat;
  for (RegretStat stat : kAllRegretStats) {
    RegretEstimate e = approx_regret(stat, returns, r_max_hat);
    e.returns_sample.clear();  // kept once in the summary
    s.estimates.push_back(std::move(e));
  }
  s.returns = std::move(returns);
  return s;
}

namespace {

template <typename Policy, typename SolveFn, typename ReturnsFn>
SolverChoice<Policy> tune_solver_impl(const std::vector<SolverConfig>& phi_III, double r_max_hat,
                                      RegretStat stat, SolveFn solve, ReturnsFn returns_of) {
  if (phi_III.empty()) throw ConfigError("solver grid is empty");
  std::optional<SolverChoice<Policy>> best;
  std::vector<double> values;
  for (std::size_t k = 0; k < phi_III.size(); ++k) {
    Policy policy = solve(phi_III[k]);
    RegretSummary summary = summarize_regret(returns_of(policy), r_max_hat);
    const double v = summary.get(stat).value;
    values.push_back(v);
    if (!best || v < best->regret.get(stat).value) {
      best = SolverChoice<Policy>{k, std::move(policy), std::move(summary), {}};
    }
  }
  best->candidate_values = std::move(values);
  return std::move(*best);
}

}  // namespace

SolverChoice<TabularPolicy> tune_solver(const std::vector<SolverConfig>& phi_III,
                                        const ConjugatePosterior& post, double r_max_hat,
                                        RegretStat stat, int k_samples, std::uint64_t seed) {
  return tune_solver_impl<TabularPolicy>(
      phi_III, r_max_hat, stat, [&](const SolverConfig& c) { return solve_bamdp(post, c); },
      [&](const TabularPolicy& pi) { return predictive_returns(post, pi, k_samples, seed); });
}

SolverChoice<LinearPolicy> tune_solver(const std::vector<SolverConfig>& phi_III,
                                       const EnsembleModel& model, const ModelRolloutSpec& spec,
                                       const Vec& action_low, const Vec& action_high,
                                       double r_max_hat, RegretStat stat, std::uint64_t seed) {
  return tune_solver_impl<LinearPolicy>(
      phi_III, r_max_hat, stat,
      [&](const SolverConfig& c) {
        return solve_cross_entropy(model, spec, action_low, action_high, c);
      },
      [&](const LinearPolicy& pi) { return predictive_returns(model, pi, spec, seed); });
}

NormConstants norm_constants_for(const TabularMdp& mdp) {
  return {pessimal_return(mdp) * (1.0 - mdp.gamma), optimal_return(mdp) * (1.0 - mdp.gamma)};
}

double regret_scale(double gamma, const NormConstants& norm) {
  if (!(norm.r_max > norm.r_min)) throw NumericError("normalisation needs r_max > r_min");
  return (norm.r_max - norm.r_min) / (1.0 - gamma);
}

namespace {

struct StepOutcome {
  ModelChoice choice;
  PolicySpec policy;
  std::size_t phi_III = 0;
  RegretSummary regret;
  std::optional<double> true_regret;
};

/// Shared gate logic. `step(prefix, first)` fits, solves and (optionally)
/// validates one prefix.
template <typename StepFn>
SorelReport run_loop(const Dataset& data, const std::vector<std::size_t>& prefixes, double gamma,
                     const SorelOptions& options, StepFn step) {
  if (prefixes.empty()) throw ConfigError("prefix schedule is empty");
  if (!(options.r_deploy >= 0.0 && options.r_deploy <= 1.0)) {
    throw ConfigError("r_deploy must lie in [0, 1]");
  }
  SorelReport report;
  report.r_deploy = options.r_deploy;
  report.stat = options.stat;
  std::size_t last = 0;
  for (std::size_t k = 0; k < prefixes.size(); ++k) {
    const std::size_t n = prefixes[k];
    if (n <= last) throw ConfigError("prefix sizes must be strictly increasing");
    if (n > data.size()) {
      throw DataError("prefix " + std::to_string(n) + " exceeds the dataset size " +
                      std::to_string(data.size()));
    }
    last = n;
    const Dataset prefix = data.prefix(n);
    StepOutcome out = step(prefix, k == 0);
    const NormConstants norm = options.norm ? *options.norm : [&] {
      const auto [lo, hi] = percentile_norm_constants(prefix);
      return NormConstants{lo, hi};
    }();
    const double scale = regret_scale(gamma, norm);

    SorelRow row;
    row.n = n;
    row.pil = out.choice.report;
    row.balanced = out.choice.balanced;
    row.phi_I = out.choice.phi_I;
    row.phi_II = out.choice.phi_II;
    row.phi_III = out.phi_III;
    for (const auto& e : out.regret.estimates) row.approx_regret_all.push_back(e.value / scale);
    row.approx_regret = out.regret.get(options.stat).value / scale;
    row.regret = std::move(out.regret);
    row.policy = std::move(out.policy);
    if (out.true_regret) row.true_regret = *out.true_regret;
    const bool gate = row.balanced && row.approx_regret <= options.r_deploy;
    if (gate && !report.deployed_row) {
      row.deployed = true;
      report.deployed_row = report.rows.size();
    }
    report.rows.push_back(std::move(row));
    if (report.deployed_row && !options.continue_after_deploy) break;
  }
  report.exhausted = !report.deployed_row.has_value();
  return report;
}

}  // namespace

SorelReport sorel_loop(const Dataset& data, const std::vector<std::size_t>& prefixes,
                       const TabularEnvSpec& env, const TabularHyperGrid& grid,
                       const SorelOptions& options, const TabularMdp* test_mdp) {
  grid.validate();
  std::optional<double> true_scale;
  std::optional<double> j_star;
  if (test_mdp != nullptr) {
    j_star = optimal_return(*test_mdp);
    true_scale = regret_scale(test_mdp->gamma, norm_constants_for(*test_mdp));
  }
  std::size_t fixed_i = 0, fixed_j = 0;
  auto step = [&](const Dataset& prefix, bool first) {
    StepOutcome out;
    const std::uint64_t model_seed = derive_seed(options.seed, 1);
    if (first || options.retune_every_n) {
      auto res = tune_model(grid, env, prefix, options.balance_threshold, model_seed);
      fixed_i = res.choice.phi_I;
      fixed_j = res.choice.phi_II;
      out.choice = std::move(res.choice);
    } else {
      TabularHyperGrid sub{{grid.phi_I[fixed_i]}, {grid.phi_II[fixed_j]}, grid.phi_III};
      auto res = tune_model(sub, env, prefix, options.balance_threshold, model_seed);
      out.choice = std::move(res.choice);
      out.choice.phi_I = fixed_i;
      out.choice.phi_II = fixed_j;
    }
    const ConjugatePosterior post =
        conjugate_update(ConjugatePosterior(env, grid.phi_I[fixed_i]), prefix);
    const double rmax = r_max_hat(prefix, env.gamma, env.max_steps);
    auto solved = tune_solver(grid.phi_III, post, rmax, options.stat, options.k_samples,
                              derive_seed(options.seed, 2));
    out.phi_III = solved.phi_III;
    out.regret = std::move(solved.regret);
    if (test_mdp != nullptr) {
      const double gap = *j_star - policy_evaluation(*test_mdp, solved.policy);
      out.true_regret = std::max(gap, 0.0) / *true_scale;
    }
    out.policy = std::move(solved.policy);
    return out;
  };
  return run_loop(data, prefixes, env.gamma, options, step);
}

SorelReport sorel_loop(const Dataset& data, const std::vector<std::size_t>& prefixes,
                       const ContinuousHyperGrid& grid, const SorelOptions& options,
                       const ContinuousEnv* test_env, int test_episodes) {
  grid.validate();
  if (data.header.discrete) throw DataError("the ensemble loop needs a continuous dataset");
  const double gamma = data.header.gamma;
  const int max_steps = data.header.max_steps;
  std::size_t fixed_i = 0, fixed_j = 0;
  auto step = [&](const Dataset& prefix, bool first) {
    StepOutcome out;
    const std::uint64_t model_seed = derive_seed(options.seed, 1);
    EnsembleModel model;
    if (first || options.retune_every_n) {
      auto res = tune_model(grid, prefix, options.balance_threshold, model_seed);
      fixed_i = res.choice.phi_I;
      fixed_j = res.choice.phi_II;
      out.choice = std::move(res.choice);
      model = std::move(res.model);
    } else {
      ContinuousHyperGrid sub{{grid.phi_I[fixed_i]}, {grid.phi_II[fixed_j]}, grid.phi_III};
      auto res = tune_model(sub, prefix, options.balance_threshold, model_seed);
      out.choice = std::move(res.choice);
      out.choice.phi_I = fixed_i;
      out.choice.phi_II = fixed_j;
      model = std::move(res.model);
    }
    ModelRolloutSpec spec{episode_start_states(prefix), max_steps, gamma,
                          options.episodes_per_member};
    // Offline, actions are bounded by the range observed in the data.
    Vec a_lo = Vec::Constant(model.action_dim, std::numeric_limits<double>::infinity());
    Vec a_hi = -a_lo;
    if (test_env != nullptr) {
      a_lo = test_env->action_low;
      a_hi = test_env->action_high;
    } else {
      for (const auto& t : prefix.transitions) {
        a_lo = a_lo.cwiseMin(t.a);
        a_hi = a_hi.cwiseMax(t.a);
      }
    }
    const double rmax = r_max_hat(prefix, gamma, max_steps);
    auto solved = tune_solver(grid.phi_III, model, spec, a_lo, a_hi, rmax, options.stat,
                              derive_seed(options.seed, 2));
    out.phi_III = solved.phi_III;
    out.regret = std::move(solved.regret);
    if (test_env != nullptr) {
      double total = 0.0;
      for (int ep = 0; ep < test_episodes; ++ep) {
        total += rollout(*test_env, solved.policy, gamma, max_steps,
                         derive_seed(options.seed, 3000 + static_cast<std::uint64_t>(ep)))
                     .discounted;
      }
      out.true_regret = clip_unit(normalize_regret(total / test_episodes, gamma, max_steps,
                                                   test_env->r_min, test_env->r_max));
    }
    out.policy = std::move(solved.policy);
    return out;
  };
  return run_loop(data, prefixes, gamma, options, step);
}

void write_sorel_csv(std::ostream& out, const SorelReport& report) {
  const auto old_precision = out.precision(17);
  out << "N,pil,mse_term,var_term,balance_ratio,balanced,phi_I,phi_II,phi_III,approx_regret,"
         "median,mean,max,min,variance2,combined,deployed,true_regret\n";
  for (const auto& r : report.rows) {
    out << r.n << ',' << r.pil.pil << ',' << r.pil.mse_term << ',' << r.pil.var_term << ','
        << r.pil.balance_ratio << ',' << (r.balanced ? 1 : 0) << ',' << r.phi_I << ',' << r.phi_II
        << ',' << r.phi_III << ',' << r.approx_regret;
    for (double v : r.approx_regret_all) out << ',' << v;
    out << ',' << (r.deployed ? 1 : 0) << ',';
    if (r.true_regret) out << *r.true_regret;
    out << '\n';
  }
  out.precision(old_precision);
}

}  // namespace sorel
