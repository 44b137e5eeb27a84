#pragma once

#include <string>

#include "sorel/regret.hpp"

namespace sorel {

enum class SolverKind { kMeanMdpVi, kCrossEntropy };
const char* solver_kind_name(SolverKind kind);
SolverKind parse_solver_kind(const std::string& name);

/// BAMDP solver hyperparameters. Only `kind` matters for kMeanMdpVi.
struct SolverConfig {
  SolverKind kind = SolverKind::kMeanMdpVi;
  int population = 32;
  double elite_fraction = 0.2;
  int iterations = 20;
  /// Posterior samples (tabular) per candidate score.
  int k_samples = 16;
  /// Continuous rollouts: episodes per elite member and horizon (0 = the
  /// dataset's max_steps).
  int episodes_per_member = 8;
  int horizon = 0;
  /// new = smoothing * elite statistic + (1 - smoothing) * old.
  double smoothing = 0.7;
  double init_std = 2.0;
  double min_std = 0.0;
  /// Exploration noise of the returned continuous policy.
  double policy_std = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const SolverConfig&, const SolverConfig&) = default;
};

/// Monte-Carlo estimate of E_theta[J^pi(theta)]: mean of predictive_returns.
double bayes_objective_estimate(const ConjugatePosterior& post, const TabularPolicy& policy,
                                int k_samples, std::uint64_t seed);
double bayes_objective_estimate(const EnsembleModel& model, const LinearPolicy& policy,
                                const ModelRolloutSpec& spec, std::uint64_t seed);

/// Greedy policy of the posterior-mean MDP (ties to the lowest action).
TabularPolicy solve_mean_mdp(const ConjugatePosterior& post);

/// Softmax policy of a logits matrix, row by row.
TabularPolicy softmax_policy(const Mat& logits);

struct CemTrace {
  /// Best candidate score per iteration.
  std::vector<double> best_scores;
};

/// Cross-entropy search over policy logits. Every candidate of an iteration is
/// scored on the same posterior samples. Returns the softmax of the final mean.
TabularPolicy solve_cross_entropy(const ConjugatePosterior& post, const SolverConfig& config,
                                  CemTrace* trace = nullptr);

/// Cross-entropy search over linear policy weights scored by model rollouts.
LinearPolicy solve_cross_entropy(const EnsembleModel& model, const ModelRolloutSpec& spec,
                                 const Vec& action_low, const Vec& action_high,
                                 const SolverConfig& config, CemTrace* trace = nullptr);

/// Dispatches on config.kind.
TabularPolicy solve_bamdp(const ConjugatePosterior& post, const SolverConfig& config);

}  // namespace sorel
