#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include "sorel/pil.hpp"
#include "sorel/solver.hpp"

namespace sorel {

/// Inference hyperparameters of the conjugate backend.
struct TabularInferenceConfig {
  double validation_split = 0.1;
  /// Smallest validation split for which the PIL is defined.
  std::size_t min_validation = 1;

  friend bool operator==(const TabularInferenceConfig&, const TabularInferenceConfig&) = default;
};

struct TabularHyperGrid {
  std::vector<ConjugatePrior> phi_I;
  std::vector<TabularInferenceConfig> phi_II;
  std::vector<SolverConfig> phi_III;

  void validate() const;
};

struct ContinuousHyperGrid {
  std::vector<ModelConfig> phi_I;
  std::vector<InferenceConfig> phi_II;
  std::vector<SolverConfig> phi_III;

  void validate() const;
};

struct ModelCandidate {
  std::size_t phi_I = 0;
  std::size_t phi_II = 0;
  /// Empty when the combination failed to train.
  std::optional<PilReport> report;
  std::string error;
};

/// Balance-constrained PIL minimisation over (phi_I, phi_II). Among balanced
/// candidates the smallest PIL wins; when none is balanced the smallest
/// balance ratio wins and `balanced` is false. Ties go to the lowest index.
struct ModelChoice {
  std::size_t phi_I = 0;
  std::size_t phi_II = 0;
  PilReport report;
  bool balanced = false;
  std::vector<ModelCandidate> candidates;
};

/// Picks the winner from already evaluated candidates. When
/// `require_balance` is false the balance filter is skipped. Throws DataError
/// when every candidate failed.
ModelChoice choose_model(std::vector<ModelCandidate> candidates, double threshold,
                         bool require_balance = true);

struct TabularModelResult {
  ModelChoice choice;
  /// Posterior for the chosen combination, fitted on the full data.
  ConjugatePosterior posterior;
};

/// PIL of every grid combination is measured on a seeded validation split of
/// `data`; the winner is refitted on all of `data`.
TabularModelResult tune_model(const TabularHyperGrid& grid, const TabularEnvSpec& env,
                              const Dataset& data, double threshold, std::uint64_t seed,
                              bool require_balance = true);

struct ContinuousModelResult {
  ModelChoice choice;
  EnsembleModel model;
};

ContinuousModelResult tune_model(const ContinuousHyperGrid& grid, const Dataset& data,
                                 double threshold, std::uint64_t seed, bool require_balance = true);

/// Every statistic evaluated on the same predictive-returns sample.
struct RegretSummary {
  std::vector<double> returns;
  double r_max_hat = 0.0;
  std::vector<RegretEstimate> estimates;

  const RegretEstimate& get(RegretStat stat) const;
};

RegretSummary summarize_regret(std::vector<double> returns, double r_max_hat);

template <typename Policy>
struct SolverChoice {
  std::size_t phi_III = 0;
  Policy policy;
  RegretSummary regret;
  std::vector<double> candidate_values;
};

/// Solves the BAMDP for every phi_III and keeps the lowest approximate regret
/// (ties to the lowest index).
SolverChoice<TabularPolicy> tune_solver(const std::vector<SolverConfig>& phi_III,
                                        const ConjugatePosterior& post, double r_max_hat,
                                        RegretStat stat, int k_samples, std::uint64_t seed);

SolverChoice<LinearPolicy> tune_solver(const std::vector<SolverConfig>& phi_III,
                                       const EnsembleModel& model, const ModelRolloutSpec& spec,
                                       const Vec& action_low, const Vec& action_high,
                                       double r_max_hat, RegretStat stat, std::uint64_t seed);

/// Per-step reward bounds used to express regrets as fractions of
/// (r_max - r_min) / (1 - gamma).
struct NormConstants {
  double r_min = 0.0;
  double r_max = 1.0;
};

/// Known constants for a ground-truth MDP: r_max = J*(1 - gamma),
/// r_min = J_min(1 - gamma), so a normalised regret of 1 is the worst policy.
NormConstants norm_constants_for(const TabularMdp& mdp);

double regret_scale(double gamma, const NormConstants& norm);

struct SorelOptions {
  double r_deploy = 0.1;
  RegretStat stat = RegretStat::kMedian;
  double balance_threshold = kDefaultBalanceThreshold;
  /// Posterior samples for the tabular regret estimate.
  int k_samples = 100;
  /// Episodes per elite member for the ensemble regret estimate.
  int episodes_per_member = 64;
  bool retune_every_n = false;
  /// Keep sweeping after the deployment row (validation mode).
  bool continue_after_deploy = false;
  /// Normalisation constants; the 2.5 / 97.5 reward percentiles of each prefix
  /// are used when absent.
  std::optional<NormConstants> norm;
  std::uint64_t seed = 0;
};

struct SorelRow {
  std::size_t n = 0;
  PilReport pil;
  bool balanced = false;
  std::size_t phi_I = 0;
  std::size_t phi_II = 0;
  std::size_t phi_III = 0;
  RegretSummary regret;
  /// Normalised value of the gating statistic.
  double approx_regret = 0.0;
  /// Normalised values of all statistics, in kAllRegretStats order.
  std::vector<double> approx_regret_all;
  bool deployed = false;
  std::optional<double> true_regret;
  PolicySpec policy;
};

struct SorelReport {
  double r_deploy = 0.0;
  RegretStat stat = RegretStat::kMedian;
  std::vector<SorelRow> rows;
  std::optional<std::size_t> deployed_row;
  /// True when the stream ended without a deployment.
  bool exhausted = false;
};

/// Offline loop over increasing prefixes of `data`. A row deploys only when
/// its normalised approximate regret is at most r_deploy and its PIL passes
/// the balance check. With a ground-truth MDP the would-be-deployed policy's
/// exact normalised regret is recorded on every row.
SorelReport sorel_loop(const Dataset& data, const std::vector<std::size_t>& prefixes,
                       const TabularEnvSpec& env, const TabularHyperGrid& grid,
                       const SorelOptions& options, const TabularMdp* test_mdp = nullptr);

/// Ensemble backend. With a ground-truth environment the true normalised
/// regret is estimated from `test_episodes` rollouts (finite-horizon returns
/// converted to infinite horizon, normalised with the environment's reward
/// bounds, clipped to [0, 1]).
SorelReport sorel_loop(const Dataset& data, const std::vector<std::size_t>& prefixes,
                       const ContinuousHyperGrid& grid, const SorelOptions& options,
                       const ContinuousEnv* test_env = nullptr, int test_episodes = 32);

/// Columns: N,pil,mse_term,var_term,balance_ratio,balanced,phi_I,phi_II,
/// phi_III,approx_regret,median,mean,max,min,variance2,combined,deployed,
/// true_regret.
void write_sorel_csv(std::ostream& out, const SorelReport& report);

}  // namespace sorel
