#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sorel/sorel_loop.hpp"

namespace sorel {

/// An offline RL algorithm with one scalar hyperparameter.
class OrlPlanner {
 public:
  virtual ~OrlPlanner() = default;
  virtual std::string name() const = 0;
  /// Name of the tuned hyperparameter.
  virtual std::string hyperparameter() const = 0;
  /// Whether the planner itself uses the fitted dynamics model.
  virtual bool model_based() const = 0;
  /// `posterior` is the fitted model; model-free planners ignore it.
  virtual TabularPolicy train(const Dataset& data, const ConjugatePosterior& posterior,
                              double value) const = 0;
};

/// Empirical action frequencies per state plus `value` pseudo-counts per
/// action; unvisited states act uniformly.
class BehaviorCloning final : public OrlPlanner {
 public:
  std::string name() const override { return "behavior_cloning"; }
  std::string hyperparameter() const override { return "smoothing"; }
  bool model_based() const override { return false; }
  TabularPolicy train(const Dataset& data, const ConjugatePosterior& posterior,
                      double value) const override;
};

/// Value iteration on the posterior-mean MDP with rewards lowered by
/// `value` * u(s, a), u the posterior standard deviation of the transition row
/// (root of the summed Dirichlet marginal variances) plus that of the reward
/// mean.
class PessimisticPlanner final : public OrlPlanner {
 public:
  std::string name() const override { return "pessimistic"; }
  std::string hyperparameter() const override { return "lambda"; }
  bool model_based() const override { return true; }
  TabularPolicy train(const Dataset& data, const ConjugatePosterior& posterior,
                      double value) const override;

  static Mat uncertainty(const ConjugatePosterior& posterior);
};

/// Builtins: "behavior_cloning", "pessimistic".
std::unique_ptr<OrlPlanner> make_planner(const std::string& name);

/// Least-squares linear policy a ~ W [s; 1] with ridge `ridge` on W.
LinearPolicy behavior_cloning_linear(const Dataset& data, double ridge, const Vec& action_low,
                                     const Vec& action_high);

struct CorrelationResult {
  /// NaN when either input has zero variance.
  double r = 0.0;
  double p = 0.0;
};

/// Pearson r and the two-sided p-value of t = r sqrt((n - 2) / (1 - r^2))
/// under Student's t with n - 2 degrees of freedom. Needs n >= 3.
CorrelationResult correlation_report(const std::vector<double>& metrics,
                                     const std::vector<double>& true_regrets);

struct TuningRow {
  double value = 0.0;
  /// Unnormalised approximate regret of the chosen statistic.
  double metric = 0.0;
  std::optional<double> true_regret;
  /// 1-based rank of the metric (1 = lowest).
  std::size_t rank = 0;
  std::string error;
  TabularPolicy policy;
};

struct TuningReport {
  std::string planner;
  RegretStat stat = RegretStat::kMedian;
  std::vector<TuningRow> rows;
  std::size_t selected = 0;
  std::optional<std::size_t> oracle;
  std::optional<CorrelationResult> correlation;
  std::optional<double> mean_true_regret;
  ModelChoice model;
};

struct TorelOptions {
  RegretStat stat = RegretStat::kMedian;
  double balance_threshold = kDefaultBalanceThreshold;
  int k_samples = 100;
  std::uint64_t seed = 0;
};

/// Fits the posterior once by PIL minimisation (balance enforced only for
/// model-based planners), trains the planner for each grid value and ranks the
/// policies by approximate regret. Needs no environment access. When a
/// ground-truth MDP is supplied the exact normalised true regrets, the oracle
/// row and the correlation are filled in.
TuningReport torel_tune(const OrlPlanner& planner, const std::vector<double>& grid,
                        const Dataset& data, const TabularEnvSpec& env,
                        const TabularHyperGrid& model_grid, const TorelOptions& options,
                        const TabularMdp* test_mdp = nullptr);

/// Columns: value,metric,true_regret,rank,selected,oracle,error.
void write_tuning_csv(std::ostream& out, const TuningReport& report);

/// Ground-truth environment that counts every step taken through it.
class OnlineEnv {
 public:
  explicit OnlineEnv(TabularMdp mdp) : mdp_(std::move(mdp)) {}

  const TabularMdp& mdp() const { return mdp_; }
  std::size_t steps() const { return steps_; }

  int reset(Rng& rng);
  struct Step {
    int s_next;
    double r;
  };
  Step step(int s, int a, Rng& rng);

 private:
  TabularMdp mdp_;
  std::size_t steps_ = 0;
};

struct UcbConfig {
  double exploration = 1.4142135623730951;
  std::uint64_t seed = 0;
};

struct UcbTracePoint {
  std::size_t samples = 0;
  /// Running minimum of the recommended arm's exact normalised regret.
  double best_regret = 0.0;
};

struct UcbResult {
  std::size_t selected = 0;
  std::size_t online_samples = 0;
  std::vector<std::size_t> pulls;
  std::vector<double> mean_scores;
  std::vector<UcbTracePoint> trace;
};

/// UCB1 over pre-trained policies. Each pull runs one episode of
/// env.mdp().max_steps steps; its score is 100 (1 - normalised regret) with
/// the regret from the episode's discounted return (converted to infinite
/// horizon). `true_regrets` (normalised) feed the trace only.
UcbResult ucb_online_tune(const std::vector<TabularPolicy>& arms,
                          const std::vector<double>& true_regrets, OnlineEnv& env,
                          std::size_t episode_budget, const NormConstants& norm,
                          const UcbConfig& config);

/// First trace sample count whose best regret is at most `target`.
std::optional<std::size_t> samples_to_reach(const UcbResult& result, double target);

}  // namespace sorel
