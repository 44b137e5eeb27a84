#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "sorel/common.hpp"

namespace sorel {

// ---------------------------------------------------------------------------
// Environments
// ---------------------------------------------------------------------------

/// Finite MDP with Gaussian rewards of shared, known standard deviation.
/// This is the ground truth every estimate in the library is checked against.
struct TabularMdp {
  std::string env_id = "tabular";
  int n_states = 0;
  int n_actions = 0;
  /// Flattened (s, a, s') tensor; see index().
  std::vector<double> transition;
  /// n_states x n_actions
  Mat reward_mean;
  double reward_std = 0.0;
  double gamma = 0.9;
  Vec initial_dist;
  int max_steps = 100;

  TabularMdp() = default;
  TabularMdp(int states, int actions, double discount);

  std::size_t index(int s, int a, int s_next) const {
    return (static_cast<std::size_t>(s) * n_actions + a) * n_states + s_next;
  }
  std::span<const double> row(int s, int a) const {
    return {transition.data() + index(s, a, 0), static_cast<std::size_t>(n_states)};
  }
  std::span<double> row(int s, int a) {
    return {transition.data() + index(s, a, 0), static_cast<std::size_t>(n_states)};
  }
  double& p(int s, int a, int s_next) { return transition[index(s, a, s_next)]; }
  double p(int s, int a, int s_next) const { return transition[index(s, a, s_next)]; }

  /// Throws DataError when a row or the initial distribution does not sum to
  /// one within 1e-12, or when gamma / reward_std are out of range.
  void validate() const;

  /// (min reward mean - clip, max reward mean + clip).
  std::pair<double, double> reward_range(double clip) const;
};

/// The parts of a tabular environment an offline agent is allowed to know:
/// cardinalities, discount, reward noise, start distribution and horizon.
struct TabularEnvSpec {
  std::string env_id = "tabular";
  int n_states = 0;
  int n_actions = 0;
  double reward_std = 0.0;
  double gamma = 0.9;
  Vec initial_dist;
  int max_steps = 100;

  static TabularEnvSpec of(const TabularMdp& mdp);
  friend bool operator==(const TabularEnvSpec&, const TabularEnvSpec&) = default;
};

/// Continuous-state environment with additive Gaussian noise on the state
/// change and on the reward. States and actions are clamped to their boxes.
struct ContinuousEnv {
  std::string env_id;
  int state_dim = 0;
  int action_dim = 0;
  double gamma = 0.99;
  int max_steps = 100;
  std::function<Vec(const Vec&, const Vec&)> mean_delta;
  std::function<double(const Vec&, const Vec&)> mean_reward;
  Vec delta_noise_std;
  double reward_noise_std = 0.0;
  std::function<Vec(Rng&)> initial_state;
  /// Optional; an empty predicate means episodes only end at max_steps.
  std::function<bool(const Vec&)> is_terminal;
  Vec state_low, state_high, action_low, action_high;
  /// Known per-step reward bounds used for regret normalisation.
  double r_min = 0.0;
  double r_max = 1.0;

  Vec clamp_state(const Vec& s) const;
  Vec clamp_action(const Vec& a) const;
  bool terminal(const Vec& s) const { return is_terminal && is_terminal(s); }

  struct Step {
    Vec s_next;
    double r;
  };
  Step step(const Vec& s, const Vec& a, Rng& rng) const;
};

ContinuousEnv make_linear1d_env();
ContinuousEnv make_pendulum_env();
/// Builtins: "linear1d", "pendulum".
ContinuousEnv make_continuous_env(const std::string& name);

/// Five-state chain used as the default tabular benchmark. State 0 offers a
/// safe self-loop (reward 0.3); advancing through states 1 and 2 reaches the
/// rewarding goal state 3 (reward 1 per step); leaving the path from 1 or 2
/// drops into the absorbing zero-reward pit, state 4.
TabularMdp make_chain_benchmark(double reward_std = 0.05, double gamma = 0.9, int max_steps = 25);

/// Random MDP with Dirichlet(concentration) transition rows and uniform
/// [0, 1] reward means; start state 0.
TabularMdp make_random_mdp(int n_states, int n_actions, double gamma, std::uint64_t seed,
                           double reward_std = 0.1, double concentration = 1.0,
                           int max_steps = 50);

/// Builtins: "chain5", "random5" (seed 0), "bandit2" (one state, two actions).
TabularMdp make_tabular_env(const std::string& name);

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// One observed step. Tabular environments store the state / action index as
/// the single entry of s, a and s_next. `done` marks the end of an episode,
/// either by termination or by reaching max_steps.
struct Transition {
  Vec s;
  Vec a;
  double r = 0.0;
  Vec s_next;
  bool done = false;

  int state_index() const { return static_cast<int>(s[0]); }
  int action_index() const { return static_cast<int>(a[0]); }
  int next_state_index() const { return static_cast<int>(s_next[0]); }

  friend bool operator==(const Transition& x, const Transition& y);
};

Transition make_tabular_transition(int s, int a, double r, int s_next, bool done);

struct DatasetHeader {
  std::string env_id;
  /// Tabular datasets store state_dim = n_states and action_dim = n_actions.
  bool discrete = true;
  int state_dim = 0;
  int action_dim = 0;
  double gamma = 0.9;
  int max_steps = 100;
  std::string behavior;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Transition> transitions;

  std::size_t size() const { return transitions.size(); }
  bool empty() const { return transitions.empty(); }
  /// The first n transitions (the dataset observed after n steps).
  Dataset prefix(std::size_t n) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  std::vector<double> rewards() const;
  /// Completed episodes, i.e. runs of transitions ending in done = true.
  /// A trailing partial episode is not included.
  std::vector<std::span<const Transition>> episodes() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// Stochastic tabular policy; probs is n_states x n_actions, rows sum to 1.
struct TabularPolicy {
  Mat probs;

  static TabularPolicy uniform(int n_states, int n_actions);
  static TabularPolicy deterministic(std::span<const int> actions, int n_actions);
  /// Mixture (1 - eps) * base + eps * uniform.
  static TabularPolicy epsilon_greedy(const TabularPolicy& base, double eps);
  void validate() const;
  int sample(int s, Rng& rng) const;
};

/// Linear-Gaussian continuous policy: a = clamp(W [s; 1] + std * eps).
struct LinearPolicy {
  Mat weights;  // action_dim x (state_dim + 1)
  double exploration_std = 0.0;
  Vec action_low, action_high;

  static LinearPolicy zeros(const ContinuousEnv& env, double exploration_std);
  Vec mean_action(const Vec& s) const;
  Vec sample(const Vec& s, Rng& rng) const;
};

using PolicySpec = std::variant<TabularPolicy, LinearPolicy>;

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

enum class PmfKind { kArithmeticoGeometric, kGeometric };

/// (1-p)^2 p^i (i+1), or (1-p) p^i for the geometric kind. p in [0, 1).
double ag_pmf(double p, long i, PmfKind kind = PmfKind::kArithmeticoGeometric);

enum class PlanningGoal { kMaximize, kMinimize };

struct ValueIterationResult {
  Vec value;
  TabularPolicy policy;
  int iterations = 0;
};

/// Bellman optimality iteration until the sup-norm residual is at most tol.
/// Greedy ties go to the lowest action index. kMinimize plans for the worst
/// return instead (used for regret normalisation).
ValueIterationResult value_iteration(const TabularMdp& mdp, double tol = 1e-10,
                                     PlanningGoal goal = PlanningGoal::kMaximize);

/// Per-state values of a policy from the linear Bellman system.
Vec state_values(const TabularMdp& mdp, const TabularPolicy& policy);

/// J^pi(M): expected discounted return from initial_dist.
double policy_evaluation(const TabularMdp& mdp, const TabularPolicy& policy);

double optimal_return(const TabularMdp& mdp);
double pessimal_return(const TabularMdp& mdp);

/// J*(M) - J^pi(M), with negatives of magnitude below 1e-9 clamped to 0.
double true_regret(const TabularMdp& mdp, const TabularPolicy& policy);

/// Finite-horizon discounted return converted to an infinite-horizon value:
/// R_fin * (1 + gamma^s / (1 - gamma^s)).
double infinite_horizon_return(double return_finite, double gamma, int max_steps);

/// (R_max - R_inf) / (R_max - R_min) with R_max = r_max_norm / (1 - gamma),
/// R_min = r_min_norm / (1 - gamma). Unclipped; see clip_unit().
double normalize_regret(double return_finite, double gamma, int max_steps, double r_min_norm,
                        double r_max_norm);

double clip_unit(double x);

inline constexpr double kDegeneratePercentileEps = 1e-6;

/// 2.5th / 97.5th percentiles (linear interpolation) of per-step rewards.
/// All-equal rewards r give (r - 1e-6, r + 1e-6).
std::pair<double, double> percentile_norm_constants(const Dataset& dataset);

/// Episodes are generated round-robin from the behaviour policies (episode k
/// uses behaviors[k % size]), mimicking a replay buffer mixing poor and
/// expert data. Deterministic given seed.
Dataset sample_dataset(const TabularMdp& mdp, std::span<const TabularPolicy> behaviors,
                       std::size_t n, std::uint64_t seed);
Dataset sample_dataset(const ContinuousEnv& env, std::span<const LinearPolicy> behaviors,
                       std::size_t n, std::uint64_t seed);

struct RolloutReturn {
  double discounted = 0.0;
  double undiscounted = 0.0;
  int steps = 0;
};

RolloutReturn rollout(const TabularMdp& mdp, const TabularPolicy& policy, double gamma,
                      int horizon, std::uint64_t seed);
RolloutReturn rollout(const ContinuousEnv& env, const LinearPolicy& policy, double gamma,
                      int horizon, std::uint64_t seed);

/// Smallest horizon h with gamma^h < rel_tol.
int monte_carlo_horizon(double gamma, double rel_tol = 1e-3);

/// Behaviour mixture used for the tabular benchmark datasets: uniform random
/// and a 0.05-greedy version of the optimal policy.
std::vector<TabularPolicy> default_behaviors(const TabularMdp& mdp);

}  // namespace sorel
