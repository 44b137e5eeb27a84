#include "sorel/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "sorel/special.hpp"

namespace sorel {

namespace {

int sample_categorical(std::span<const double> probs, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_positive = static_cast<int>(i);
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;
}

int sample_categorical(const Vec& probs, Rng& rng) {
  return sample_categorical(std::span<const double>(probs.data(), probs.size()), rng);
}

}  // namespace

// --- TabularMdp -------------------------------------------------------------

TabularMdp::TabularMdp(int states, int actions, double discount)
    : n_states(states),
      n_actions(actions),
      transition(static_cast<std::size_t>(states) * actions * states, 0.0),
      reward_mean(Mat::Zero(states, actions)),
      gamma(discount),
      initial_dist(Vec::Zero(states)) {
  if (states > 0) initial_dist[0] = 1.0;
}

void TabularMdp::validate() const {
  if (n_states <= 0 || n_actions <= 0) throw DataError("MDP needs at least one state and action");
  if (transition.size() != static_cast<std::size_t>(n_states) * n_actions * n_states) {
    throw DataError("transition tensor has the wrong size");
  }
  if (reward_mean.rows() != n_states || reward_mean.cols() != n_actions) {
    throw DataError("reward_mean has the wrong shape");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) throw DataError("gamma must lie in [0, 1)");
  if (!(reward_std >= 0.0)) throw DataError("reward_std must be nonnegative");
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      double total = 0.0;
      for (double p : row(s, a)) {
        if (p < 0.0) throw DataError("negative transition probability");
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-12) {
        std::ostringstream msg;
        msg << "transition row (" << s << ", " << a << ") sums to " << total;
        throw DataError(msg.str());
      }
    }
  }
  if (initial_dist.size() != n_states) throw DataError("initial_dist has the wrong size");
  if ((initial_dist.array() < 0.0).any() || std::abs(initial_dist.sum() - 1.0) > 1e-12) {
    throw DataError("initial_dist is not a probability vector");
  }
}

std::pair<double, double> TabularMdp::reward_range(double clip) const {
  return {reward_mean.minCoeff() - clip, reward_mean.maxCoeff() + clip};
}

TabularEnvSpec TabularEnvSpec::of(const TabularMdp& mdp) {
  return TabularEnvSpec{mdp.env_id,     mdp.n_states, mdp.n_actions, mdp.reward_std,
                        mdp.gamma,      mdp.initial_dist, mdp.max_steps};
}

// --- ContinuousEnv ------------------------------------------------------------

Vec ContinuousEnv::clamp_state(const Vec& s) const {
  return s.cwiseMax(state_low).cwiseMin(state_high);
}

Vec ContinuousEnv::clamp_action(const Vec& a) const {
  return a.cwiseMax(action_low).cwiseMin(action_high);
}

ContinuousEnv::Step ContinuousEnv::step(const Vec& s, const Vec& a, Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Vec act = clamp_action(a);
  Vec delta = mean_delta(s, act);
  for (int d = 0; d < state_dim; ++d) delta[d] += delta_noise_std[d] * normal(rng);
  const double r = mean_reward(s, act) + reward_noise_std * normal(rng);
  return {clamp_state(s + delta), r};
}

ContinuousEnv make_linear1d_env() {
  ContinuousEnv env;
  env.env_id = "linear1d";
  env.state_dim = 1;
  env.action_dim = 1;
  env.gamma = 0.95;
  env.max_steps = 50;
  env.mean_delta = [](const Vec& s, const Vec& a) {
    Vec d(1);
    d[0] = 0.3 * a[0] - 0.1 * s[0];
    return d;
  };
  env.mean_reward = [](const Vec& s, const Vec& a) { return -s[0] * s[0] - 0.1 * a[0] * a[0]; };
  env.delta_noise_std = Vec::Constant(1, 0.02);
  env.reward_noise_std = 0.02;
  env.initial_state = [](Rng& rng) {
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    Vec s(1);
    s[0] = u(rng);
    return s;
  };
  env.state_low = Vec::Constant(1, -2.0);
  env.state_high = Vec::Constant(1, 2.0);
  env.action_low = Vec::Constant(1, -1.0);
  env.action_high = Vec::Constant(1, 1.0);
  env.r_min = -4.1;
  env.r_max = 0.0;
  return env;
}

ContinuousEnv make_pendulum_env() {
  constexpr double kDt = 0.05;
  constexpr double kG = 10.0;
  ContinuousEnv env;
  env.env_id = "pendulum";
  env.state_dim = 2;
  env.action_dim = 1;
  env.gamma = 0.99;
  env.max_steps = 200;
  // state = (angle from upright, angular velocity)
  env.mean_delta = [](const Vec& s, const Vec& a) {
    const double omega_next =
        std::clamp(s[1] + (1.5 * kG * std::sin(s[0]) + 3.0 * a[0]) * kDt, -8.0, 8.0);
    Vec d(2);
    d[0] = omega_next * kDt;
    d[1] = omega_next - s[1];
    return d;
  };
  env.mean_reward = [](const Vec& s, const Vec& a) {
    return -(s[0] * s[0] + 0.1 * s[1] * s[1] + 0.001 * a[0] * a[0]);
  };
  env.delta_noise_std = Vec::Constant(2, 0.01);
  env.reward_noise_std = 0.01;
  env.initial_state = [](Rng& rng) {
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    std::uniform_real_distribution<double> vel(-1.0, 1.0);
    Vec s(2);
    s[0] = angle(rng);
    s[1] = vel(rng);
    return s;
  };
  env.state_low = Vec(2);
  env.state_low << -std::numbers::pi, -8.0;
  env.state_high = -env.state_low;
  env.action_low = Vec::Constant(1, -2.0);
  env.action_high = Vec::Constant(1, 2.0);
  env.r_min = -(std::numbers::pi * std::numbers::pi + 6.4 + 0.004);
  env.r_max = 0.0;
  return env;
}

ContinuousEnv make_continuous_env(const std::string& name) {
  if (name == "linear1d") return make_linear1d_env();
  if (name == "pendulum") return make_pendulum_env();
  throw ConfigError("unknown continuous environment '" + name + "'");
}

TabularMdp make_chain_benchmark(double reward_std, double gamma, int max_steps) {
  TabularMdp mdp(5, 2, gamma);
  mdp.env_id = "chain5";
  mdp.reward_std = reward_std;
  mdp.max_steps = max_steps;
  constexpr int kPit = 4;
  constexpr int kGoal = 3;
  // action 0 at the start: safe self-loop
  mdp.p(0, 0, 0) = 1.0;
  mdp.reward_mean(0, 0) = 0.3;
  // action 1 advances along 0 -> 1 -> 2 -> goal, slipping in place 5% of the time
  for (int s = 0; s < kGoal; ++s) {
    mdp.p(s, 1, s + 1) = 0.95;
    mdp.p(s, 1, s) = 0.05;
  }
  mdp.p(1, 0, kPit) = 1.0;
  mdp.p(2, 0, kPit) = 1.0;
  mdp.p(kGoal, 1, kGoal) = 1.0;
  mdp.reward_mean(kGoal, 1) = 1.0;
  mdp.p(kGoal, 0, 0) = 1.0;
  mdp.p(kPit, 0, kPit) = 1.0;
  mdp.p(kPit, 1, kPit) = 1.0;
  mdp.validate();
  return mdp;
}

TabularMdp make_random_mdp(int n_states, int n_actions, double gamma, std::uint64_t seed,
                           double reward_std, double concentration, int max_steps) {
  TabularMdp mdp(n_states, n_actions, gamma);
  mdp.env_id = "random" + std::to_string(n_states);
  mdp.reward_std = reward_std;
  mdp.max_steps = max_steps;
  Rng rng = make_rng(seed, 11);
  std::gamma_distribution<double> gam(concentration, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      auto r = mdp.row(s, a);
      double total = 0.0;
      for (double& p : r) {
        p = gam(rng) + 1e-12;
        total += p;
      }
      for (double& p : r) p /= total;
      // Exact renormalisation of the last entry keeps row sums within 1e-12.
      double head = 0.0;
      for (int j = 0; j + 1 < n_states; ++j) head += r[j];
      r[n_states - 1] = 1.0 - head;
      mdp.reward_mean(s, a) = unif(rng);
    }
  }
  mdp.validate();
  return mdp;
}

TabularMdp make_tabular_env(const std::string& name) {
  if (name == "chain5") return make_chain_benchmark();
  if (name == "random5") return make_random_mdp(5, 2, 0.9, 0);
  if (name == "bandit2") {
    TabularMdp mdp(1, 2, 0.5);
    mdp.env_id = "bandit2";
    mdp.p(0, 0, 0) = 1.0;
    mdp.p(0, 1, 0) = 1.0;
    mdp.reward_mean(0, 0) = 0.0;
    mdp.reward_mean(0, 1) = 1.0;
    mdp.reward_std = 0.1;
    mdp.max_steps = 10;
    return mdp;
  }
  throw ConfigError("unknown tabular environment '" + name + "'");
}

// --- Data ---------------------------------------------------------------------

bool operator==(const Transition& x, const Transition& y) {
  return x.s == y.s && x.a == y.a && x.r == y.r && x.s_next == y.s_next && x.done == y.done;
}

Transition make_tabular_transition(int s, int a, double r, int s_next, bool done) {
  Transition t;
  t.s = Vec::Constant(1, s);
  t.a = Vec::Constant(1, a);
  t.r = r;
  t.s_next = Vec::Constant(1, s_next);
  t.done = done;
  return t;
}

Dataset Dataset::prefix(std::size_t n) const {
  Dataset out;
  out.header = header;
  n = std::min(n, transitions.size());
  out.transitions.assign(transitions.begin(), transitions.begin() + static_cast<long>(n));
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.header = header;
  out.transitions.reserve(indices.size());
  for (std::size_t i : indices) out.transitions.push_back(transitions.at(i));
  return out;
}

std::vector<double> Dataset::rewards() const {
  std::vector<double> r;
  r.reserve(transitions.size());
  for (const auto& t : transitions) r.push_back(t.r);
  return r;
}

std::vector<std::span<const Transition>> Dataset::episodes() const {
  std::vector<std::span<const Transition>> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < transitions.size(); ++i) {
    if (transitions[i].done) {
      out.emplace_back(transitions.data() + start, i + 1 - start);
      start = i + 1;
    }
  }
  return out;
}

// --- Policies -----------------------------------------------------------------

TabularPolicy TabularPolicy::uniform(int n_states, int n_actions) {
  return {Mat::Constant(n_states, n_actions, 1.0 / n_actions)};
}

TabularPolicy TabularPolicy::deterministic(std::span<const int> actions, int n_actions) {
  TabularPolicy pi{Mat::Zero(static_cast<long>(actions.size()), n_actions)};
  for (std::size_t s = 0; s < actions.size(); ++s) pi.probs(static_cast<long>(s), actions[s]) = 1.0;
  return pi;
}

TabularPolicy TabularPolicy::epsilon_greedy(const TabularPolicy& base, double eps) {
  const auto n_actions = static_cast<double>(base.probs.cols());
  return {(1.0 - eps) * base.probs + Mat::Constant(base.probs.rows(), base.probs.cols(), eps / n_actions)};
}

void TabularPolicy::validate() const {
  for (long s = 0; s < probs.rows(); ++s) {
    if ((probs.row(s).array() < 0.0).any() || std::abs(probs.row(s).sum() - 1.0) > 1e-12) {
      throw DataError("policy row " + std::to_string(s) + " is not a distribution");
    }
  }
}

int TabularPolicy::sample(int s, Rng& rng) const {
  const Vec row = probs.row(s).transpose();
  return sample_categorical(row, rng);
}

LinearPolicy LinearPolicy::zeros(const ContinuousEnv& env, double exploration_std) {
  return {Mat::Zero(env.action_dim, env.state_dim + 1), exploration_std, env.action_low,
          env.action_high};
}

Vec LinearPolicy::mean_action(const Vec& s) const {
  const long sd = weights.cols() - 1;
  Vec a = weights.leftCols(sd) * s + weights.col(sd);
  return a.cwiseMax(action_low).cwiseMin(action_high);
}

Vec LinearPolicy::sample(const Vec& s, Rng& rng) const {
  const long sd = weights.cols() - 1;
  Vec a = weights.leftCols(sd) * s + weights.col(sd);
  if (exploration_std > 0.0) {
    std::normal_distribution<double> normal(0.0, exploration_std);
    for (long i = 0; i < a.size(); ++i) a[i] += normal(rng);
  }
  return a.cwiseMax(action_low).cwiseMin(action_high);
}

// --- Operations ---------------------------------------------------------------

double ag_pmf(double p, long i, PmfKind kind) {
  if (!(p >= 0.0 && p < 1.0)) throw NumericError("ag_pmf: p must lie in [0, 1)");
  if (i < 0) throw NumericError("ag_pmf: index must be nonnegative");
  const double pi = (i == 0) ? 1.0 : std::pow(p, static_cast<double>(i));
  if (kind == PmfKind::kGeometric) return (1.0 - p) * pi;
  return (1.0 - p) * (1.0 - p) * pi * static_cast<double>(i + 1);
}

namespace {

Mat q_values(const TabularMdp& mdp, const Vec& v) {
  Mat q = mdp.reward_mean;
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      const auto r = mdp.row(s, a);
      double ev = 0.0;
      for (int j = 0; j < mdp.n_states; ++j) ev += r[j] * v[j];
      q(s, a) += mdp.gamma * ev;
    }
  }
  return q;
}

}  // namespace

ValueIterationResult value_iteration(const TabularMdp& mdp, double tol, PlanningGoal goal) {
  if (!(tol > 0.0)) throw NumericError("value_iteration: tol must be positive");
  const double sign = goal == PlanningGoal::kMaximize ? 1.0 : -1.0;
  // From v = 0 the k-th residual is at most gamma^k max|r|.
  const double scale = std::max(mdp.reward_mean.cwiseAbs().maxCoeff(), 1e-300);
  int cap = 2;
  if (mdp.gamma > 0.0) {
    const double needed = std::log(tol * (1.0 - mdp.gamma) / (2.0 * scale)) / std::log(mdp.gamma);
    cap = static_cast<int>(std::ceil(std::max(needed, 0.0))) + 100;
  }
  Vec v = Vec::Zero(mdp.n_states);
  Mat q;
  int it = 0;
  for (; it < cap; ++it) {
    q = sign * q_values(mdp, sign * v);
    Vec next = q.rowwise().maxCoeff();
    const double residual = (next - v).cwiseAbs().maxCoeff();
    v = std::move(next);
    if (residual <= tol * (1.0 - mdp.gamma) / 2.0 || mdp.gamma == 0.0) break;
  }
  if (it == cap) throw NumericError("value_iteration did not reach the requested tolerance");
  q = sign * q_values(mdp, sign * v);
  std::vector<int> greedy(static_cast<std::size_t>(mdp.n_states));
  for (int s = 0; s < mdp.n_states; ++s) {
    int best = 0;
    for (int a = 1; a < mdp.n_actions; ++a) {
      if (q(s, a) > q(s, best) + 1e-12) best = a;
    }
    greedy[static_cast<std::size_t>(s)] = best;
  }
  ValueIterationResult out;
  out.value = sign * v;
  out.policy = TabularPolicy::deterministic(greedy, mdp.n_actions);
  out.iterations = it + 1;
  return out;
}

Vec state_values(const TabularMdp& mdp, const TabularPolicy& policy) {
  if (policy.probs.rows() != mdp.n_states || policy.probs.cols() != mdp.n_actions) {
    throw DataError("policy dimensions do not match the MDP");
  }
  const int n = mdp.n_states;
  Mat p_pi = Mat::Zero(n, n);
  Vec r_pi = Vec::Zero(n);
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double w = policy.probs(s, a);
      if (w == 0.0) continue;
      r_pi[s] += w * mdp.reward_mean(s, a);
      const auto r = mdp.row(s, a);
      for (int j = 0; j < n; ++j) p_pi(s, j) += w * r[j];
    }
  }
  const Mat system = Mat::Identity(n, n) - mdp.gamma * p_pi;
  return system.partialPivLu().solve(r_pi);
}

double policy_evaluation(const TabularMdp& mdp, const TabularPolicy& policy) {
  return mdp.initial_dist.dot(state_values(mdp, policy));
}

double optimal_return(const TabularMdp& mdp) {
  return policy_evaluation(mdp, value_iteration(mdp).policy);
}

double pessimal_return(const TabularMdp& mdp) {
  return policy_evaluation(mdp, value_iteration(mdp, 1e-10, PlanningGoal::kMinimize).policy);
}

double true_regret(const TabularMdp& mdp, const TabularPolicy& policy) {
  const double regret = optimal_return(mdp) - policy_evaluation(mdp, policy);
  if (regret < 0.0 && regret > -1e-9) return 0.0;
  return regret;
}

double infinite_horizon_return(double return_finite, double gamma, int max_steps) {
  const double gs = std::pow(gamma, static_cast<double>(max_steps));
  if (gs >= 1.0) throw NumericError("infinite_horizon_return: gamma^s must be below 1");
  return return_finite * (1.0 + gs / (1.0 - gs));
}

double normalize_regret(double return_finite, double gamma, int max_steps, double r_min_norm,
                        double r_max_norm) {
  if (!(r_max_norm > r_min_norm)) throw NumericError("normalize_regret: r_max must exceed r_min");
  if (!(gamma > 0.0 && gamma < 1.0)) throw NumericError("normalize_regret: gamma must lie in (0, 1)");
  const double r_inf = infinite_horizon_return(return_finite, gamma, max_steps);
  const double big_max = r_max_norm / (1.0 - gamma);
  const double big_min = r_min_norm / (1.0 - gamma);
  return (big_max - r_inf) / (big_max - big_min);
}

double clip_unit(double x) { return std::clamp(x, 0.0, 1.0); }

std::pair<double, double> percentile_norm_constants(const Dataset& dataset) {
  if (dataset.empty()) throw DataError("percentile_norm_constants: empty dataset");
  const auto rewards = dataset.rewards();
  const double lo = percentile(rewards, 0.025);
  const double hi = percentile(rewards, 0.975);
  if (hi - lo <= 0.0) return {lo - kDegeneratePercentileEps, hi + kDegeneratePercentileEps};
  return {lo, hi};
}

Dataset sample_dataset(const TabularMdp& mdp, std::span<const TabularPolicy> behaviors,
                       std::size_t n, std::uint64_t seed) {
  if (behaviors.empty()) throw ConfigError("sample_dataset needs at least one behaviour policy");
  if (n < 1) throw ConfigError("sample_dataset needs n >= 1");
  Rng rng = make_rng(seed, 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset data;
  data.header = DatasetHeader{mdp.env_id, true,          mdp.n_states, mdp.n_actions,
                              mdp.gamma,  mdp.max_steps, "round_robin:" + std::to_string(behaviors.size()),
                              seed};
  data.transitions.reserve(n);
  std::size_t episode = 0;
  int t = 0;
  int s = sample_categorical(mdp.initial_dist, rng);
  while (data.transitions.size() < n) {
    const auto& pi = behaviors[episode % behaviors.size()];
    const int a = pi.sample(s, rng);
    const double r = mdp.reward_mean(s, a) + mdp.reward_std * noise(rng);
    const int s_next = sample_categorical(mdp.row(s, a), rng);
    ++t;
    const bool done = t >= mdp.max_steps;
    data.transitions.push_back(make_tabular_transition(s, a, r, s_next, done));
    s = s_next;
    if (done) {
      ++episode;
      t = 0;
      s = sample_categorical(mdp.initial_dist, rng);
    }
  }
  return data;
}

Dataset sample_dataset(const ContinuousEnv& env, std::span<const LinearPolicy> behaviors,
                       std::size_t n, std::uint64_t seed) {
  if (behaviors.empty()) throw ConfigError("sample_dataset needs at least one behaviour policy");
  if (n < 1) throw ConfigError("sample_dataset needs n >= 1");
  Rng rng = make_rng(seed, 1);
  Dataset data;
  data.header = DatasetHeader{env.env_id, false,         env.state_dim, env.action_dim,
                              env.gamma,  env.max_steps, "round_robin:" + std::to_string(behaviors.size()),
                              seed};
  data.transitions.reserve(n);
  std::size_t episode = 0;
  int t = 0;
  Vec s = env.initial_state(rng);
  while (data.transitions.size() < n) {
    const auto& pi = behaviors[episode % behaviors.size()];
    const Vec a = pi.sample(s, rng);
    auto step = env.step(s, a, rng);
    ++t;
    const bool done = t >= env.max_steps || env.terminal(step.s_next);
    data.transitions.push_back(Transition{s, a, step.r, step.s_next, done});
    s = step.s_next;
    if (done) {
      ++episode;
      t = 0;
      s = env.initial_state(rng);
    }
  }
  return data;
}

RolloutReturn rollout(const TabularMdp& mdp, const TabularPolicy& policy, double gamma,
                      int horizon, std::uint64_t seed) {
  if (horizon < 1) throw ConfigError("rollout horizon must be at least 1");
  Rng rng = make_rng(seed, 2);
  std::normal_distribution<double> noise(0.0, 1.0);
  RolloutReturn out;
  int s = sample_categorical(mdp.initial_dist, rng);
  double discount = 1.0;
  for (int t = 0; t < horizon; ++t) {
    const int a = policy.sample(s, rng);
    const double r = mdp.reward_mean(s, a) + mdp.reward_std * noise(rng);
    out.discounted += discount * r;
    out.undiscounted += r;
    ++out.steps;
    discount *= gamma;
    s = sample_categorical(mdp.row(s, a), rng);
  }
  return out;
}

RolloutReturn rollout(const ContinuousEnv& env, const LinearPolicy& policy, double gamma,
                      int horizon, std::uint64_t seed) {
  if (horizon < 1) throw ConfigError("rollout horizon must be at least 1");
  Rng rng = make_rng(seed, 2);
  RolloutReturn out;
  Vec s = env.initial_state(rng);
  double discount = 1.0;
  for (int t = 0; t < horizon; ++t) {
    const Vec a = policy.sample(s, rng);
    auto step = env.step(s, a, rng);
    out.discounted += discount * step.r;
    out.undiscounted += step.r;
    ++out.steps;
    discount *= gamma;
    s = step.s_next;
    if (env.terminal(s)) break;
  }
  return out;
}

int monte_carlo_horizon(double gamma, double rel_tol) {
  if (gamma <= 0.0) return 1;
  return std::max(1, static_cast<int>(std::ceil(std::log(rel_tol) / std::log(gamma))));
}

std::vector<TabularPolicy> default_behaviors(const TabularMdp& mdp) {
  return {TabularPolicy::uniform(mdp.n_states, mdp.n_actions),
          TabularPolicy::epsilon_greedy(value_iteration(mdp).policy, 0.05)};
}

}  // namespace sorel
