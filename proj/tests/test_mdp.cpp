#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "sorel/mdp.hpp"
#include "support.hpp"

using namespace sorel;

namespace {

TabularMdp single_state(double reward, double gamma) {
  TabularMdp mdp(1, 1, gamma);
  mdp.p(0, 0, 0) = 1.0;
  mdp.reward_mean(0, 0) = reward;
  return mdp;
}

}  // namespace

TEST_CASE("arithmetico-geometric pmf values and normalisation") {
  CHECK(ag_pmf(0.5, 0) == 0.25);
  CHECK(ag_pmf(0.0, 0) == 1.0);
  CHECK(ag_pmf(0.0, 3) == 0.0);
  for (double p : {0.1, 0.5, 0.9, 0.99}) {
    double ag = 0.0, geo = 0.0;
    for (long i = 0; i <= 10000; ++i) {
      ag += ag_pmf(p, i);
      geo += ag_pmf(p, i, PmfKind::kGeometric);
    }
    CHECK(std::abs(ag - 1.0) < 1e-9);
    CHECK(std::abs(geo - 1.0) < 1e-9);
  }
}

TEST_CASE("value iteration on closed-form cases") {
  CHECK(value_iteration(single_state(1.0, 0.5)).value[0] == doctest::Approx(2.0).epsilon(1e-9));

  TabularMdp chain(2, 1, 0.0);
  chain.p(0, 0, 1) = 1.0;
  chain.p(1, 0, 1) = 1.0;
  chain.reward_mean(0, 0) = 0.0;
  chain.reward_mean(1, 0) = 1.0;
  const auto vi = value_iteration(chain);
  CHECK(vi.value[0] == doctest::Approx(0.0));
  CHECK(vi.value[1] == doctest::Approx(1.0));
}

TEST_CASE("value iteration matches brute-force enumeration of deterministic policies") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 40; ++trial) {
    const int n_s = 2 + trial % 3;
    const int n_a = 2 + trial % 2;
    const TabularMdp mdp = test::random_test_mdp(rng, n_s, n_a);
    const auto vi = value_iteration(mdp);
    const double best = test::brute_force_optimal_return(mdp);
    CHECK(optimal_return(mdp) == doctest::Approx(best).epsilon(1e-8));
    CHECK(policy_evaluation(mdp, vi.policy) == doctest::Approx(best).epsilon(1e-8));
    for (double j : test::enumerate_deterministic_returns(mdp)) CHECK(optimal_return(mdp) >= j - 1e-9);
    CHECK(pessimal_return(mdp) == doctest::Approx(test::brute_force_pessimal_return(mdp)).epsilon(1e-8));
  }
}

TEST_CASE("value iteration breaks ties towards the lowest action") {
  TabularMdp mdp(1, 3, 0.9);
  for (int a = 0; a < 3; ++a) {
    mdp.p(0, a, 0) = 1.0;
    mdp.reward_mean(0, a) = 1.0;
  }
  const auto vi = value_iteration(mdp);
  CHECK(vi.policy.probs(0, 0) == 1.0);
}

TEST_CASE("policy evaluation on closed forms and against iterated backups") {
  const TabularMdp one = single_state(1.0, 0.5);
  CHECK(policy_evaluation(one, TabularPolicy::uniform(1, 1)) == doctest::Approx(2.0));
  const TabularMdp loop = single_state(0.7, 0.95);
  CHECK(policy_evaluation(loop, TabularPolicy::uniform(1, 1)) == doctest::Approx(0.7 / 0.05));

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const TabularMdp mdp = test::random_test_mdp(rng, 5, 3);
    const TabularPolicy pi = test::random_policy(5, 3, rng);
    CHECK(policy_evaluation(mdp, pi) == doctest::Approx(test::iterate_return(mdp, pi.probs)).epsilon(1e-10));
  }
}

TEST_CASE("rollout means agree with exact policy evaluation") {
  std::mt19937_64 rng(8);
  const TabularMdp mdp = test::random_test_mdp(rng, 4, 2, 0.9, 0.3);
  const TabularPolicy pi = test::random_policy(4, 2, rng);
  const int horizon = monte_carlo_horizon(mdp.gamma, 1e-4);
  std::vector<double> returns;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    returns.push_back(rollout(mdp, pi, mdp.gamma, horizon, seed).discounted);
  }
  const auto ms = test::mean_se(returns);
  CHECK(std::abs(ms.mean - policy_evaluation(mdp, pi)) <= 3.0 * ms.se);
}

TEST_CASE("rollout edge cases") {
  TabularMdp mdp(2, 2, 0.9);
  mdp.p(0, 0, 1) = 1.0;
  mdp.p(0, 1, 0) = 1.0;
  mdp.p(1, 0, 1) = 1.0;
  mdp.p(1, 1, 1) = 1.0;
  mdp.reward_mean << 0.25, 0.5, 1.0, 2.0;
  const std::vector<int> actions = {1, 0};
  const auto pi = TabularPolicy::deterministic(actions, 2);
  const auto one = rollout(mdp, pi, 0.9, 1, 7);
  CHECK(one.discounted == 0.5);
  CHECK(one.steps == 1);
  CHECK(rollout(mdp, pi, 0.9, 30, 1).discounted == rollout(mdp, pi, 0.9, 30, 99).discounted);
}

TEST_CASE("true regret against enumeration and its invariances") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    TabularMdp mdp = test::random_test_mdp(rng, 3, 2);
    const auto uniform = TabularPolicy::uniform(3, 2);
    const double expected = test::brute_force_optimal_return(mdp) - test::iterate_return(mdp, uniform.probs);
    CHECK(true_regret(mdp, uniform) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(true_regret(mdp, value_iteration(mdp).policy) == 0.0);
    const TabularPolicy pi = test::random_policy(3, 2, rng);
    CHECK(true_regret(mdp, pi) >= 0.0);
    const double before = true_regret(mdp, pi);
    mdp.reward_mean.array() += 3.5;
    CHECK(true_regret(mdp, pi) == doctest::Approx(before).epsilon(1e-9));
  }
}

TEST_CASE("infinite-horizon conversion and regret normalisation") {
  CHECK(infinite_horizon_return(1.0, 0.5, 1) == 2.0);
  const double gamma = 0.99;
  const int steps = 200;
  const double r_min = -13.3, r_max = -0.2;
  const double big_max = r_max / (1.0 - gamma);
  const double big_min = r_min / (1.0 - gamma);
  const double conv = 1.0 - std::pow(gamma, steps);
  CHECK(normalize_regret(big_max * conv, gamma, steps, r_min, r_max) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(normalize_regret(big_min * conv, gamma, steps, r_min, r_max) == doctest::Approx(1.0).epsilon(1e-12));
  double prev = 2.0;
  for (double ret = big_min * conv; ret <= big_max * conv; ret += 25.0) {
    const double nr = normalize_regret(ret, gamma, steps, r_min, r_max);
    CHECK(nr < prev);
    prev = nr;
  }
  CHECK(clip_unit(-0.3) == 0.0);
  CHECK(clip_unit(1.7) == 1.0);
  CHECK_THROWS_AS(normalize_regret(0.0, 0.9, 10, 1.0, 1.0), NumericError);
}

TEST_CASE("percentile normalisation constants") {
  Dataset d;
  d.header.discrete = true;
  d.header.state_dim = 1;
  d.header.action_dim = 1;
  for (int i = 0; i < 5; ++i) d.transitions.push_back(make_tabular_transition(0, 0, 1.0, 0, false));
  auto [lo, hi] = percentile_norm_constants(d);
  CHECK(lo == 1.0 - 1e-6);
  CHECK(hi == 1.0 + 1e-6);

  d.transitions.resize(1);
  std::tie(lo, hi) = percentile_norm_constants(d);
  CHECK(hi - lo == doctest::Approx(2e-6));

  d.transitions.clear();
  for (int i = 999; i >= 0; --i) d.transitions.push_back(make_tabular_transition(0, 0, i, 0, false));
  std::tie(lo, hi) = percentile_norm_constants(d);
  CHECK(lo == doctest::Approx(24.975));
  CHECK(hi == doctest::Approx(974.025));
}

TEST_CASE("percentile fallback reproduces the pendulum constants on a heavy-tailed sample") {
  // 1001 rewards: positions 25 and 975 of the sorted sample hold the target
  // percentiles; the tails beyond them are extreme.
  Dataset d;
  d.header.discrete = true;
  d.header.state_dim = 1;
  d.header.action_dim = 1;
  std::vector<double> rewards;
  for (int i = 0; i < 25; ++i) rewards.push_back(-1000.0 - i * 50.0);
  rewards.push_back(-13.2);
  for (int i = 0; i < 949; ++i) rewards.push_back(-13.2 + 13.04 * (i + 1) / 950.0);
  rewards.push_back(-0.16);
  for (int i = 0; i < 25; ++i) rewards.push_back(5.0 + i * 100.0);
  REQUIRE(rewards.size() == 1001);
  for (double r : rewards) d.transitions.push_back(make_tabular_transition(0, 0, r, 0, false));
  const auto [lo, hi] = percentile_norm_constants(d);
  CHECK(lo == doctest::Approx(-13.2).epsilon(1e-12));
  CHECK(hi == doctest::Approx(-0.16).epsilon(1e-12));
}

TEST_CASE("dataset sampling") {
  TabularMdp mdp(2, 1, 0.9);
  mdp.p(0, 0, 0) = 0.3;
  mdp.p(0, 0, 1) = 0.7;
  mdp.p(1, 0, 0) = 0.6;
  mdp.p(1, 0, 1) = 0.4;
  mdp.reward_std = 0.1;
  mdp.max_steps = 40;
  const std::vector<TabularPolicy> behaviors = {TabularPolicy::uniform(2, 1)};

  const Dataset one = sample_dataset(mdp, behaviors, 1, 4);
  REQUIRE(one.size() == 1);
  CHECK(one.transitions[0].state_index() == 0);

  CHECK(sample_dataset(mdp, behaviors, 500, 9) == sample_dataset(mdp, behaviors, 500, 9));
  CHECK_FALSE(sample_dataset(mdp, behaviors, 500, 9) == sample_dataset(mdp, behaviors, 500, 10));

  const Dataset big = sample_dataset(mdp, behaviors, 100000, 1);
  double counts[2][2] = {{0, 0}, {0, 0}};
  for (const auto& t : big.transitions) counts[t.state_index()][t.next_state_index()] += 1.0;
  for (int s = 0; s < 2; ++s) {
    const double total = counts[s][0] + counts[s][1];
    for (int j = 0; j < 2; ++j) CHECK(std::abs(counts[s][j] / total - mdp.p(s, 0, j)) < 0.01);
  }
  for (std::size_t i = 0; i < big.size(); ++i) {
    CHECK(big.transitions[i].done == ((i + 1) % 40 == 0));
  }
}

TEST_CASE("round-robin behaviour assignment") {
  TabularMdp mdp(1, 2, 0.9);
  mdp.p(0, 0, 0) = 1.0;
  mdp.p(0, 1, 0) = 1.0;
  mdp.max_steps = 5;
  const std::vector<int> a0 = {0}, a1 = {1};
  const std::vector<TabularPolicy> behaviors = {TabularPolicy::deterministic(a0, 2),
                                                TabularPolicy::deterministic(a1, 2)};
  const Dataset d = sample_dataset(mdp, behaviors, 22, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(d.transitions[i].action_index() == static_cast<int>((i / 5) % 2));
  }
  CHECK(d.header.behavior == "round_robin:2");
  CHECK(d.episodes().size() == 4);
}

TEST_CASE("validation rejects malformed MDPs") {
  TabularMdp mdp = single_state(1.0, 0.5);
  CHECK_NOTHROW(mdp.validate());
  mdp.p(0, 0, 0) = 0.9;
  CHECK_THROWS_AS(mdp.validate(), DataError);
  mdp.p(0, 0, 0) = 1.0;
  mdp.gamma = 1.0;
  CHECK_THROWS_AS(mdp.validate(), DataError);
}

TEST_CASE("chain benchmark prefers walking to the goal") {
  const TabularMdp chain = make_chain_benchmark();
  CHECK_NOTHROW(chain.validate());
  CHECK(chain.n_states == 5);
  CHECK(chain.n_actions == 2);
  const auto vi = value_iteration(chain);
  CHECK(optimal_return(chain) > 0.3 / (1.0 - chain.gamma));
  CHECK(pessimal_return(chain) < optimal_return(chain));
  CHECK(vi.value[3] == doctest::Approx(vi.value.maxCoeff()));
}

TEST_CASE("continuous environments clamp states and actions") {
  const ContinuousEnv env = make_continuous_env("linear1d");
  Vec s(1), a(1);
  s << 5.0;
  a << -3.0;
  CHECK(env.clamp_state(s)[0] == env.state_high[0]);
  CHECK(env.clamp_action(a)[0] == env.action_low[0]);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    s = env.initial_state(rng);
    const auto st = env.step(s, a, rng);
    CHECK(st.s_next[0] <= env.state_high[0]);
    CHECK(st.s_next[0] >= env.state_low[0]);
  }
  const ContinuousEnv pend = make_continuous_env("pendulum");
  CHECK(pend.state_dim == 2);
  CHECK_THROWS_AS(make_continuous_env("nope"), ConfigError);
}
