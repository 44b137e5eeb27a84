#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "bound_trial.hpp"
#include "doctest.h"
#include "sorel/regret.hpp"
#include "sorel/special.hpp"
#include "support.hpp"

using namespace sorel;

TEST_CASE("regret bound examples") {
  CHECK(regret_bound_thm1(0.0, 0.9, 0.0, 1.0) == 0.0);
  CHECK(regret_bound_thm1(1e6, 0.9, 0.0, 1.0) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(regret_bound_thm1(std::numeric_limits<double>::infinity(), 0.9, 0.0, 1.0) ==
        doctest::Approx(20.0));
  CHECK(regret_bound_thm1(std::log(2.0), 0.0, 0.0, 1.0) == doctest::Approx(1.41421356).epsilon(1e-8));
  CHECK(policy_value_gap_bound(std::log(2.0), 0.0, 0.0, 1.0) ==
        doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK_THROWS_AS(regret_bound_thm1(-1e-3, 0.9, 0.0, 1.0), NumericError);
  CHECK_THROWS_AS(regret_bound_thm1(0.1, 1.0, 0.0, 1.0), NumericError);
  CHECK_THROWS_AS(regret_bound_thm1(0.1, 0.9, 1.0, 0.0), NumericError);
}

TEST_CASE("regret bound is monotone in the PIL and in gamma") {
  double prev = -1.0;
  for (double pil = 0.0; pil < 5.0; pil += 0.05) {
    const double b = regret_bound_thm1(pil, 0.9, -1.0, 2.0);
    CHECK(b >= prev);
    CHECK(b <= 2.0 * 3.0 / 0.1 + 1e-12);
    prev = b;
  }
  for (double pil : {0.001, 0.1, 1.0}) {
    double last = -1.0;
    for (double g : {0.0, 0.5, 0.9, 0.99, 0.999}) {
      const double b = regret_bound_thm1(pil, g, 0.0, 1.0);
      CHECK(b > last);
      last = b;
    }
  }
}

TEST_CASE("bound curves decrease in N and increase in d") {
  const auto grid = log_grid(1.0, 1e9, 20);
  for (double g : {0.9, 0.99, 0.999}) {
    std::vector<double> prev_curve;
    for (int d : {10, 100, 1000, 10000}) {
      const auto curve = regret_curve_thm2(1.0, d, g, grid);
      REQUIRE(curve.values.size() == grid.size());
      for (std::size_t i = 1; i < curve.values.size(); ++i) CHECK(curve.values[i] <= curve.values[i - 1]);
      for (double v : curve.values) CHECK((v >= 0.0 && v <= 1.0));
      if (!prev_curve.empty()) {
        for (std::size_t i = 0; i < grid.size(); ++i) CHECK(curve.values[i] >= prev_curve[i]);
      }
      prev_curve = curve.values;
    }
  }
  // Hand value: 2 * 0.5 * sqrt(1 - exp(-1)) at C d / ((1 - gamma) N) = 1.
  const auto one = regret_curve_thm2(1.0, 10, 0.9, {100.0});
  CHECK(one.values[0] == doctest::Approx(std::sqrt(1.0 - std::exp(-1.0))).epsilon(1e-14));
  const auto alt = regret_curve_thm2(1.0, 10, 0.9, {100.0}, 0.5, CurveForm::kExpSqrt);
  CHECK(alt.values[0] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("first N below a threshold grows with d and gamma") {
  const auto grid = log_grid(1.0, 1e9, 20);
  double prev = 0.0;
  for (int d : {10, 100, 1000, 10000}) {
    const auto n = first_n_below(regret_curve_thm2(1.0, d, 0.99, grid), 0.25);
    REQUIRE(n.has_value());
    CHECK(*n > prev);
    prev = *n;
  }
  prev = 0.0;
  for (double g : {0.9, 0.99, 0.999}) {
    const auto n = first_n_below(regret_curve_thm2(1.0, 100, g, grid), 0.25);
    REQUIRE(n.has_value());
    CHECK(*n > prev);
    prev = *n;
  }
  CHECK_FALSE(first_n_below(regret_curve_thm2(1.0, 10, 0.9, {1.0, 2.0}), 1e-9).has_value());
}

TEST_CASE("log grid endpoints and spacing") {
  const auto g = log_grid(1.0, 1e3, 2);
  REQUIRE(g.size() == 7);
  CHECK(g.front() == 1.0);
  CHECK(g.back() == doctest::Approx(1e3).epsilon(1e-14));
  for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] / g[i - 1] == doctest::Approx(std::sqrt(10.0)));
  CHECK(log_grid(5.0, 5.0, 3).size() == 1);
  CHECK_THROWS_AS(log_grid(0.0, 10.0, 3), ConfigError);
  CHECK_THROWS_AS(log_grid(10.0, 1.0, 3), ConfigError);
  CHECK_THROWS_AS(log_grid(1.0, 10.0, 0), ConfigError);
  CHECK_THROWS_AS(regret_curve_thm2(0.0, 10, 0.9, {1.0}), ConfigError);
  CHECK_THROWS_AS(regret_curve_thm2(1.0, 0, 0.9, {1.0}), ConfigError);
  CHECK_THROWS_AS(regret_curve_thm2(1.0, 10, 0.9, {0.0}), ConfigError);
}

TEST_CASE("approximate regret statistics") {
  const std::vector<double> r = {1.0, 2.0, 3.0};
  CHECK(approx_regret(RegretStat::kMedian, r, 4.0).value == 2.0);
  CHECK(approx_regret(RegretStat::kMean, r, 4.0).value == 2.0);
  CHECK(approx_regret(RegretStat::kMax, r, 4.0).value == 3.0);
  CHECK(approx_regret(RegretStat::kMin, r, 4.0).value == 1.0);
  CHECK(approx_regret(RegretStat::kVariance2, r, 4.0).value == doctest::Approx(2.0));
  CHECK(approx_regret(RegretStat::kCombined, r, 4.0).value == doctest::Approx(2.0));
  const std::vector<double> flat(7, 2.5);
  for (auto s : kAllRegretStats) CHECK(approx_regret(s, flat, 2.5).value == 0.0);
  CHECK_THROWS_AS(approx_regret(RegretStat::kMedian, {}, 1.0), DataError);
  CHECK(approx_regret(RegretStat::kVariance2, {1.0}, 1.0).value == 0.0);
  for (auto s : kAllRegretStats) CHECK(parse_regret_stat(regret_stat_name(s)) == s);
  CHECK_THROWS_AS(parse_regret_stat("mode"), ConfigError);
}

TEST_CASE("approximate regret ordering and permutation invariance") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(3.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> xs(static_cast<std::size_t>(2 + trial % 17));
    for (auto& x : xs) x = nd(rng);
    const double rmax = 5.0;
    const double lo = approx_regret(RegretStat::kMin, xs, rmax).value;
    const double mean = approx_regret(RegretStat::kMean, xs, rmax).value;
    const double med = approx_regret(RegretStat::kMedian, xs, rmax).value;
    const double hi = approx_regret(RegretStat::kMax, xs, rmax).value;
    CHECK(lo <= mean + 1e-12);
    CHECK(mean <= hi + 1e-12);
    CHECK(lo <= med);
    CHECK(med <= hi);
    CHECK(approx_regret(RegretStat::kCombined, xs, rmax).value >=
          approx_regret(RegretStat::kVariance2, xs, rmax).value);
    auto shuffled = xs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (auto s : kAllRegretStats) {
      CHECK(approx_regret(s, shuffled, rmax).value ==
            doctest::Approx(approx_regret(s, xs, rmax).value).epsilon(1e-12));
    }
  }
}

TEST_CASE("unbiased variance matches the two-pass formula") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-4.0, 9.0);
  std::vector<double> xs(50);
  for (auto& x : xs) x = u(rng);
  const auto ms = test::mean_se(xs);
  CHECK(unbiased_variance(xs) == doctest::Approx(ms.se * ms.se * 50.0).epsilon(1e-12));
  CHECK(unbiased_variance({4.0}) == 0.0);
}

namespace {

Transition step(double r, bool done) { return make_tabular_transition(0, 0, r, 0, done); }

}  // namespace

TEST_CASE("optimistic return estimate from the dataset") {
  Dataset d;
  d.header.gamma = 0.5;
  d.header.max_steps = 1;
  d.transitions = {step(1.0, true)};
  CHECK(r_max_hat(d, 0.5, 1) == 2.0);

  // Episodes of two steps: returns 1 + 0.5 * 1 = 1.5 and 3 + 0.5 * 0 = 3,
  // converted with gamma^2 = 0.25: x / 0.75.
  d.transitions = {step(1.0, false), step(1.0, true), step(3.0, false), step(0.0, true),
                   step(100.0, false)};
  CHECK(r_max_hat(d, 0.5, 2) == doctest::Approx(3.0 / 0.75).epsilon(1e-15));
  Dataset partial;
  partial.transitions = {step(1.0, false)};
  CHECK_THROWS_AS(r_max_hat(partial, 0.5, 2), DataError);
}

TEST_CASE("predictive returns of a concentrated posterior") {
  const TabularMdp mdp = make_chain_benchmark();
  const auto vi = value_iteration(mdp);
  const auto post = ConjugatePosterior::concentrated_at(mdp, 1e12);
  const auto returns = predictive_returns(post, vi.policy, 20, 4);
  REQUIRE(returns.size() == 20);
  for (double r : returns) CHECK(r == doctest::Approx(optimal_return(mdp)).epsilon(1e-4));
  CHECK(predictive_returns(post, vi.policy, 1, 4).size() == 1);
  CHECK_THROWS_AS(predictive_returns(post, vi.policy, 0, 4), ConfigError);
  CHECK(predictive_returns(post, vi.policy, 5, 9) == predictive_returns(post, vi.policy, 5, 9));
}

TEST_CASE("predictive returns from independent seeds agree within 3 SE") {
  std::mt19937_64 rng(21);
  const TabularMdp mdp = test::random_test_mdp(rng, 4, 2);
  const TabularPolicy pi = test::random_policy(4, 2, rng);
  const TabularPolicy behavior = TabularPolicy::uniform(4, 2);
  const auto data = sample_dataset(mdp, std::span(&behavior, 1), 60, 5);
  const auto post = conjugate_update(ConjugatePosterior(TabularEnvSpec::of(mdp), {}), data);
  const auto a = test::mean_se(predictive_returns(post, pi, 4000, 1));
  const auto b = test::mean_se(predictive_returns(post, pi, 4000, 2));
  CHECK(std::abs(a.mean - b.mean) <= 3.0 * std::hypot(a.se, b.se));
}

TEST_CASE("per-policy value gap stays within the PIL bound") {
  int holds = 0;
  const int trials = 20;
  for (int i = 0; i < trials; ++i) {
    const auto t = test::run_bound_trial(1000 + static_cast<std::uint64_t>(i), 2000);
    CHECK(t.pil >= 0.0);
    CHECK(t.bound >= 0.0);
    holds += t.holds() ? 1 : 0;
  }
  CHECK(holds >= trials - 1);
}
