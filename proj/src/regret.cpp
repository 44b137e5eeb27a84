#include "sorel/regret.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sorel/special.hpp"

namespace sorel {

namespace {

double max_regret(double gamma, double r_min, double r_max) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw NumericError("gamma must lie in [0, 1)");
  if (!(r_max >= r_min)) throw NumericError("r_max must be at least r_min");
  return (r_max - r_min) / (1.0 - gamma);
}

}  // namespace

double regret_bound_thm1(double pil, double gamma, double r_min, double r_max) {
  return 2.0 * policy_value_gap_bound(pil, gamma, r_min, r_max);
}

double policy_value_gap_bound(double pil, double gamma, double r_min, double r_max) {
  if (!(pil >= 0.0)) throw NumericError("PIL must be nonnegative");
  const double r = max_regret(gamma, r_min, r_max);
  if (std::isinf(pil)) return r;
  return r * std::sqrt(-std::expm1(-pil / (1.0 - gamma)));
}

BoundCurve regret_curve_thm2(double c, int d, double gamma, std::vector<double> n_grid,
                             double r_max, CurveForm form) {
  if (!(c > 0.0)) throw ConfigError("curve constant C must be positive");
  if (d < 1) throw ConfigError("curve dimension d must be at least 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  BoundCurve curve{c, d, gamma, r_max, std::move(n_grid), {}};
  curve.values.reserve(curve.n_grid.size());
  for (double n : curve.n_grid) {
    if (!(n > 0.0)) throw ConfigError("curve N values must be positive");
    const double x = c * d / ((1.0 - gamma) * n);
    const double v = form == CurveForm::kSqrtExp ? 2.0 * r_max * std::sqrt(-std::expm1(-x))
                                                 : 2.0 * r_max * std::exp(1.0 - std::sqrt(x));
    curve.values.push_back(v);
  }
  return curve;
}

std::optional<double> first_n_below(const BoundCurve& curve, double threshold) {
  for (std::size_t i = 0; i < curve.values.size(); ++i) {
    if (curve.values[i] < threshold) return curve.n_grid[i];
  }
  return std::nullopt;
}

std::vector<double> log_grid(double lo, double hi, int per_decade) {
  if (!(lo > 0.0 && hi >= lo) || per_decade < 1) throw ConfigError("bad log grid specification");
  std::vector<double> grid;
  const double l0 = std::log10(lo);
  const double l1 = std::log10(hi);
  const int steps = static_cast<int>(std::round((l1 - l0) * per_decade));
  for (int i = 0; i <= steps; ++i) grid.push_back(std::pow(10.0, l0 + static_cast<double>(i) / per_decade));
  return grid;
}

std::vector<double> predictive_returns(const ConjugatePosterior& post, const TabularPolicy& policy,
                                       int k_samples, std::uint64_t seed) {
  if (k_samples < 1) throw ConfigError("k_samples must be at least 1");
  Rng rng = make_rng(seed, 21);
  std::vector<double> returns;
  returns.reserve(static_cast<std::size_t>(k_samples));
  for (int k = 0; k < k_samples; ++k) {
    returns.push_back(policy_evaluation(sample_posterior_mdp(post, rng), policy));
  }
  return returns;
}

std::vector<double> predictive_returns(const EnsembleModel& model, const LinearPolicy& policy,
                                       const ModelRolloutSpec& spec, std::uint64_t seed) {
  if (spec.initial_states.empty()) throw DataError("model rollouts need start states");
  if (spec.horizon < 1 || spec.episodes_per_member < 1) throw ConfigError("bad rollout spec");
  std::vector<double> returns;
  for (std::size_t e = 0; e < model.elites.size(); ++e) {
    // Same stream for every member and every caller with this seed.
    Rng rng = make_rng(seed, 31);
    std::uniform_int_distribution<std::size_t> pick(0, spec.initial_states.size() - 1);
    double total = 0.0;
    for (int ep = 0; ep < spec.episodes_per_member; ++ep) {
      Vec s = spec.initial_states[pick(rng)];
      double discount = 1.0;
      double ret = 0.0;
      for (int t = 0; t < spec.horizon; ++t) {
        const Vec a = policy.sample(s, rng);
        const SampledStep step = sample_member(model, model.elites[e], s, a, rng);
        ret += discount * step.r;
        discount *= spec.gamma;
        s = step.s_next;
      }
      total += ret;
    }
    returns.push_back(infinite_horizon_return(total / spec.episodes_per_member, spec.gamma,
                                              spec.horizon));
  }
  return returns;
}

std::vector<Vec> episode_start_states(const Dataset& data) {
  std::vector<Vec> starts;
  bool at_start = true;
  for (const auto& t : data.transitions) {
    if (at_start) starts.push_back(t.s);
    at_start = t.done;
  }
  return starts;
}

double r_max_hat(const Dataset& data, double gamma, int max_steps) {
  const auto episodes = data.episodes();
  if (episodes.empty()) throw DataError("r_max_hat: dataset has no completed episode");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& ep : episodes) {
    double ret = 0.0;
    double discount = 1.0;
    for (const auto& t : ep) {
      ret += discount * t.r;
      discount *= gamma;
    }
    best = std::max(best, infinite_horizon_return(ret, gamma, max_steps));
  }
  return best;
}

const char* regret_stat_name(RegretStat stat) {
  switch (stat) {
    case RegretStat::kMedian:
      return "median";
    case RegretStat::kMean:
      return "mean";
    case RegretStat::kMax:
      return "max";
    case RegretStat::kMin:
      return "min";
    case RegretStat::kVariance2:
      return "variance2";
    case RegretStat::kCombined:
      return "combined";
  }
  return "unknown";
}

RegretStat parse_regret_stat(const std::string& name) {
  for (RegretStat s : kAllRegretStats) {
    if (name == regret_stat_name(s)) return s;
  }
  throw ConfigError("unknown regret statistic '" + name + "'");
}

double unbiased_variance(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double n = static_cast<double>(values.size());
  const double mean = pairwise_sum(values) / n;
  std::vector<double> sq;
  sq.reserve(values.size());
  for (double v : values) sq.push_back((v - mean) * (v - mean));
  return pairwise_sum(sq) / (n - 1.0);
}

RegretEstimate approx_regret(RegretStat stat, const std::vector<double>& returns, double r_max_hat) {
  if (returns.empty()) throw DataError("approx_regret: empty returns sample");
  RegretEstimate est;
  est.stat = stat;
  est.returns_sample = returns;
  est.r_max_hat = r_max_hat;
  const auto [lo, hi] = std::minmax_element(returns.begin(), returns.end());
  switch (stat) {
    case RegretStat::kMedian:
      est.value = r_max_hat - median(returns);
      break;
    case RegretStat::kMean:
      est.value = r_max_hat - pairwise_sum(returns) / static_cast<double>(returns.size());
      break;
    case RegretStat::kMax:
      est.value = r_max_hat - *lo;
      break;
    case RegretStat::kMin:
      est.value = r_max_hat - *hi;
      break;
    case RegretStat::kVariance2:
      est.value = 2.0 * std::sqrt(unbiased_variance(returns));
      break;
    case RegretStat::kCombined:
      est.value = std::max(2.0 * std::sqrt(unbiased_variance(returns)), r_max_hat - median(returns));
      break;
  }
  return est;
}

}  // namespace sorel
