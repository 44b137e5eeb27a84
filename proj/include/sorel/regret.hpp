#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sorel/ensemble.hpp"
#include "sorel/posterior.hpp"

namespace sorel {

/// 2 R_max sqrt(1 - exp(-pil / (1 - gamma))), R_max = (r_max - r_min) / (1 - gamma).
double regret_bound_thm1(double pil, double gamma, double r_min, double r_max);

/// Half of the above: the bound on |J^pi(M*) - J^pi_Bayes| for a fixed policy.
double policy_value_gap_bound(double pil, double gamma, double r_min, double r_max);

enum class CurveForm {
  /// 2 R sqrt(1 - exp(-C d / ((1 - gamma) N))); vanishes as N grows.
  kSqrtExp,
  /// 2 R exp(1 - sqrt(C d / ((1 - gamma) N))); kept for comparison.
  kExpSqrt,
};

struct BoundCurve {
  double c = 1.0;
  int d = 1;
  double gamma = 0.99;
  double r_max = 0.5;
  std::vector<double> n_grid;
  std::vector<double> values;
};

BoundCurve regret_curve_thm2(double c, int d, double gamma, std::vector<double> n_grid,
                             double r_max = 0.5, CurveForm form = CurveForm::kSqrtExp);

/// First grid N with value < threshold, or nullopt.
std::optional<double> first_n_below(const BoundCurve& curve, double threshold);

/// Log-spaced grid from lo to hi (inclusive) with `per_decade` points per decade.
std::vector<double> log_grid(double lo, double hi, int per_decade);

/// Policy value in each of k posterior-sampled MDPs (exact evaluation).
std::vector<double> predictive_returns(const ConjugatePosterior& post, const TabularPolicy& policy,
                                       int k_samples, std::uint64_t seed);

struct ModelRolloutSpec {
  /// Start states, sampled uniformly per episode.
  std::vector<Vec> initial_states;
  int horizon = 100;
  double gamma = 0.99;
  int episodes_per_member = 64;
};

/// One return per elite member: the mean over episodes rolled out in that
/// member's dynamics, converted to an infinite-horizon value.
std::vector<double> predictive_returns(const EnsembleModel& model, const LinearPolicy& policy,
                                       const ModelRolloutSpec& spec, std::uint64_t seed);

/// Start states of every episode in the dataset (the first transition and
/// every transition following a done flag).
std::vector<Vec> episode_start_states(const Dataset& data);

/// Best per-episode discounted return over completed episodes, converted to
/// an infinite-horizon value with s = max_steps. Throws DataError when no
/// episode is complete.
double r_max_hat(const Dataset& data, double gamma, int max_steps);

enum class RegretStat { kMedian, kMean, kMax, kMin, kVariance2, kCombined };
const char* regret_stat_name(RegretStat stat);
RegretStat parse_regret_stat(const std::string& name);
inline constexpr RegretStat kAllRegretStats[] = {RegretStat::kMedian, RegretStat::kMean,
                                                 RegretStat::kMax,    RegretStat::kMin,
                                                 RegretStat::kVariance2, RegretStat::kCombined};

struct RegretEstimate {
  RegretStat stat = RegretStat::kMedian;
  double value = 0.0;
  std::vector<double> returns_sample;
  double r_max_hat = 0.0;
  std::optional<double> bound_thm1;
};

/// median: R - median; mean: R - mean; max: R - min(returns) (largest regret);
/// min: R - max(returns); variance2: 2 sqrt(unbiased variance);
/// combined: max(variance2, median form). Unnormalised.
RegretEstimate approx_regret(RegretStat stat, const std::vector<double>& returns, double r_max_hat);

double unbiased_variance(const std::vector<double>& values);

}  // namespace sorel
