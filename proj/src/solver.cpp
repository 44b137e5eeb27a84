#include "sorel/solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sorel/special.hpp"

namespace sorel {

const char* solver_kind_name(SolverKind kind) {
  return kind == SolverKind::kMeanMdpVi ? "mean_mdp_vi" : "cross_entropy";
}

SolverKind parse_solver_kind(const std::string& name) {
  if (name == "mean_mdp_vi") return SolverKind::kMeanMdpVi;
  if (name == "cross_entropy") return SolverKind::kCrossEntropy;
  throw ConfigError("unknown solver '" + name + "'");
}

void SolverConfig::validate() const {
  if (kind == SolverKind::kMeanMdpVi) return;
  if (population < 2) throw ConfigError("solver population must be at least 2");
  if (!(elite_fraction > 0.0 && elite_fraction < 1.0)) {
    throw ConfigError("solver elite_fraction must lie in (0, 1)");
  }
  if (iterations < 1) throw ConfigError("solver iterations must be at least 1");
  if (k_samples < 1) throw ConfigError("solver k_samples must be at least 1");
  if (episodes_per_member < 1) throw ConfigError("solver episodes_per_member must be at least 1");
  if (horizon < 0) throw ConfigError("solver horizon must be nonnegative");
  if (!(smoothing > 0.0 && smoothing <= 1.0)) throw ConfigError("solver smoothing must lie in (0, 1]");
  if (!(init_std > 0.0) || !(min_std >= 0.0) || !(policy_std >= 0.0)) {
    throw ConfigError("solver standard deviations must be nonnegative (init_std positive)");
  }
}

double bayes_objective_estimate(const ConjugatePosterior& post, const TabularPolicy& policy,
                                int k_samples, std::uint64_t seed) {
  const auto returns = predictive_returns(post, policy, k_samples, seed);
  return pairwise_sum(returns) / static_cast<double>(returns.size());
}

double bayes_objective_estimate(const EnsembleModel& model, const LinearPolicy& policy,
                                const ModelRolloutSpec& spec, std::uint64_t seed) {
  const auto returns = predictive_returns(model, policy, spec, seed);
  return pairwise_sum(returns) / static_cast<double>(returns.size());
}

TabularPolicy solve_mean_mdp(const ConjugatePosterior& post) {
  return value_iteration(post.mean_mdp()).policy;
}

TabularPolicy softmax_policy(const Mat& logits) {
  Mat probs(logits.rows(), logits.cols());
  for (long s = 0; s < logits.rows(); ++s) {
    const double top = logits.row(s).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(s).array() - top).exp();
    probs.row(s) = e / e.sum();
  }
  return {probs};
}

namespace {

/// Generic CEM over a flat parameter vector. `score_all` scores a population
/// (columns) for a given iteration.
template <typename ScoreAll>
Vec cross_entropy_search(long dim, const SolverConfig& config, ScoreAll score_all, CemTrace* trace) {
  config.validate();
  Rng rng = make_rng(config.seed, 41);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec mean = Vec::Zero(dim);
  Vec stddev = Vec::Constant(dim, config.init_std);
  const int n_elite =
      std::max(1, static_cast<int>(std::ceil(config.elite_fraction * config.population)));
  for (int it = 0; it < config.iterations; ++it) {
    Mat pop(dim, config.population);
    for (int c = 0; c < config.population; ++c) {
      for (long i = 0; i < dim; ++i) pop(i, c) = mean[i] + stddev[i] * normal(rng);
    }
    const std::vector<double> scores = score_all(pop, it);
    for (std::size_t c = 0; c < scores.size(); ++c) {
      if (!std::isfinite(scores[c])) {
        throw NumericError("cross-entropy candidate " + std::to_string(c) + " in iteration " +
                           std::to_string(it) + " has a non-finite score");
      }
    }
    std::vector<int> order(static_cast<std::size_t>(config.population));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    });
    if (trace != nullptr) trace->best_scores.push_back(scores[static_cast<std::size_t>(order[0])]);
    Vec e_mean = Vec::Zero(dim);
    for (int k = 0; k < n_elite; ++k) e_mean += pop.col(order[static_cast<std::size_t>(k)]);
    e_mean /= n_elite;
    Vec e_var = Vec::Zero(dim);
    for (int k = 0; k < n_elite; ++k) {
      e_var += (pop.col(order[static_cast<std::size_t>(k)]) - e_mean).cwiseAbs2();
    }
    e_var /= n_elite;
    mean = config.smoothing * e_mean + (1.0 - config.smoothing) * mean;
    stddev = (config.smoothing * e_var.cwiseSqrt() + (1.0 - config.smoothing) * stddev)
                 .cwiseMax(config.min_std);
  }
  return mean;
}

}  // namespace

TabularPolicy solve_cross_entropy(const ConjugatePosterior& post, const SolverConfig& config,
                                  CemTrace* trace) {
  const int n_s = post.n_states();
  const int n_a = post.n_actions();
  auto score_all = [&](const Mat& pop, int it) {
    Rng rng = make_rng(config.seed, 1000 + static_cast<std::uint64_t>(it));
    std::vector<TabularMdp> samples;
    for (int k = 0; k < config.k_samples; ++k) samples.push_back(sample_posterior_mdp(post, rng));
    std::vector<double> scores;
    for (long c = 0; c < pop.cols(); ++c) {
      const Mat logits = Eigen::Map<const Mat>(pop.col(c).data(), n_s, n_a);
      const TabularPolicy pi = softmax_policy(logits);
      double total = 0.0;
      for (const auto& m : samples) total += policy_evaluation(m, pi);
      scores.push_back(total / config.k_samples);
    }
    return scores;
  };
  const Vec best = cross_entropy_search(static_cast<long>(n_s) * n_a, config, score_all, trace);
  return softmax_policy(Eigen::Map<const Mat>(best.data(), n_s, n_a));
}

LinearPolicy solve_cross_entropy(const EnsembleModel& model, const ModelRolloutSpec& spec,
                                 const Vec& action_low, const Vec& action_high,
                                 const SolverConfig& config, CemTrace* trace) {
  const int rows = model.action_dim;
  const int cols = model.state_dim + 1;
  ModelRolloutSpec rollout = spec;
  rollout.episodes_per_member = config.episodes_per_member;
  if (config.horizon > 0) rollout.horizon = config.horizon;
  auto make_policy = [&](const Vec& flat) {
    return LinearPolicy{Eigen::Map<const Mat>(flat.data(), rows, cols), config.policy_std,
                        action_low, action_high};
  };
  auto score_all = [&](const Mat& pop, int it) {
    std::vector<double> scores;
    const std::uint64_t seed = derive_seed(config.seed, 2000 + static_cast<std::uint64_t>(it));
    for (long c = 0; c < pop.cols(); ++c) {
      const Vec flat = pop.col(c);
      scores.push_back(bayes_objective_estimate(model, make_policy(flat), rollout, seed));
    }
    return scores;
  };
  const Vec best = cross_entropy_search(static_cast<long>(rows) * cols, config, score_all, trace);
  return make_policy(best);
}

TabularPolicy solve_bamdp(const ConjugatePosterior& post, const SolverConfig& config) {
  config.validate();
  if (config.kind == SolverKind::kMeanMdpVi) return solve_mean_mdp(post);
  return solve_cross_entropy(post, config);
}

}  // namespace sorel
