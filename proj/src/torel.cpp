#include "sorel/torel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include <boost/math/distributions/students_t.hpp>

#include "sorel/special.hpp"

namespace sorel {

TabularPolicy BehaviorCloning::train(const Dataset& data, const ConjugatePosterior& posterior,
                                     double value) const {
  if (!(value >= 0.0)) throw ConfigError("behaviour-cloning smoothing must be nonnegative");
  const int n_s = posterior.n_states();
  const int n_a = posterior.n_actions();
  Mat counts = Mat::Constant(n_s, n_a, value);
  for (const auto& t : data.transitions) counts(t.state_index(), t.action_index()) += 1.0;
  for (int s = 0; s < n_s; ++s) {
    const double total = counts.row(s).sum();
    if (total > 0.0) {
      counts.row(s) /= total;
    } else {
      counts.row(s).setConstant(1.0 / n_a);
    }
  }
  return {counts};
}

Mat PessimisticPlanner::uncertainty(const ConjugatePosterior& post) {
  Mat u(post.n_states(), post.n_actions());
  for (int s = 0; s < post.n_states(); ++s) {
    for (int a = 0; a < post.n_actions(); ++a) {
      const double a0 = post.alpha_sum(s, a);
      double var = 0.0;
      for (int j = 0; j < post.n_states(); ++j) {
        const double aj = post.alpha(s, a, j);
        var += aj * (a0 - aj) / (a0 * a0 * (a0 + 1.0));
      }
      u(s, a) = std::sqrt(var) + std::sqrt(post.reward_post_var(s, a));
    }
  }
  return u;
}

TabularPolicy PessimisticPlanner::train(const Dataset& /*data*/, const ConjugatePosterior& posterior,
                                        double value) const {
  if (!(value >= 0.0)) throw ConfigError("penalty coefficient must be nonnegative");
  TabularMdp mdp = posterior.mean_mdp();
  mdp.reward_mean -= value * uncertainty(posterior);
  return value_iteration(mdp).policy;
}

std::unique_ptr<OrlPlanner> make_planner(const std::string& name) {
  if (name == "behavior_cloning") return std::make_unique<BehaviorCloning>();
  if (name == "pessimistic") return std::make_unique<PessimisticPlanner>();
  throw ConfigError("unknown planner '" + name + "'");
}

LinearPolicy behavior_cloning_linear(const Dataset& data, double ridge, const Vec& action_low,
                                     const Vec& action_high) {
  if (data.empty()) throw DataError("behaviour cloning needs data");
  if (!(ridge >= 0.0)) throw ConfigError("ridge must be nonnegative");
  const long sd = data.header.state_dim;
  const long n = static_cast<long>(data.size());
  Mat x(n, sd + 1), y(n, data.header.action_dim);
  for (long i = 0; i < n; ++i) {
    const auto& t = data.transitions[static_cast<std::size_t>(i)];
    x.row(i) << t.s.transpose(), 1.0;
    y.row(i) = t.a.transpose();
  }
  Mat gram = x.transpose() * x;
  gram.topLeftCorner(sd, sd).diagonal().array() += ridge;
  const Mat w = gram.ldlt().solve(x.transpose() * y);
  return {w.transpose(), 0.0, action_low, action_high};
}

CorrelationResult correlation_report(const std::vector<double>& metrics,
                                     const std::vector<double>& true_regrets) {
  if (metrics.size() != true_regrets.size()) throw DataError("correlation inputs differ in length");
  if (metrics.size() < 3) throw DataError("correlation needs at least three points");
  const double n = static_cast<double>(metrics.size());
  const double mx = pairwise_sum(metrics) / n;
  const double my = pairwise_sum(true_regrets) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const double dx = metrics[i] - mx;
    const double dy = true_regrets[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
  if (sxx == 0.0 || syy == 0.0) return {kNan, kNan};
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  if (std::abs(r) == 1.0) return {r, 0.0};
  const double df = n - 2.0;
  const double t = r * std::sqrt(df / (1.0 - r * r));
  const boost::math::students_t dist(df);
  return {r, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)))};
}

TuningReport torel_tune(const OrlPlanner& planner, const std::vector<double>& grid,
                        const Dataset& data, const TabularEnvSpec& env,
                        const TabularHyperGrid& model_grid, const TorelOptions& options,
                        const TabularMdp* test_mdp) {
  if (grid.empty()) throw ConfigError("planner grid is empty");
  TuningReport report;
  report.planner = planner.name();
  report.stat = options.stat;
  auto fitted = tune_model(model_grid, env, data, options.balance_threshold,
                           derive_seed(options.seed, 1), planner.model_based());
  report.model = std::move(fitted.choice);
  const ConjugatePosterior& post = fitted.posterior;
  const double rmax = r_max_hat(data, env.gamma, env.max_steps);

  std::optional<double> j_star, scale;
  if (test_mdp != nullptr) {
    j_star = optimal_return(*test_mdp);
    scale = regret_scale(test_mdp->gamma, norm_constants_for(*test_mdp));
  }
  for (double value : grid) {
    TuningRow row;
    row.value = value;
    try {
      row.policy = planner.train(data, post, value);
      row.policy.validate();
      const auto returns =
          predictive_returns(post, row.policy, options.k_samples, derive_seed(options.seed, 2));
      row.metric = approx_regret(options.stat, returns, rmax).value;
      if (test_mdp != nullptr) {
        row.true_regret =
            std::max(*j_star - policy_evaluation(*test_mdp, row.policy), 0.0) / *scale;
      }
    } catch (const Error& e) {
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }

  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    if (report.rows[i].error.empty()) ok.push_back(i);
  }
  if (ok.empty()) throw DataError("every planner configuration failed: " + report.rows[0].error);
  std::vector<std::size_t> order = ok;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return report.rows[a].metric < report.rows[b].metric;
  });
  for (std::size_t r = 0; r < order.size(); ++r) report.rows[order[r]].rank = r + 1;
  report.selected = order.front();

  if (test_mdp != nullptr) {
    std::size_t oracle = ok.front();
    double total = 0.0;
    std::vector<double> metrics, truths;
    for (std::size_t i : ok) {
      const double tr = *report.rows[i].true_regret;
      if (tr < *report.rows[oracle].true_regret) oracle = i;
      total += tr;
      metrics.push_back(report.rows[i].metric);
      truths.push_back(tr);
    }
    report.oracle = oracle;
    report.mean_true_regret = total / static_cast<double>(ok.size());
    if (ok.size() >= 3) report.correlation = correlation_report(metrics, truths);
  }
  return report;
}

void write_tuning_csv(std::ostream& out, const TuningReport& report) {
  const auto old_precision = out.precision(17);
  out << "value,metric,true_regret,rank,selected,oracle,error\n";
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& r = report.rows[i];
    out << r.value << ',';
    if (r.error.empty()) out << r.metric;
    out << ',';
    if (r.true_regret) out << *r.true_regret;
    out << ',' << r.rank << ',' << (i == report.selected ? 1 : 0) << ','
        << (report.oracle && *report.oracle == i ? 1 : 0) << ',';
    // Errors are free text; commas would break the column layout.
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    out << err << '\n';
  }
  out.precision(old_precision);
}

int OnlineEnv::reset(Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  for (int s = 0; s < mdp_.n_states; ++s) {
    acc += mdp_.initial_dist[s];
    if (u < acc) return s;
  }
  return mdp_.n_states - 1;
}

OnlineEnv::Step OnlineEnv::step(int s, int a, Rng& rng) {
  ++steps_;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double r = mdp_.reward_mean(s, a) + mdp_.reward_std * noise(rng);
  const auto row = mdp_.row(s, a);
  const double u = unif(rng);
  double acc = 0.0;
  int next = mdp_.n_states - 1;
  for (int j = 0; j < mdp_.n_states; ++j) {
    acc += row[j];
    if (u < acc) {
      next = j;
      break;
    }
  }
  return {next, r};
}

UcbResult ucb_online_tune(const std::vector<TabularPolicy>& arms,
                          const std::vector<double>& true_regrets, OnlineEnv& env,
                          std::size_t episode_budget, const NormConstants& norm,
                          const UcbConfig& config) {
  if (arms.empty()) throw ConfigError("UCB needs at least one arm");
  if (true_regrets.size() != arms.size()) throw ConfigError("one true regret per arm is required");
  if (episode_budget < arms.size()) {
    throw ConfigError("episode budget " + std::to_string(episode_budget) +
                      " is smaller than the number of arms " + std::to_string(arms.size()));
  }
  const TabularMdp& mdp = env.mdp();
  Rng rng = make_rng(config.seed, 51);
  const std::size_t k = arms.size();
  UcbResult res;
  res.pulls.assign(k, 0);
  res.mean_scores.assign(k, 0.0);
  std::vector<double> sums(k, 0.0);
  const std::size_t start_steps = env.steps();
  double best = std::numeric_limits<double>::infinity();

  for (std::size_t t = 0; t < episode_budget; ++t) {
    std::size_t arm = 0;
    if (t < k) {
      arm = t;
    } else {
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < k; ++i) {
        const double bonus = config.exploration *
                             std::sqrt(std::log(static_cast<double>(t)) / static_cast<double>(res.pulls[i]));
        const double ucb = res.mean_scores[i] + bonus;
        if (ucb > top) {
          top = ucb;
          arm = i;
        }
      }
    }
    int s = env.reset(rng);
    double ret = 0.0;
    double discount = 1.0;
    for (int step = 0; step < mdp.max_steps; ++step) {
      const int a = arms[arm].sample(s, rng);
      const auto out = env.step(s, a, rng);
      ret += discount * out.r;
      discount *= mdp.gamma;
      s = out.s_next;
    }
    const double regret = normalize_regret(ret, mdp.gamma, mdp.max_steps, norm.r_min, norm.r_max);
    const double score = 100.0 * (1.0 - regret);
    sums[arm] += score;
    res.pulls[arm] += 1;
    res.mean_scores[arm] = sums[arm] / static_cast<double>(res.pulls[arm]);

    std::size_t recommended = 0;
    for (std::size_t i = 1; i < k; ++i) {
      if (res.pulls[i] > 0 && (res.pulls[recommended] == 0 ||
                               res.mean_scores[i] > res.mean_scores[recommended])) {
        recommended = i;
      }
    }
    best = std::min(best, true_regrets[recommended]);
    res.trace.push_back({env.steps() - start_steps, best});
    res.selected = recommended;
  }
  res.online_samples = env.steps() - start_steps;
  return res;
}

std::optional<std::size_t> samples_to_reach(const UcbResult& result, double target) {
  for (const auto& p : result.trace) {
    if (p.best_regret <= target) return p.samples;
  }
  return std::nullopt;
}

}  // namespace sorel
