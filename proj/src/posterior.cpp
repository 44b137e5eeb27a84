#include "sorel/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sorel {

void ConjugatePrior::validate() const {
  if (!(alpha0 > 0.0) || !std::isfinite(alpha0)) throw ConfigError("alpha0 must be positive");
  if (!(tau0_sq > 0.0) || !std::isfinite(tau0_sq)) throw ConfigError("tau0_sq must be positive");
  if (!std::isfinite(mu0)) throw ConfigError("mu0 must be finite");
}

ConjugatePosterior::ConjugatePosterior(TabularEnvSpec env, ConjugatePrior prior)
    : env_(std::move(env)), prior_(prior) {
  prior_.validate();
  if (env_.n_states <= 0 || env_.n_actions <= 0) throw DataError("posterior needs a nonempty MDP");
  counts_.assign(static_cast<std::size_t>(env_.n_states) * env_.n_actions * env_.n_states, 0.0);
  visits_ = Mat::Zero(env_.n_states, env_.n_actions);
  reward_sums_ = Mat::Zero(env_.n_states, env_.n_actions);
}

ConjugatePosterior ConjugatePosterior::concentrated_at(const TabularMdp& mdp, double strength,
                                                       ConjugatePrior prior) {
  ConjugatePosterior post(TabularEnvSpec::of(mdp), prior);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      for (int j = 0; j < mdp.n_states; ++j) {
        post.counts_[post.index(s, a, j)] = strength * mdp.p(s, a, j);
      }
      post.visits_(s, a) = strength;
      post.reward_sums_(s, a) = strength * mdp.reward_mean(s, a);
    }
  }
  return post;
}

double ConjugatePosterior::alpha(int s, int a, int s_next) const {
  return prior_.alpha0 + counts_[index(s, a, s_next)];
}

double ConjugatePosterior::alpha_sum(int s, int a) const {
  double total = prior_.alpha0 * env_.n_states;
  for (int j = 0; j < env_.n_states; ++j) total += counts_[index(s, a, j)];
  return total;
}

Vec ConjugatePosterior::mean_row(int s, int a) const {
  Vec row(env_.n_states);
  for (int j = 0; j < env_.n_states; ++j) row[j] = alpha(s, a, j);
  return row / row.sum();
}

double ConjugatePosterior::reward_post_var(int s, int a) const {
  const double n = visits_(s, a);
  if (env_.reward_std == 0.0) return n > 0.0 ? 0.0 : prior_.tau0_sq;
  return 1.0 / (1.0 / prior_.tau0_sq + n / (env_.reward_std * env_.reward_std));
}

double ConjugatePosterior::reward_post_mean(int s, int a) const {
  const double n = visits_(s, a);
  if (env_.reward_std == 0.0) return n > 0.0 ? reward_sums_(s, a) / n : prior_.mu0;
  const double noise_var = env_.reward_std * env_.reward_std;
  return reward_post_var(s, a) * (prior_.mu0 / prior_.tau0_sq + reward_sums_(s, a) / noise_var);
}

TabularMdp ConjugatePosterior::mean_mdp() const {
  TabularMdp mdp(env_.n_states, env_.n_actions, env_.gamma);
  mdp.env_id = env_.env_id + ":posterior_mean";
  mdp.reward_std = env_.reward_std;
  mdp.initial_dist = env_.initial_dist;
  mdp.max_steps = env_.max_steps;
  for (int s = 0; s < env_.n_states; ++s) {
    for (int a = 0; a < env_.n_actions; ++a) {
      const Vec row = mean_row(s, a);
      std::copy(row.data(), row.data() + row.size(), mdp.row(s, a).begin());
      mdp.reward_mean(s, a) = reward_post_mean(s, a);
    }
  }
  return mdp;
}

void ConjugatePosterior::observe(int s, int a, double r, int s_next, double weight) {
  if (s < 0 || s >= env_.n_states || s_next < 0 || s_next >= env_.n_states || a < 0 ||
      a >= env_.n_actions) {
    throw DataError("transition index out of range for a " + std::to_string(env_.n_states) +
                    "-state, " + std::to_string(env_.n_actions) + "-action posterior");
  }
  counts_[index(s, a, s_next)] += weight;
  visits_(s, a) += weight;
  reward_sums_(s, a) += weight * r;
}

ConjugatePosterior conjugate_update(const ConjugatePosterior& prior, const Dataset& data) {
  ConjugatePosterior post = prior;
  for (const auto& t : data.transitions) {
    post.observe(t.state_index(), t.action_index(), t.r, t.next_state_index());
  }
  return post;
}

Vec sample_dirichlet(std::span<const double> alpha, Rng& rng) {
  const auto k = static_cast<long>(alpha.size());
  Vec log_g(k);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (long j = 0; j < k; ++j) {
    const double a = alpha[static_cast<std::size_t>(j)];
    if (a >= 1.0) {
      std::gamma_distribution<double> gam(a, 1.0);
      log_g[j] = std::log(std::max(gam(rng), std::numeric_limits<double>::min()));
    } else {
      // Gamma(a) = Gamma(a + 1) * U^(1/a)
      std::gamma_distribution<double> gam(a + 1.0, 1.0);
      double u = unif(rng);
      while (u <= 0.0) u = unif(rng);
      log_g[j] = std::log(gam(rng)) + std::log(u) / a;
    }
  }
  const double top = log_g.maxCoeff();
  Vec p = (log_g.array() - top).exp();
  return p / p.sum();
}

TabularMdp sample_posterior_mdp(const ConjugatePosterior& post, Rng& rng) {
  const auto& env = post.env();
  TabularMdp mdp(env.n_states, env.n_actions, env.gamma);
  mdp.env_id = env.env_id + ":posterior_sample";
  mdp.reward_std = env.reward_std;
  mdp.initial_dist = env.initial_dist;
  mdp.max_steps = env.max_steps;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> alpha(static_cast<std::size_t>(env.n_states));
  for (int s = 0; s < env.n_states; ++s) {
    for (int a = 0; a < env.n_actions; ++a) {
      for (int j = 0; j < env.n_states; ++j) alpha[static_cast<std::size_t>(j)] = post.alpha(s, a, j);
      const Vec row = sample_dirichlet(alpha, rng);
      std::copy(row.data(), row.data() + row.size(), mdp.row(s, a).begin());
      mdp.reward_mean(s, a) =
          post.reward_post_mean(s, a) + std::sqrt(post.reward_post_var(s, a)) * normal(rng);
    }
  }
  return mdp;
}

}  // namespace sorel
