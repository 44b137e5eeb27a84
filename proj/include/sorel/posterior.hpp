#pragma once

#include <vector>

#include "sorel/mdp.hpp"

namespace sorel {

/// Symmetric Dirichlet(alpha0) over every transition row and a Normal(mu0,
/// tau0_sq) prior over every reward mean.
struct ConjugatePrior {
  double alpha0 = 1.0;
  double mu0 = 0.0;
  double tau0_sq = 1.0;

  void validate() const;
  friend bool operator==(const ConjugatePrior&, const ConjugatePrior&) = default;
};

/// Exact posterior for a tabular MDP with known reward noise. Stored as prior
/// plus sufficient statistics so that updates are exactly additive.
class ConjugatePosterior {
 public:
  ConjugatePosterior(TabularEnvSpec env, ConjugatePrior prior);

  /// Posterior concentrated on `mdp`: every row receives `strength` pseudo
  /// observations distributed as the true row, and every reward mean the same
  /// number of observations at its true value.
  static ConjugatePosterior concentrated_at(const TabularMdp& mdp, double strength,
                                            ConjugatePrior prior = {});

  const TabularEnvSpec& env() const { return env_; }
  const ConjugatePrior& prior() const { return prior_; }
  int n_states() const { return env_.n_states; }
  int n_actions() const { return env_.n_actions; }

  double alpha(int s, int a, int s_next) const;
  double alpha_sum(int s, int a) const;
  double count(int s, int a, int s_next) const { return counts_[index(s, a, s_next)]; }
  double visits(int s, int a) const { return visits_(s, a); }
  /// Dirichlet mean alpha / sum(alpha) of one transition row.
  Vec mean_row(int s, int a) const;
  double reward_post_mean(int s, int a) const;
  double reward_post_var(int s, int a) const;

  /// MDP with Dirichlet-mean transitions and posterior-mean rewards.
  TabularMdp mean_mdp() const;

  /// Adds the sufficient statistics of one transition (pseudo-counts may be
  /// fractional). Throws DataError on out-of-range indices.
  void observe(int s, int a, double r, int s_next, double weight = 1.0);

  friend bool operator==(const ConjugatePosterior&, const ConjugatePosterior&) = default;

 private:
  std::size_t index(int s, int a, int s_next) const {
    return (static_cast<std::size_t>(s) * env_.n_actions + a) * env_.n_states + s_next;
  }

  TabularEnvSpec env_;
  ConjugatePrior prior_;
  std::vector<double> counts_;
  Mat visits_;
  Mat reward_sums_;
};

/// Bayes update with every transition of `data`. Order-invariant and
/// batch-additive.
ConjugatePosterior conjugate_update(const ConjugatePosterior& prior, const Dataset& data);

/// Draws one MDP: every row from its Dirichlet, every reward mean from its
/// Normal posterior. gamma, initial_dist, reward_std and max_steps come from the
/// environment spec.
TabularMdp sample_posterior_mdp(const ConjugatePosterior& post, Rng& rng);

/// One Dirichlet(alpha) draw. Small concentrations are handled in log space so
/// rows with alpha << 1 do not underflow to all zeros.
Vec sample_dirichlet(std::span<const double> alpha, Rng& rng);

}  // namespace sorel
