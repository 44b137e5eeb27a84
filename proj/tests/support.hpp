#pragma once

// Hand-rolled generators and brute-force oracles shared by the tests. Nothing
// here calls into the library's planners or samplers, so each oracle is an
// independent computation of the quantity under test.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "sorel/mdp.hpp"

namespace sorel::test {

inline std::vector<double> dirichlet_row(int n, double concentration, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(concentration, 1.0);
  std::vector<double> row(static_cast<std::size_t>(n));
  double total = 0.0;
  for (auto& x : row) {
    x = g(rng) + 1e-12;
    total += x;
  }
  for (auto& x : row) x /= total;
  return row;
}

/// Random MDP with Dirichlet(1) rows, U[0, 1] rewards and a random start distribution.
inline TabularMdp random_test_mdp(std::mt19937_64& rng, int n_states, int n_actions,
                                  double gamma = 0.9, double reward_std = 0.2) {
  TabularMdp mdp(n_states, n_actions, gamma);
  mdp.env_id = "random_test";
  mdp.reward_std = reward_std;
  mdp.max_steps = 60;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      const auto row = dirichlet_row(n_states, 1.0, rng);
      for (int j = 0; j < n_states; ++j) mdp.p(s, a, j) = row[static_cast<std::size_t>(j)];
      mdp.reward_mean(s, a) = unif(rng);
    }
  }
  const auto init = dirichlet_row(n_states, 1.0, rng);
  for (int s = 0; s < n_states; ++s) mdp.initial_dist[s] = init[static_cast<std::size_t>(s)];
  return mdp;
}

inline TabularPolicy random_policy(int n_states, int n_actions, std::mt19937_64& rng) {
  TabularPolicy pi;
  pi.probs.resize(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    const auto row = dirichlet_row(n_actions, 1.0, rng);
    for (int a = 0; a < n_actions; ++a) pi.probs(s, a) = row[static_cast<std::size_t>(a)];
  }
  return pi;
}

/// Policy value by repeated Bellman expectation backups (no linear solve).
inline std::vector<double> iterate_state_values(const TabularMdp& mdp, const Mat& probs,
                                                double tol = 1e-13) {
  const auto n = static_cast<std::size_t>(mdp.n_states);
  std::vector<double> v(n, 0.0), next(n, 0.0);
  for (int it = 0; it < 100000; ++it) {
    double diff = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
      double acc = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a) {
        double q = mdp.reward_mean(s, a);
        for (int j = 0; j < mdp.n_states; ++j) q += mdp.gamma * mdp.p(s, a, j) * v[static_cast<std::size_t>(j)];
        acc += probs(s, a) * q;
      }
      next[static_cast<std::size_t>(s)] = acc;
      diff = std::max(diff, std::abs(acc - v[static_cast<std::size_t>(s)]));
    }
    v.swap(next);
    if (diff < tol) break;
  }
  return v;
}

inline double iterate_return(const TabularMdp& mdp, const Mat& probs) {
  const auto v = iterate_state_values(mdp, probs);
  double j = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) j += mdp.initial_dist[s] * v[static_cast<std::size_t>(s)];
  return j;
}

/// Returns of every deterministic policy, enumerated in mixed-radix order.
inline std::vector<double> enumerate_deterministic_returns(const TabularMdp& mdp) {
  long total = 1;
  for (int s = 0; s < mdp.n_states; ++s) total *= mdp.n_actions;
  std::vector<double> out;
  for (long code = 0; code < total; ++code) {
    Mat probs = Mat::Zero(mdp.n_states, mdp.n_actions);
    long c = code;
    for (int s = 0; s < mdp.n_states; ++s) {
      probs(s, static_cast<int>(c % mdp.n_actions)) = 1.0;
      c /= mdp.n_actions;
    }
    out.push_back(iterate_return(mdp, probs));
  }
  return out;
}

inline double brute_force_optimal_return(const TabularMdp& mdp) {
  const auto r = enumerate_deterministic_returns(mdp);
  return *std::max_element(r.begin(), r.end());
}

inline double brute_force_pessimal_return(const TabularMdp& mdp) {
  const auto r = enumerate_deterministic_returns(mdp);
  return *std::min_element(r.begin(), r.end());
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double m = 0.0;
  for (double x : xs) m += x;
  m /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

inline Dataset tabular_dataset(const TabularMdp& mdp,
                               const std::vector<std::array<double, 4>>& rows) {
  Dataset d;
  d.header.env_id = mdp.env_id;
  d.header.discrete = true;
  d.header.state_dim = mdp.n_states;
  d.header.action_dim = mdp.n_actions;
  d.header.gamma = mdp.gamma;
  d.header.max_steps = mdp.max_steps;
  for (const auto& r : rows) {
    d.transitions.push_back(make_tabular_transition(static_cast<int>(r[0]), static_cast<int>(r[1]), r[2],
                                                    static_cast<int>(r[3]), false));
  }
  return d;
}

}  // namespace sorel::test
