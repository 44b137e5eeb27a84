#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sorel/ensemble.hpp"
#include "sorel/posterior.hpp"

namespace sorel {

/// State-action distribution sum_j (1 - gamma) gamma^j P_j, where P_j is the
/// time-j state-action occupancy under the policy from initial_dist. This is
/// the closed form of the arithmetico-geometric mixture E_i E_{j ~ U{0..i}} P_j.
struct RhoWeights {
  /// n_states x n_actions, sums to 1.
  Mat weights;
  /// Number of occupancy terms kept; the dropped tail has mass gamma^horizon.
  int horizon = 0;
  std::string policy_tag;
};

inline constexpr double kRhoTailMass = 1e-13;

RhoWeights rho_weights(const TabularMdp& mdp, const TabularPolicy& policy, double gamma,
                       std::string policy_tag = {});

enum class PilSource { kExactTabular, kTabularValidation, kGaussianValidation };
const char* pil_source_name(PilSource source);

struct PilReport {
  double mse_term = 0.0;
  double var_term = 0.0;
  double pil = 0.0;
  std::size_t n_points = 0;
  /// |E - V| / max(E, V); 0 when both vanish.
  double balance_ratio = 0.0;
  PilSource source = PilSource::kExactTabular;
};

double balance_ratio(double mse_term, double var_term);

/// Exact posterior-expected KL between the true and the sampled transition /
/// reward distributions, weighted by rho. Per (s, a):
///   transitions: sum_j p*_j (log p*_j - psi(alpha_j) + psi(sum alpha))
///   rewards:     ((posterior mean - true mean)^2 + posterior var) / (2 sigma_r^2)
/// mse_term collects KL(p* || posterior-mean row) and the squared reward mean
/// error; var_term the remainder (posterior spread). Requires reward_std > 0.
PilReport pil_tabular_exact(const ConjugatePosterior& post, const TabularMdp& true_mdp,
                            const RhoWeights& rho);

/// Offline estimate on held-out transitions with dataset-variance
/// normalisation (targets: reward and one-hot next state):
///   E = mean[(m - r)^2 / (2 var_r(D)) + |p_bar - e_s'|^2 / (2 var_s(D))]
///   V = mean[(v + sigma_r^2) / (2 var_r(D)) + sum p_bar (1 - p_bar) / (2 var_s(D))]
/// var_r(D) and var_s(D) (summed one-hot component variance) come from
/// `train`, floored at 1e-6.
PilReport pil_tabular_validation(const ConjugatePosterior& post, const Dataset& train,
                                 const Dataset& validation);

/// Gaussian-model estimate on a validation set (targets normalised by the
/// training-split statistics stored in the model, so each dimension is divided
/// by its dataset variance):
///   E = mean over points of sum_d (elite-mean mu_d - y_d)^2 / 2
///   V = mean over points of sum_d mean_elites[(mu_m,d - mu_d)^2 + exp(xi_m,d)] / 2
/// Throws UndefinedPilError when validation holds fewer than `min_points`.
PilReport pil_gaussian(const EnsembleModel& model, const Dataset& validation,
                       std::size_t min_points = 1);

/// ratio <= threshold.
bool balance_check(const PilReport& report, double threshold = 0.25);

inline constexpr double kDefaultBalanceThreshold = 0.25;

struct PilHistoryEntry {
  std::size_t n = 0;
  PilReport report;
};

struct PilHistory {
  std::vector<PilHistoryEntry> entries;

  /// Appends; N must exceed the last entry's N.
  void add(std::size_t n, const PilReport& report);
};

struct InfoRate {
  std::size_t n = 0;
  double rate = 0.0;
};

/// (PIL_k - PIL_{k-1}) / (N_k - N_{k-1}) for k >= 1.
std::vector<InfoRate> info_rate(const PilHistory& history);

/// Columns: N,mse_term,var_term,pil,balance_ratio,rate. The first row has an
/// empty rate.
void write_pil_history_csv(std::ostream& out, const PilHistory& history);

}  // namespace sorel
