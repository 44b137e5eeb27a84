#include "sorel/pil.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "sorel/special.hpp"

namespace sorel {

RhoWeights rho_weights(const TabularMdp& mdp, const TabularPolicy& policy, double gamma,
                       std::string policy_tag) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw NumericError("rho_weights: gamma must lie in [0, 1)");
  if (policy.probs.rows() != mdp.n_states || policy.probs.cols() != mdp.n_actions) {
    throw DataError("policy dimensions do not match the MDP");
  }
  RhoWeights rho;
  rho.policy_tag = std::move(policy_tag);
  rho.weights = Mat::Zero(mdp.n_states, mdp.n_actions);
  Vec state_occ = mdp.initial_dist;
  double w = 1.0 - gamma;
  double tail = 1.0;
  int j = 0;
  while (true) {
    Mat occ = policy.probs.array().colwise() * state_occ.array();
    rho.weights += w * occ;
    tail -= w;
    ++j;
    if (gamma == 0.0 || std::pow(gamma, j) < kRhoTailMass) break;
    Vec next = Vec::Zero(mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int a = 0; a < mdp.n_actions; ++a) {
        if (occ(s, a) == 0.0) continue;
        const auto row = mdp.row(s, a);
        for (int k = 0; k < mdp.n_states; ++k) next[k] += occ(s, a) * row[k];
      }
    }
    state_occ = std::move(next);
    w *= gamma;
  }
  rho.horizon = j;
  // Renormalise so the truncated weights sum to one.
  rho.weights /= rho.weights.sum();
  return rho;
}

const char* pil_source_name(PilSource source) {
  switch (source) {
    case PilSource::kExactTabular:
      return "exact_tabular";
    case PilSource::kTabularValidation:
      return "tabular_validation";
    case PilSource::kGaussianValidation:
      return "gaussian_validation";
  }
  return "unknown";
}

double balance_ratio(double mse_term, double var_term) {
  const double top = std::max(mse_term, var_term);
  if (top <= 0.0) return 0.0;
  return std::abs(mse_term - var_term) / top;
}

namespace {

PilReport finish(double mse, double var, std::size_t n, PilSource source) {
  PilReport r;
  r.mse_term = mse;
  r.var_term = var;
  r.pil = mse + var;
  r.n_points = n;
  r.balance_ratio = balance_ratio(mse, var);
  r.source = source;
  return r;
}

}  // namespace

PilReport pil_tabular_exact(const ConjugatePosterior& post, const TabularMdp& true_mdp,
                            const RhoWeights& rho) {
  if (post.n_states() != true_mdp.n_states || post.n_actions() != true_mdp.n_actions) {
    throw DataError("posterior and MDP dimensions differ");
  }
  if (rho.weights.rows() != true_mdp.n_states || rho.weights.cols() != true_mdp.n_actions) {
    throw DataError("rho weights dimensions differ from the MDP");
  }
  if (!(true_mdp.reward_std > 0.0)) throw NumericError("exact PIL needs reward_std > 0");
  const double two_var = 2.0 * true_mdp.reward_std * true_mdp.reward_std;
  double mse = 0.0;
  double var = 0.0;
  std::size_t n_pairs = 0;
  for (int s = 0; s < true_mdp.n_states; ++s) {
    for (int a = 0; a < true_mdp.n_actions; ++a) {
      const double w = rho.weights(s, a);
      if (w == 0.0) continue;
      ++n_pairs;
      const double psi_sum = digamma(post.alpha_sum(s, a));
      const Vec mean_row = post.mean_row(s, a);
      double expected_kl = 0.0;
      double kl_mean = 0.0;
      for (int j = 0; j < true_mdp.n_states; ++j) {
        const double p = true_mdp.p(s, a, j);
        if (p == 0.0) continue;
        const double alpha = post.alpha(s, a, j);
        if (!(alpha > 0.0)) throw NumericError("true transition outside the posterior support");
        expected_kl += p * (std::log(p) - digamma(alpha) + psi_sum);
        kl_mean += p * (std::log(p) - std::log(mean_row[j]));
      }
      const double err = post.reward_post_mean(s, a) - true_mdp.reward_mean(s, a);
      const double reward_mse = err * err / two_var;
      const double reward_var = post.reward_post_var(s, a) / two_var;
      mse += w * (kl_mean + reward_mse);
      // E[KL] - KL(p* || mean) = sum p* (log mean - E log theta) >= 0 by Jensen.
      var += w * (std::max(expected_kl - kl_mean, 0.0) + reward_var);
    }
  }
  return finish(mse, var, n_pairs, PilSource::kExactTabular);
}

PilReport pil_tabular_validation(const ConjugatePosterior& post, const Dataset& train,
                                 const Dataset& validation) {
  if (validation.empty()) throw UndefinedPilError("empty validation split; PIL is undefined");
  if (train.empty()) throw DataError("pil_tabular_validation: empty training split");
  const int n_states = post.n_states();
  constexpr double kFloor = 1e-6;

  const double n_train = static_cast<double>(train.size());
  double r_mean = 0.0;
  Vec freq = Vec::Zero(n_states);
  for (const auto& t : train.transitions) {
    r_mean += t.r;
    freq[t.next_state_index()] += 1.0;
  }
  r_mean /= n_train;
  freq /= n_train;
  double r_var = 0.0;
  for (const auto& t : train.transitions) r_var += (t.r - r_mean) * (t.r - r_mean);
  r_var = std::max(r_var / n_train, kFloor);
  const double s_var = std::max((freq.array() * (1.0 - freq.array())).sum(), kFloor);
  const double noise_var = post.env().reward_std * post.env().reward_std;

  std::vector<double> e_terms, v_terms;
  e_terms.reserve(validation.size());
  v_terms.reserve(validation.size());
  for (const auto& t : validation.transitions) {
    const int s = t.state_index();
    const int a = t.action_index();
    const Vec p_bar = post.mean_row(s, a);
    const double m = post.reward_post_mean(s, a);
    const double v = post.reward_post_var(s, a);
    Vec one_hot = Vec::Zero(n_states);
    one_hot[t.next_state_index()] = 1.0;
    e_terms.push_back((m - t.r) * (m - t.r) / (2.0 * r_var) +
                      (p_bar - one_hot).squaredNorm() / (2.0 * s_var));
    v_terms.push_back((v + noise_var) / (2.0 * r_var) +
                      (p_bar.array() * (1.0 - p_bar.array())).sum() / (2.0 * s_var));
  }
  const double n = static_cast<double>(validation.size());
  return finish(pairwise_sum(e_terms) / n, pairwise_sum(v_terms) / n, validation.size(),
                PilSource::kTabularValidation);
}

PilReport pil_gaussian(const EnsembleModel& model, const Dataset& validation,
                       std::size_t min_points) {
  if (!model.trained && model.elites.empty()) throw DataError("pil_gaussian needs a model with elites");
  if (validation.size() < std::max<std::size_t>(min_points, 1)) {
    throw UndefinedPilError("validation set has " + std::to_string(validation.size()) +
                            " transitions, fewer than " + std::to_string(min_points) +
                            "; PIL is undefined");
  }
  const long n = static_cast<long>(validation.size());
  Mat x(model.in_dim(), n), y(model.out_dim(), n);
  for (long i = 0; i < n; ++i) {
    const auto& t = validation.transitions[static_cast<std::size_t>(i)];
    x.col(i) = model.raw_input(t.s, t.a);
    y.col(i) = model.raw_target(t);
  }
  x = model.input_norm.apply(x);
  y = model.target_norm.apply(y);

  std::vector<MemberOutput> outs;
  for (int e : model.elites) outs.push_back(member_forward(model, e, x));
  const double k = static_cast<double>(outs.size());
  Mat mean = Mat::Zero(y.rows(), n);
  for (const auto& o : outs) mean += o.mean;
  mean /= k;

  std::vector<double> e_terms(static_cast<std::size_t>(n)), v_terms(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    e_terms[static_cast<std::size_t>(i)] = 0.5 * (mean.col(i) - y.col(i)).squaredNorm();
    double spread = 0.0;
    for (const auto& o : outs) {
      spread += (o.mean.col(i) - mean.col(i)).squaredNorm() + o.logvar.col(i).array().exp().sum();
    }
    v_terms[static_cast<std::size_t>(i)] = 0.5 * spread / k;
  }
  const double nn = static_cast<double>(n);
  return finish(pairwise_sum(e_terms) / nn, pairwise_sum(v_terms) / nn, validation.size(),
                PilSource::kGaussianValidation);
}

bool balance_check(const PilReport& report, double threshold) {
  return report.balance_ratio <= threshold;
}

void PilHistory::add(std::size_t n, const PilReport& report) {
  if (!entries.empty() && n <= entries.back().n) {
    throw DataError("PIL history entries must have strictly increasing N");
  }
  entries.push_back({n, report});
}

std::vector<InfoRate> info_rate(const PilHistory& history) {
  if (history.entries.size() < 2) throw DataError("info_rate needs at least two entries");
  std::vector<InfoRate> rates;
  for (std::size_t k = 1; k < history.entries.size(); ++k) {
    const auto& prev = history.entries[k - 1];
    const auto& cur = history.entries[k];
    rates.push_back({cur.n, (cur.report.pil - prev.report.pil) /
                                (static_cast<double>(cur.n) - static_cast<double>(prev.n))});
  }
  return rates;
}

void write_pil_history_csv(std::ostream& out, const PilHistory& history) {
  const auto old_precision = out.precision(17);
  out << "N,mse_term,var_term,pil,balance_ratio,rate\n";
  for (std::size_t k = 0; k < history.entries.size(); ++k) {
    const auto& e = history.entries[k];
    out << e.n << ',' << e.report.mse_term << ',' << e.report.var_term << ',' << e.report.pil
        << ',' << e.report.balance_ratio << ',';
    if (k > 0) {
      const auto& prev = history.entries[k - 1];
      out << (e.report.pil - prev.report.pil) /
                 (static_cast<double>(e.n) - static_cast<double>(prev.n));
    }
    out << '\n';
  }
  out.precision(old_precision);
}

}  // namespace sorel
