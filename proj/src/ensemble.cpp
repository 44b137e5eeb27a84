#include "sorel/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "sorel/special.hpp"

namespace sorel {

using nlohmann::json;

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("model n_layers must be at least 1");
  if (hidden < 1) throw ConfigError("model hidden width must be at least 1");
  if (!(prior_scale >= 0.0)) throw ConfigError("prior_scale must be nonnegative");
  if (!(logvar_max_init >= logvar_min_init)) {
    throw ConfigError("logvar_max_init must be at least logvar_min_init");
  }
}

void InferenceConfig::validate() const {
  if (n_members < 1) throw ConfigError("n_members must be at least 1");
  if (n_elites < 1 || n_elites > n_members) throw ConfigError("n_elites must lie in [1, n_members]");
  if (!(logvar_diff_coeff >= 0.0)) throw ConfigError("logvar_diff_coeff must be nonnegative");
  if (!(validation_split > 0.0 && validation_split < 1.0)) {
    throw ConfigError("validation_split must lie in (0, 1)");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) {
    throw ConfigError("final_lr_fraction must lie in [0, 1]");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
}

// --- Mlp ----------------------------------------------------------------------

Mlp Mlp::zeros(const std::vector<int>& sizes) {
  Mlp net;
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    net.weights.push_back(Mat::Zero(sizes[l], sizes[l - 1]));
    net.biases.push_back(Vec::Zero(sizes[l]));
  }
  return net;
}

Mlp Mlp::lecun(const std::vector<int>& sizes, Rng& rng) {
  Mlp net = zeros(sizes);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const double bound = std::sqrt(3.0 / static_cast<double>(net.weights[l].cols()));
    std::uniform_real_distribution<double> unif(-bound, bound);
    for (long i = 0; i < net.weights[l].size(); ++i) net.weights[l].data()[i] = unif(rng);
  }
  return net;
}

Mat Mlp::forward(const Mat& x) const {
  Mat h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Mat z = (weights[l] * h).colwise() + biases[l];
    if (l + 1 < weights.size()) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

std::size_t Mlp::n_params() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

// --- Normalizer -----------------------------------------------------------------

Normalizer Normalizer::fit(const Mat& columns) {
  Normalizer n;
  const double count = static_cast<double>(columns.cols());
  n.mean = columns.rowwise().mean();
  n.std = Vec(columns.rows());
  for (long d = 0; d < columns.rows(); ++d) {
    const double var = (columns.row(d).array() - n.mean[d]).square().sum() / count;
    const double sd = std::sqrt(var);
    n.std[d] = sd > 1e-8 ? sd : 1.0;
  }
  return n;
}

Mat Normalizer::apply(const Mat& x) const {
  return (x.colwise() - mean).array().colwise() / std.array();
}

// --- Model ----------------------------------------------------------------------

namespace {

std::vector<int> layer_sizes(const ModelConfig& mc, int in_dim, int out_dim) {
  std::vector<int> sizes{in_dim};
  for (int l = 0; l < mc.n_layers; ++l) sizes.push_back(mc.hidden);
  sizes.push_back(2 * out_dim);
  return sizes;
}

}  // namespace

EnsembleModel EnsembleModel::init(const ModelConfig& mc, const InferenceConfig& ic, int state_dim,
                                  int action_dim, std::uint64_t seed) {
  mc.validate();
  ic.validate();
  if (state_dim < 1 || action_dim < 1) throw DataError("ensemble needs positive dimensions");
  EnsembleModel m;
  m.model_config = mc;
  m.inference_config = ic;
  m.state_dim = state_dim;
  m.action_dim = action_dim;
  const auto sizes = layer_sizes(mc, m.in_dim(), m.out_dim());
  for (int k = 0; k < ic.n_members; ++k) {
    Rng member_rng = make_rng(seed, 100 + static_cast<std::uint64_t>(k));
    Rng prior_rng = make_rng(seed, 10000 + static_cast<std::uint64_t>(k));
    m.members.push_back(Mlp::lecun(sizes, member_rng));
    m.priors.push_back(Mlp::lecun(sizes, prior_rng));
  }
  m.logvar_max = Vec::Constant(m.out_dim(), mc.logvar_max_init);
  m.logvar_min = Vec::Constant(m.out_dim(), mc.logvar_min_init);
  m.elites.resize(static_cast<std::size_t>(ic.n_members));
  std::iota(m.elites.begin(), m.elites.end(), 0);
  m.input_norm = {Vec::Zero(m.in_dim()), Vec::Ones(m.in_dim())};
  m.target_norm = {Vec::Zero(m.out_dim()), Vec::Ones(m.out_dim())};
  m.reward_clip_low = -std::numeric_limits<double>::infinity();
  m.reward_clip_high = std::numeric_limits<double>::infinity();
  m.state_low = Vec::Constant(state_dim, -std::numeric_limits<double>::infinity());
  m.state_high = Vec::Constant(state_dim, std::numeric_limits<double>::infinity());
  return m;
}

Vec EnsembleModel::raw_input(const Vec& s, const Vec& a) const {
  if (s.size() != state_dim || a.size() != action_dim) {
    throw DataError("state/action dimensions do not match the model");
  }
  Vec x(in_dim());
  x << s, a;
  return x;
}

Vec EnsembleModel::raw_target(const Transition& t) const {
  Vec y(out_dim());
  y << t.r, t.s_next - t.s;
  return y;
}

namespace {

struct ClampPartials {
  double value;
  double d_raw;
  double d_lo;
  double d_hi;
};

ClampPartials soft_clamp_partials(double raw, double lo, double hi) {
  const double u1 = hi - raw;
  const double x1 = hi - softplus(u1);
  const double u2 = x1 - lo;
  const double x2 = lo + softplus(u2);
  if (x2 > hi) return {hi, 0.0, 0.0, 1.0};
  const double s1 = sigmoid(u1);
  const double s2 = sigmoid(u2);
  return {x2, s2 * s1, 1.0 - s2, s2 * (1.0 - s1)};
}

struct ForwardCache {
  std::vector<Mat> activations;  // input, then post-ReLU hidden layers
  std::vector<Mat> pre;          // pre-activation of each hidden layer
  Mat out;
};

ForwardCache forward_cached(const Mlp& net, const Mat& x) {
  ForwardCache c;
  c.activations.push_back(x);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    Mat z = (net.weights[l] * c.activations.back()).colwise() + net.biases[l];
    if (l + 1 < net.weights.size()) {
      c.pre.push_back(z);
      c.activations.push_back(z.cwiseMax(0.0));
    } else {
      c.out = std::move(z);
    }
  }
  return c;
}

void backward(const Mlp& net, const ForwardCache& c, Mat d_out, Mlp& grad) {
  for (std::size_t l = net.weights.size(); l-- > 0;) {
    grad.weights[l] += d_out * c.activations[l].transpose();
    grad.biases[l] += d_out.rowwise().sum();
    if (l == 0) break;
    Mat d_act = net.weights[l].transpose() * d_out;
    d_out = d_act.cwiseProduct((c.pre[l - 1].array() > 0.0).matrix().cast<double>());
  }
}

MemberOutput head_outputs(const EnsembleModel& model, int member, const Mat& x_norm,
                          const Mat& raw_out) {
  const int d = model.out_dim();
  MemberOutput o;
  o.mean = raw_out.topRows(d);
  if (model.model_config.prior_scale != 0.0) {
    o.mean += model.model_config.prior_scale *
              model.priors[static_cast<std::size_t>(member)].forward(x_norm).topRows(d);
  }
  o.logvar = Mat(d, raw_out.cols());
  for (long b = 0; b < raw_out.cols(); ++b) {
    for (int k = 0; k < d; ++k) {
      o.logvar(k, b) = soft_clamp(raw_out(d + k, b), model.logvar_min[k], model.logvar_max[k]);
    }
  }
  return o;
}

struct NormalisedBatch {
  Mat x;
  Mat y;
};

NormalisedBatch normalise_batch(const EnsembleModel& model, const std::vector<Transition>& batch) {
  NormalisedBatch nb{Mat(model.in_dim(), static_cast<long>(batch.size())),
                     Mat(model.out_dim(), static_cast<long>(batch.size()))};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    nb.x.col(static_cast<long>(i)) = model.raw_input(batch[i].s, batch[i].a);
    nb.y.col(static_cast<long>(i)) = model.raw_target(batch[i]);
  }
  nb.x = model.input_norm.apply(nb.x);
  nb.y = model.target_norm.apply(nb.y);
  return nb;
}

EnsembleGradients zero_gradients(const EnsembleModel& model) {
  EnsembleGradients g;
  const auto sizes = layer_sizes(model.model_config, model.in_dim(), model.out_dim());
  g.members.assign(model.members.size(), Mlp::zeros(sizes));
  g.logvar_max = Vec::Zero(model.out_dim());
  g.logvar_min = Vec::Zero(model.out_dim());
  return g;
}

/// Loss on already normalised member batches; gradients are accumulated only
/// when `grad` is non-null.
double loss_core(const EnsembleModel& model, const std::vector<const Mat*>& xs,
                 const std::vector<const Mat*>& ys, EnsembleGradients* grad) {
  const int d = model.out_dim();
  double total = 0.0;
  for (std::size_t m = 0; m < model.members.size(); ++m) {
    const Mat& x = *xs[m];
    const Mat& y = *ys[m];
    const long n = x.cols();
    if (n == 0) throw DataError("nll_loss: empty batch");
    const ForwardCache cache = forward_cached(model.members[m], x);
    Mat mean = cache.out.topRows(d);
    if (model.model_config.prior_scale != 0.0) {
      mean += model.model_config.prior_scale * model.priors[m].forward(x).topRows(d);
    }
    Mat d_out = Mat::Zero(2 * d, n);
    double member_loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (long b = 0; b < n; ++b) {
      for (int k = 0; k < d; ++k) {
        const auto cp = soft_clamp_partials(cache.out(d + k, b), model.logvar_min[k],
                                            model.logvar_max[k]);
        const double resid = y(k, b) - mean(k, b);
        const double inv_var = std::exp(-cp.value);
        const double term = cp.value + resid * resid * inv_var;
        if (!std::isfinite(term)) {
          throw NumericError("nll_loss: non-finite loss in output dimension " + std::to_string(k) +
                             " of member " + std::to_string(m));
        }
        member_loss += term;
        if (grad != nullptr) {
          const double d_xi = (1.0 - resid * resid * inv_var) * inv_n;
          d_out(k, b) = -2.0 * resid * inv_var * inv_n;
          d_out(d + k, b) = d_xi * cp.d_raw;
          grad->logvar_min[k] += d_xi * cp.d_lo;
          grad->logvar_max[k] += d_xi * cp.d_hi;
        }
      }
    }
    total += member_loss * inv_n;
    if (grad != nullptr) backward(model.members[m], cache, std::move(d_out), grad->members[m]);
  }
  const double c = model.inference_config.logvar_diff_coeff;
  total += c * (model.logvar_max - model.logvar_min).sum();
  if (grad != nullptr) {
    grad->logvar_max.array() += c;
    grad->logvar_min.array() -= c;
  }
  return total;
}

}  // namespace

double soft_clamp(double raw, double lo, double hi) { return soft_clamp_partials(raw, lo, hi).value; }

MemberOutput member_forward(const EnsembleModel& model, int member, const Mat& x_norm) {
  if (member < 0 || member >= static_cast<int>(model.members.size())) {
    throw DataError("member index out of range");
  }
  return head_outputs(model, member, x_norm,
                      model.members[static_cast<std::size_t>(member)].forward(x_norm));
}

LossResult nll_loss(const EnsembleModel& model,
                    const std::vector<std::vector<Transition>>& member_batches) {
  if (member_batches.size() != model.members.size()) {
    throw DataError("nll_loss: need one batch per member");
  }
  std::vector<NormalisedBatch> batches;
  batches.reserve(member_batches.size());
  for (const auto& b : member_batches) {
    if (b.empty()) throw DataError("nll_loss: empty batch");
    batches.push_back(normalise_batch(model, b));
  }
  std::vector<const Mat*> xs, ys;
  for (const auto& b : batches) {
    xs.push_back(&b.x);
    ys.push_back(&b.y);
  }
  LossResult r;
  r.grad = zero_gradients(model);
  r.loss = loss_core(model, xs, ys, &r.grad);
  return r;
}

LossResult nll_loss(const EnsembleModel& model, const std::vector<Transition>& batch) {
  return nll_loss(model, std::vector<std::vector<Transition>>(model.members.size(), batch));
}

// --- Flattening -----------------------------------------------------------------

namespace {

template <typename Fn>
void for_each_block(std::vector<Mlp>& nets, Vec& hi, Vec& lo, Fn fn) {
  for (auto& net : nets) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      fn(net.weights[l].data(), net.weights[l].size());
      fn(net.biases[l].data(), net.biases[l].size());
    }
  }
  fn(hi.data(), hi.size());
  fn(lo.data(), lo.size());
}

std::size_t count_params(const std::vector<Mlp>& nets, long out_dim) {
  std::size_t n = 2 * static_cast<std::size_t>(out_dim);
  for (const auto& net : nets) n += net.n_params();
  return n;
}

Vec flatten_blocks(std::vector<Mlp>& nets, Vec& hi, Vec& lo) {
  Vec flat(static_cast<long>(count_params(nets, hi.size())));
  long pos = 0;
  for_each_block(nets, hi, lo, [&](double* p, long n) {
    std::copy(p, p + n, flat.data() + pos);
    pos += n;
  });
  return flat;
}

}  // namespace

Vec flatten_parameters(const EnsembleModel& model) {
  auto& m = const_cast<EnsembleModel&>(model);
  return flatten_blocks(m.members, m.logvar_max, m.logvar_min);
}

void assign_parameters(EnsembleModel& model, const Vec& flat) {
  if (static_cast<std::size_t>(flat.size()) != count_params(model.members, model.out_dim())) {
    throw DataError("assign_parameters: wrong parameter count");
  }
  long pos = 0;
  for_each_block(model.members, model.logvar_max, model.logvar_min, [&](double* p, long n) {
    std::copy(flat.data() + pos, flat.data() + pos + n, p);
    pos += n;
  });
}

Vec flatten_gradients(const EnsembleGradients& grad) {
  auto& g = const_cast<EnsembleGradients&>(grad);
  return flatten_blocks(g.members, g.logvar_max, g.logvar_min);
}

// --- Training -------------------------------------------------------------------

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double validation_fraction,
                                          std::uint64_t seed) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 3);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(
      std::floor(validation_fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<long>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(val)};
}

namespace {

Mat stack_inputs(const EnsembleModel& m, const Dataset& d) {
  Mat x(m.in_dim(), static_cast<long>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    x.col(static_cast<long>(i)) = m.raw_input(d.transitions[i].s, d.transitions[i].a);
  }
  return x;
}

Mat stack_targets(const EnsembleModel& m, const Dataset& d) {
  Mat y(m.out_dim(), static_cast<long>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) y.col(static_cast<long>(i)) = m.raw_target(d.transitions[i]);
  return y;
}

double full_loss(const EnsembleModel& model, const Mat& x, const Mat& y) {
  std::vector<const Mat*> xs(model.members.size(), &x);
  std::vector<const Mat*> ys(model.members.size(), &y);
  return loss_core(model, xs, ys, nullptr);
}

}  // namespace

TrainResult train_ensemble(const Dataset& data, const ModelConfig& mc, const InferenceConfig& ic,
                           std::uint64_t seed) {
  mc.validate();
  ic.validate();
  if (data.header.discrete) throw DataError("the ensemble backend needs a continuous dataset");
  if (data.empty()) throw DataError("train_ensemble: empty dataset");
  TrainResult result;
  std::tie(result.train, result.validation) = split_dataset(data, ic.validation_split, seed);
  if (result.validation.size() < static_cast<std::size_t>(ic.batch_size)) {
    throw UndefinedPilError("validation split has " + std::to_string(result.validation.size()) +
                            " transitions, fewer than one batch of " +
                            std::to_string(ic.batch_size) + "; PIL is undefined");
  }
  EnsembleModel model =
      EnsembleModel::init(mc, ic, data.header.state_dim, data.header.action_dim, seed);

  const Mat x_raw = stack_inputs(model, result.train);
  const Mat y_raw = stack_targets(model, result.train);
  model.input_norm = Normalizer::fit(x_raw);
  model.target_norm = Normalizer::fit(y_raw);
  const Mat x = model.input_norm.apply(x_raw);
  const Mat y = model.target_norm.apply(y_raw);

  const auto rewards = data.rewards();
  model.reward_clip_low = *std::min_element(rewards.begin(), rewards.end());
  model.reward_clip_high = *std::max_element(rewards.begin(), rewards.end());
  model.state_low = Vec::Constant(model.state_dim, std::numeric_limits<double>::infinity());
  model.state_high = -model.state_low;
  for (const auto& t : data.transitions) {
    model.state_low = model.state_low.cwiseMin(t.s).cwiseMin(t.s_next);
    model.state_high = model.state_high.cwiseMax(t.s).cwiseMax(t.s_next);
  }

  const long n_train = x.cols();
  const long batch = std::min<long>(ic.batch_size, n_train);
  const long batches_per_epoch = (n_train + batch - 1) / batch;
  const long total_steps = batches_per_epoch * ic.epochs;

  result.stats.initial_loss = full_loss(model, x, y);
  Vec params = flatten_parameters(model);
  const long n_net = params.size() - 2 * model.out_dim();
  Vec m1 = Vec::Zero(params.size());
  Vec m2 = Vec::Zero(params.size());
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;

  const std::size_t n_members = model.members.size();
  std::vector<Rng> shuffle_rngs;
  for (std::size_t k = 0; k < n_members; ++k) shuffle_rngs.push_back(make_rng(seed, 500 + k));
  std::vector<std::vector<long>> orders(n_members, std::vector<long>(static_cast<std::size_t>(n_train)));
  std::vector<Mat> xb(n_members), yb(n_members);
  std::vector<const Mat*> xs(n_members), ys(n_members);

  long step = 0;
  for (int epoch = 0; epoch < ic.epochs; ++epoch) {
    for (std::size_t k = 0; k < n_members; ++k) {
      std::iota(orders[k].begin(), orders[k].end(), 0);
      std::shuffle(orders[k].begin(), orders[k].end(), shuffle_rngs[k]);
    }
    for (long bi = 0; bi < batches_per_epoch; ++bi, ++step) {
      const long start = bi * batch;
      const long len = std::min(batch, n_train - start);
      for (std::size_t k = 0; k < n_members; ++k) {
        xb[k].resize(x.rows(), len);
        yb[k].resize(y.rows(), len);
        for (long j = 0; j < len; ++j) {
          const long idx = orders[k][static_cast<std::size_t>(start + j)];
          xb[k].col(j) = x.col(idx);
          yb[k].col(j) = y.col(idx);
        }
        xs[k] = &xb[k];
        ys[k] = &yb[k];
      }
      EnsembleGradients grad = zero_gradients(model);
      const double loss = loss_core(model, xs, ys, &grad);
      if (!std::isfinite(loss)) throw NumericError("ensemble training diverged (loss is not finite)");
      const Vec g = flatten_gradients(grad);
      const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
      const double lr =
          ic.learning_rate * (ic.final_lr_fraction + (1.0 - ic.final_lr_fraction) * 0.5 *
                                                         (1.0 + std::cos(std::numbers::pi * progress)));
      const double t = static_cast<double>(step + 1);
      const double bc1 = 1.0 - std::pow(kBeta1, t);
      const double bc2 = 1.0 - std::pow(kBeta2, t);
      m1 = kBeta1 * m1 + (1.0 - kBeta1) * g;
      m2 = kBeta2 * m2 + (1.0 - kBeta2) * g.cwiseProduct(g);
      params.head(n_net) *= (1.0 - lr * ic.weight_decay);
      params.array() -= lr * (m1.array() / bc1) / ((m2.array() / bc2).sqrt() + kEps);
      assign_parameters(model, params);
    }
  }
  result.stats.final_loss = full_loss(model, x, y);
  if (!std::isfinite(result.stats.final_loss)) {
    throw NumericError("ensemble training diverged (final loss is not finite)");
  }

  // Elite selection on validation MSE (normalised targets), ties to lowest index.
  const Mat xv = model.input_norm.apply(stack_inputs(model, result.validation));
  const Mat yv = model.target_norm.apply(stack_targets(model, result.validation));
  std::vector<Mat> member_means;
  for (std::size_t k = 0; k < n_members; ++k) {
    member_means.push_back(member_forward(model, static_cast<int>(k), xv).mean);
    result.stats.member_val_mse.push_back((member_means.back() - yv).squaredNorm() /
                                          static_cast<double>(yv.size()));
  }
  std::vector<int> order(n_members);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return result.stats.member_val_mse[static_cast<std::size_t>(a)] <
           result.stats.member_val_mse[static_cast<std::size_t>(b)];
  });
  model.elites.assign(order.begin(), order.begin() + ic.n_elites);
  std::sort(model.elites.begin(), model.elites.end());
  Mat elite_mean = Mat::Zero(yv.rows(), yv.cols());
  for (int e : model.elites) elite_mean += member_means[static_cast<std::size_t>(e)];
  elite_mean /= static_cast<double>(model.elites.size());
  result.stats.val_mse = (elite_mean - yv).squaredNorm() / static_cast<double>(yv.size());
  result.stats.n_train = result.train.size();
  result.stats.n_validation = result.validation.size();
  model.trained = true;
  result.model = std::move(model);
  return result;
}

// --- Prediction -----------------------------------------------------------------

GaussianPrediction predict(const EnsembleModel& model, int member, const Vec& s, const Vec& a) {
  const Mat x = model.input_norm.apply(model.raw_input(s, a));
  const MemberOutput o = member_forward(model, member, x);
  const Vec& mu = model.target_norm.mean;
  const Vec& sd = model.target_norm.std;
  GaussianPrediction p;
  p.mean_r = o.mean(0, 0) * sd[0] + mu[0];
  p.var_r = std::exp(o.logvar(0, 0)) * sd[0] * sd[0];
  const int n = model.state_dim;
  p.mean_delta = o.mean.col(0).tail(n).cwiseProduct(sd.tail(n)) + mu.tail(n);
  p.var_delta = o.logvar.col(0).tail(n).array().exp().matrix().cwiseProduct(
      sd.tail(n).cwiseProduct(sd.tail(n)));
  return p;
}

SampledStep sample_member(const EnsembleModel& model, int member, const Vec& s, const Vec& a,
                          Rng& rng) {
  if (!model.trained) throw DataError("cannot sample from an untrained model");
  const GaussianPrediction p = predict(model, member, s, a);
  std::normal_distribution<double> normal(0.0, 1.0);
  SampledStep out;
  out.r = std::clamp(p.mean_r + std::sqrt(p.var_r) * normal(rng), model.reward_clip_low,
                     model.reward_clip_high);
  Vec delta = p.mean_delta;
  for (long i = 0; i < delta.size(); ++i) delta[i] += std::sqrt(p.var_delta[i]) * normal(rng);
  out.s_next = (s + delta).cwiseMax(model.state_low).cwiseMin(model.state_high);
  return out;
}

SampledStep predict_and_sample(const EnsembleModel& model, const Vec& s, const Vec& a, Rng& rng) {
  if (!model.trained || model.elites.empty()) throw DataError("cannot sample from an untrained model");
  std::uniform_int_distribution<std::size_t> pick(0, model.elites.size() - 1);
  return sample_member(model, model.elites[pick(rng)], s, a, rng);
}

// --- Checkpoints ----------------------------------------------------------------

namespace {

json vec_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec vec_from_json(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(values.data(), static_cast<long>(values.size()));
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (long r = 0; r < m.rows(); ++r) rows.push_back(vec_to_json(m.row(r).transpose()));
  return rows;
}

Mat mat_from_json(const json& j) {
  Mat m(static_cast<long>(j.size()), j.empty() ? 0 : static_cast<long>(j[0].size()));
  for (long r = 0; r < m.rows(); ++r) m.row(r) = vec_from_json(j[static_cast<std::size_t>(r)]).transpose();
  return m;
}

json net_to_json(const Mlp& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    layers.push_back({{"w", mat_to_json(net.weights[l])}, {"b", vec_to_json(net.biases[l])}});
  }
  return layers;
}

Mlp net_from_json(const json& j) {
  Mlp net;
  for (const auto& layer : j) {
    net.weights.push_back(mat_from_json(layer.at("w")));
    net.biases.push_back(vec_from_json(layer.at("b")));
  }
  return net;
}

double finite_or(double x, double fallback) { return std::isfinite(x) ? x : fallback; }

}  // namespace

void save_checkpoint(const std::string& path, const EnsembleModel& m) {
  const auto& mc = m.model_config;
  const auto& ic = m.inference_config;
  json j;
  j["version"] = kCheckpointVersion;
  j["model_config"] = {{"n_layers", mc.n_layers},
                       {"hidden", mc.hidden},
                       {"prior_scale", mc.prior_scale},
                       {"logvar_max_init", mc.logvar_max_init},
                       {"logvar_min_init", mc.logvar_min_init}};
  j["inference_config"] = {{"n_members", ic.n_members},
                           {"n_elites", ic.n_elites},
                           {"logvar_diff_coeff", ic.logvar_diff_coeff},
                           {"validation_split", ic.validation_split},
                           {"batch_size", ic.batch_size},
                           {"epochs", ic.epochs},
                           {"learning_rate", ic.learning_rate},
                           {"final_lr_fraction", ic.final_lr_fraction},
                           {"weight_decay", ic.weight_decay}};
  j["state_dim"] = m.state_dim;
  j["action_dim"] = m.action_dim;
  j["members"] = json::array();
  for (const auto& net : m.members) j["members"].push_back(net_to_json(net));
  j["priors"] = json::array();
  for (const auto& net : m.priors) j["priors"].push_back(net_to_json(net));
  j["logvar_max"] = vec_to_json(m.logvar_max);
  j["logvar_min"] = vec_to_json(m.logvar_min);
  j["elites"] = m.elites;
  j["input_norm"] = {{"mean", vec_to_json(m.input_norm.mean)}, {"std", vec_to_json(m.input_norm.std)}};
  j["target_norm"] = {{"mean", vec_to_json(m.target_norm.mean)},
                      {"std", vec_to_json(m.target_norm.std)}};
  // JSON has no infinities; an untrained model stores its open bounds as null.
  auto bound = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  j["reward_clip"] = {bound(m.reward_clip_low), bound(m.reward_clip_high)};
  json lo = json::array(), hi = json::array();
  for (long i = 0; i < m.state_low.size(); ++i) {
    lo.push_back(bound(m.state_low[i]));
    hi.push_back(bound(m.state_high[i]));
  }
  j["state_low"] = lo;
  j["state_high"] = hi;
  j["trained"] = m.trained;
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump() << '\n';
}

EnsembleModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  if (j.value("version", std::string()) != kCheckpointVersion) {
    throw DataError("checkpoint '" + path + "' has an unsupported version tag");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  auto unbound = [](const json& v, double fallback) {
    return v.is_null() ? fallback : finite_or(v.get<double>(), fallback);
  };
  try {
    EnsembleModel m;
    const auto& mc = j.at("model_config");
    m.model_config = {mc.at("n_layers").get<int>(), mc.at("hidden").get<int>(),
                      mc.at("prior_scale").get<double>(), mc.at("logvar_max_init").get<double>(),
                      mc.at("logvar_min_init").get<double>()};
    const auto& ic = j.at("inference_config");
    m.inference_config = {ic.at("n_members").get<int>(),        ic.at("n_elites").get<int>(),
                          ic.at("logvar_diff_coeff").get<double>(), ic.at("validation_split").get<double>(),
                          ic.at("batch_size").get<int>(),       ic.at("epochs").get<int>(),
                          ic.at("learning_rate").get<double>(), ic.at("final_lr_fraction").get<double>(),
                          ic.at("weight_decay").get<double>()};
    m.state_dim = j.at("state_dim").get<int>();
    m.action_dim = j.at("action_dim").get<int>();
    for (const auto& net : j.at("members")) m.members.push_back(net_from_json(net));
    for (const auto& net : j.at("priors")) m.priors.push_back(net_from_json(net));
    m.logvar_max = vec_from_json(j.at("logvar_max"));
    m.logvar_min = vec_from_json(j.at("logvar_min"));
    m.elites = j.at("elites").get<std::vector<int>>();
    m.input_norm = {vec_from_json(j.at("input_norm").at("mean")),
                    vec_from_json(j.at("input_norm").at("std"))};
    m.target_norm = {vec_from_json(j.at("target_norm").at("mean")),
                     vec_from_json(j.at("target_norm").at("std"))};
    m.reward_clip_low = unbound(j.at("reward_clip")[0], -kInf);
    m.reward_clip_high = unbound(j.at("reward_clip")[1], kInf);
    m.state_low = Vec(m.state_dim);
    m.state_high = Vec(m.state_dim);
    for (int i = 0; i < m.state_dim; ++i) {
      m.state_low[i] = unbound(j.at("state_low")[static_cast<std::size_t>(i)], -kInf);
      m.state_high[i] = unbound(j.at("state_high")[static_cast<std::size_t>(i)], kInf);
    }
    m.trained = j.at("trained").get<bool>();
    if (m.members.size() != static_cast<std::size_t>(m.inference_config.n_members) ||
        m.priors.size() != m.members.size()) {
      throw DataError("checkpoint member count does not match its configuration");
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError("checkpoint '" + path + "' is malformed: " + e.what());
  }
}

}  // namespace sorel
