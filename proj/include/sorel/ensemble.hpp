#pragma once

#include <string>
#include <vector>

#include "sorel/mdp.hpp"

namespace sorel {

/// Model hyperparameters (architecture and prior).
struct ModelConfig {
  int n_layers = 3;
  int hidden = 200;
  /// Scale of the frozen randomised-prior network added to the mean heads.
  double prior_scale = 1.0;
  double logvar_max_init = 0.5;
  double logvar_min_init = -10.0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Approximate-inference hyperparameters (ensemble size and training).
struct InferenceConfig {
  int n_members = 7;
  int n_elites = 5;
  double logvar_diff_coeff = 0.01;
  double validation_split = 0.1;
  int batch_size = 64;
  int epochs = 400;
  double learning_rate = 1e-3;
  /// Cosine schedule ends at learning_rate * final_lr_fraction.
  double final_lr_fraction = 0.1;
  double weight_decay = 2.5e-5;

  void validate() const;
  friend bool operator==(const InferenceConfig&, const InferenceConfig&) = default;
};

/// Fully connected ReLU network. weights[l] is out x in.
struct Mlp {
  std::vector<Mat> weights;
  std::vector<Vec> biases;

  /// Zero network of the given layer sizes (input, hidden..., output).
  static Mlp zeros(const std::vector<int>& sizes);
  /// Uniform fan-in initialisation with bound sqrt(3 / fan_in).
  static Mlp lecun(const std::vector<int>& sizes, Rng& rng);

  /// Columns of x are inputs.
  Mat forward(const Mat& x) const;
  std::size_t n_params() const;
};

/// Gaussian prediction of (r, delta) in raw (unnormalised) units.
struct GaussianPrediction {
  double mean_r = 0.0;
  double var_r = 1.0;
  Vec mean_delta;
  Vec var_delta;
};

struct Normalizer {
  Vec mean;
  Vec std;

  static Normalizer fit(const Mat& columns);
  Mat apply(const Mat& x) const;
};

/// Ensemble of Gaussian (r, delta) models. Each member outputs 2D values per
/// input: D means followed by D raw log-variances, D = 1 + state_dim. The mean
/// half additionally receives prior_scale times a frozen network's output.
struct EnsembleModel {
  ModelConfig model_config;
  InferenceConfig inference_config;
  int state_dim = 0;
  int action_dim = 0;
  std::vector<Mlp> members;
  std::vector<Mlp> priors;
  /// Shared soft-clamp bounds, one per output dimension.
  Vec logvar_max;
  Vec logvar_min;
  std::vector<int> elites;
  Normalizer input_norm;
  Normalizer target_norm;
  double reward_clip_low = 0.0;
  double reward_clip_high = 0.0;
  /// Observed state box; sampled next states are clamped to it.
  Vec state_low, state_high;
  bool trained = false;

  int out_dim() const { return 1 + state_dim; }
  int in_dim() const { return state_dim + action_dim; }

  /// Freshly initialised, untrained ensemble with identity normalisers.
  static EnsembleModel init(const ModelConfig& mc, const InferenceConfig& ic, int state_dim,
                            int action_dim, std::uint64_t seed);

  /// Network input [s; a].
  Vec raw_input(const Vec& s, const Vec& a) const;
  /// Target [r; s_next - s].
  Vec raw_target(const Transition& t) const;
};

/// Per-member normalised outputs for a batch: mean and soft-clamped
/// log-variance, each D x B.
struct MemberOutput {
  Mat mean;
  Mat logvar;
};

/// Forward pass of one member on normalised inputs (columns).
MemberOutput member_forward(const EnsembleModel& model, int member, const Mat& x_norm);

/// Two-sided soft clamp: hi - softplus(hi - raw), then lo + softplus(. - lo),
/// finally capped at hi.
double soft_clamp(double raw, double lo, double hi);

struct EnsembleGradients {
  std::vector<Mlp> members;
  Vec logvar_max;
  Vec logvar_min;
};

struct LossResult {
  double loss = 0.0;
  EnsembleGradients grad;
};

/// Sum over members of the batch-mean of sum_d [xi + (y - mu)^2 exp(-xi)], plus
/// logvar_diff_coeff * sum_d (logvar_max - logvar_min). Targets are normalised
/// by the stored constants. `member_batches[m]` holds the batch of member m;
/// the overload without it feeds the same batch to every member.
LossResult nll_loss(const EnsembleModel& model,
                    const std::vector<std::vector<Transition>>& member_batches);
LossResult nll_loss(const EnsembleModel& model, const std::vector<Transition>& batch);

/// Flattened trainable parameters (members in order, then logvar_max,
/// logvar_min) and the matching gradient layout.
Vec flatten_parameters(const EnsembleModel& model);
void assign_parameters(EnsembleModel& model, const Vec& flat);
Vec flatten_gradients(const EnsembleGradients& grad);

struct TrainingStats {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  /// Normalised validation MSE of every member.
  std::vector<double> member_val_mse;
  /// Normalised validation MSE of the elite-averaged mean.
  double val_mse = 0.0;
  std::size_t n_train = 0;
  std::size_t n_validation = 0;
};

struct TrainResult {
  EnsembleModel model;
  TrainingStats stats;
  Dataset train;
  Dataset validation;
};

/// Shuffled (seeded) train / validation split. Validation gets
/// floor(fraction * N) transitions.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double validation_fraction,
                                          std::uint64_t seed);

/// Trains the ensemble with Adam, decoupled weight decay and a cosine learning
/// rate schedule; elites are the members with the lowest validation MSE.
/// Throws UndefinedPilError when the validation split is smaller than one batch
/// and NumericError when the loss diverges. Continuous datasets only.
TrainResult train_ensemble(const Dataset& data, const ModelConfig& mc, const InferenceConfig& ic,
                           std::uint64_t seed);

/// Prediction of a single member in raw units.
GaussianPrediction predict(const EnsembleModel& model, int member, const Vec& s, const Vec& a);

struct SampledStep {
  double r = 0.0;
  Vec s_next;
};

/// Draws an elite uniformly, samples (r, delta) from it, clips r to the
/// dataset reward range and returns s + delta.
SampledStep predict_and_sample(const EnsembleModel& model, const Vec& s, const Vec& a, Rng& rng);
/// Same, using a given member.
SampledStep sample_member(const EnsembleModel& model, int member, const Vec& s, const Vec& a,
                          Rng& rng);

inline constexpr const char* kCheckpointVersion = "sorel-ensemble-v1";

void save_checkpoint(const std::string& path, const EnsembleModel& model);
EnsembleModel load_checkpoint(const std::string& path);

}  // namespace sorel
