#include "sorel/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "sorel/dataset_io.hpp"

namespace sorel {

namespace {

Json grid_default() {
  return {{"phi_I", Json::array({Json::object()})},
          {"phi_II", Json::array({Json::object()})},
          {"phi_III", Json::array({Json::object()})}};
}

Json dataset_default(long n = 1000) { return {{"path", ""}, {"n", n}, {"seed", nullptr}}; }

Json prior_default() {
  const ConjugatePrior p;
  return {{"alpha0", p.alpha0}, {"mu0", p.mu0}, {"tau0_sq", p.tau0_sq}};
}

Json model_default() {
  const ModelConfig m;
  return {{"n_layers", m.n_layers},
          {"hidden", m.hidden},
          {"prior_scale", m.prior_scale},
          {"logvar_max_init", m.logvar_max_init},
          {"logvar_min_init", m.logvar_min_init}};
}

Json inference_default() {
  const InferenceConfig c;
  return {{"n_members", c.n_members},
          {"n_elites", c.n_elites},
          {"logvar_diff_coeff", c.logvar_diff_coeff},
          {"validation_split", c.validation_split},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"final_lr_fraction", c.final_lr_fraction},
          {"weight_decay", c.weight_decay}};
}

Json solver_default() {
  const SolverConfig c;
  return {{"solver", solver_kind_name(c.kind)},
          {"population", c.population},
          {"elite_fraction", c.elite_fraction},
          {"iterations", c.iterations},
          {"k_samples", c.k_samples},
          {"episodes_per_member", c.episodes_per_member},
          {"horizon", c.horizon},
          {"smoothing", c.smoothing},
          {"init_std", c.init_std},
          {"min_std", c.min_std},
          {"policy_std", c.policy_std},
          {"seed", c.seed}};
}

Json tabular_inference_default() {
  const TabularInferenceConfig c;
  return {{"validation_split", c.validation_split}, {"min_validation", c.min_validation}};
}

Json torel_default() {
  return {{"planner", "pessimistic"},
          {"values", Json::array({0.0, 0.1, 1.0, 10.0, 100.0})},
          {"stat", "median"},
          {"k_samples", 100},
          {"balance_threshold", kDefaultBalanceThreshold},
          {"validate", true}};
}

/// Sections replaced wholesale rather than merged key by key.
const std::set<std::string> kOpaqueKeys = {"env", "grid", "values", "prefixes", "d", "gamma",
                                           "inputs"};

void check_keys(const Json& user, const Json& schema, const std::string& path) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string where = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("unknown configuration key '" + where + "'");
    const Json& sub = schema.at(it.key());
    if (kOpaqueKeys.count(it.key()) > 0) continue;
    if (sub.is_object() && !sub.empty()) {
      if (!it.value().is_object()) throw ConfigError("configuration key '" + where + "' must be an object");
      check_keys(it.value(), sub, where);
    }
  }
}

void require_keys(const Json& j, const std::set<std::string>& allowed, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (allowed.count(it.key()) == 0) {
      throw ConfigError("unknown key '" + it.key() + "' in " + what);
    }
  }
}

std::set<std::string> keys_of(const Json& j) {
  std::set<std::string> out;
  for (auto it = j.begin(); it != j.end(); ++it) out.insert(it.key());
  return out;
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("configuration key '") + key + "' has the wrong type");
  }
}

}  // namespace

Json default_config(const std::string& command) {
  Json d = {{"seed", nullptr}, {"output_dir", "out"}};
  const Json env = {{"tabular", "chain5"}};
  if (command == "make-dataset") {
    d["env"] = env;
    d["dataset"] = dataset_default();
  } else if (command == "train-model") {
    d["env"] = env;
    d["dataset"] = dataset_default();
    d["prior"] = prior_default();
    d["model"] = model_default();
    d["inference"] = inference_default();
  } else if (command == "pil") {
    d["env"] = env;
    d["dataset"] = dataset_default();
    d["prior"] = prior_default();
    d["model"] = model_default();
    d["inference"] = inference_default();
    d["pil"] = {{"prefixes", Json::array()}, {"validation_split", 0.1}, {"exact", false}};
  } else if (command == "sorel") {
    d["env"] = env;
    d["dataset"] = dataset_default(100000);
    d["grid"] = grid_default();
    d["sorel"] = {{"prefixes", Json::array({100, 1000, 10000, 100000})},
                  {"r_deploy", 0.1},
                  {"stat", "median"},
                  {"balance_threshold", kDefaultBalanceThreshold},
                  {"k_samples", 100},
                  {"episodes_per_member", 64},
                  {"retune_every_n", false},
                  {"continue_after_deploy", false},
                  {"validate", true},
                  {"normalization", "env"}};
  } else if (command == "torel") {
    d["env"] = env;
    d["dataset"] = dataset_default();
    d["grid"] = grid_default();
    d["torel"] = torel_default();
  } else if (command == "ucb") {
    d["env"] = env;
    d["dataset"] = dataset_default();
    d["grid"] = grid_default();
    d["torel"] = torel_default();
    d["ucb"] = {{"episode_budget", 100}, {"exploration", UcbConfig{}.exploration}};
  } else if (command == "curves") {
    d["curves"] = {{"C", 1.0},
                   {"d", Json::array({10, 100, 1000, 10000})},
                   {"gamma", Json::array({0.9, 0.99, 0.999})},
                   {"n_min", 1.0},
                   {"n_max", 1e9},
                   {"per_decade", 20},
                   {"r_max", 0.5},
                   {"form", "sqrt_exp"}};
  } else if (command == "report") {
    d["report"] = {{"inputs", Json::array()}};
  } else {
    throw ConfigError("unknown command '" + command + "'");
  }
  return d;
}

ResolvedConfig resolve_config(const std::string& command, const Json& user) {
  if (!user.is_object()) throw ConfigError("configuration must be a JSON object");
  Json doc = default_config(command);
  check_keys(user, doc, "");
  if (!user.contains("seed") || !user.at("seed").is_number_integer()) {
    throw ConfigError("configuration needs an integer 'seed'");
  }
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (doc.at(it.key()).is_object() && kOpaqueKeys.count(it.key()) == 0) {
      for (auto sub = it.value().begin(); sub != it.value().end(); ++sub) {
        doc[it.key()][sub.key()] = sub.value();
      }
    } else {
      doc[it.key()] = it.value();
    }
  }
  ResolvedConfig rc;
  rc.command = command;
  rc.seed = user.at("seed").get<std::uint64_t>();
  if (const char* env_dir = std::getenv(kOutputDirEnv); env_dir != nullptr && *env_dir != '\0') {
    doc["output_dir"] = env_dir;
  }
  rc.output_dir = get_or<std::string>(doc, "output_dir", "out");
  if (doc.contains("dataset") && doc["dataset"]["seed"].is_null()) doc["dataset"]["seed"] = rc.seed;
  rc.doc = std::move(doc);
  return rc;
}

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("configuration '" + path + "' is not valid JSON: " + e.what());
  }
}

namespace {

TabularMdp parse_inline_tabular(const Json& j) {
  require_keys(j,
               {"env_id", "n_states", "n_actions", "transition", "reward_mean", "reward_std", "gamma",
                "initial_dist", "max_steps"},
               "inline tabular environment");
  try {
    const int n_s = j.at("n_states").get<int>();
    const int n_a = j.at("n_actions").get<int>();
    if (n_s < 1 || n_a < 1) throw ConfigError("inline MDP needs positive sizes");
    TabularMdp mdp(n_s, n_a, j.at("gamma").get<double>());
    mdp.env_id = get_or<std::string>(j, "env_id", "inline");
    mdp.reward_std = j.at("reward_std").get<double>();
    mdp.max_steps = get_or<int>(j, "max_steps", 100);
    const auto& tr = j.at("transition");
    const auto& rw = j.at("reward_mean");
    if (tr.size() != static_cast<std::size_t>(n_s) || rw.size() != static_cast<std::size_t>(n_s)) {
      throw ConfigError("inline MDP arrays must have n_states rows");
    }
    for (int s = 0; s < n_s; ++s) {
      for (int a = 0; a < n_a; ++a) {
        const auto row = tr.at(static_cast<std::size_t>(s)).at(static_cast<std::size_t>(a)).get<std::vector<double>>();
        if (row.size() != static_cast<std::size_t>(n_s)) throw ConfigError("transition row has the wrong length");
        std::copy(row.begin(), row.end(), mdp.row(s, a).begin());
        mdp.reward_mean(s, a) = rw.at(static_cast<std::size_t>(s)).at(static_cast<std::size_t>(a)).get<double>();
      }
    }
    if (j.contains("initial_dist")) {
      const auto init = j.at("initial_dist").get<std::vector<double>>();
      if (init.size() != static_cast<std::size_t>(n_s)) throw ConfigError("initial_dist has the wrong length");
      mdp.initial_dist = Eigen::Map<const Vec>(init.data(), n_s);
    }
    try {
      mdp.validate();
    } catch (const DataError& e) {
      throw ConfigError(std::string("inline MDP is invalid: ") + e.what());
    }
    return mdp;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("inline MDP is malformed: ") + e.what());
  }
}

}  // namespace

EnvSpec parse_env(const Json& env) {
  require_keys(env, {"tabular", "continuous"}, "env");
  if (env.size() != 1) throw ConfigError("env must have exactly one of 'tabular' or 'continuous'");
  if (env.contains("continuous")) {
    if (!env.at("continuous").is_string()) throw ConfigError("env.continuous must name a builtin");
    return make_continuous_env(env.at("continuous").get<std::string>());
  }
  const Json& t = env.at("tabular");
  if (t.is_string()) return make_tabular_env(t.get<std::string>());
  return parse_inline_tabular(t);
}

std::vector<LinearPolicy> default_continuous_behaviors(const ContinuousEnv& env) {
  const double half_range = 0.5 * (env.action_high - env.action_low).maxCoeff();
  return {LinearPolicy::zeros(env, half_range), LinearPolicy::zeros(env, 0.1 * half_range)};
}

Dataset load_or_generate_dataset(const Json& dataset, const EnvSpec& env, std::uint64_t seed) {
  const std::string path = get_or<std::string>(dataset, "path", "");
  const std::uint64_t data_seed = get_or<std::uint64_t>(dataset, "seed", seed);
  if (!path.empty()) {
    Dataset d = read_dataset(path);
    const bool discrete = std::holds_alternative<TabularMdp>(env);
    if (d.header.discrete != discrete) throw DataError("dataset kind does not match the environment");
    if (discrete) {
      const auto& mdp = std::get<TabularMdp>(env);
      if (d.header.state_dim != mdp.n_states || d.header.action_dim != mdp.n_actions) {
        throw DataError("dataset dimensions do not match the environment");
      }
    } else {
      const auto& ce = std::get<ContinuousEnv>(env);
      if (d.header.state_dim != ce.state_dim || d.header.action_dim != ce.action_dim) {
        throw DataError("dataset dimensions do not match the environment");
      }
    }
    return d;
  }
  const auto n = get_or<long>(dataset, "n", 1000);
  if (n < 1) throw ConfigError("dataset.n must be at least 1");
  if (const auto* mdp = std::get_if<TabularMdp>(&env)) {
    const auto behaviors = default_behaviors(*mdp);
    return sample_dataset(*mdp, behaviors, static_cast<std::size_t>(n), data_seed);
  }
  const auto& ce = std::get<ContinuousEnv>(env);
  const auto behaviors = default_continuous_behaviors(ce);
  return sample_dataset(ce, behaviors, static_cast<std::size_t>(n), data_seed);
}

ConjugatePrior parse_prior(const Json& j) {
  require_keys(j, keys_of(prior_default()), "prior");
  ConjugatePrior p;
  p.alpha0 = get_or(j, "alpha0", p.alpha0);
  p.mu0 = get_or(j, "mu0", p.mu0);
  p.tau0_sq = get_or(j, "tau0_sq", p.tau0_sq);
  p.validate();
  return p;
}

ModelConfig parse_model_config(const Json& j) {
  require_keys(j, keys_of(model_default()), "model config");
  ModelConfig m;
  m.n_layers = get_or(j, "n_layers", m.n_layers);
  m.hidden = get_or(j, "hidden", m.hidden);
  m.prior_scale = get_or(j, "prior_scale", m.prior_scale);
  m.logvar_max_init = get_or(j, "logvar_max_init", m.logvar_max_init);
  m.logvar_min_init = get_or(j, "logvar_min_init", m.logvar_min_init);
  m.validate();
  return m;
}

InferenceConfig parse_inference_config(const Json& j) {
  require_keys(j, keys_of(inference_default()), "inference config");
  InferenceConfig c;
  c.n_members = get_or(j, "n_members", c.n_members);
  c.n_elites = get_or(j, "n_elites", c.n_elites);
  c.logvar_diff_coeff = get_or(j, "logvar_diff_coeff", c.logvar_diff_coeff);
  c.validation_split = get_or(j, "validation_split", c.validation_split);
  c.batch_size = get_or(j, "batch_size", c.batch_size);
  c.epochs = get_or(j, "epochs", c.epochs);
  c.learning_rate = get_or(j, "learning_rate", c.learning_rate);
  c.final_lr_fraction = get_or(j, "final_lr_fraction", c.final_lr_fraction);
  c.weight_decay = get_or(j, "weight_decay", c.weight_decay);
  c.validate();
  return c;
}

SolverConfig parse_solver_config(const Json& j) {
  require_keys(j, keys_of(solver_default()), "solver config");
  SolverConfig c;
  c.kind = parse_solver_kind(get_or<std::string>(j, "solver", solver_kind_name(c.kind)));
  c.population = get_or(j, "population", c.population);
  c.elite_fraction = get_or(j, "elite_fraction", c.elite_fraction);
  c.iterations = get_or(j, "iterations", c.iterations);
  c.k_samples = get_or(j, "k_samples", c.k_samples);
  c.episodes_per_member = get_or(j, "episodes_per_member", c.episodes_per_member);
  c.horizon = get_or(j, "horizon", c.horizon);
  c.smoothing = get_or(j, "smoothing", c.smoothing);
  c.init_std = get_or(j, "init_std", c.init_std);
  c.min_std = get_or(j, "min_std", c.min_std);
  c.policy_std = get_or(j, "policy_std", c.policy_std);
  c.seed = get_or(j, "seed", c.seed);
  c.validate();
  return c;
}

namespace {

template <typename T, typename Fn>
std::vector<T> parse_list(const Json& grid, const char* key, Fn fn) {
  if (!grid.contains(key)) return {fn(Json::object())};
  const Json& arr = grid.at(key);
  if (!arr.is_array() || arr.empty()) throw ConfigError(std::string("grid.") + key + " must be a nonempty array");
  std::vector<T> out;
  for (const auto& item : arr) out.push_back(fn(item));
  return out;
}

}  // namespace

TabularHyperGrid parse_tabular_grid(const Json& grid) {
  require_keys(grid, {"phi_I", "phi_II", "phi_III"}, "grid");
  TabularHyperGrid g;
  g.phi_I = parse_list<ConjugatePrior>(grid, "phi_I", parse_prior);
  g.phi_II = parse_list<TabularInferenceConfig>(grid, "phi_II", [](const Json& j) {
    require_keys(j, keys_of(tabular_inference_default()), "tabular inference config");
    TabularInferenceConfig c;
    c.validation_split = get_or(j, "validation_split", c.validation_split);
    c.min_validation = get_or(j, "min_validation", c.min_validation);
    return c;
  });
  g.phi_III = parse_list<SolverConfig>(grid, "phi_III", parse_solver_config);
  g.validate();
  return g;
}

ContinuousHyperGrid parse_continuous_grid(const Json& grid) {
  require_keys(grid, {"phi_I", "phi_II", "phi_III"}, "grid");
  ContinuousHyperGrid g;
  g.phi_I = parse_list<ModelConfig>(grid, "phi_I", parse_model_config);
  g.phi_II = parse_list<InferenceConfig>(grid, "phi_II", parse_inference_config);
  g.phi_III = parse_list<SolverConfig>(grid, "phi_III", [](const Json& j) {
    SolverConfig c = parse_solver_config(j);
    if (!j.contains("solver")) c.kind = SolverKind::kCrossEntropy;
    if (c.kind != SolverKind::kCrossEntropy) {
      throw ConfigError("continuous environments only support the cross_entropy solver");
    }
    return c;
  });
  g.validate();
  return g;
}

}  // namespace sorel
