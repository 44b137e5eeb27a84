#pragma once

#include <filesystem>
#include <string>
#include <variant>

#include "json.hpp"
#include "sorel/sorel_loop.hpp"
#include "sorel/torel.hpp"

namespace sorel {

using Json = nlohmann::json;

inline constexpr const char* kOutputDirEnv = "SOREL_OUTPUT_DIR";

/// The list of subcommands understood by the runner.
inline constexpr const char* kCommands[] = {"make-dataset", "train-model", "pil",    "sorel",
                                            "torel",        "ucb",         "curves", "report"};

/// Validated configuration with every default filled in.
struct ResolvedConfig {
  std::string command;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  Json doc;
};

/// Default document of a command; also the schema for unknown-key checks.
Json default_config(const std::string& command);

/// Rejects unknown keys (reporting their JSON path), requires "seed", merges
/// defaults and applies the output-directory environment override.
ResolvedConfig resolve_config(const std::string& command, const Json& user);

Json load_json_file(const std::string& path);

using EnvSpec = std::variant<TabularMdp, ContinuousEnv>;

/// {"tabular": "<builtin>"}, {"tabular": {inline definition}} or
/// {"continuous": "<builtin>"}.
EnvSpec parse_env(const Json& env);

/// Reads `dataset.path` when set, otherwise samples `dataset.n` transitions
/// from the environment with the default behaviour mixture.
Dataset load_or_generate_dataset(const Json& dataset, const EnvSpec& env, std::uint64_t seed);

/// Round-robin behaviours for continuous environments: a wide random policy
/// and a low-noise zero policy.
std::vector<LinearPolicy> default_continuous_behaviors(const ContinuousEnv& env);

ConjugatePrior parse_prior(const Json& j);
ModelConfig parse_model_config(const Json& j);
InferenceConfig parse_inference_config(const Json& j);
SolverConfig parse_solver_config(const Json& j);
TabularHyperGrid parse_tabular_grid(const Json& grid);
ContinuousHyperGrid parse_continuous_grid(const Json& grid);

}  // namespace sorel
