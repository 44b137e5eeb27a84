#include "sorel/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "sorel/config.hpp"
#include "sorel/dataset_io.hpp"

namespace sorel {

namespace {

namespace fs = std::filesystem;

struct Overrides {
  std::string config_path;
  std::string out;
  std::string dataset;
  std::string grid;
  std::string stat;
  std::vector<long> prefixes;
  std::optional<double> r_deploy;
  std::optional<std::uint64_t> seed;
};

std::ofstream open_output(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  return f;
}

void write_json(const fs::path& path, const Json& j) {
  auto f = open_output(path);
  f << j.dump(2) << '\n';
}

Json mat_to_json(const Mat& m) {
  Json rows = Json::array();
  for (long i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Json pil_to_json(const PilReport& r) {
  return {{"mse_term", r.mse_term}, {"var_term", r.var_term},           {"pil", r.pil},
          {"n_points", r.n_points}, {"balance_ratio", r.balance_ratio}, {"source", pil_source_name(r.source)}};
}

Json policy_to_json(const PolicySpec& policy) {
  if (const auto* t = std::get_if<TabularPolicy>(&policy)) return {{"probs", mat_to_json(t->probs)}};
  const auto& l = std::get<LinearPolicy>(policy);
  return {{"weights", mat_to_json(l.weights)}, {"exploration_std", l.exploration_std}};
}

Json posterior_to_json(const ConjugatePosterior& post) {
  Json alpha = Json::array();
  for (int s = 0; s < post.n_states(); ++s) {
    Json per_action = Json::array();
    for (int a = 0; a < post.n_actions(); ++a) {
      Json row = Json::array();
      for (int j = 0; j < post.n_states(); ++j) row.push_back(post.alpha(s, a, j));
      per_action.push_back(row);
    }
    alpha.push_back(per_action);
  }
  Mat mean(post.n_states(), post.n_actions()), var(post.n_states(), post.n_actions()),
      visits(post.n_states(), post.n_actions());
  for (int s = 0; s < post.n_states(); ++s) {
    for (int a = 0; a < post.n_actions(); ++a) {
      mean(s, a) = post.reward_post_mean(s, a);
      var(s, a) = post.reward_post_var(s, a);
      visits(s, a) = post.visits(s, a);
    }
  }
  const auto& p = post.prior();
  return {{"env_id", post.env().env_id},
          {"prior", {{"alpha0", p.alpha0}, {"mu0", p.mu0}, {"tau0_sq", p.tau0_sq}}},
          {"alpha", alpha},
          {"visits", mat_to_json(visits)},
          {"reward_mean", mat_to_json(mean)},
          {"reward_var", mat_to_json(var)}};
}

std::vector<std::size_t> parse_prefixes(const Json& j, std::size_t data_size) {
  if (!j.is_array()) throw ConfigError("prefixes must be an array");
  std::vector<std::size_t> out;
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<long>() < 1) throw ConfigError("prefixes must be positive integers");
    const auto n = v.get<std::size_t>();
    if (n > data_size) {
      throw ConfigError("prefix " + std::to_string(n) + " exceeds the dataset size " +
                        std::to_string(data_size));
    }
    if (!out.empty() && n <= out.back()) throw ConfigError("prefixes must be strictly increasing");
    out.push_back(n);
  }
  return out;
}

template <typename T>
T section_get(const Json& doc, const char* section, const char* key) {
  try {
    return doc.at(section).at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(std::string("configuration key '") + section + "." + key + "' is missing or has the wrong type");
  }
}

// --- subcommands ----------------------------------------------------------

void cmd_make_dataset(const ResolvedConfig& rc, std::ostream& out) {
  const EnvSpec env = parse_env(rc.doc.at("env"));
  const Dataset data = load_or_generate_dataset(rc.doc.at("dataset"), env, rc.seed);
  write_dataset((rc.output_dir / "dataset.jsonl").string(), data);
  out << "wrote " << data.size() << " transitions\n";
}

void cmd_train_model(const ResolvedConfig& rc, std::ostream& out) {
  const EnvSpec env = parse_env(rc.doc.at("env"));
  const Dataset data = load_or_generate_dataset(rc.doc.at("dataset"), env, rc.seed);
  if (const auto* mdp = std::get_if<TabularMdp>(&env)) {
    const ConjugatePrior prior = parse_prior(rc.doc.at("prior"));
    const auto post = conjugate_update(ConjugatePosterior(TabularEnvSpec::of(*mdp), prior), data);
    write_json(rc.output_dir / "posterior.json", posterior_to_json(post));
    write_json(rc.output_dir / "train_stats.json", {{"n_transitions", data.size()}, {"backend", "conjugate"}});
    out << "posterior fitted on " << data.size() << " transitions\n";
    return;
  }
  const ModelConfig mc = parse_model_config(rc.doc.at("model"));
  const InferenceConfig ic = parse_inference_config(rc.doc.at("inference"));
  const TrainResult res = train_ensemble(data, mc, ic, derive_seed(rc.seed, 8));
  save_checkpoint((rc.output_dir / "model.json").string(), res.model);
  const auto& st = res.stats;
  write_json(rc.output_dir / "train_stats.json",
             {{"backend", "ensemble"},
              {"initial_loss", st.initial_loss},
              {"final_loss", st.final_loss},
              {"member_val_mse", st.member_val_mse},
              {"val_mse", st.val_mse},
              {"n_train", st.n_train},
              {"n_validation", st.n_validation},
              {"elites", res.model.elites}});
  out << "ensemble trained, validation mse " << st.val_mse << '\n';
}

void cmd_pil(const ResolvedConfig& rc, std::ostream& out) {
  const EnvSpec env = parse_env(rc.doc.at("env"));
  const Dataset data = load_or_generate_dataset(rc.doc.at("dataset"), env, rc.seed);
  std::vector<std::size_t> prefixes = parse_prefixes(rc.doc.at("pil").at("prefixes"), data.size());
  if (prefixes.empty()) prefixes.push_back(data.size());
  PilHistory history;
  if (const auto* mdp = std::get_if<TabularMdp>(&env)) {
    const ConjugatePrior prior = parse_prior(rc.doc.at("prior"));
    const bool exact = section_get<bool>(rc.doc, "pil", "exact");
    const double frac = section_get<double>(rc.doc, "pil", "validation_split");
    if (!(frac > 0.0 && frac < 1.0)) throw ConfigError("pil.validation_split must lie in (0, 1)");
    const ConjugatePosterior empty(TabularEnvSpec::of(*mdp), prior);
    const RhoWeights rho =
        rho_weights(*mdp, TabularPolicy::uniform(mdp->n_states, mdp->n_actions), mdp->gamma, "uniform");
    for (std::size_t n : prefixes) {
      const Dataset d = data.prefix(n);
      if (exact) {
        history.add(n, pil_tabular_exact(conjugate_update(empty, d), *mdp, rho));
        continue;
      }
      const auto [train, val] = split_dataset(d, frac, derive_seed(rc.seed, 7));
      if (val.empty()) {
        throw UndefinedPilError("PIL undefined: validation split of prefix " + std::to_string(n) + " is empty");
      }
      history.add(n, pil_tabular_validation(conjugate_update(empty, train), train, val));
    }
  } else {
    const ModelConfig mc = parse_model_config(rc.doc.at("model"));
    const InferenceConfig ic = parse_inference_config(rc.doc.at("inference"));
    for (std::size_t n : prefixes) {
      const TrainResult res = train_ensemble(data.prefix(n), mc, ic, derive_seed(rc.seed, 8));
      history.add(n, pil_gaussian(res.model, res.validation, static_cast<std::size_t>(ic.batch_size)));
    }
  }
  auto f = open_output(rc.output_dir / "pil_history.csv");
  write_pil_history_csv(f, history);
  out << "PIL at N=" << history.entries.back().n << ": " << history.entries.back().report.pil << '\n';
}

void cmd_sorel(const ResolvedConfig& rc, std::ostream& out) {
  const Json& sec = rc.doc.at("sorel");
  const EnvSpec env = parse_env(rc.doc.at("env"));
  const Dataset data = load_or_generate_dataset(rc.doc.at("dataset"), env, rc.seed);
  const auto prefixes = parse_prefixes(sec.at("prefixes"), data.size());
  if (prefixes.empty()) throw ConfigError("sorel.prefixes must not be empty");

  SorelOptions opt;
  opt.r_deploy = section_get<double>(rc.doc, "sorel", "r_deploy");
  opt.stat = parse_regret_stat(section_get<std::string>(rc.doc, "sorel", "stat"));
  opt.balance_threshold = section_get<double>(rc.doc, "sorel", "balance_threshold");
  opt.k_samples = section_get<int>(rc.doc, "sorel", "k_samples");
  opt.episodes_per_member = section_get<int>(rc.doc, "sorel", "episodes_per_member");
  opt.retune_every_n = section_get<bool>(rc.doc, "sorel", "retune_every_n");
  opt.continue_after_deploy = section_get<bool>(rc.doc, "sorel", "continue_after_deploy");
  opt.seed = rc.seed;
  const bool validate = section_get<bool>(rc.doc, "sorel", "validate");
  const auto norm = section_get<std::string>(rc.doc, "sorel", "normalization");
  if (norm != "env" && norm != "percentile") throw ConfigError("sorel.normalization must be 'env' or 'percentile'");

  SorelReport report;
  if (const auto* mdp = std::get_if<TabularMdp>(&env)) {
    if (norm == "env") opt.norm = norm_constants_for(*mdp);
    report = sorel_loop(data, prefixes, TabularEnvSpec::of(*mdp), parse_tabular_grid(rc.doc.at("grid")), opt,
                        validate ? mdp : nullptr);
  } else {
    const auto& ce = std::get<ContinuousEnv>(env);
    if (norm == "env") opt.norm = NormConstants{ce.r_min, ce.r_max};
    report = sorel_loop(data, prefixes, parse_continuous_grid(rc.doc.at("grid")), opt,
                        validate ? &ce : nullptr);
  }
  {
    auto f = open_output(rc.output_dir / "sorel.csv");
    write_sorel_csv(f, report);
  }
  Json summary = {{"r_deploy", report.r_deploy},
                  {"stat", regret_stat_name(report.stat)},
                  {"exhausted", report.exhausted},
                  {"deployed", report.deployed_row.has_value()}};
  if (report.deployed_row) {
    const SorelRow& row = report.rows[*report.deployed_row];
    summary["deployed_n"] = row.n;
    summary["approx_regret"] = row.approx_regret;
    summary["policy"] = policy_to_json(row.policy);
    if (row.true_regret) summary["true_regret"] = *row.true_regret;
    out << "deployed at N=" << row.n << " with approximate regret " << row.approx_regret << '\n';
  } else {
    out << "no deployment; collect more data\n";
  }
  write_json(rc.output_dir / "sorel_summary.json", summary);
}

struct TorelRun {
  TabularMdp mdp;
  TuningReport report;
};

TorelRun run_torel(const ResolvedConfig& rc, bool need_truth) {
  const EnvSpec env = parse_env(rc.doc.at("env"));
  const auto* mdp = std::get_if<TabularMdp>(&env);
  if (mdp == nullptr) throw ConfigError("torel and ucb support tabular environments only");
  const Dataset data = load_or_generate_dataset(rc.doc.at("dataset"), env, rc.seed);
  const Json& sec = rc.doc.at("torel");
  const auto planner = make_planner(section_get<std::string>(rc.doc, "torel", "planner"));
  if (!sec.at("values").is_array()) throw ConfigError("torel.values must be an array");
  std::vector<double> values;
  for (const auto& v : sec.at("values")) {
    if (!v.is_number()) throw ConfigError("torel.values must be numbers");
    values.push_back(v.get<double>());
  }
  TorelOptions opt;
  opt.stat = parse_regret_stat(section_get<std::string>(rc.doc, "torel", "stat"));
  opt.k_samples = section_get<int>(rc.doc, "torel", "k_samples");
  opt.balance_threshold = section_get<double>(rc.doc, "torel", "balance_threshold");
  opt.seed = rc.seed;
  const bool validate = need_truth || section_get<bool>(rc.doc, "torel", "validate");
  TabularHyperGrid grid = parse_tabular_grid(rc.doc.at("grid"));
  return {*mdp, torel_tune(*planner, values, data, TabularEnvSpec::of(*mdp), grid, opt,
                           validate ? mdp : nullptr)};
}

Json torel_summary(const TuningReport& r) {
  Json j = {{"planner", r.planner},
            {"stat", regret_stat_name(r.stat)},
            {"selected_value", r.rows[r.selected].value},
            {"online_steps", 0},
            {"model_balanced", r.model.balanced},
            {"model_pil", pil_to_json(r.model.report)}};
  if (r.rows[r.selected].true_regret) j["selected_true_regret"] = *r.rows[r.selected].true_regret;
  if (r.oracle) j["oracle_value"] = r.rows[*r.oracle].value;
  if (r.mean_true_regret) j["mean_true_regret"] = *r.mean_true_regret;
  if (r.correlation) {
    j["pearson_r"] = std::isnan(r.correlation->r) ? Json(nullptr) : Json(r.correlation->r);
    j["p_value"] = std::isnan(r.correlation->p) ? Json(nullptr) : Json(r.correlation->p);
  }
  return j;
}

void cmd_torel(const ResolvedConfig& rc, std::ostream& out) {
  const TorelRun run = run_torel(rc, false);
  {
    auto f = open_output(rc.output_dir / "torel.csv");
    write_tuning_csv(f, run.report);
  }
  write_json(rc.output_dir / "torel_summary.json", torel_summary(run.report));
  out << "selected " << run.report.rows[run.report.selected].value << '\n';
}

void cmd_ucb(const ResolvedConfig& rc, std::ostream& out) {
  const TorelRun run = run_torel(rc, true);
  std::vector<TabularPolicy> arms;
  std::vector<double> truths;
  std::vector<double> arm_values;
  for (const auto& row : run.report.rows) {
    if (!row.error.empty()) continue;
    arms.push_back(row.policy);
    truths.push_back(*row.true_regret);
    arm_values.push_back(row.value);
  }
  UcbConfig cfg;
  cfg.exploration = section_get<double>(rc.doc, "ucb", "exploration");
  cfg.seed = derive_seed(rc.seed, 9);
  const auto budget = section_get<long>(rc.doc, "ucb", "episode_budget");
  if (budget < 1) throw ConfigError("ucb.episode_budget must be positive");
  OnlineEnv online(run.mdp);
  const UcbResult res =
      ucb_online_tune(arms, truths, online, static_cast<std::size_t>(budget), norm_constants_for(run.mdp), cfg);
  {
    auto f = open_output(rc.output_dir / "ucb_trace.csv");
    f.precision(17);
    f << "samples,best_regret\n";
    for (const auto& p : res.trace) f << p.samples << ',' << p.best_regret << '\n';
  }
  const double torel_regret = *run.report.rows[run.report.selected].true_regret;
  const auto reach = samples_to_reach(res, torel_regret);
  Json summary = {{"selected_value", arm_values[res.selected]},
                  {"online_samples", res.online_samples},
                  {"pulls", res.pulls},
                  {"mean_scores", res.mean_scores},
                  {"torel_selected_value", run.report.rows[run.report.selected].value},
                  {"torel_true_regret", torel_regret},
                  {"torel_online_steps", 0}};
  summary["samples_to_match_torel"] = reach ? Json(*reach) : Json(nullptr);
  write_json(rc.output_dir / "ucb_summary.json", summary);
  out << "UCB used " << res.online_samples << " online steps\n";
}

void cmd_curves(const ResolvedConfig& rc, std::ostream& out) {
  const Json& sec = rc.doc.at("curves");
  const auto c = section_get<double>(rc.doc, "curves", "C");
  const auto grid = log_grid(section_get<double>(rc.doc, "curves", "n_min"),
                             section_get<double>(rc.doc, "curves", "n_max"),
                             section_get<int>(rc.doc, "curves", "per_decade"));
  const auto r_max = section_get<double>(rc.doc, "curves", "r_max");
  const auto form_name = section_get<std::string>(rc.doc, "curves", "form");
  CurveForm form;
  if (form_name == "sqrt_exp") {
    form = CurveForm::kSqrtExp;
  } else if (form_name == "exp_sqrt") {
    form = CurveForm::kExpSqrt;
  } else {
    throw ConfigError("curves.form must be 'sqrt_exp' or 'exp_sqrt'");
  }
  std::vector<int> ds;
  std::vector<double> gammas;
  try {
    ds = sec.at("d").get<std::vector<int>>();
    gammas = sec.at("gamma").get<std::vector<double>>();
  } catch (const Json::exception&) {
    throw ConfigError("curves.d must hold integers and curves.gamma numbers");
  }
  auto f = open_output(rc.output_dir / "curves.csv");
  f.precision(17);
  f << "N,d,gamma,bound\n";
  std::size_t rows = 0;
  for (int d : ds) {
    for (double g : gammas) {
      const BoundCurve curve = regret_curve_thm2(c, d, g, grid, r_max, form);
      for (std::size_t i = 0; i < curve.n_grid.size(); ++i) {
        f << curve.n_grid[i] << ',' << d << ',' << g << ',' << curve.values[i] << '\n';
        ++rows;
      }
    }
  }
  out << "wrote " << rows << " curve points\n";
}

Json read_csv_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  auto split = [](const std::string& line) {
    Json cells = Json::array();
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "' is empty");
  Json table = {{"columns", split(line)}, {"rows", Json::array()}};
  while (std::getline(in, line)) {
    if (!line.empty()) table["rows"].push_back(split(line));
  }
  return table;
}

void cmd_report(const ResolvedConfig& rc, std::ostream& out) {
  const Json& inputs = rc.doc.at("report").at("inputs");
  if (!inputs.is_array() || inputs.empty()) throw ConfigError("report.inputs must be a nonempty array of paths");
  Json report = Json::object();
  for (const auto& item : inputs) {
    if (!item.is_string()) throw ConfigError("report.inputs must hold paths");
    const fs::path p = item.get<std::string>();
    if (p.extension() == ".json") {
      std::ifstream in(p);
      if (!in) throw DataError("cannot open '" + p.string() + "'");
      try {
        report[p.string()] = Json::parse(in);
      } catch (const Json::exception& e) {
        throw DataError("'" + p.string() + "' is not valid JSON: " + e.what());
      }
    } else if (p.extension() == ".csv") {
      report[p.string()] = read_csv_table(p);
    } else {
      throw ConfigError("report inputs must be .json or .csv files: '" + p.string() + "'");
    }
  }
  write_json(rc.output_dir / "report.json", report);
  out << "collected " << inputs.size() << " inputs\n";
}

Json error_json(const std::string& kind, int code, const std::string& message) {
  return {{"error", kind}, {"code", code}, {"message", message}};
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    if (args.empty()) throw ConfigError("missing subcommand");
    const std::string command = args.front();
    if (std::find(std::begin(kCommands), std::end(kCommands), command) == std::end(kCommands)) {
      throw ConfigError("unknown subcommand '" + command + "'");
    }

    Overrides ov;
    CLI::App app{"sorel " + command};
    app.add_option("--config", ov.config_path, "JSON configuration file");
    app.add_option("--out", ov.out, "Output directory");
    app.add_option("--dataset", ov.dataset, "Dataset file (JSON lines)");
    app.add_option("--grid", ov.grid, "JSON file holding the hyperparameter grid");
    app.add_option("--stat", ov.stat, "Approximate-regret statistic");
    app.add_option("--prefixes", ov.prefixes, "Dataset prefix sizes")->delimiter(',');
    app.add_option("--r-deploy", ov.r_deploy, "Deployment threshold");
    app.add_option("--seed", ov.seed, "Master seed");
    std::vector<std::string> rest(args.begin() + 1, args.end());
    std::reverse(rest.begin(), rest.end());
    try {
      app.parse(rest);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::ParseError& e) {
      throw ConfigError(e.what());
    }

    Json user = ov.config_path.empty() ? Json::object() : load_json_file(ov.config_path);
    if (!user.is_object()) throw ConfigError("configuration must be a JSON object");
    if (ov.seed) user["seed"] = *ov.seed;
    if (!ov.out.empty()) user["output_dir"] = ov.out;
    if (!ov.dataset.empty()) user["dataset"]["path"] = ov.dataset;
    if (!ov.grid.empty()) user["grid"] = load_json_file(ov.grid);
    const char* loop_section = command == "pil" ? "pil" : "sorel";
    if (!ov.prefixes.empty()) user[loop_section]["prefixes"] = ov.prefixes;
    if (ov.r_deploy) user["sorel"]["r_deploy"] = *ov.r_deploy;
    if (!ov.stat.empty()) user[command == "sorel" ? "sorel" : "torel"]["stat"] = ov.stat;

    const ResolvedConfig rc = resolve_config(command, user);
    std::error_code ec;
    fs::create_directories(rc.output_dir, ec);
    if (ec) throw DataError("cannot create output directory '" + rc.output_dir.string() + "': " + ec.message());
    write_json(rc.output_dir / "resolved_config.json", rc.doc);

    if (command == "make-dataset") cmd_make_dataset(rc, out);
    else if (command == "train-model") cmd_train_model(rc, out);
    else if (command == "pil") cmd_pil(rc, out);
    else if (command == "sorel") cmd_sorel(rc, out);
    else if (command == "torel") cmd_torel(rc, out);
    else if (command == "ucb") cmd_ucb(rc, out);
    else if (command == "curves") cmd_curves(rc, out);
    else cmd_report(rc, out);
    return 0;
  } catch (const Error& e) {
    const int code = static_cast<int>(e.code());
    err << error_json(error_code_name(e.code()), code, e.what()).dump() << '\n';
    return code;
  } catch (const std::exception& e) {
    err << error_json("internal", 1, e.what()).dump() << '\n';
    return 1;
  }
}

}  // namespace sorel
