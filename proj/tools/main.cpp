#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <crteffects/errors.hpp>
#include <crteffects/harness.hpp>

using namespace crt;

namespace {

TableFormat parse_format(const std::string& s) {
  if (s == "plain") return TableFormat::Plain;
  if (s == "csv") return TableFormat::Csv;
  if (s == "json") return TableFormat::Json;
  throw ConfigError("unknown format '" + s + "'");
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
}

ScenarioSpec scenario_from_flags(const std::string& name, std::uint64_t seed,
                                 bool null_effect, int clusters,
                                 double size_mean, double size_sd,
                                 int size_floor) {
  ScenarioSpec spec;
  if (name == "sim1")
    spec = ScenarioSpec::sim1(seed);
  else if (name == "sim2")
    spec = ScenarioSpec::sim2(seed);
  else
    throw ConfigError("unknown scenario '" + name +
                      "' (expected sim1 or sim2)");
  spec.null_effect = null_effect;
  if (clusters > 0) spec.clusters = clusters;
  if (size_mean > 0) spec.size_mean = size_mean;
  if (size_sd > 0) spec.size_sd = size_sd;
  if (size_floor > 0) spec.size_floor = size_floor;
  return spec;
}

EffectTarget target_from_flags(const std::string& level,
                               const std::string& scale) {
  EffectTarget t;
  if (level == "cluster")
    t.level = EffectLevel::Cluster;
  else if (level == "individual")
    t.level = EffectLevel::Individual;
  else
    throw ConfigError("unknown target level '" + level + "'");
  if (scale == "ratio")
    t.scale = EffectScale::Ratio;
  else if (scale == "difference")
    t.scale = EffectScale::Difference;
  else
    throw ConfigError("unknown scale '" + scale + "'");
  return t;
}

int run(int argc, char** argv) {
  CLI::App app{
      "crteffects: effect estimation and simulation for cluster randomized "
      "trials"};
  app.require_subcommand(1);

  // shared flag storage
  std::string scenario = "sim1";
  std::uint64_t seed = 1;
  bool null_effect = false;
  int clusters = 0;
  double size_mean = 0, size_sd = 0;
  int size_floor = 0;
  std::string format = "plain";

  auto add_scenario_flags = [&](CLI::App* cmd) {
    cmd->add_option("--scenario", scenario,
                    "Data-generating scenario: sim1 or sim2");
    cmd->add_option("--seed", seed, "Base seed");
    cmd->add_flag("--null", null_effect,
                  "Zero out the treatment effect (null scenario)");
    cmd->add_option("--clusters", clusters, "Number of clusters (even)");
    cmd->add_option("--size-mean", size_mean, "Mean cluster size");
    cmd->add_option("--size-sd", size_sd, "SD of cluster size");
    cmd->add_option("--size-floor", size_floor, "Minimum cluster size");
  };

  // truth
  auto* truth_cmd =
      app.add_subcommand("truth", "Monte Carlo truth for a scenario");
  int pop = 0;
  add_scenario_flags(truth_cmd);
  truth_cmd->add_option("--pop", pop,
                        "Population size in clusters (default: scenario)");
  truth_cmd->add_option("--format", format, "Output format: plain|csv|json");

  // simulate
  auto* sim_cmd = app.add_subcommand(
      "simulate", "Run a replicate study and report estimator metrics");
  int reps = 500;
  int threads = 1;
  int truth_pop = 0;
  std::string estimators = "sim1-primary";
  std::string target_level = "cluster";
  std::string target_scale = "ratio";
  std::string matched = "no";
  std::string out_path;
  std::string config_path;
  std::string adjust;
  add_scenario_flags(sim_cmd);
  sim_cmd->add_option("--reps", reps, "Number of replicates");
  sim_cmd->add_option("--threads", threads, "Worker threads");
  sim_cmd->add_option("--truth-pop", truth_pop,
                      "Population size for the truth computation");
  sim_cmd->add_option(
      "--estimators", estimators,
      "Comma-separated presets (sim1-primary, sim2-tmle, appc-small) "
      "and/or estimator kinds (unadjusted, ttest, care, gee, auggee, "
      "cluster-tmle, hierarchical-tmle, hybrid-tmle)");
  sim_cmd->add_option("--target", target_level,
                      "Target for kind entries: cluster|individual|both");
  sim_cmd->add_option("--scale", target_scale,
                      "Scale for kind entries: ratio|difference");
  sim_cmd->add_option("--matched", matched,
                      "Pair-matched variance for kind entries: yes|no");
  sim_cmd->add_option("--adjust", adjust,
                      "Adjustment covariates for kind entries (comma list)");
  sim_cmd->add_option("--out", out_path,
                      "Write full results (truth, metrics, records) as JSON");
  sim_cmd->add_option("--config", config_path,
                      "JSON run config; other flags override its fields");
  sim_cmd->add_option("--format", format, "Table format: plain|csv|json");

  // analyze
  auto* an_cmd =
      app.add_subcommand("analyze", "Estimate an effect from a trial CSV");
  std::string input_path;
  std::string estimator_kind = "unadjusted";
  std::string spec_path;
  std::string cluster_covs;
  std::string propensity_adjust;
  an_cmd->add_option("--input", input_path, "Trial CSV file")->required();
  an_cmd->add_option("--estimator", estimator_kind,
                     "Estimator kind (see simulate --estimators)");
  an_cmd->add_option("--target", target_level, "cluster|individual");
  an_cmd->add_option("--scale", target_scale, "ratio|difference");
  an_cmd->add_option("--matched", matched, "yes|no");
  an_cmd->add_option("--adjust", adjust,
                     "Adjustment covariates (comma list); for TMLE kinds "
                     "these fix the outcome regression");
  an_cmd->add_option("--propensity-adjust", propensity_adjust,
                     "Propensity covariates for TMLE kinds (comma list)");
  an_cmd->add_option("--spec", spec_path,
                     "JSON estimator spec (overrides the flags above)");
  an_cmd->add_option("--cluster-covariates", cluster_covs,
                     "Columns to treat as cluster-level (comma list; "
                     "default: columns constant within every cluster)");
  an_cmd->add_option("--format", format, "Output format: plain|json");

  // export
  auto* ex_cmd =
      app.add_subcommand("export", "Generate one trial and write it as CSV");
  std::string export_out;
  std::uint64_t stream = 1;
  add_scenario_flags(ex_cmd);
  ex_cmd->add_option("--out", export_out, "Output CSV path")->required();
  ex_cmd->add_option("--stream", stream,
                     "Replicate stream to generate (default 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (truth_cmd->parsed()) {
    const ScenarioSpec spec = scenario_from_flags(
        scenario, seed, null_effect, clusters, size_mean, size_sd, size_floor);
    spec.validate();
    const int population =
        pop > 0 ? pop : (spec.scenario == Scenario::SimI ? 2500 : 1000);
    std::cout << truth_to_string(compute_truth(spec, population),
                                 parse_format(format));
    return 0;
  }

  if (sim_cmd->parsed()) {
    RunConfig config;
    if (!config_path.empty()) config = config_from_json(load_json(config_path));
    if (config_path.empty() || sim_cmd->count("--scenario") ||
        sim_cmd->count("--seed") || sim_cmd->count("--null") ||
        sim_cmd->count("--clusters") || sim_cmd->count("--size-mean") ||
        sim_cmd->count("--size-sd") || sim_cmd->count("--size-floor")) {
      config.scenario = scenario_from_flags(scenario, seed, null_effect,
                                            clusters, size_mean, size_sd,
                                            size_floor);
    }
    if (config_path.empty() || sim_cmd->count("--reps"))
      config.replicates = reps;
    if (config_path.empty() || sim_cmd->count("--threads"))
      config.threads = threads;
    if (sim_cmd->count("--truth-pop")) config.truth_population = truth_pop;
    if (config_path.empty() || sim_cmd->count("--estimators")) {
      config.estimators.clear();
      const bool want_matched = matched == "yes";
      std::vector<EffectTarget> targets;
      if (target_level == "both") {
        targets.push_back(target_from_flags("cluster", target_scale));
        targets.push_back(target_from_flags("individual", target_scale));
      } else {
        targets.push_back(target_from_flags(target_level, target_scale));
      }
      for (const std::string& entry : split_csv(estimators)) {
        if (entry == "sim1-primary" || entry == "sim2-tmle" ||
            entry == "appc-small") {
          const auto preset = estimator_preset(entry);
          config.estimators.insert(config.estimators.end(), preset.begin(),
                                   preset.end());
          continue;
        }
        for (size_t t = 0; t < targets.size(); ++t) {
          EstimatorSpec e;
          e.kind = entry;
          e.target = targets[t];
          e.matched = want_matched;
          const std::vector<std::string> names = split_csv(adjust);
          e.care_adjustment = names;
          e.gee.adjustment = names;
          e.fit.fixed_outcome = names;
          e.label = targets.size() > 1 ? entry + (t == 0 ? "-c" : "-i")
                                       : entry;
          config.estimators.push_back(std::move(e));
        }
      }
    }
    const RunOutput out = run_replicates(config);
    std::cout << truth_to_string(out.truth, parse_format(format))
              << emit_table(out.rows, parse_format(format));
    if (!out_path.empty()) {
      std::ofstream f(out_path);
      if (!f) throw DataError("cannot open '" + out_path + "' for writing");
      f << run_output_to_json(out).dump(2) << '\n';
    }
    return 0;
  }

  if (an_cmd->parsed()) {
    const TrialData trial =
        read_trial_csv(input_path, split_csv(cluster_covs));
    EstimatorSpec spec;
    if (!spec_path.empty()) {
      spec = estimator_from_json(load_json(spec_path));
    } else {
      spec.kind = estimator_kind;
      spec.target = target_from_flags(target_level, target_scale);
      spec.matched = matched == "yes";
      const std::vector<std::string> names = split_csv(adjust);
      spec.care_adjustment = names;
      spec.gee.adjustment = names;
      spec.fit.fixed_outcome = names;
      spec.fit.fixed_propensity = split_csv(propensity_adjust);
      spec.label = estimator_kind;
    }
    const EstimateResult r = run_estimator(trial, spec);
    if (parse_format(format) == TableFormat::Json) {
      std::cout << result_to_json(r).dump(2) << '\n';
    } else {
      std::cout << r.estimator << ": estimate " << r.estimate << " (95% CI "
                << r.ci_lower << " to " << r.ci_upper << "), se " << r.se
                << ", df " << r.df << ", p " << r.p_value << '\n';
    }
    return 0;
  }

  // export
  const ScenarioSpec spec = scenario_from_flags(
      scenario, seed, null_effect, clusters, size_mean, size_sd, size_floor);
  spec.validate();
  write_trial_csv(generate_trial(spec, stream).first, export_out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const EstimatorError& e) {
    std::cerr << "estimation error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
