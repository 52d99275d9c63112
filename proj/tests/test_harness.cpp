#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <crteffects/dgp.hpp>
#include <crteffects/errors.hpp>
#include <crteffects/harness.hpp>
#include <crteffects/trial.hpp>

using namespace crt;
using nlohmann::json;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string write_file(const std::string& name, const std::string& body) {
  const std::string path = temp_path(name);
  std::ofstream out(path);
  out << body;
  return path;
}

RunConfig small_config(unsigned seed, int reps) {
  RunConfig cfg;
  cfg.scenario = ScenarioSpec::sim1(seed);
  cfg.replicates = reps;
  cfg.truth_population = 1000;
  EstimatorSpec unadj;
  unadj.label = "unadj";
  EstimatorSpec gee_spec;
  gee_spec.label = "gee";
  gee_spec.kind = "gee";
  gee_spec.gee.adjustment = {"W1", "E1"};
  EstimatorSpec ttest;
  ttest.label = "ttest";
  ttest.kind = "ttest";
  cfg.estimators = {unadj, gee_spec, ttest};
  return cfg;
}

bool same_records(const RunOutput& a, const RunOutput& b) {
  if (a.records.size() != b.records.size()) return false;
  for (size_t e = 0; e < a.records.size(); ++e) {
    if (a.records[e].size() != b.records[e].size()) return false;
    for (size_t r = 0; r < a.records[e].size(); ++r) {
      const ReplicateRecord& x = a.records[e][r];
      const ReplicateRecord& y = b.records[e][r];
      if (x.ok != y.ok || x.estimate != y.estimate || x.se != y.se ||
          x.p_value != y.p_value || x.ci_lower != y.ci_lower ||
          x.ci_upper != y.ci_upper)
        return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("replicate runs are deterministic and thread-count invariant") {
  RunConfig cfg = small_config(19, 6);
  const RunOutput first = run_replicates(cfg);
  const RunOutput again = run_replicates(cfg);
  CHECK(same_records(first, again));

  cfg.threads = 3;
  const RunOutput threaded = run_replicates(cfg);
  CHECK(same_records(first, threaded));
  REQUIRE(first.rows.size() == 3);
  CHECK(first.rows[0].n == 6);
  CHECK(first.rows[0].failures == 0);
}

TEST_CASE("metrics rows recompute from the raw records") {
  const RunConfig cfg = small_config(23, 12);
  const RunOutput out = run_replicates(cfg);
  REQUIRE(out.rows.size() == cfg.estimators.size());

  for (size_t e = 0; e < out.rows.size(); ++e) {
    const MetricsRow& row = out.rows[e];
    const double truth = row.truth;
    int n = 0, covered = 0, rejected = 0;
    double sum = 0.0, sum_log = 0.0, sum_se = 0.0;
    for (const ReplicateRecord& rec : out.records[e]) {
      if (!rec.ok) continue;
      ++n;
      sum += rec.estimate;
      sum_log += std::log(rec.estimate);
      sum_se += rec.se;
      if (rec.ci_lower <= truth && truth <= rec.ci_upper) ++covered;
      if (rec.p_value < 0.05) ++rejected;
    }
    REQUIRE(n == row.n);
    CHECK(row.pt == doctest::Approx(sum / n).epsilon(1e-12));
    CHECK(row.mean_se == doctest::Approx(sum_se / n).epsilon(1e-12));
    CHECK(row.coverage ==
          doctest::Approx(static_cast<double>(covered) / n).epsilon(1e-12));
    CHECK(row.rejection ==
          doctest::Approx(static_cast<double>(rejected) / n).epsilon(1e-12));
    // All three estimators in the small config are ratio-type, so sigma is
    // the sd of log estimates and bias is relative to pt.
    const double mean_log = sum_log / n;
    double ss = 0.0;
    for (const ReplicateRecord& rec : out.records[e]) {
      if (!rec.ok) continue;
      const double d = std::log(rec.estimate) - mean_log;
      ss += d * d;
    }
    CHECK(row.sigma == doctest::Approx(std::sqrt(ss / (n - 1))).epsilon(1e-12));
    CHECK(row.bias == doctest::Approx(row.pt - truth).epsilon(1e-12));
  }
}

TEST_CASE("summarize separates failures from successes") {
  EstimatorSpec spec;
  spec.label = "unadj";
  std::vector<ReplicateRecord> records(5);
  for (int i = 0; i < 5; ++i) {
    records[i].replicate = i + 1;
    records[i].ok = (i != 2);
    records[i].estimate = 0.8 + 0.05 * i;
    records[i].se = 0.1;
    records[i].ci_lower = 0.5;
    records[i].ci_upper = 1.2;
    records[i].p_value = i == 4 ? 0.01 : 0.5;
  }
  const MetricsRow row = summarize(spec, 0.85, records);
  CHECK(row.n == 4);
  CHECK(row.failures == 1);
  CHECK(row.pt ==
        doctest::Approx((0.8 + 0.85 + 0.95 + 1.0) / 4.0).epsilon(1e-12));
  CHECK(row.coverage == doctest::Approx(1.0));
  CHECK(row.rejection == doctest::Approx(0.25));
}

TEST_CASE("trial CSV round trips exactly") {
  const auto [trial, cf] = generate_trial(ScenarioSpec::sim1(31), 1);
  (void)cf;
  const std::string path = temp_path("crt_roundtrip.csv");
  write_trial_csv(trial, path);

  SUBCASE("auto-detected cluster columns") {
    const TrialData back = read_trial_csv(path);
    REQUIRE(back.n_clusters() == trial.n_clusters());
    CHECK(back.e_names == trial.e_names);
    CHECK(back.w_names == trial.w_names);
    for (int j = 0; j < trial.n_clusters(); ++j) {
      const ClusterRecord& a = trial.clusters[j];
      const ClusterRecord& b = back.clusters[j];
      CHECK(a.id == b.id);
      CHECK(a.arm == b.arm);
      CHECK(a.pair_id.value_or(0) == b.pair_id.value_or(0));
      REQUIRE(a.size() == b.size());
      CHECK((a.y - b.y).lpNorm<Eigen::Infinity>() == 0.0);
      CHECK((a.e - b.e).lpNorm<Eigen::Infinity>() == 0.0);
      CHECK((a.w - b.w).lpNorm<Eigen::Infinity>() == 0.0);
    }
    const EstimateResult before = run_estimator(trial, EstimatorSpec{});
    const EstimateResult after = run_estimator(back, EstimatorSpec{});
    CHECK(before.estimate == after.estimate);
    CHECK(before.se == after.se);
  }

  SUBCASE("explicit cluster covariate list") {
    const TrialData back = read_trial_csv(path, {"E1", "E2"});
    CHECK(back.e_names == std::vector<std::string>{"E1", "E2"});
    CHECK(back.w_names == trial.w_names);
  }

  SUBCASE("unknown explicit cluster covariate is a config error") {
    CHECK_THROWS_AS(read_trial_csv(path, {"E9"}), ConfigError);
  }
  std::remove(path.c_str());
}

TEST_CASE("trial CSV schema violations carry line numbers") {
  SUBCASE("wrong header") {
    const std::string p = write_file(
        "crt_bad_header.csv", "cluster_id,arm,y\n1,0,0.5\n");
    CHECK_THROWS_WITH_AS(read_trial_csv(p),
                         doctest::Contains("line 1"), DataError);
    std::remove(p.c_str());
  }
  SUBCASE("bad numeric field") {
    const std::string p = write_file(
        "crt_bad_value.csv",
        "cluster_id,pair_id,arm,y,W1\n1,0,0,0.5,1.0\n1,0,0,oops,1.0\n");
    CHECK_THROWS_WITH_AS(read_trial_csv(p),
                         doctest::Contains("line 3"), DataError);
    std::remove(p.c_str());
  }
  SUBCASE("cluster appearing in both arms") {
    const std::string p = write_file(
        "crt_two_arms.csv",
        "cluster_id,pair_id,arm,y,W1\n1,0,0,0.5,1.0\n1,0,1,0.25,1.0\n");
    CHECK_THROWS_WITH_AS(read_trial_csv(p),
                         doctest::Contains("both arms"), DataError);
    std::remove(p.c_str());
  }
  SUBCASE("inconsistent pair id") {
    const std::string p = write_file(
        "crt_bad_pair.csv",
        "cluster_id,pair_id,arm,y,W1\n"
        "1,1,0,0.5,1.0\n1,2,0,0.5,1.0\n2,1,1,0.25,1.0\n");
    CHECK_THROWS_WITH_AS(read_trial_csv(p),
                         doctest::Contains("pair_id"), DataError);
    std::remove(p.c_str());
  }
  SUBCASE("arm outside 0/1") {
    const std::string p = write_file(
        "crt_bad_arm.csv",
        "cluster_id,pair_id,arm,y,W1\n1,0,2,0.5,1.0\n");
    CHECK_THROWS_WITH_AS(read_trial_csv(p),
                         doctest::Contains("arm must be 0 or 1"), DataError);
    std::remove(p.c_str());
  }
  SUBCASE("explicit cluster covariate varying within a cluster") {
    const std::string p = write_file(
        "crt_varying.csv",
        "cluster_id,pair_id,arm,y,W1\n"
        "1,0,0,0.5,1.0\n1,0,0,0.5,2.0\n2,0,1,0.25,1.0\n");
    CHECK_THROWS_WITH_AS(read_trial_csv(p, {"W1"}),
                         doctest::Contains("varies within cluster"), DataError);
    std::remove(p.c_str());
  }
}

TEST_CASE("config JSON round trips and rejects unknown keys") {
  const json good = {
      {"scenario", {{"name", "sim1"}, {"seed", 9}, {"clusters", 12}}},
      {"replicates", 4},
      {"threads", 2},
      {"estimators",
       json::array(
           {json{{"kind", "gee"},
                 {"label", "g"},
                 {"gee",
                  {{"link", "log"},
                   {"adjustment", json::array({"W1"})},
                   {"fay_graubard", nullptr}}}},
            json{{"kind", "cluster-tmle"},
                 {"label", "ct"},
                 {"target", {{"level", "individual"}, {"scale", "ratio"}}},
                 {"fit",
                  {{"mode", "adaptive"},
                   {"outcome_candidates",
                    json::array({json::array(), json::array({"W1"})})},
                   {"propensity_candidates",
                    json::array({json::array(), json::array({"W1"})})}}}}})}};
  const RunConfig cfg = config_from_json(good);
  CHECK(cfg.scenario.clusters == 12);
  CHECK(cfg.replicates == 4);
  CHECK(cfg.threads == 2);
  REQUIRE(cfg.estimators.size() == 2);
  CHECK_FALSE(cfg.estimators[0].gee.fay_graubard.has_value());
  CHECK(cfg.estimators[1].fit.mode == FitMode::Adaptive);
  CHECK(cfg.estimators[1].target.level == EffectLevel::Individual);

  SUBCASE("unknown top-level key") {
    json bad = good;
    bad["repz"] = 1;
    CHECK_THROWS_WITH_AS(config_from_json(bad), doctest::Contains("repz"),
                         ConfigError);
  }
  SUBCASE("unknown estimator kind") {
    json bad = good;
    bad["estimators"][0]["kind"] = "anova";
    CHECK_THROWS_WITH_AS(config_from_json(bad), doctest::Contains("anova"),
                         ConfigError);
  }
  SUBCASE("unknown gee key") {
    json bad = good;
    bad["estimators"][0]["gee"]["rho"] = 0.2;
    CHECK_THROWS_WITH_AS(config_from_json(bad), doctest::Contains("rho"),
                         ConfigError);
  }
  SUBCASE("fay_graubard bound outside (0,1)") {
    json bad = good;
    bad["estimators"][0]["gee"]["fay_graubard"] = 1.5;
    CHECK_THROWS_AS(config_from_json(bad), ConfigError);
  }
  SUBCASE("string entries expand presets") {
    json preset = good;
    preset["estimators"] = json::array({"sim1-primary"});
    const RunConfig expanded = config_from_json(preset);
    REQUIRE(expanded.estimators.size() == 7);
    CHECK(expanded.estimators.front().label == "unadj");
    CHECK(expanded.estimators.back().label == "aug-gee");
  }
  SUBCASE("unknown preset name") {
    json preset = good;
    preset["estimators"] = json::array({"sim9"});
    CHECK_THROWS_WITH_AS(config_from_json(preset), doctest::Contains("sim9"),
                         ConfigError);
  }
}

TEST_CASE("run_replicates validates its configuration") {
  SUBCASE("no estimators") {
    RunConfig cfg = small_config(5, 2);
    cfg.estimators.clear();
    CHECK_THROWS_AS(run_replicates(cfg), ConfigError);
  }
  SUBCASE("no replicates") {
    RunConfig cfg = small_config(5, 0);
    CHECK_THROWS_AS(run_replicates(cfg), ConfigError);
  }
  SUBCASE("duplicate labels") {
    RunConfig cfg = small_config(5, 2);
    cfg.estimators[1].label = cfg.estimators[0].label;
    CHECK_THROWS_AS(run_replicates(cfg), ConfigError);
  }
  SUBCASE("a misconfigured estimator fails the whole run") {
    RunConfig cfg = small_config(5, 2);
    cfg.estimators[1].gee.adjustment = {"W9"};
    CHECK_THROWS_AS(run_replicates(cfg), ConfigError);
  }
}

TEST_CASE("emit_table renders every format") {
  MetricsRow row;
  row.label = "unadj";
  row.truth = 0.83;
  row.n = 490;
  row.failures = 10;
  row.pt = 0.84;
  row.bias = 0.01;
  row.sigma = 0.17;
  row.mean_se = 0.16;
  row.coverage = 0.97;
  row.rejection = 0.18;

  SUBCASE("csv") {
    const std::string text = emit_table({row}, TableFormat::Csv);
    std::istringstream lines(text);
    std::string header, data;
    REQUIRE(std::getline(lines, header));
    REQUIRE(std::getline(lines, data));
    CHECK(header ==
          "estimator,truth,n,failures,pt,bias,sigma,mean_se,coverage,"
          "rejection");
    CHECK(data.rfind("unadj,", 0) == 0);
  }
  SUBCASE("json") {
    const json parsed = json::parse(emit_table({row}, TableFormat::Json));
    REQUIRE(parsed.is_array());
    REQUIRE(parsed.size() == 1);
    CHECK(parsed[0]["estimator"] == "unadj");
    CHECK(parsed[0]["failures"] == 10);
    CHECK(parsed[0]["coverage"].get<double>() == doctest::Approx(0.97));
  }
  SUBCASE("plain text with failure footnote") {
    const std::string text = emit_table({row}, TableFormat::Plain);
    CHECK(text.find("covg") != std::string::npos);
    CHECK(text.find("power") != std::string::npos);
    CHECK(text.find("10 of 500 replicates failed") != std::string::npos);
  }
  SUBCASE("plain text with no rows is just the header") {
    const std::string text = emit_table({}, TableFormat::Plain);
    CHECK(text.find("estimator") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);
  }
}

TEST_CASE("estimator presets match the simulation study layouts") {
  SUBCASE("sim1-primary") {
    const auto specs = estimator_preset("sim1-primary");
    REQUIRE(specs.size() == 7);
    CHECK(specs[0].kind == "unadjusted");
    CHECK(specs[1].kind == "cluster-tmle");
    CHECK(specs[1].fit.mode == FitMode::Adaptive);
    CHECK(specs[1].fit.outcome_candidates.size() == 5);
    CHECK(specs[2].kind == "hierarchical-tmle");
    CHECK(specs[4].care_adjustment.size() == 6);
    CHECK(specs[5].gee.adjustment.size() == 6);
    CHECK(specs[5].gee.fay_graubard.has_value());
    CHECK_FALSE(specs[6].gee.fay_graubard.has_value());
  }
  SUBCASE("sim2-tmle") {
    const auto specs = estimator_preset("sim2-tmle");
    REQUIRE(specs.size() == 8);
    int cluster_targets = 0, adaptive = 0;
    for (const auto& s : specs) {
      if (s.target.level == EffectLevel::Cluster) ++cluster_targets;
      if (s.fit.mode == FitMode::Adaptive) ++adaptive;
    }
    CHECK(cluster_targets == 4);
    CHECK(adaptive == 4);
    CHECK(specs[0].label == "c-tmle-c");
    CHECK(specs[7].label == "h-tmle-ap-i");
  }
  SUBCASE("appc-small") {
    const auto specs = estimator_preset("appc-small");
    REQUIRE(specs.size() == 6);
    CHECK(specs[0].label == "unadj-c");
    CHECK(specs[3].label == "unadj-i");
  }
  SUBCASE("unknown name") {
    CHECK_THROWS_AS(estimator_preset("sim3"), ConfigError);
  }
}

TEST_CASE("run_estimator dispatches every kind") {
  const auto [trial, cf] = generate_trial(ScenarioSpec::sim1(47), 2);
  (void)cf;
  const std::vector<std::string> kinds{
      "unadjusted", "ttest",        "care",
      "gee",        "auggee",       "cluster-tmle",
      "hierarchical-tmle",          "hybrid-tmle"};
  for (const std::string& kind : kinds) {
    CAPTURE(kind);
    EstimatorSpec spec;
    spec.label = kind;
    spec.kind = kind;
    if (kind == "care") spec.care_adjustment = {"W1"};
    if (kind == "gee" || kind == "auggee") spec.gee.adjustment = {"W1"};
    if (kind == "cluster-tmle" || kind == "hierarchical-tmle" ||
        kind == "hybrid-tmle")
      spec.fit.fixed_outcome = {"W1"};
    const EstimateResult r = run_estimator(trial, spec);
    CHECK(std::isfinite(r.estimate));
    CHECK(r.estimate > 0.0);
    CHECK(r.se > 0.0);
    CHECK(r.estimator == kind);
  }
  EstimatorSpec bad;
  bad.kind = "anova";
  CHECK_THROWS_AS(run_estimator(trial, bad), ConfigError);
}

TEST_CASE("truth_value_for follows each estimator's target") {
  ScenarioTruth t;
  t.cluster_ratio = 0.83;
  t.individual_ratio = 0.80;
  t.geometric_ratio = 0.81;
  t.cluster_diff = -0.12;
  t.individual_diff = -0.13;

  EstimatorSpec spec;
  spec.kind = "ttest";
  CHECK(truth_value_for(spec, t) == doctest::Approx(0.81));
  spec.kind = "care";
  CHECK(truth_value_for(spec, t) == doctest::Approx(0.81));
  spec.kind = "gee";
  CHECK(truth_value_for(spec, t) == doctest::Approx(0.80));
  spec.gee.link = Link::Identity;
  CHECK(truth_value_for(spec, t) == doctest::Approx(-0.13));
  spec.kind = "auggee";
  spec.gee.link = Link::Log;
  CHECK(truth_value_for(spec, t) == doctest::Approx(0.80));
  spec.kind = "cluster-tmle";
  spec.target = {EffectLevel::Cluster, EffectScale::Ratio};
  CHECK(truth_value_for(spec, t) == doctest::Approx(0.83));
  spec.kind = "unadjusted";
  spec.target = {EffectLevel::Individual, EffectScale::Difference};
  CHECK(truth_value_for(spec, t) == doctest::Approx(-0.13));
}
