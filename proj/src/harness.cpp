#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "crteffects/errors.hpp"
#include "crteffects/harness.hpp"

namespace crt {
namespace {

using nlohmann::json;

std::string join_names(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) {
    if (!out.empty()) out += '+';
    out += n;
  }
  return out;
}

bool ratio_metrics(const EstimatorSpec& spec) {
  if (spec.kind == "ttest" || spec.kind == "care") return true;
  if (spec.kind == "gee" || spec.kind == "auggee")
    return spec.gee.link != Link::Identity;
  return spec.target.scale == EffectScale::Ratio;
}

std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_fixed(double v, int decimals) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

// ---- JSON helpers -------------------------------------------------------

[[noreturn]] void bad_config(const std::string& what) {
  throw ConfigError(what);
}

void require_keys(const json& j, const std::set<std::string>& allowed,
                  const std::string& where) {
  if (!j.is_object()) bad_config(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key))
      bad_config("unknown key '" + key + "' in " + where);
  }
}

Link link_from_string(const std::string& s) {
  if (s == "logit") return Link::Logit;
  if (s == "log") return Link::Log;
  if (s == "identity") return Link::Identity;
  bad_config("unknown link '" + s + "' (expected logit, log, or identity)");
}

EffectTarget target_from_json(const json& j, const std::string& where) {
  require_keys(j, {"level", "scale"}, where);
  EffectTarget t;
  if (j.contains("level")) {
    const std::string s = j.at("level").get<std::string>();
    if (s == "cluster")
      t.level = EffectLevel::Cluster;
    else if (s == "individual")
      t.level = EffectLevel::Individual;
    else
      bad_config("unknown level '" + s + "'");
  }
  if (j.contains("scale")) {
    const std::string s = j.at("scale").get<std::string>();
    if (s == "ratio")
      t.scale = EffectScale::Ratio;
    else if (s == "difference")
      t.scale = EffectScale::Difference;
    else
      bad_config("unknown scale '" + s + "'");
  }
  return t;
}

std::vector<std::string> name_list(const json& j, const std::string& where) {
  if (!j.is_array()) bad_config(where + " must be an array of names");
  std::vector<std::string> out;
  for (const auto& v : j) out.push_back(v.get<std::string>());
  return out;
}

FitSpec fit_from_json(const json& j) {
  require_keys(j,
               {"mode", "outcome", "propensity", "outcome_candidates",
                "propensity_candidates", "cv", "link"},
               "fit");
  FitSpec f;
  if (j.contains("mode")) {
    const std::string s = j.at("mode").get<std::string>();
    if (s == "fixed")
      f.mode = FitMode::Fixed;
    else if (s == "adaptive")
      f.mode = FitMode::Adaptive;
    else
      bad_config("unknown fit mode '" + s + "'");
  }
  if (j.contains("outcome"))
    f.fixed_outcome = name_list(j.at("outcome"), "fit.outcome");
  if (j.contains("propensity"))
    f.fixed_propensity = name_list(j.at("propensity"), "fit.propensity");
  const auto candidates = [](const json& a, const std::string& where) {
    if (!a.is_array()) bad_config(where + " must be an array of name arrays");
    std::vector<std::vector<std::string>> out;
    for (const auto& v : a) out.push_back(name_list(v, where));
    return out;
  };
  if (j.contains("outcome_candidates"))
    f.outcome_candidates =
        candidates(j.at("outcome_candidates"), "fit.outcome_candidates");
  if (j.contains("propensity_candidates"))
    f.propensity_candidates =
        candidates(j.at("propensity_candidates"), "fit.propensity_candidates");
  if (j.contains("cv")) {
    const std::string s = j.at("cv").get<std::string>();
    if (s == "loo")
      f.cv = CvScheme::LeaveOneClusterOut;
    else if (s == "lopo")
      f.cv = CvScheme::LeaveOnePairOut;
    else
      bad_config("unknown cv scheme '" + s + "' (expected loo or lopo)");
  }
  if (j.contains("link"))
    f.link_override = link_from_string(j.at("link").get<std::string>());
  return f;
}

GeeSpec gee_from_json(const json& j) {
  require_keys(j,
               {"link", "working_corr", "adjustment", "fay_graubard",
                "arm_interacted", "max_iter", "tol"},
               "gee");
  GeeSpec g;
  if (j.contains("link"))
    g.link = link_from_string(j.at("link").get<std::string>());
  if (j.contains("working_corr")) {
    const std::string s = j.at("working_corr").get<std::string>();
    if (s == "independence")
      g.working_corr = GeeSpec::Corr::Independence;
    else if (s == "exchangeable")
      g.working_corr = GeeSpec::Corr::Exchangeable;
    else
      bad_config("unknown working_corr '" + s + "'");
  }
  if (j.contains("adjustment"))
    g.adjustment = name_list(j.at("adjustment"), "gee.adjustment");
  if (j.contains("fay_graubard")) {
    const json& v = j.at("fay_graubard");
    if (v.is_null()) {
      g.fay_graubard.reset();
    } else {
      const double b = v.get<double>();
      if (!(b > 0.0 && b < 1.0))
        bad_config("fay_graubard bound must lie in (0,1)");
      g.fay_graubard = b;
    }
  }
  if (j.contains("arm_interacted"))
    g.arm_interacted_augmentation = j.at("arm_interacted").get<bool>();
  if (j.contains("max_iter")) g.max_iter = j.at("max_iter").get<int>();
  if (j.contains("tol")) g.tol = j.at("tol").get<double>();
  return g;
}

}  // namespace

// ---- estimator dispatch -------------------------------------------------

EstimateResult run_estimator(const TrialData& trial,
                             const EstimatorSpec& spec) {
  EstimateResult r;
  if (spec.kind == "unadjusted") {
    r = unadjusted(trial, spec.target, spec.matched);
  } else if (spec.kind == "ttest") {
    r = geometric_ratio_ttest(trial);
  } else if (spec.kind == "care") {
    r = care(trial, spec.care_adjustment);
  } else if (spec.kind == "gee") {
    r = gee(trial, spec.gee, spec.gee_marginal);
  } else if (spec.kind == "auggee") {
    r = aug_gee(trial, spec.gee);
  } else if (spec.kind == "cluster-tmle") {
    r = cluster_tmle(trial, spec.fit, spec.target, {spec.matched});
  } else if (spec.kind == "hierarchical-tmle") {
    r = hierarchical_tmle(trial, spec.fit, spec.target, {spec.matched});
  } else if (spec.kind == "hybrid-tmle") {
    r = hybrid_tmle(trial, spec.fit, spec.target, {spec.matched});
  } else {
    throw ConfigError("unknown estimator kind '" + spec.kind + "'");
  }
  if (!spec.label.empty()) r.estimator = spec.label;
  return r;
}

double truth_value_for(const EstimatorSpec& spec, const ScenarioTruth& truth) {
  if (spec.kind == "ttest" || spec.kind == "care")
    return truth.geometric_ratio;
  if (spec.kind == "gee" || spec.kind == "auggee")
    return spec.gee.link == Link::Identity ? truth.individual_diff
                                           : truth.individual_ratio;
  switch (spec.target.level) {
    case EffectLevel::Cluster:
      return spec.target.scale == EffectScale::Ratio ? truth.cluster_ratio
                                                     : truth.cluster_diff;
    default:
      return spec.target.scale == EffectScale::Ratio
                 ? truth.individual_ratio
                 : truth.individual_diff;
  }
}

MetricsRow summarize(const EstimatorSpec& spec, double truth,
                     const std::vector<ReplicateRecord>& records) {
  MetricsRow row;
  row.label = spec.label.empty() ? spec.kind : spec.label;
  row.truth = truth;
  const bool log_scale = ratio_metrics(spec);
  std::vector<double> spread;
  double sum_est = 0, sum_se = 0;
  int covered = 0, rejected = 0;
  for (const auto& rec : records) {
    if (!rec.ok) {
      ++row.failures;
      continue;
    }
    ++row.n;
    sum_est += rec.estimate;
    sum_se += rec.se;
    spread.push_back(log_scale ? std::log(rec.estimate) : rec.estimate);
    if (rec.ci_lower <= truth && truth <= rec.ci_upper) ++covered;
    if (rec.p_value < 0.05) ++rejected;
  }
  if (row.n == 0) return row;
  row.pt = sum_est / row.n;
  row.bias = row.pt - truth;
  row.mean_se = sum_se / row.n;
  double mean = 0;
  for (const double v : spread) mean += v;
  mean /= spread.size();
  double ss = 0;
  for (const double v : spread) ss += (v - mean) * (v - mean);
  row.sigma = spread.size() > 1 ? std::sqrt(ss / (spread.size() - 1)) : 0.0;
  row.coverage = static_cast<double>(covered) / row.n;
  row.rejection = static_cast<double>(rejected) / row.n;
  return row;
}

RunOutput run_replicates(const RunConfig& config) {
  if (config.replicates < 1)
    throw ConfigError("replicates must be at least 1");
  if (config.estimators.empty())
    throw ConfigError("no estimators configured");
  {
    std::set<std::string> labels;
    for (const auto& e : config.estimators) {
      const std::string label = e.label.empty() ? e.kind : e.label;
      if (!labels.insert(label).second)
        throw ConfigError("duplicate estimator label '" + label + "'");
    }
  }
  config.scenario.validate();

  const int pop = config.truth_population > 0
                      ? config.truth_population
                      : (config.scenario.scenario == Scenario::SimI ? 2500
                                                                    : 1000);
  RunOutput out;
  out.truth = compute_truth(config.scenario, pop);

  const int R = config.replicates;
  const int E = static_cast<int>(config.estimators.size());
  out.records.assign(E, std::vector<ReplicateRecord>(R));

  const auto run_one = [&](int r) {
    const TrialData trial =
        generate_trial(config.scenario, static_cast<std::uint64_t>(r) + 1)
            .first;
    for (int e = 0; e < E; ++e) {
      ReplicateRecord rec;
      rec.replicate = r + 1;
      try {
        const EstimateResult res =
            run_estimator(trial, config.estimators[e]);
        rec.ok = true;
        rec.estimate = res.estimate;
        rec.se = res.se;
        rec.ci_lower = res.ci_lower;
        rec.ci_upper = res.ci_upper;
        rec.p_value = res.p_value;
        rec.psi1 = res.psi1;
        rec.psi0 = res.psi0;
        rec.outcome_adjustment = join_names(res.outcome_adjustment);
        rec.propensity_adjustment = join_names(res.propensity_adjustment);
      } catch (const ConfigError&) {
        throw;  // a misconfiguration fails the whole run, not one replicate
      } catch (const std::exception& ex) {
        rec.ok = false;
        rec.error = ex.what();
      }
      out.records[e][r] = std::move(rec);
    }
  };

  const int workers = std::max(1, config.threads);
  if (workers == 1) {
    for (int r = 0; r < R; ++r) run_one(r);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (;;) {
          const int r = next.fetch_add(1);
          if (r >= R) return;
          try {
            run_one(r);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  for (int e = 0; e < E; ++e)
    out.rows.push_back(summarize(config.estimators[e],
                                 truth_value_for(config.estimators[e],
                                                 out.truth),
                                 out.records[e]));
  return out;
}

// ---- tables -------------------------------------------------------------

std::string emit_table(const std::vector<MetricsRow>& rows,
                       TableFormat format) {
  std::ostringstream os;
  if (format == TableFormat::Csv) {
    os << "estimator,truth,n,failures,pt,bias,sigma,mean_se,coverage,"
          "rejection\n";
    for (const auto& r : rows)
      os << r.label << ',' << fmt_full(r.truth) << ',' << r.n << ','
         << r.failures << ',' << fmt_full(r.pt) << ',' << fmt_full(r.bias)
         << ',' << fmt_full(r.sigma) << ',' << fmt_full(r.mean_se) << ','
         << fmt_full(r.coverage) << ',' << fmt_full(r.rejection) << '\n';
    return os.str();
  }
  if (format == TableFormat::Json) {
    json arr = json::array();
    for (const auto& r : rows)
      arr.push_back(json{{"estimator", r.label},
                         {"truth", r.truth},
                         {"n", r.n},
                         {"failures", r.failures},
                         {"pt", r.pt},
                         {"bias", r.bias},
                         {"sigma", r.sigma},
                         {"mean_se", r.mean_se},
                         {"coverage", r.coverage},
                         {"rejection", r.rejection}});
    return arr.dump(2) + "\n";
  }
  size_t width = 9;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  const auto pad = [&os](const std::string& s, size_t w) {
    os << s;
    for (size_t i = s.size(); i < w; ++i) os << ' ';
  };
  pad("estimator", width + 2);
  for (const char* h : {"pt", "bias", "σ", "σ̂", "covg",
                        "power"}) {
    // the two sigma headers occupy one terminal column each
    std::string s(h);
    os << s;
    const size_t visible = s == "σ" ? 1 : (s == "σ̂" ? 1
                                                                    : s.size());
    for (size_t i = visible; i < 6; ++i) os << ' ';
  }
  os << '\n';
  for (const auto& r : rows) {
    pad(r.label, width + 2);
    for (const double v : {r.pt, r.bias, r.sigma, r.mean_se, r.coverage,
                           r.rejection}) {
      const std::string s = fmt_fixed(v, 2);
      os << s;
      for (size_t i = s.size(); i < 6; ++i) os << ' ';
    }
    os << '\n';
  }
  for (const auto& r : rows)
    if (r.failures > 0)
      os << r.label << ": " << r.failures << " of " << (r.n + r.failures)
         << " replicates failed\n";
  return os.str();
}

std::string truth_to_string(const ScenarioTruth& t, TableFormat format) {
  if (format == TableFormat::Csv) {
    std::ostringstream os;
    os << "population,psi_c1,psi_c0,cluster_ratio,cluster_diff,psi_1,psi_0,"
          "individual_ratio,individual_diff,geometric_ratio\n"
       << t.population_size << ',' << fmt_full(t.psi_c1) << ','
       << fmt_full(t.psi_c0) << ',' << fmt_full(t.cluster_ratio) << ','
       << fmt_full(t.cluster_diff) << ',' << fmt_full(t.psi_1) << ','
       << fmt_full(t.psi_0) << ',' << fmt_full(t.individual_ratio) << ','
       << fmt_full(t.individual_diff) << ','
       << fmt_full(t.geometric_ratio) << '\n';
    return os.str();
  }
  if (format == TableFormat::Json) {
    return json{{"population", t.population_size},
                {"psi_c1", t.psi_c1},
                {"psi_c0", t.psi_c0},
                {"cluster_ratio", t.cluster_ratio},
                {"cluster_diff", t.cluster_diff},
                {"psi_1", t.psi_1},
                {"psi_0", t.psi_0},
                {"individual_ratio", t.individual_ratio},
                {"individual_diff", t.individual_diff},
                {"geometric_ratio", t.geometric_ratio}}
               .dump(2) +
           "\n";
  }
  std::ostringstream os;
  os << "population clusters: " << t.population_size << '\n'
     << "cluster level:    psi(1)=" << fmt_fixed(t.psi_c1, 4)
     << "  psi(0)=" << fmt_fixed(t.psi_c0, 4)
     << "  ratio=" << fmt_fixed(t.cluster_ratio, 4)
     << "  diff=" << fmt_fixed(t.cluster_diff, 4) << '\n'
     << "individual level: psi(1)=" << fmt_fixed(t.psi_1, 4)
     << "  psi(0)=" << fmt_fixed(t.psi_0, 4)
     << "  ratio=" << fmt_fixed(t.individual_ratio, 4)
     << "  diff=" << fmt_fixed(t.individual_diff, 4) << '\n'
     << "geometric ratio:  " << fmt_fixed(t.geometric_ratio, 4) << '\n';
  return os.str();
}

// ---- JSON round trips ---------------------------------------------------

ScenarioSpec scenario_from_json(const json& j) {
  require_keys(j,
               {"name", "clusters", "size_mean", "size_sd", "size_floor",
                "null_effect", "seed"},
               "scenario");
  std::uint64_t seed = 1;
  if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
  std::string name = "sim1";
  if (j.contains("name")) name = j.at("name").get<std::string>();
  ScenarioSpec spec;
  if (name == "sim1")
    spec = ScenarioSpec::sim1(seed);
  else if (name == "sim2")
    spec = ScenarioSpec::sim2(seed);
  else
    bad_config("unknown scenario '" + name + "' (expected sim1 or sim2)");
  if (j.contains("clusters")) spec.clusters = j.at("clusters").get<int>();
  if (j.contains("size_mean"))
    spec.size_mean = j.at("size_mean").get<double>();
  if (j.contains("size_sd")) spec.size_sd = j.at("size_sd").get<double>();
  if (j.contains("size_floor"))
    spec.size_floor = j.at("size_floor").get<int>();
  if (j.contains("null_effect"))
    spec.null_effect = j.at("null_effect").get<bool>();
  return spec;
}

EstimatorSpec estimator_from_json(const json& j) {
  require_keys(j,
               {"label", "kind", "target", "matched", "fit", "gee",
                "gee_marginal", "care_adjustment"},
               "estimator");
  EstimatorSpec e;
  if (j.contains("label")) e.label = j.at("label").get<std::string>();
  if (j.contains("kind")) e.kind = j.at("kind").get<std::string>();
  static const std::set<std::string> kinds = {
      "unadjusted", "ttest",        "care",
      "gee",        "auggee",       "cluster-tmle",
      "hierarchical-tmle",          "hybrid-tmle"};
  if (!kinds.count(e.kind))
    bad_config("unknown estimator kind '" + e.kind + "'");
  if (j.contains("target"))
    e.target = target_from_json(j.at("target"), "estimator.target");
  if (j.contains("matched")) e.matched = j.at("matched").get<bool>();
  if (j.contains("fit")) e.fit = fit_from_json(j.at("fit"));
  if (j.contains("gee")) e.gee = gee_from_json(j.at("gee"));
  if (j.contains("gee_marginal"))
    e.gee_marginal = j.at("gee_marginal").get<bool>();
  if (j.contains("care_adjustment"))
    e.care_adjustment =
        name_list(j.at("care_adjustment"), "care_adjustment");
  if (e.label.empty()) e.label = e.kind;
  return e;
}

RunConfig config_from_json(const json& j) {
  require_keys(j,
               {"scenario", "replicates", "threads", "truth_population",
                "estimators"},
               "config");
  RunConfig c;
  if (j.contains("scenario"))
    c.scenario = scenario_from_json(j.at("scenario"));
  if (j.contains("replicates")) c.replicates = j.at("replicates").get<int>();
  if (j.contains("threads")) c.threads = j.at("threads").get<int>();
  if (j.contains("truth_population"))
    c.truth_population = j.at("truth_population").get<int>();
  if (j.contains("estimators")) {
    const json& arr = j.at("estimators");
    if (!arr.is_array()) bad_config("estimators must be an array");
    for (const auto& v : arr) {
      if (v.is_string()) {
        const auto preset = estimator_preset(v.get<std::string>());
        c.estimators.insert(c.estimators.end(), preset.begin(), preset.end());
      } else {
        c.estimators.push_back(estimator_from_json(v));
      }
    }
  }
  return c;
}

json result_to_json(const EstimateResult& r) {
  return json{{"estimator", r.estimator},
              {"psi1", r.psi1},
              {"psi0", r.psi0},
              {"estimate", r.estimate},
              {"scale",
               r.scale == EffectScale::Ratio ? "ratio" : "difference"},
              {"se", r.se},
              {"df", r.df},
              {"ci_lower", r.ci_lower},
              {"ci_upper", r.ci_upper},
              {"p_value", r.p_value},
              {"outcome_adjustment", r.outcome_adjustment},
              {"propensity_adjustment", r.propensity_adjustment},
              {"matched", r.matched}};
}

nlohmann::json run_output_to_json(const RunOutput& out) {
  json truth = json::parse(truth_to_string(out.truth, TableFormat::Json));
  json rows = json::parse(emit_table(out.rows, TableFormat::Json));
  json records = json::array();
  for (const auto& per_estimator : out.records) {
    json arr = json::array();
    for (const auto& rec : per_estimator)
      arr.push_back(json{{"replicate", rec.replicate},
                         {"ok", rec.ok},
                         {"error", rec.error},
                         {"estimate", rec.estimate},
                         {"se", rec.se},
                         {"ci_lower", rec.ci_lower},
                         {"ci_upper", rec.ci_upper},
                         {"p_value", rec.p_value},
                         {"psi1", rec.psi1},
                         {"psi0", rec.psi0},
                         {"outcome_adjustment", rec.outcome_adjustment},
                         {"propensity_adjustment",
                          rec.propensity_adjustment}});
    records.push_back(std::move(arr));
  }
  return json{{"truth", std::move(truth)},
              {"metrics", std::move(rows)},
              {"records", std::move(records)}};
}

// ---- presets ------------------------------------------------------------

std::vector<EstimatorSpec> estimator_preset(const std::string& name) {
  const EffectTarget cluster_ratio{EffectLevel::Cluster, EffectScale::Ratio};
  const EffectTarget indiv_ratio{EffectLevel::Individual, EffectScale::Ratio};

  const auto adaptive_fit = [](std::vector<std::vector<std::string>> cands) {
    FitSpec f;
    f.mode = FitMode::Adaptive;
    f.outcome_candidates = cands;
    f.propensity_candidates = std::move(cands);
    return f;
  };

  if (name == "sim1-primary") {
    const std::vector<std::vector<std::string>> cands{
        {}, {"W1"}, {"W2"}, {"W3"}, {"W4"}};
    const std::vector<std::string> full{"W1", "W2", "W3",
                                        "W4", "E1", "E2"};
    std::vector<EstimatorSpec> out;
    {
      EstimatorSpec e;
      e.label = "unadj";
      e.kind = "unadjusted";
      e.target = cluster_ratio;
      out.push_back(e);
    }
    {
      EstimatorSpec e;
      e.label = "c-tmle";
      e.kind = "cluster-tmle";
      e.target = cluster_ratio;
      e.fit = adaptive_fit(cands);
      out.push_back(e);
    }
    {
      EstimatorSpec e;
      e.label = "h-tmle";
      e.kind = "hierarchical-tmle";
      e.target = cluster_ratio;
      e.fit = adaptive_fit(cands);
      out.push_back(e);
    }
    {
      EstimatorSpec e;
      e.label = "ttest";
      e.kind = "ttest";
      out.push_back(e);
    }
    {
      EstimatorSpec e;
      e.label = "care";
      e.kind = "care";
      e.care_adjustment = full;
      out.push_back(e);
    }
    {
      EstimatorSpec e;
      e.label = "gee";
      e.kind = "gee";
      e.gee.adjustment = full;
      out.push_back(e);
    }
    {
      EstimatorSpec e;
      e.label = "aug-gee";
      e.kind = "auggee";
      e.gee.adjustment = full;
      // Plain robust sandwich: the augmented scores already shrink the meat,
      // and the uncorrected variant matches the reference small-sample
      // behaviour (slightly anticonservative at J = 20).
      e.gee.fay_graubard.reset();
      out.push_back(e);
    }
    return out;
  }

  if (name == "sim2-tmle") {
    const std::vector<std::vector<std::string>> cands{{}, {"W1"}, {"W2"}};
    std::vector<EstimatorSpec> out;
    for (const auto& [target, suffix] :
         {std::pair{cluster_ratio, "-c"}, std::pair{indiv_ratio, "-i"}}) {
      {
        EstimatorSpec e;
        e.label = std::string("c-tmle") + suffix;
        e.kind = "cluster-tmle";
        e.target = target;
        e.fit.fixed_outcome = {"W1"};
        out.push_back(e);
      }
      {
        EstimatorSpec e;
        e.label = std::string("c-tmle-ap") + suffix;
        e.kind = "cluster-tmle";
        e.target = target;
        e.fit = adaptive_fit(cands);
        out.push_back(e);
      }
      {
        EstimatorSpec e;
        e.label = std::string("h-tmle") + suffix;
        e.kind = "hierarchical-tmle";
        e.target = target;
        e.fit.fixed_outcome = {"W1"};
        out.push_back(e);
      }
      {
        EstimatorSpec e;
        e.label = std::string("h-tmle-ap") + suffix;
        e.kind = "hierarchical-tmle";
        e.target = target;
        e.fit = adaptive_fit(cands);
        out.push_back(e);
      }
    }
    return out;
  }

  if (name == "appc-small") {
    const std::vector<std::vector<std::string>> cands{
        {}, {"W1"}, {"W2"}, {"W3"}, {"W4"}};
    std::vector<EstimatorSpec> out;
    for (const auto& [target, suffix] :
         {std::pair{cluster_ratio, "-c"}, std::pair{indiv_ratio, "-i"}}) {
      {
        EstimatorSpec e;
        e.label = std::string("unadj") + suffix;
        e.kind = "unadjusted";
        e.target = target;
        out.push_back(e);
      }
      {
        EstimatorSpec e;
        e.label = std::string("c-tmle-ap") + suffix;
        e.kind = "cluster-tmle";
        e.target = target;
        e.fit = adaptive_fit(cands);
        out.push_back(e);
      }
      {
        EstimatorSpec e;
        e.label = std::string("h-tmle-ap") + suffix;
        e.kind = "hierarchical-tmle";
        e.target = target;
        e.fit = adaptive_fit(cands);
        out.push_back(e);
      }
    }
    return out;
  }

  throw ConfigError("unknown estimator preset '" + name +
                    "' (expected sim1-primary, sim2-tmle, or appc-small)");
}

}  // namespace crt
