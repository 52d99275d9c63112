#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "classical.hpp"
#include "dgp.hpp"
#include "tmle.hpp"
#include "trial.hpp"

namespace crt {

// One estimator to run each replicate. kind selects the implementation:
//   unadjusted | ttest | care | gee | auggee |
//   cluster-tmle | hierarchical-tmle | hybrid-tmle
struct EstimatorSpec {
  std::string label;
  std::string kind = "unadjusted";
  EffectTarget target{EffectLevel::Cluster, EffectScale::Ratio};
  FitSpec fit;                       // tmle kinds
  GeeSpec gee;                       // gee / auggee
  bool gee_marginal = false;
  std::vector<std::string> care_adjustment;
  bool matched = false;              // pair-matched variance
};

struct ReplicateRecord {
  int replicate = 0;
  bool ok = false;
  std::string error;
  double estimate = 0, se = 0, ci_lower = 0, ci_upper = 0, p_value = 1;
  double psi1 = 0, psi0 = 0;
  std::string outcome_adjustment, propensity_adjustment;  // "+"-joined
};

// Performance summary over successful replicates. For ratio estimators the
// spread and mean SE are on the log scale and pt is the arithmetic mean of
// the point estimates; rejection is the share of two-sided p-values < 0.05.
struct MetricsRow {
  std::string label;
  double truth = 1;
  int n = 0;
  int failures = 0;
  double pt = 0;
  double bias = 0;
  double sigma = 0;      // sd of estimates (log scale for ratios)
  double mean_se = 0;    // mean reported SE (same scale as sigma)
  double coverage = 0;
  double rejection = 0;
};

struct RunConfig {
  ScenarioSpec scenario;
  int replicates = 500;
  int threads = 1;               // worker threads; results are order-independent
  int truth_population = 0;      // 0 = scenario default
  std::vector<EstimatorSpec> estimators;
};

struct RunOutput {
  ScenarioTruth truth;
  std::vector<MetricsRow> rows;                         // one per estimator
  std::vector<std::vector<ReplicateRecord>> records;    // [estimator][replicate]
};

EstimateResult run_estimator(const TrialData& trial, const EstimatorSpec& spec);
RunOutput run_replicates(const RunConfig& config);

// The truth an estimator is judged against: geometric-mean ratio for the
// t-test and CARE, individual-level for GEE variants, otherwise the truth at
// the estimator's own target.
double truth_value_for(const EstimatorSpec& spec, const ScenarioTruth& truth);
MetricsRow summarize(const EstimatorSpec& spec, double truth,
                     const std::vector<ReplicateRecord>& records);

// Long-format trial CSV: one row per individual with columns
// cluster_id,pair_id,arm,y,<cluster covariates...>,<individual covariates...>.
// pair_id 0 means unpaired. Cluster covariates must be constant within
// cluster; on read, columns listed in cluster_covariates (or, when empty,
// columns constant within every cluster) are treated as cluster-level.
void write_trial_csv(const TrialData& trial, const std::string& path);
TrialData read_trial_csv(const std::string& path,
                         const std::vector<std::string>& cluster_covariates = {});

enum class TableFormat { Plain, Csv, Json };
std::string emit_table(const std::vector<MetricsRow>& rows, TableFormat format);
std::string truth_to_string(const ScenarioTruth& t, TableFormat format);

// JSON round trip for configs and results (CLI and bindings both use these).
RunConfig config_from_json(const nlohmann::json& j);
EstimatorSpec estimator_from_json(const nlohmann::json& j);
ScenarioSpec scenario_from_json(const nlohmann::json& j);
nlohmann::json result_to_json(const EstimateResult& r);
nlohmann::json run_output_to_json(const RunOutput& out);

// Named estimator batteries mirroring the simulation studies:
//   "sim1-primary": the six-estimator comparison at both adaptive TMLE levels
//   "sim2-tmle": hierarchical TMLEs (fixed and adaptive, both targets)
//   "appc-small": unadjusted + adaptive cluster/hierarchical TMLEs
std::vector<EstimatorSpec> estimator_preset(const std::string& name);

}  // namespace crt
