#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "trial.hpp"

namespace crt {

enum class Scenario { SimI, SimII };

struct ScenarioSpec {
  Scenario scenario = Scenario::SimI;
  int clusters = 20;          // must be even: clusters are pair-matched
  double size_mean = 150.0;
  double size_sd = 80.0;
  int size_floor = 30;        // sizes are rounded, then clamped from below
  bool null_effect = false;   // zero out the treatment terms
  std::uint64_t seed = 1;

  static ScenarioSpec sim1(std::uint64_t seed = 1);
  static ScenarioSpec sim2(std::uint64_t seed = 1);
  void validate() const;  // throws ConfigError
};

// Potential outcomes for every individual, generated from a shared uniform so
// the realized outcome equals the potential outcome under the assigned arm.
struct CounterfactualStore {
  std::vector<Eigen::VectorXd> y1, y0;
};

struct ScenarioTruth {
  double psi_c1 = 0, psi_c0 = 0;  // treatment-specific means, cluster level
  double psi_1 = 0, psi_0 = 0;    // individual level
  double cluster_ratio = 1;
  double individual_ratio = 1;
  double geometric_ratio = 1;     // ratio of geometric means of cluster outcomes
  double cluster_diff = 0;
  double individual_diff = 0;
  int population_size = 0;
};

// Minimum-total-distance perfect matching on |v_i - v_j|: exact subset DP up
// to 22 clusters, greedy nearest-neighbour beyond that. Deterministic ties
// (lowest index first); each pair is returned as (lower, higher).
std::vector<std::pair<int, int>> pair_match(const std::vector<double>& values);

std::pair<TrialData, CounterfactualStore> generate_sim1(const ScenarioSpec& spec,
                                                        std::uint64_t stream);
std::pair<TrialData, CounterfactualStore> generate_sim2(const ScenarioSpec& spec,
                                                        std::uint64_t stream);
std::pair<TrialData, CounterfactualStore> generate_trial(const ScenarioSpec& spec,
                                                         std::uint64_t stream);

// Monte Carlo truth over a large population of clusters (stream 0 of the
// spec's seed). Geometric means skip clusters with a zero mean potential
// outcome, which occurs with negligible probability at these sizes.
ScenarioTruth compute_truth(const ScenarioSpec& spec, int population_size);

}  // namespace crt
