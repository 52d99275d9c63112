#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "inference.hpp"

namespace crt {

struct ClusterRecord {
  int id = 0;
  std::optional<int> pair_id;
  int arm = 0;              // 0 control, 1 intervention
  Eigen::VectorXd e;        // cluster-level covariates, aligned with TrialData::e_names
  Eigen::MatrixXd w;        // individuals x covariates, aligned with w_names
  Eigen::VectorXd y;        // individual outcomes

  int size() const { return static_cast<int>(y.size()); }
};

struct TrialData {
  std::vector<ClusterRecord> clusters;
  std::vector<std::string> e_names;
  std::vector<std::string> w_names;

  int n_clusters() const { return static_cast<int>(clusters.size()); }
  long long total_individuals() const;
  bool has_pairs() const;
  int arm_count(int arm) const;

  // Invariants required before estimation: >= 1 cluster per arm, nonempty
  // clusters, consistent covariate dimensions, arms in {0,1}, and pair ids
  // (when present) forming exact pairs with one cluster per arm.
  // Construction itself stays permissive so partial data can be assembled.
  void validate() const;
};

enum class EffectLevel { Cluster, Individual };

struct EffectTarget {
  EffectLevel level = EffectLevel::Cluster;
  EffectScale scale = EffectScale::Ratio;
};

// Weights defining the target of inference. alpha_ij = 1/N_j always (cluster
// outcomes are within-cluster means); gamma_j = 1 for cluster-level effects
// and J*N_j/N_T for individual-level effects. Both schemes satisfy
// sum_j gamma_j = J, and with the individual-level gamma the weighted mean of
// cluster outcomes recovers the pooled individual mean exactly.
class WeightScheme {
 public:
  static WeightScheme for_target(const TrialData& trial, EffectLevel level);
  double alpha(const ClusterRecord& c) const;
  double gamma(const ClusterRecord& c) const;
  EffectLevel level() const { return level_; }

 private:
  EffectLevel level_ = EffectLevel::Cluster;
  long long total_individuals_ = 0;
  int n_clusters_ = 0;
};

// Y^c_j = sum_i alpha_ij Y_ij (the within-cluster mean).
double cluster_outcome(const ClusterRecord& cluster, const WeightScheme& scheme);

// gamma-weighted mean of cluster outcomes within an arm:
// sum_{A_j=a} gamma_j Y^c_j / sum_{A_j=a} gamma_j. The cluster scheme gives
// the plain mean of cluster outcomes; the individual scheme collapses to the
// pooled mean over the arm's individuals.
double pooled_mean(const TrialData& trial, int arm, const EffectTarget& target);

// J x p matrix of within-cluster covariate means (cluster-level summaries of
// individual covariates, used by cluster-level working models).
Eigen::MatrixXd covariate_summaries(const TrialData& trial);

}  // namespace crt
