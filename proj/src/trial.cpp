#include "crteffects/trial.hpp"

#include <map>
#include <set>

#include "crteffects/errors.hpp"

namespace crt {

long long TrialData::total_individuals() const {
  long long n = 0;
  for (const auto& c : clusters) n += c.size();
  return n;
}

bool TrialData::has_pairs() const {
  if (clusters.empty()) return false;
  for (const auto& c : clusters)
    if (!c.pair_id) return false;
  return true;
}

int TrialData::arm_count(int arm) const {
  int n = 0;
  for (const auto& c : clusters) n += (c.arm == arm) ? 1 : 0;
  return n;
}

void TrialData::validate() const {
  if (clusters.empty()) throw DataError("trial has no clusters");
  const auto pe = static_cast<Eigen::Index>(e_names.size());
  const auto pw = static_cast<Eigen::Index>(w_names.size());
  std::set<int> ids;
  for (const auto& c : clusters) {
    if (!ids.insert(c.id).second)
      throw DataError("duplicate cluster id " + std::to_string(c.id));
    if (c.arm != 0 && c.arm != 1)
      throw DataError("cluster " + std::to_string(c.id) + ": arm must be 0 or 1");
    if (c.size() == 0)
      throw DataError("cluster " + std::to_string(c.id) + " is empty");
    if (c.e.size() != pe)
      throw DataError("cluster " + std::to_string(c.id) +
                      ": cluster covariate count does not match e_names");
    if (c.w.rows() != c.y.size() || c.w.cols() != pw)
      throw DataError("cluster " + std::to_string(c.id) +
                      ": individual covariate block has wrong shape");
    if (!c.y.allFinite() || !c.e.allFinite() || !c.w.allFinite())
      throw DataError("cluster " + std::to_string(c.id) + ": non-finite values");
  }
  if (arm_count(0) == 0 || arm_count(1) == 0)
    throw DataError("each arm needs at least one cluster");

  const bool any_pair =
      std::any_of(clusters.begin(), clusters.end(),
                  [](const ClusterRecord& c) { return c.pair_id.has_value(); });
  if (any_pair) {
    std::map<int, std::pair<int, int>> arms_by_pair;  // pair -> (arm0, arm1) counts
    for (const auto& c : clusters) {
      if (!c.pair_id)
        throw DataError("cluster " + std::to_string(c.id) +
                        " lacks a pair id while others have one");
      auto& counts = arms_by_pair[*c.pair_id];
      (c.arm == 0 ? counts.first : counts.second) += 1;
    }
    for (const auto& [pid, counts] : arms_by_pair) {
      if (counts.first != 1 || counts.second != 1)
        throw DataError("pair " + std::to_string(pid) +
                        " must contain exactly one cluster per arm");
    }
  }
}

WeightScheme WeightScheme::for_target(const TrialData& trial, EffectLevel level) {
  WeightScheme s;
  s.level_ = level;
  s.total_individuals_ = trial.total_individuals();
  s.n_clusters_ = trial.n_clusters();
  return s;
}

double WeightScheme::alpha(const ClusterRecord& c) const {
  return 1.0 / static_cast<double>(c.size());
}

double WeightScheme::gamma(const ClusterRecord& c) const {
  if (level_ == EffectLevel::Cluster) return 1.0;
  // J * N_j / N_T with the product taken first, so equal cluster sizes give
  // exactly 1 and the two schemes coincide bit for bit.
  return static_cast<double>(static_cast<long long>(n_clusters_) * c.size()) /
         static_cast<double>(total_individuals_);
}

double cluster_outcome(const ClusterRecord& cluster, const WeightScheme& scheme) {
  return scheme.alpha(cluster) * cluster.y.sum();
}

double pooled_mean(const TrialData& trial, int arm, const EffectTarget& target) {
  double num = 0.0, den = 0.0;
  for (const auto& c : trial.clusters) {
    if (c.arm != arm) continue;
    if (target.level == EffectLevel::Individual) {
      // direct pooled sum; identical to the gamma-weighted mean of cluster
      // outcomes but free of the divide-multiply round trip
      num += c.y.sum();
      den += static_cast<double>(c.size());
    } else {
      num += c.y.mean();
      den += 1.0;
    }
  }
  if (den == 0.0) throw DataError("no clusters in arm " + std::to_string(arm));
  return num / den;
}

Eigen::MatrixXd covariate_summaries(const TrialData& trial) {
  const auto J = trial.n_clusters();
  const auto p = static_cast<Eigen::Index>(trial.w_names.size());
  Eigen::MatrixXd out(J, p);
  for (int j = 0; j < J; ++j)
    out.row(j) = trial.clusters[j].w.colwise().mean();
  return out;
}

}  // namespace crt
