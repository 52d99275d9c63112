#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tmle.hpp"
#include "trial.hpp"

namespace crt {

struct GeeSpec {
  Link link = Link::Log;
  enum class Corr { Independence, Exchangeable };
  Corr working_corr = Corr::Independence;
  std::vector<std::string> adjustment;   // conditional model covariates
  // Small-sample correction: coordinate k of each cluster's score is scaled
  // by (1 - min(b, Q_j,kk))^{-1/2}, Q_j the cluster's share of the total
  // information matrix. nullopt disables.
  std::optional<double> fay_graubard = 0.75;
  bool arm_interacted_augmentation = false;  // one interacted fit instead of
                                             // arm-stratified outcome fits
  int max_iter = 200;
  double tol = 1e-8;
};

// Arithmetic-mean contrast with no adjustment. Implemented as the
// cluster-level TMLE with empty adjustment sets, of which it is the exact
// special case, so the two agree identically.
EstimateResult unadjusted(const TrialData& trial, const EffectTarget& target,
                          bool matched = false);

// Two-sample t-test comparing arm means of log cluster outcomes; reports the
// ratio of geometric means. Clusters with nonpositive outcomes are an error.
EstimateResult geometric_ratio_ttest(const TrialData& trial);

// Covariate-adjusted residuals: a pooled individual-level logistic model
// without the arm, cluster-level observed/expected ratios R_j = d_j/e_j, and
// a two-sample t-test on log R_j. Any cluster with d_j = 0 is an error.
EstimateResult care(const TrialData& trial,
                    const std::vector<std::string>& adjustment);

// GEE for the individual-level effect with robust (sandwich) standard errors
// and the Fay-Graubard correction; marginal=true fits intercept + arm only,
// otherwise the adjustment covariates enter the linear predictor. The
// reported contrast for the log link is exp(beta_arm), a ratio; identity
// gives a difference. df = J - p.
EstimateResult gee(const TrialData& trial, const GeeSpec& spec,
                   bool marginal = false);

// Augmented GEE: the marginal estimating equation is augmented with
// arm-specific outcome regressions evaluated on every cluster, weighted by
// the known randomization probability 1/2.
EstimateResult aug_gee(const TrialData& trial, const GeeSpec& spec);

}  // namespace crt
