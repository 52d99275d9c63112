#pragma once

#include <optional>
#include <string>
#include <vector>

#include "glm.hpp"
#include "trial.hpp"

namespace crt {

enum class FitMode { Fixed, Adaptive };
enum class CvScheme { LeaveOneClusterOut, LeaveOnePairOut };

// Working-model specification. Candidate adjustment sets name cluster-level
// covariates or individual covariates (cluster-level estimators resolve
// individual names to within-cluster means). The empty set is always a legal
// candidate and, for adaptive selection, should normally be included so the
// selector can fall back to no adjustment.
struct FitSpec {
  FitMode mode = FitMode::Fixed;
  std::vector<std::string> fixed_outcome;
  std::vector<std::string> fixed_propensity;
  std::vector<std::vector<std::string>> outcome_candidates{{}};
  std::vector<std::vector<std::string>> propensity_candidates{{}};
  CvScheme cv = CvScheme::LeaveOneClusterOut;
  // Working link for outcome regressions. Default: logistic when all
  // outcomes lie in [0,1] (means are probabilities), identity otherwise.
  std::optional<Link> link_override;
};

struct EstimateResult {
  std::string estimator;
  double psi1 = 0, psi0 = 0;       // treatment-specific estimates
  double estimate = 0;             // contrast on the reported scale
  EffectScale scale = EffectScale::Ratio;
  double se = 0;                   // analysis scale (log for ratios)
  int df = 0;
  double ci_lower = 0, ci_upper = 0;
  double p_value = 1;
  Eigen::VectorXd influence;       // per-cluster contrast influence values
  Eigen::VectorXd influence1, influence0;
  std::vector<std::string> outcome_adjustment;
  std::vector<std::string> propensity_adjustment;
  bool matched = false;            // pair-matched variance was used
};

struct Fluctuation {
  double eps1 = 0, eps0 = 0;
  Eigen::VectorXd mu1_star, mu0_star;
};

// Logistic fluctuation of initial predictions along the clever covariates
// H(1) = A/pi1 and H(0) = (1-A)/(1-pi1): a two-parameter logistic model for y
// with offset logit(mu_obs), no intercept, fitted with the target weights.
// The updated predictions solve the weighted efficient-score equation in each
// arm. Predictions are clamped to [0.005, 0.995] before taking the offset.
Fluctuation fluctuate(const Eigen::VectorXd& y, const Eigen::VectorXd& weights,
                      const Eigen::VectorXd& mu1, const Eigen::VectorXd& mu0,
                      const Eigen::VectorXd& pi1, const Eigen::VectorXi& arm);

struct TmleOptions {
  bool matched = false;  // use pair-matched variance (requires pair ids)
};

// TMLE on cluster-level summaries: one row per cluster, outcomes Y^c_j,
// weights gamma_j for the chosen target.
EstimateResult cluster_tmle(const TrialData& trial, const FitSpec& fit,
                            const EffectTarget& target,
                            const TmleOptions& opts = {});

// TMLE on pooled individual-level data. The cluster-level target enters
// through weights proportional to 1/N_j so every cluster contributes equally;
// the individual-level target weights individuals equally.
EstimateResult hierarchical_tmle(const TrialData& trial, const FitSpec& fit,
                                 const EffectTarget& target,
                                 const TmleOptions& opts = {});

// Individual-level initial outcome fit whose predictions are averaged within
// cluster, after which targeting proceeds exactly as the cluster-level TMLE.
EstimateResult hybrid_tmle(const TrialData& trial, const FitSpec& fit,
                           const EffectTarget& target,
                           const TmleOptions& opts = {});

enum class TmleFlavor { Cluster, Hierarchical, Hybrid };

// Adaptive pre-specification: cross-validated selection of the outcome
// adjustment set (stage 1, propensity fixed at the known 1/2) and then of the
// propensity adjustment set (stage 2, outcome fixed at the stage-1 winner).
// The loss is the cross-validated sample variance of the contrast influence
// values on the analysis scale; candidates that fail to fit score +infinity.
// Ties prefer the smaller set, then lexicographic order.
struct Selection {
  std::vector<std::string> outcome;
  std::vector<std::string> propensity;
  double cv_loss = 0;             // loss of the winning combination
  double unadjusted_loss = 0;     // loss of the empty/empty combination
};
Selection adaptive_prespec(const TrialData& trial, const FitSpec& fit,
                           const EffectTarget& target, TmleFlavor flavor);

}  // namespace crt
