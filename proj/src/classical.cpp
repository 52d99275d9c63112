#include <cmath>
#include <string>
#include <vector>

#include "crteffects/classical.hpp"
#include "crteffects/errors.hpp"

namespace crt {
namespace {

// Two-sample pooled-variance t on per-cluster log values; the reported
// contrast is the exponentiated arm difference (a ratio of geometric means).
EstimateResult log_scale_ttest(const TrialData& trial,
                               const Eigen::VectorXd& logv,
                               const char* label) {
  const int J = trial.n_clusters();
  double sum1 = 0, sum0 = 0;
  int n1 = 0, n0 = 0;
  for (int j = 0; j < J; ++j) {
    if (trial.clusters[j].arm == 1) {
      sum1 += logv[j];
      ++n1;
    } else {
      sum0 += logv[j];
      ++n0;
    }
  }
  if (n1 < 2 || n0 < 2)
    throw EstimatorError(std::string(label) +
                         " needs at least two clusters per arm");
  const double m1 = sum1 / n1;
  const double m0 = sum0 / n0;
  double ss = 0;
  for (int j = 0; j < J; ++j) {
    const double m = trial.clusters[j].arm == 1 ? m1 : m0;
    ss += (logv[j] - m) * (logv[j] - m);
  }
  const double sp2 = ss / (J - 2);
  Contrast c;
  c.scale = EffectScale::Ratio;
  c.estimate = std::exp(m1 - m0);
  c.se = std::sqrt(sp2 * (1.0 / n1 + 1.0 / n0));
  c.df = J - 2;
  finalize_contrast(c);

  EstimateResult r;
  r.estimator = label;
  r.psi1 = std::exp(m1);
  r.psi0 = std::exp(m0);
  r.estimate = c.estimate;
  r.scale = c.scale;
  r.se = c.se;
  r.df = c.df;
  r.ci_lower = c.ci_lower;
  r.ci_upper = c.ci_upper;
  r.p_value = c.p_value;
  r.influence.resize(J);
  for (int j = 0; j < J; ++j)
    r.influence[j] = logv[j] - (trial.clusters[j].arm == 1 ? m1 : m0);
  return r;
}

}  // namespace

EstimateResult unadjusted(const TrialData& trial, const EffectTarget& target,
                          bool matched) {
  FitSpec fit;  // fixed mode, empty adjustment sets
  TmleOptions opts;
  opts.matched = matched;
  EstimateResult r = cluster_tmle(trial, fit, target, opts);
  r.estimator = "unadjusted";
  return r;
}

EstimateResult geometric_ratio_ttest(const TrialData& trial) {
  trial.validate();
  const int J = trial.n_clusters();
  const WeightScheme scheme =
      WeightScheme::for_target(trial, EffectLevel::Cluster);
  Eigen::VectorXd logv(J);
  for (int j = 0; j < J; ++j) {
    const double yc = cluster_outcome(trial.clusters[j], scheme);
    if (!(yc > 0.0))
      throw EstimatorError(
          "geometric-ratio t-test: cluster " +
          std::to_string(trial.clusters[j].id) +
          " has nonpositive mean outcome; continuity corrections are out of "
          "scope");
    logv[j] = std::log(yc);
  }
  return log_scale_ttest(trial, logv, "ttest");
}

EstimateResult care(const TrialData& trial,
                    const std::vector<std::string>& adjustment) {
  trial.validate();
  const int J = trial.n_clusters();

  // Pooled individual-level logistic regression without the arm.
  std::vector<std::pair<bool, int>> cols;  // (is_individual, index)
  for (const auto& name : adjustment) {
    bool found = false;
    for (int k = 0; k < static_cast<int>(trial.w_names.size()); ++k)
      if (trial.w_names[k] == name) {
        cols.emplace_back(true, k);
        found = true;
        break;
      }
    if (found) continue;
    for (int k = 0; k < static_cast<int>(trial.e_names.size()); ++k)
      if (trial.e_names[k] == name) {
        cols.emplace_back(false, k);
        found = true;
        break;
      }
    if (!found)
      throw ConfigError("unknown adjustment covariate '" + name + "'");
  }
  long long n_total = 0;
  for (const auto& c : trial.clusters) n_total += c.size();
  const int p = 1 + static_cast<int>(cols.size());
  Eigen::MatrixXd X(n_total, p);
  Eigen::VectorXd y(n_total);
  Eigen::Index at = 0;
  for (const auto& c : trial.clusters) {
    const Eigen::Index n = c.size();
    X.col(0).segment(at, n).setOnes();
    for (size_t k = 0; k < cols.size(); ++k)
      X.col(1 + k).segment(at, n) =
          cols[k].first ? Eigen::VectorXd(c.w.col(cols[k].second))
                        : Eigen::VectorXd::Constant(n, c.e[cols[k].second]);
    y.segment(at, n) = c.y;
    at += n;
  }
  GlmSpec gspec;
  gspec.link = Link::Logit;
  const GlmFit fit = fit_glm(X, y, gspec);

  Eigen::VectorXd logr(J);
  at = 0;
  for (int j = 0; j < J; ++j) {
    const Eigen::Index n = trial.clusters[j].size();
    const double d = trial.clusters[j].y.sum();
    const double e = glm_predict(fit, X.middleRows(at, n)).sum();
    at += n;
    if (!(d > 0.0))
      throw EstimatorError("care: cluster " +
                           std::to_string(trial.clusters[j].id) +
                           " has no observed events, so log(O/E) is undefined");
    logr[j] = std::log(d / e);
  }
  EstimateResult r = log_scale_ttest(trial, logr, "care");
  r.outcome_adjustment = adjustment;
  return r;
}

}  // namespace crt
