#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace crt {

enum class EffectScale { Difference, Ratio };

struct Contrast {
  double estimate = 0.0;  // reported scale (ratio contrasts are exponentiated back)
  double se = 0.0;        // analysis scale: log for Ratio, natural for Difference
  int df = 1;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double p_value = 1.0;
  EffectScale scale = EffectScale::Difference;
};

// Regularized incomplete beta I_x(a, b) via the Lentz continued fraction,
// accurate to ~1e-14 over the t-distribution range used here.
double regularized_incomplete_beta(double a, double b, double x);

// Student-t distribution function and quantile for fractional df > 0.
// Quantile inverts the CDF to |p - F(x)| < 1e-12.
double t_cdf(double x, double df);
double t_quantile(double p, double df);

// Two-sided contrast of arm-specific estimates with per-cluster influence
// values. Ratio contrasts run on the log scale: the influence function of
// log(psi1/psi0) is if1/psi1 - if0/psi0 by the delta method. Variance is the
// sample variance of the contrast influence values divided by the number of
// clusters; the test statistic is referred to t(df).
Contrast delta_contrast(double psi1, double psi0,
                        const Eigen::VectorXd& if1, const Eigen::VectorXd& if0,
                        EffectScale scale, int df);

// Same contrast, but the variance respects the pair-matched design: influence
// values are averaged within pairs, variance is taken across the J/2 pair
// values, and df drops to J/2 - 1.
struct PairedVariance {
  double se = 0.0;
  int df = 1;
};
PairedVariance paired_variance(const Eigen::VectorXd& if_contrast,
                               const std::vector<std::optional<int>>& pair_ids);

// Recompute CI and p-value from estimate/se/df (used after swapping in the
// pair-matched variance). A zero SE degenerates to a point interval with
// p = 1 when the estimate sits at the null and p = 0 otherwise.
void finalize_contrast(Contrast& c);

double sample_variance(const Eigen::VectorXd& v);

}  // namespace crt
