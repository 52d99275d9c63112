#include "crteffects/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "crteffects/errors.hpp"

namespace crt {

namespace {

// Continued fraction for the incomplete beta (modified Lentz iteration).
double beta_cf(double a, double b, double x) {
  const double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 400; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw EstimatorError("incomplete beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log1p(-x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * beta_cf(a, b, x) / a;
  return 1.0 - bt * beta_cf(b, a, 1.0 - x) / b;
}

double t_cdf(double x, double df) {
  if (!(df > 0)) throw EstimatorError("t distribution needs df > 0");
  if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  const double tail =
      0.5 * regularized_incomplete_beta(0.5 * df, 0.5, df / (df + x * x));
  return x >= 0 ? 1.0 - tail : tail;
}

double t_quantile(double p, double df) {
  if (!(df > 0)) throw EstimatorError("t distribution needs df > 0");
  if (!(p > 0.0 && p < 1.0)) throw EstimatorError("t quantile needs p in (0,1)");
  if (p == 0.5) return 0.0;
  // Symmetry: solve in the upper tail, bisect to well below 1e-12.
  const bool upper = p > 0.5;
  const double target = upper ? p : 1.0 - p;
  double lo = 0.0, hi = 1.0;
  while (t_cdf(hi, df) < target) {
    hi *= 2.0;
    if (hi > 1e12) break;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (t_cdf(mid, df) < target)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-14 * std::max(1.0, hi)) break;
  }
  const double q = 0.5 * (lo + hi);
  return upper ? q : -q;
}

double sample_variance(const Eigen::VectorXd& v) {
  const auto n = v.size();
  if (n < 2) throw EstimatorError("sample variance needs at least 2 values");
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(n - 1);
}

void finalize_contrast(Contrast& c) {
  const double center =
      c.scale == EffectScale::Ratio ? std::log(c.estimate) : c.estimate;
  if (c.se == 0.0) {
    c.ci_lower = c.ci_upper = c.estimate;
    c.p_value = center == 0.0 ? 1.0 : 0.0;
    return;
  }
  const double tq = t_quantile(0.975, c.df);
  const double lo = center - tq * c.se;
  const double hi = center + tq * c.se;
  if (c.scale == EffectScale::Ratio) {
    c.ci_lower = std::exp(lo);
    c.ci_upper = std::exp(hi);
  } else {
    c.ci_lower = lo;
    c.ci_upper = hi;
  }
  c.p_value = 2.0 * (1.0 - t_cdf(std::abs(center) / c.se, c.df));
}

Contrast delta_contrast(double psi1, double psi0, const Eigen::VectorXd& if1,
                        const Eigen::VectorXd& if0, EffectScale scale, int df) {
  const auto n = if1.size();
  if (if0.size() != n) throw EstimatorError("influence vectors differ in length");
  if (n < 2) throw EstimatorError("contrast needs at least 2 clusters");
  if (df < 1) throw EstimatorError("contrast needs df >= 1");

  Contrast c;
  c.scale = scale;
  c.df = df;
  Eigen::VectorXd d;
  if (scale == EffectScale::Difference) {
    c.estimate = psi1 - psi0;
    d = if1 - if0;
  } else {
    if (!(psi1 > 0.0) || !(psi0 > 0.0))
      throw EstimatorError("ratio contrast needs positive arm estimates");
    c.estimate = psi1 / psi0;
    d = if1 / psi1 - if0 / psi0;
  }
  c.se = std::sqrt(std::max(0.0, sample_variance(d) / static_cast<double>(n)));
  finalize_contrast(c);
  return c;
}

PairedVariance paired_variance(const Eigen::VectorXd& if_contrast,
                               const std::vector<std::optional<int>>& pair_ids) {
  const auto n = if_contrast.size();
  if (static_cast<Eigen::Index>(pair_ids.size()) != n)
    throw EstimatorError("pair ids do not align with influence values");
  std::map<int, std::vector<double>> groups;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!pair_ids[j]) throw EstimatorError("pair-matched variance needs pair ids on every cluster");
    groups[*pair_ids[j]].push_back(if_contrast[j]);
  }
  const auto n_pairs = groups.size();
  if (n_pairs < 2) throw EstimatorError("pair-matched variance needs at least 2 pairs");
  Eigen::VectorXd pair_means(n_pairs);
  Eigen::Index k = 0;
  for (const auto& [id, vals] : groups) {
    if (vals.size() != 2)
      throw EstimatorError("pair id " + std::to_string(id) + " does not have exactly 2 clusters");
    pair_means[k++] = 0.5 * (vals[0] + vals[1]);
  }
  PairedVariance pv;
  pv.se = std::sqrt(std::max(
      0.0, sample_variance(pair_means) / static_cast<double>(n_pairs)));
  pv.df = static_cast<int>(n_pairs) - 1;
  return pv;
}

}  // namespace crt
