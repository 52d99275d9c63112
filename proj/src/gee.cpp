#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "crteffects/classical.hpp"
#include "crteffects/errors.hpp"

namespace crt {
namespace {

constexpr double kMuFloor = 1e-10;
constexpr double kMuCeil = 1.0 - 1e-6;

struct IndDesign {
  std::vector<Eigen::MatrixXd> X;  // per cluster, individuals x p
  std::vector<Eigen::VectorXd> y;
  std::vector<int> arm;
  int p = 0;
  bool binary = true;
};

int find_name(const std::vector<std::string>& names, const std::string& s) {
  for (int k = 0; k < static_cast<int>(names.size()); ++k)
    if (names[k] == s) return k;
  return -1;
}

// Individual-level design [1, A, covariates...]; covariate names resolve to
// individual columns first, then to (repeated) cluster-level covariates.
IndDesign build_design(const TrialData& trial,
                       const std::vector<std::string>& adjustment,
                       bool marginal) {
  IndDesign d;
  std::vector<std::pair<bool, int>> cols;  // (is_individual, index)
  if (!marginal) {
    for (const auto& name : adjustment) {
      int k = find_name(trial.w_names, name);
      if (k >= 0) {
        cols.emplace_back(true, k);
        continue;
      }
      k = find_name(trial.e_names, name);
      if (k < 0) throw ConfigError("unknown adjustment covariate '" + name + "'");
      cols.emplace_back(false, k);
    }
  }
  d.p = 2 + static_cast<int>(cols.size());
  for (const auto& c : trial.clusters) {
    const int n = c.size();
    Eigen::MatrixXd X(n, d.p);
    X.col(0).setOnes();
    X.col(1).setConstant(static_cast<double>(c.arm));
    for (size_t k = 0; k < cols.size(); ++k)
      X.col(2 + k) = cols[k].first
                         ? Eigen::VectorXd(c.w.col(cols[k].second))
                         : Eigen::VectorXd::Constant(n, c.e[cols[k].second]);
    d.X.push_back(std::move(X));
    d.y.push_back(c.y);
    d.arm.push_back(c.arm);
    for (int i = 0; i < n; ++i)
      if (c.y[i] != 0.0 && c.y[i] != 1.0) d.binary = false;
  }
  return d;
}

double inv_link(Link link, double eta) {
  switch (link) {
    case Link::Identity:
      return eta;
    case Link::Log:
      return std::exp(std::min(eta, 30.0));
    default:
      return expit(eta);
  }
}

// Mean, derivative d mu / d eta, and working variance for one linear
// predictor. The working variance follows the link's quasi-family: identity
// -> constant, log -> mu (the modified-Poisson choice, which keeps risk-ratio
// fits on high-prevalence binary data away from the log-binomial boundary),
// logit -> mu(1-mu). Binary fitted means are clamped into (0,1) throughout.
void mean_terms(Link link, bool binary, double eta, double* mu, double* dmu,
                double* var) {
  double m = inv_link(link, eta);
  if (binary && link != Link::Log) m = std::clamp(m, kMuFloor, kMuCeil);
  if (link == Link::Log) m = std::max(m, kMuFloor);
  switch (link) {
    case Link::Identity:
      *dmu = 1.0;
      *var = 1.0;
      break;
    case Link::Log:
      *dmu = m;
      *var = std::max(m, kMuFloor);
      break;
    default:
      *dmu = m * (1.0 - m);
      *var = std::max(m * (1.0 - m), kMuFloor);
      break;
  }
  *mu = m;
}

// x -> R^-1 x for the exchangeable correlation R = (1-rho) I + rho 11',
// applied column by column via the Sherman-Morrison identity.
Eigen::MatrixXd exch_solve(const Eigen::MatrixXd& x, double rho) {
  if (rho == 0.0) return x;
  const double n = static_cast<double>(x.rows());
  const double shrink = rho / (1.0 + (n - 1.0) * rho);
  Eigen::MatrixXd out = x;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double colsum = x.col(c).sum();
    out.col(c) = (x.col(c).array() - shrink * colsum) / (1.0 - rho);
  }
  return out;
}

struct ClusterTerms {
  Eigen::MatrixXd C;       // A^{-1/2} D, individuals x p
  Eigen::VectorXd s;       // A^{-1/2} (y - mu)
  Eigen::VectorXd r;       // Pearson residuals
  Eigen::VectorXd mu;
};

ClusterTerms cluster_terms(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& beta, Link link, bool binary) {
  const Eigen::Index n = X.rows();
  ClusterTerms t;
  t.C.resize(n, X.cols());
  t.s.resize(n);
  t.r.resize(n);
  t.mu.resize(n);
  const Eigen::VectorXd eta = X * beta;
  for (Eigen::Index i = 0; i < n; ++i) {
    double mu, dmu, var;
    mean_terms(link, binary, eta[i], &mu, &dmu, &var);
    const double isd = 1.0 / std::sqrt(var);
    t.C.row(i) = (dmu * isd) * X.row(i);
    t.s[i] = (y[i] - mu) * isd;
    t.r[i] = t.s[i];
    t.mu[i] = mu;
  }
  return t;
}

double estimate_rho(const std::vector<ClusterTerms>& terms, int p) {
  double ss = 0.0;
  long long n_obs = 0;
  double cross = 0.0;
  double n_pairs = 0.0;
  for (const auto& t : terms) {
    const Eigen::Index n = t.r.size();
    ss += t.r.squaredNorm();
    n_obs += n;
    const double sum = t.r.sum();
    cross += 0.5 * (sum * sum - t.r.squaredNorm());
    n_pairs += 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  }
  const double phi = ss / std::max<double>(1.0, static_cast<double>(n_obs - p));
  if (phi <= 0.0 || n_pairs <= 0.0) return 0.0;
  return std::clamp(cross / (phi * n_pairs), 0.0, 0.99);
}

// Conditional (augmentation) predictions mu(a, E, W) for every individual,
// from arm-stratified fits or one arm-interacted fit.
struct AugmentationFits {
  // per cluster: predictions under a = 1 and a = 0
  std::vector<Eigen::VectorXd> mu1, mu0;
};

AugmentationFits fit_augmentation(const TrialData& trial, const GeeSpec& spec,
                                  const IndDesign& d) {
  AugmentationFits out;
  const int J = trial.n_clusters();
  const int pc = d.p - 2;  // adjustment columns in the conditional design
  GlmSpec gspec;
  gspec.link = spec.link;

  const auto clamp_pred = [&](Eigen::VectorXd v) {
    if (d.binary)
      for (Eigen::Index i = 0; i < v.size(); ++i)
        v[i] = std::clamp(v[i], kMuFloor, kMuCeil);
    return v;
  };

  if (spec.arm_interacted_augmentation) {
    // [1, A, covs, A*covs] fitted once; predict with A forced to each arm.
    long long n_total = 0;
    for (const auto& c : trial.clusters) n_total += c.size();
    Eigen::MatrixXd X(n_total, 2 + 2 * pc);
    Eigen::VectorXd y(n_total);
    Eigen::Index at = 0;
    for (int j = 0; j < J; ++j) {
      const Eigen::MatrixXd& Xj = d.X[j];
      const Eigen::Index n = Xj.rows();
      X.block(at, 0, n, 2 + pc) = Xj;
      for (int k = 0; k < pc; ++k)
        X.col(2 + pc + k).segment(at, n) =
            Xj.col(1).cwiseProduct(Xj.col(2 + k));
      y.segment(at, n) = d.y[j];
      at += n;
    }
    const GlmFit fit = fit_glm(X, y, gspec);
    for (int j = 0; j < J; ++j) {
      const Eigen::MatrixXd& Xj = d.X[j];
      const Eigen::Index n = Xj.rows();
      Eigen::MatrixXd X1 = Xj, X0 = Xj;
      X1.col(1).setOnes();
      X0.col(1).setZero();
      Eigen::MatrixXd X1f(n, 2 + 2 * pc), X0f(n, 2 + 2 * pc);
      X1f.leftCols(2 + pc) = X1;
      X0f.leftCols(2 + pc) = X0;
      for (int k = 0; k < pc; ++k) {
        X1f.col(2 + pc + k) = X1.col(2 + k);
        X0f.col(2 + pc + k).setZero();
      }
      out.mu1.push_back(clamp_pred(glm_predict(fit, X1f)));
      out.mu0.push_back(clamp_pred(glm_predict(fit, X0f)));
    }
    return out;
  }

  // Arm-stratified: pool each arm's individuals, fit [1, covs], predict all.
  GlmFit fits[2];
  for (int a = 0; a < 2; ++a) {
    long long n_arm = 0;
    for (int j = 0; j < J; ++j)
      if (d.arm[j] == a) n_arm += d.X[j].rows();
    Eigen::MatrixXd X(n_arm, 1 + pc);
    Eigen::VectorXd y(n_arm);
    Eigen::Index at = 0;
    for (int j = 0; j < J; ++j) {
      if (d.arm[j] != a) continue;
      const Eigen::Index n = d.X[j].rows();
      X.col(0).segment(at, n).setOnes();
      for (int k = 0; k < pc; ++k)
        X.col(1 + k).segment(at, n) = d.X[j].col(2 + k);
      y.segment(at, n) = d.y[j];
      at += n;
    }
    fits[a] = fit_glm(X, y, gspec);
  }
  for (int j = 0; j < J; ++j) {
    const Eigen::Index n = d.X[j].rows();
    Eigen::MatrixXd X(n, 1 + pc);
    X.col(0).setOnes();
    for (int k = 0; k < pc; ++k) X.col(1 + k) = d.X[j].col(2 + k);
    out.mu1.push_back(clamp_pred(glm_predict(fits[1], X)));
    out.mu0.push_back(clamp_pred(glm_predict(fits[0], X)));
  }
  return out;
}

EstimateResult solve_gee(const GeeSpec& spec, const IndDesign& d,
                         const AugmentationFits* aug, const char* label) {
  const int J = static_cast<int>(d.X.size());
  const int p = d.p;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  {
    double s = 0;
    long long n = 0;
    for (const auto& y : d.y) {
      s += y.sum();
      n += y.size();
    }
    const double ybar = std::clamp(s / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
    beta[0] = spec.link == Link::Identity
                  ? ybar
                  : (spec.link == Link::Log ? std::log(ybar) : logit(ybar));
  }

  double rho = 0.0;
  double last_delta = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd bread(p, p);
  std::vector<Eigen::VectorXd> scores(J);
  double score_norm = 0.0;
  int iter = 0;
  for (iter = 1;; ++iter) {
    std::vector<ClusterTerms> terms;
    terms.reserve(J);
    for (int j = 0; j < J; ++j)
      terms.push_back(
          cluster_terms(d.X[j], d.y[j], beta, spec.link, d.binary));
    rho = spec.working_corr == GeeSpec::Corr::Exchangeable
              ? estimate_rho(terms, p)
              : 0.0;

    bread.setZero();
    Eigen::VectorXd total = Eigen::VectorXd::Zero(p);
    for (int j = 0; j < J; ++j) {
      const ClusterTerms& t = terms[j];
      const Eigen::MatrixXd RC = exch_solve(t.C, rho);
      Eigen::VectorXd Uj = RC.transpose() * t.s;
      bread.noalias() += RC.transpose() * t.C;
      if (aug) {
        // gamma_a = D' V^-1 (mu_cond(a) - mu_marg(a)); marginal D, V at arm a
        for (int a = 0; a < 2; ++a) {
          const double sign = (d.arm[j] == a ? 1.0 : 0.0) - 0.5;
          const Eigen::Index n = d.X[j].rows();
          const double eta_a = beta[0] + beta[1] * a;
          double mu_a, dmu_a, var_a;
          mean_terms(spec.link, d.binary, eta_a, &mu_a, &dmu_a, &var_a);
          const double isd = 1.0 / std::sqrt(var_a);
          Eigen::MatrixXd Ca(n, p);
          Eigen::VectorXd xrow(p);
          xrow.setZero();
          xrow[0] = 1.0;
          xrow[1] = static_cast<double>(a);
          for (Eigen::Index i = 0; i < n; ++i)
            Ca.row(i) = (dmu_a * isd) * xrow.transpose();
          const Eigen::VectorXd diff =
              ((a == 1 ? aug->mu1[j] : aug->mu0[j]).array() - mu_a) * isd;
          const Eigen::VectorXd gamma =
              exch_solve(Ca, rho).transpose() * diff;
          Uj -= sign * gamma;
        }
      }
      scores[j] = Uj;
      total += Uj;
    }
    score_norm = total.lpNorm<Eigen::Infinity>();
    if (score_norm < spec.tol || last_delta < 1e-10) break;
    if (iter > spec.max_iter) {
      std::ostringstream msg;
      msg << label << " did not converge after " << spec.max_iter
          << " iterations (|score| = " << score_norm
          << ", |step| = " << last_delta << ")";
      throw EstimatorError(msg.str());
    }
    const Eigen::VectorXd delta = bread.ldlt().solve(total);
    if (!delta.allFinite())
      throw EstimatorError(std::string(label) + ": singular working system");
    beta += delta;
    last_delta = delta.lpNorm<Eigen::Infinity>();
  }

  // Robust sandwich with the Fay-Graubard small-sample correction: the k-th
  // coordinate of cluster j's score is inflated by (1 - min(b, Q_j,kk))^{-1/2}
  // where Q_j = (D'V^-1 D)_j B^-1 is the cluster's share of the information.
  const Eigen::MatrixXd bread_inv =
      bread.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  std::vector<ClusterTerms> terms;
  for (int j = 0; j < J; ++j)
    terms.push_back(cluster_terms(d.X[j], d.y[j], beta, spec.link, d.binary));
  for (int j = 0; j < J; ++j) {
    Eigen::VectorXd u = scores[j];
    if (spec.fay_graubard) {
      const Eigen::MatrixXd RC = exch_solve(terms[j].C, rho);
      const Eigen::MatrixXd Q = (RC.transpose() * terms[j].C) * bread_inv;
      const double b = *spec.fay_graubard;
      for (Eigen::Index k = 0; k < p; ++k)
        u[k] /= std::sqrt(1.0 - std::min(b, Q(k, k)));
    }
    meat.noalias() += u * u.transpose();
  }
  const Eigen::MatrixXd cov = bread_inv * meat * bread_inv;

  const double beta_arm = beta[1];
  const double se = std::sqrt(std::max(cov(1, 1), 0.0));
  const int df = std::max(1, J - p);
  Contrast c;
  c.scale = spec.link == Link::Identity ? EffectScale::Difference
                                        : EffectScale::Ratio;
  c.estimate = spec.link == Link::Identity ? beta_arm : std::exp(beta_arm);
  c.se = se;
  c.df = df;
  finalize_contrast(c);

  EstimateResult r;
  r.estimator = label;
  r.psi1 = inv_link(spec.link, beta[0] + beta_arm);
  r.psi0 = inv_link(spec.link, beta[0]);
  r.estimate = c.estimate;
  r.scale = c.scale;
  r.se = c.se;
  r.df = c.df;
  r.ci_lower = c.ci_lower;
  r.ci_upper = c.ci_upper;
  r.p_value = c.p_value;
  r.influence.resize(J);
  for (int j = 0; j < J; ++j)
    r.influence[j] = static_cast<double>(J) * (bread_inv * scores[j])(1);
  r.outcome_adjustment = spec.adjustment;
  return r;
}

}  // namespace

EstimateResult gee(const TrialData& trial, const GeeSpec& spec, bool marginal) {
  trial.validate();
  const IndDesign d = build_design(trial, spec.adjustment, marginal);
  return solve_gee(spec, d, nullptr, "gee");
}

EstimateResult aug_gee(const TrialData& trial, const GeeSpec& spec) {
  trial.validate();
  // Conditional regressions use the adjustment set; the estimating equation
  // itself is for the marginal model [1, A].
  const IndDesign cond = build_design(trial, spec.adjustment, false);
  const AugmentationFits aug = fit_augmentation(trial, spec, cond);
  const IndDesign marg = build_design(trial, spec.adjustment, true);
  return solve_gee(spec, marg, &aug, "aug-gee");
}

}  // namespace crt
