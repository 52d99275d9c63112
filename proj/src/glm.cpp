#include "crteffects/glm.hpp"

#include <cmath>
#include <limits>

#include "crteffects/errors.hpp"

namespace crt {

double expit(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

namespace {

double inv_link(Link link, double eta) {
  switch (link) {
    case Link::Identity: return eta;
    case Link::Log: return std::exp(std::min(eta, 30.0));
    case Link::Logit: return expit(eta);
  }
  return eta;
}

// Variance function, which for canonical links also equals dmu/deta.
// Floored away from zero so IRLS weights stay positive.
double var_fun(Link link, double mu) {
  switch (link) {
    case Link::Identity: return 1.0;
    case Link::Log: return std::max(mu, 1e-10);
    case Link::Logit: return std::max(mu * (1.0 - mu), 1e-10);
  }
  return 1.0;
}

double deviance(Link link, const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                const Eigen::VectorXd& w) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double yi = y[i];
    const double mi = std::clamp(mu[i], 1e-12, 1e12);
    double term = 0.0;
    switch (link) {
      case Link::Identity:
        term = (yi - mi) * (yi - mi);
        break;
      case Link::Log:
        term = 2.0 * ((yi > 0 ? yi * std::log(yi / mi) : 0.0) - (yi - mi));
        break;
      case Link::Logit: {
        const double m = std::clamp(mi, 1e-12, 1.0 - 1e-12);
        if (yi > 0) term += yi * std::log(yi / m);
        if (yi < 1) term += (1.0 - yi) * std::log((1.0 - yi) / (1.0 - m));
        term *= 2.0;
        break;
      }
    }
    dev += w[i] * term;
  }
  return dev;
}

std::string col_label(const GlmSpec& spec, int idx) {
  if (idx >= 0 && idx < static_cast<int>(spec.col_names.size()))
    return spec.col_names[idx];
  return "column " + std::to_string(idx);
}

}  // namespace

GlmFit fit_glm(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
               const GlmSpec& spec) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (n == 0 || p == 0) throw EstimatorError("empty design matrix");
  if (y.size() != n) throw EstimatorError("outcome length does not match design");
  Eigen::VectorXd w = spec.weights.size() ? spec.weights
                                          : Eigen::VectorXd::Ones(n);
  if (w.size() != n) throw EstimatorError("weight length does not match design");
  if ((w.array() < 0).any()) throw EstimatorError("negative observation weight");
  Eigen::VectorXd offset = spec.offset.size() ? spec.offset
                                              : Eigen::VectorXd::Zero(n);
  if (offset.size() != n) throw EstimatorError("offset length does not match design");

  // Prune constant/collinear columns with a rank-revealing QR; the fit keeps
  // the pivoted-in columns and reports zeros for the rest.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  const int rank = static_cast<int>(qr.rank());
  GlmFit fit;
  fit.link = spec.link;
  std::vector<int> keep;
  if (rank < p) {
    const auto& perm = qr.colsPermutation().indices();
    std::vector<char> kept(p, 0);
    for (int k = 0; k < rank; ++k) kept[perm[k]] = 1;
    for (int c = 0; c < p; ++c)
      (kept[c] ? keep : fit.dropped_cols).push_back(c);
  } else {
    keep.resize(p);
    for (int c = 0; c < p; ++c) keep[c] = c;
  }
  if (keep.empty()) {
    std::string msg = "design matrix has no usable columns (dropped";
    for (int c : fit.dropped_cols) msg += " " + col_label(spec, c);
    throw EstimatorError(msg + ")");
  }

  Eigen::MatrixXd Xr(n, static_cast<Eigen::Index>(keep.size()));
  for (size_t k = 0; k < keep.size(); ++k) Xr.col(k) = X.col(keep[k]);
  const Eigen::Index r = Xr.cols();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(r);
  Eigen::VectorXd eta = Xr * beta + offset;
  Eigen::VectorXd mu(n), v(n);
  double dev_prev = std::numeric_limits<double>::infinity();

  const int max_iter = spec.link == Link::Identity ? 1 : spec.max_iter;
  for (int iter = 1; iter <= max_iter + 1; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = inv_link(spec.link, eta[i]);
      v[i] = var_fun(spec.link, mu[i]);
    }
    const Eigen::VectorXd resid = y - mu;
    const double score_norm =
        (Xr.transpose() * (w.array() * resid.array()).matrix())
            .cwiseAbs()
            .maxCoeff();
    const double dev = deviance(spec.link, y, mu, w);
    if (iter > 1 &&
        (score_norm < spec.score_tol ||
         std::abs(dev_prev - dev) < spec.dev_tol * (std::abs(dev) + 0.1))) {
      fit.converged = !fit.capped;
      break;
    }
    if (iter > max_iter) {
      // weighted least squares is exact in one step
      if (spec.link == Link::Identity) fit.converged = true;
      break;
    }
    dev_prev = dev;
    fit.iterations = iter;

    const Eigen::ArrayXd wirls = w.array() * v.array();
    const Eigen::VectorXd z =
        (eta - offset).array() + resid.array() / v.array();
    const Eigen::MatrixXd XtWX =
        Xr.transpose() * wirls.matrix().asDiagonal() * Xr;
    const Eigen::VectorXd XtWz =
        Xr.transpose() * (wirls * z.array()).matrix();
    beta = XtWX.ldlt().solve(XtWz);
    if (!beta.allFinite())
      throw EstimatorError("IRLS produced non-finite coefficients");
    if (spec.link != Link::Identity) {
      // separation guard: runaway link-scale coefficients get pinned
      for (Eigen::Index k = 0; k < r; ++k) {
        if (std::abs(beta[k]) > spec.coef_cap) {
          beta[k] = beta[k] > 0 ? spec.coef_cap : -spec.coef_cap;
          fit.capped = true;
        }
      }
    }
    eta = Xr * beta + offset;
  }

  fit.coef = Eigen::VectorXd::Zero(p);
  for (size_t k = 0; k < keep.size(); ++k) fit.coef[keep[k]] = beta[k];
  fit.fitted = mu;
  return fit;
}

Eigen::VectorXd glm_predict(const GlmFit& fit, const Eigen::MatrixXd& X,
                            const Eigen::VectorXd& offset) {
  if (X.cols() != fit.coef.size())
    throw EstimatorError("prediction design width does not match fit");
  Eigen::VectorXd eta = X * fit.coef;
  if (offset.size()) {
    if (offset.size() != X.rows())
      throw EstimatorError("offset length does not match prediction rows");
    eta += offset;
  }
  Eigen::VectorXd out(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    out[i] = inv_link(fit.link, eta[i]);
  return out;
}

Eigen::VectorXd predict_at_arm(const GlmFit& fit, const Design& design,
                               std::optional<int> arm,
                               const Eigen::VectorXd& offset) {
  if (!arm) return glm_predict(fit, design.X, offset);
  if (design.arm_col < 0)
    throw EstimatorError("design has no arm column to substitute");
  Eigen::MatrixXd X = design.X;
  X.col(design.arm_col).setConstant(static_cast<double>(*arm));
  return glm_predict(fit, X, offset);
}

}  // namespace crt
