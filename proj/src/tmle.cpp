#include "crteffects/tmle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crteffects/errors.hpp"

namespace crt {
namespace {

constexpr double kPredLo = 0.005;
constexpr double kPredHi = 0.995;
constexpr double kPropLo = 0.10;
constexpr double kPropHi = 0.90;

Eigen::VectorXd clamped(const Eigen::VectorXd& v, double lo, double hi) {
  Eigen::VectorXd out = v;
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lo, hi);
  return out;
}

// Affine map taking the observed outcome range into [0,1] so the logistic
// fluctuation applies to unbounded outcomes too; a no-op when outcomes already
// live in the unit interval (the usual case here: binary or proportions).
struct OutcomeScale {
  double lo = 0.0;
  double span = 1.0;
  bool active = false;
  double apply(double y) const { return active ? (y - lo) / span : y; }
};

OutcomeScale outcome_scale_for(const TrialData& trial) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& c : trial.clusters) {
    lo = std::min(lo, c.y.minCoeff());
    hi = std::max(hi, c.y.maxCoeff());
  }
  if (lo >= 0.0 && hi <= 1.0) return {};
  if (hi <= lo) return {lo - 0.5, 1.0, true};  // constant outcome
  return {lo, hi - lo, true};
}

// The targeting problem is posed over "analysis rows": one row per cluster for
// the cluster-level TMLE (and the hybrid's second stage), one row per
// individual for the hierarchical TMLE. Unit weights always sum to J, so the
// plug-in mean (1/J) sum_r w_r mu*_r covers every flavor/target combination.
struct Rows {
  Eigen::VectorXd y;            // outcomes, on the fluctuation scale
  Eigen::VectorXd w;            // unit weights, sum_r w_r = J
  Eigen::VectorXi arm;
  std::vector<int> cluster;     // row -> original cluster index
  Eigen::MatrixXd pool;         // every covariate a candidate set may name
  std::vector<std::string> pool_names;
  int n_clusters = 0;
};

Rows cluster_rows(const TrialData& trial, const WeightScheme& scheme,
                  const OutcomeScale& sc) {
  const int J = trial.n_clusters();
  const int pe = static_cast<int>(trial.e_names.size());
  const int pw = static_cast<int>(trial.w_names.size());
  Rows r;
  r.n_clusters = J;
  r.y.resize(J);
  r.w.resize(J);
  r.arm.resize(J);
  r.cluster.resize(J);
  r.pool.resize(J, pe + pw);
  const Eigen::MatrixXd wmeans = covariate_summaries(trial);
  for (int j = 0; j < J; ++j) {
    const auto& c = trial.clusters[j];
    r.y[j] = sc.apply(cluster_outcome(c, scheme));
    r.w[j] = scheme.gamma(c);
    r.arm[j] = c.arm;
    r.cluster[j] = j;
    if (pe > 0) r.pool.block(j, 0, 1, pe) = c.e.transpose();
    if (pw > 0) r.pool.block(j, pe, 1, pw) = wmeans.row(j);
  }
  r.pool_names = trial.e_names;
  r.pool_names.insert(r.pool_names.end(), trial.w_names.begin(),
                      trial.w_names.end());
  return r;
}

Rows individual_rows(const TrialData& trial, const WeightScheme& scheme,
                     const OutcomeScale& sc) {
  const int J = trial.n_clusters();
  const long long n_total = trial.total_individuals();
  const int pe = static_cast<int>(trial.e_names.size());
  const int pw = static_cast<int>(trial.w_names.size());
  Rows r;
  r.n_clusters = J;
  r.y.resize(n_total);
  r.w.resize(n_total);
  r.arm.resize(n_total);
  r.cluster.resize(n_total);
  r.pool.resize(n_total, pw + pe);
  Eigen::Index at = 0;
  for (int j = 0; j < J; ++j) {
    const auto& c = trial.clusters[j];
    const double unit = scheme.gamma(c) * scheme.alpha(c);
    for (int i = 0; i < c.size(); ++i, ++at) {
      r.y[at] = sc.apply(c.y[i]);
      r.w[at] = unit;
      r.arm[at] = c.arm;
      r.cluster[at] = j;
      if (pw > 0) r.pool.block(at, 0, 1, pw) = c.w.row(i);
      if (pe > 0) r.pool.block(at, pw, 1, pe) = c.e.transpose();
    }
  }
  r.pool_names = trial.w_names;
  r.pool_names.insert(r.pool_names.end(), trial.e_names.begin(),
                      trial.e_names.end());
  return r;
}

std::vector<int> resolve_columns(const Rows& rows,
                                 const std::vector<std::string>& names) {
  std::unordered_map<std::string, int> index;
  for (int k = 0; k < static_cast<int>(rows.pool_names.size()); ++k)
    index.emplace(rows.pool_names[k], k);  // first occurrence wins
  std::vector<int> cols;
  cols.reserve(names.size());
  for (const auto& name : names) {
    auto it = index.find(name);
    if (it == index.end())
      throw ConfigError("unknown adjustment covariate '" + name + "'");
    cols.push_back(it->second);
  }
  return cols;
}

Design outcome_design(const Rows& rows, const std::vector<int>& cols) {
  const Eigen::Index n = rows.y.size();
  Design d;
  d.X.resize(n, 2 + static_cast<Eigen::Index>(cols.size()));
  d.X.col(0).setOnes();
  d.X.col(1) = rows.arm.cast<double>();
  for (size_t k = 0; k < cols.size(); ++k) d.X.col(2 + k) = rows.pool.col(cols[k]);
  d.names = {"(intercept)", "arm"};
  for (int c : cols) d.names.push_back(rows.pool_names[c]);
  d.arm_col = 1;
  return d;
}

Eigen::MatrixXd propensity_design(const Rows& rows, const std::vector<int>& cols) {
  const Eigen::Index n = rows.y.size();
  Eigen::MatrixXd X(n, 1 + static_cast<Eigen::Index>(cols.size()));
  X.col(0).setOnes();
  for (size_t k = 0; k < cols.size(); ++k) X.col(1 + k) = rows.pool.col(cols[k]);
  return X;
}

struct InitialMu {
  Eigen::VectorXd mu1, mu0;
};

struct MuModel {
  GlmFit fit;
  std::vector<int> cols;
};

MuModel fit_mu_model(const Rows& rows, const std::vector<int>& cols, Link link) {
  Design d = outcome_design(rows, cols);
  GlmSpec spec;
  spec.link = link;
  spec.weights = rows.w;
  spec.col_names = d.names;
  return {fit_glm(d.X, rows.y, spec), cols};
}

InitialMu predict_mu(const MuModel& m, const Rows& rows) {
  Design d = outcome_design(rows, m.cols);
  return {predict_at_arm(m.fit, d, 1), predict_at_arm(m.fit, d, 0)};
}

// Empty adjustment set = the randomization probability 1/2 is known and used
// as-is; otherwise a logistic working model, predictions clamped to keep the
// clever covariates bounded in small trials.
struct PiModel {
  bool known = true;
  GlmFit fit;
  std::vector<int> cols;
};

PiModel fit_pi_model(const Rows& rows, const std::vector<int>& cols) {
  PiModel m;
  m.cols = cols;
  if (cols.empty()) return m;
  m.known = false;
  GlmSpec spec;
  spec.link = Link::Logit;
  spec.weights = rows.w;
  m.fit = fit_glm(propensity_design(rows, cols), rows.arm.cast<double>(), spec);
  return m;
}

Eigen::VectorXd predict_pi(const PiModel& m, const Rows& rows) {
  if (m.known) return Eigen::VectorXd::Constant(rows.y.size(), 0.5);
  Eigen::VectorXd pi = glm_predict(m.fit, propensity_design(rows, m.cols));
  return clamped(pi, kPropLo, kPropHi);
}

// mu^c(a) = sum_i alpha_ij mu(a, ...) with alpha = 1/N_j: the within-cluster
// mean of the pooled individual-level predictions.
InitialMu aggregate_mu(const Rows& ind, const InitialMu& mu, const Rows& clus) {
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(ind.n_clusters);
  Eigen::VectorXd s0 = Eigen::VectorXd::Zero(ind.n_clusters);
  Eigen::VectorXd cnt = Eigen::VectorXd::Zero(ind.n_clusters);
  for (Eigen::Index r = 0; r < ind.y.size(); ++r) {
    const int j = ind.cluster[r];
    s1[j] += mu.mu1[r];
    s0[j] += mu.mu0[r];
    cnt[j] += 1.0;
  }
  InitialMu out;
  out.mu1.resize(clus.y.size());
  out.mu0.resize(clus.y.size());
  for (Eigen::Index k = 0; k < clus.y.size(); ++k) {
    const int j = clus.cluster[k];
    out.mu1[k] = s1[j] / cnt[j];
    out.mu0[k] = s0[j] / cnt[j];
  }
  return out;
}

struct Targeted {
  double psi1 = 0, psi0 = 0;       // original outcome scale
  Eigen::VectorXd if1, if0;        // per original cluster, original scale
  Fluctuation fl;
};

Targeted target_and_if(const Rows& rows, const InitialMu& mu,
                       const Eigen::VectorXd& pi1, const OutcomeScale& sc) {
  Targeted t;
  t.fl = fluctuate(rows.y, rows.w, mu.mu1, mu.mu0, pi1, rows.arm);
  const int J = rows.n_clusters;
  const double psi1_t = rows.w.dot(t.fl.mu1_star) / J;
  const double psi0_t = rows.w.dot(t.fl.mu0_star) / J;
  Eigen::VectorXd if1 = Eigen::VectorXd::Zero(J);
  Eigen::VectorXd if0 = Eigen::VectorXd::Zero(J);
  Eigen::VectorXd wsum = Eigen::VectorXd::Zero(J);
  for (Eigen::Index r = 0; r < rows.y.size(); ++r) {
    const int j = rows.cluster[r];
    const double w = rows.w[r];
    const double h1 = rows.arm[r] == 1 ? 1.0 / pi1[r] : 0.0;
    const double h0 = rows.arm[r] == 0 ? 1.0 / (1.0 - pi1[r]) : 0.0;
    const double mu_obs =
        rows.arm[r] == 1 ? t.fl.mu1_star[r] : t.fl.mu0_star[r];
    const double resid = rows.y[r] - mu_obs;
    if1[j] += w * (h1 * resid + t.fl.mu1_star[r]);
    if0[j] += w * (h0 * resid + t.fl.mu0_star[r]);
    wsum[j] += w;
  }
  if1 -= psi1_t * wsum;
  if0 -= psi0_t * wsum;
  t.psi1 = sc.active ? sc.lo + sc.span * psi1_t : psi1_t;
  t.psi0 = sc.active ? sc.lo + sc.span * psi0_t : psi0_t;
  t.if1 = sc.active ? Eigen::VectorXd(sc.span * if1) : if1;
  t.if0 = sc.active ? Eigen::VectorXd(sc.span * if0) : if0;
  return t;
}

std::vector<std::optional<int>> pair_ids_of(const TrialData& trial) {
  std::vector<std::optional<int>> ids;
  ids.reserve(trial.clusters.size());
  for (const auto& c : trial.clusters) ids.push_back(c.pair_id);
  return ids;
}

EstimateResult assemble(const TrialData& trial, const Targeted& t,
                        const EffectTarget& target, const TmleOptions& opts,
                        std::vector<std::string> oset,
                        std::vector<std::string> pset) {
  const int J = trial.n_clusters();
  Contrast c = delta_contrast(t.psi1, t.psi0, t.if1, t.if0, target.scale, J - 2);
  Eigen::VectorXd inf;
  if (target.scale == EffectScale::Ratio)
    inf = t.if1 / t.psi1 - t.if0 / t.psi0;
  else
    inf = t.if1 - t.if0;
  if (opts.matched) {
    if (!trial.has_pairs())
      throw ConfigError("pair-matched variance requires pair ids");
    const PairedVariance pv = paired_variance(inf, pair_ids_of(trial));
    c.se = pv.se;
    c.df = pv.df;
    finalize_contrast(c);
  }
  EstimateResult r;
  r.psi1 = t.psi1;
  r.psi0 = t.psi0;
  r.estimate = c.estimate;
  r.scale = c.scale;
  r.se = c.se;
  r.df = c.df;
  r.ci_lower = c.ci_lower;
  r.ci_upper = c.ci_upper;
  r.p_value = c.p_value;
  r.influence = inf;
  r.influence1 = t.if1;
  r.influence0 = t.if0;
  r.outcome_adjustment = std::move(oset);
  r.propensity_adjustment = std::move(pset);
  r.matched = opts.matched;
  return r;
}

EstimateResult run_flavor(const TrialData& trial, TmleFlavor flavor,
                          const std::vector<std::string>& oset,
                          const std::vector<std::string>& pset,
                          const EffectTarget& target, const TmleOptions& opts,
                          std::optional<Link> link_override) {
  const WeightScheme scheme = WeightScheme::for_target(trial, target.level);
  const OutcomeScale sc = outcome_scale_for(trial);
  const Link link = link_override.value_or(Link::Logit);

  Rows trows;
  InitialMu mu;
  if (flavor == TmleFlavor::Cluster) {
    trows = cluster_rows(trial, scheme, sc);
    mu = predict_mu(fit_mu_model(trows, resolve_columns(trows, oset), link),
                    trows);
  } else if (flavor == TmleFlavor::Hierarchical) {
    trows = individual_rows(trial, scheme, sc);
    mu = predict_mu(fit_mu_model(trows, resolve_columns(trows, oset), link),
                    trows);
  } else {
    const Rows irows = individual_rows(trial, scheme, sc);
    trows = cluster_rows(trial, scheme, sc);
    const MuModel m = fit_mu_model(irows, resolve_columns(irows, oset), link);
    mu = aggregate_mu(irows, predict_mu(m, irows), trows);
  }
  mu.mu1 = clamped(mu.mu1, kPredLo, kPredHi);
  mu.mu0 = clamped(mu.mu0, kPredLo, kPredHi);

  const PiModel pm = fit_pi_model(trows, resolve_columns(trows, pset));
  const Eigen::VectorXd pi1 = predict_pi(pm, trows);
  const Targeted t = target_and_if(trows, mu, pi1, sc);
  return assemble(trial, t, target, opts, oset, pset);
}

EstimateResult run_with_spec(const TrialData& trial, const FitSpec& fit,
                             const EffectTarget& target, const TmleOptions& opts,
                             TmleFlavor flavor, const char* label) {
  trial.validate();
  std::vector<std::string> oset = fit.fixed_outcome;
  std::vector<std::string> pset = fit.fixed_propensity;
  std::optional<double> cv_var;
  if (fit.mode == FitMode::Adaptive) {
    const Selection sel = adaptive_prespec(trial, fit, target, flavor);
    oset = sel.outcome;
    pset = sel.propensity;
    if (std::isfinite(sel.cv_loss)) cv_var = sel.cv_loss;
  }
  EstimateResult r =
      run_flavor(trial, flavor, oset, pset, target, opts, fit.link_override);
  // After adaptive selection, inference uses the winning cross-validated
  // variance: the full-sample influence-function variance of the selected fit
  // is optimistic post-selection, while the held-out one is honest (and is
  // exactly the quantity the selection minimized).
  if (cv_var && !opts.matched) {
    Contrast c;
    c.scale = r.scale;
    c.estimate = r.estimate;
    c.se = std::sqrt(*cv_var / trial.n_clusters());
    c.df = r.df;
    finalize_contrast(c);
    r.se = c.se;
    r.ci_lower = c.ci_lower;
    r.ci_upper = c.ci_upper;
    r.p_value = c.p_value;
  }
  r.estimator = label;
  return r;
}

// ---- adaptive prespecification ----

struct Fold {
  Rows train_t, val_t;   // targeting rows
  Rows train_i, val_i;   // individual rows (hybrid only)
};

Rows subset_rows(const Rows& r, const std::vector<char>& in_val, bool keep_val) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < r.y.size(); ++i)
    if (static_cast<bool>(in_val[r.cluster[i]]) == keep_val) idx.push_back(i);
  Rows out;
  out.n_clusters = r.n_clusters;
  out.pool_names = r.pool_names;
  const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
  out.y.resize(n);
  out.w.resize(n);
  out.arm.resize(n);
  out.cluster.resize(n);
  out.pool.resize(n, r.pool.cols());
  for (Eigen::Index k = 0; k < n; ++k) {
    out.y[k] = r.y[idx[k]];
    out.w[k] = r.w[idx[k]];
    out.arm[k] = r.arm[idx[k]];
    out.cluster[k] = r.cluster[idx[k]];
    out.pool.row(k) = r.pool.row(idx[k]);
  }
  return out;
}

std::vector<std::vector<int>> make_folds(const TrialData& trial, CvScheme cv) {
  std::vector<std::vector<int>> folds;
  if (cv == CvScheme::LeaveOneClusterOut) {
    for (int j = 0; j < trial.n_clusters(); ++j) folds.push_back({j});
    return folds;
  }
  std::unordered_map<int, std::vector<int>> by_pair;
  std::vector<int> order;
  for (int j = 0; j < trial.n_clusters(); ++j) {
    const int pid = *trial.clusters[j].pair_id;
    if (by_pair.find(pid) == by_pair.end()) order.push_back(pid);
    by_pair[pid].push_back(j);
  }
  for (int pid : order) folds.push_back(by_pair[pid]);
  return folds;
}

// Cross-validated loss of one (outcome set, propensity set) candidate pair:
// nuisance fits and the fluctuation run on the training clusters, the
// contrast's influence values are evaluated on the held-out clusters, and the
// loss is the sample variance of those values pooled across folds. Any fit
// failure disqualifies the candidate (caller maps the throw to +infinity).
double cv_candidate_loss(TmleFlavor flavor, const std::vector<Fold>& folds,
                         const std::vector<int>& ocols,
                         const std::vector<int>& pcols, Link link,
                         EffectScale scale, const OutcomeScale& sc, int J) {
  Eigen::VectorXd contrib = Eigen::VectorXd::Zero(J);
  for (const Fold& f : folds) {
    InitialMu mu_train, mu_val;
    if (flavor == TmleFlavor::Hybrid) {
      const MuModel m = fit_mu_model(f.train_i, ocols, link);
      mu_train = aggregate_mu(f.train_i, predict_mu(m, f.train_i), f.train_t);
      mu_val = aggregate_mu(f.val_i, predict_mu(m, f.val_i), f.val_t);
    } else {
      const MuModel m = fit_mu_model(f.train_t, ocols, link);
      mu_train = predict_mu(m, f.train_t);
      mu_val = predict_mu(m, f.val_t);
    }
    mu_train.mu1 = clamped(mu_train.mu1, kPredLo, kPredHi);
    mu_train.mu0 = clamped(mu_train.mu0, kPredLo, kPredHi);
    mu_val.mu1 = clamped(mu_val.mu1, kPredLo, kPredHi);
    mu_val.mu0 = clamped(mu_val.mu0, kPredLo, kPredHi);

    const PiModel pm = fit_pi_model(f.train_t, pcols);
    const Eigen::VectorXd pi_train = predict_pi(pm, f.train_t);
    const Eigen::VectorXd pi_val = predict_pi(pm, f.val_t);

    const Fluctuation fl = fluctuate(f.train_t.y, f.train_t.w, mu_train.mu1,
                                     mu_train.mu0, pi_train, f.train_t.arm);
    const double wsum_train = f.train_t.w.sum();
    double psi1_t = f.train_t.w.dot(fl.mu1_star) / wsum_train;
    double psi0_t = f.train_t.w.dot(fl.mu0_star) / wsum_train;

    Eigen::VectorXd d1 = Eigen::VectorXd::Zero(J);
    Eigen::VectorXd d0 = Eigen::VectorXd::Zero(J);
    Eigen::VectorXd wsum = Eigen::VectorXd::Zero(J);
    for (Eigen::Index r = 0; r < f.val_t.y.size(); ++r) {
      const int j = f.val_t.cluster[r];
      const double w = f.val_t.w[r];
      const double m1 =
          expit(logit(mu_val.mu1[r]) + fl.eps1 / pi_val[r]);
      const double m0 =
          expit(logit(mu_val.mu0[r]) + fl.eps0 / (1.0 - pi_val[r]));
      const double h1 = f.val_t.arm[r] == 1 ? 1.0 / pi_val[r] : 0.0;
      const double h0 = f.val_t.arm[r] == 0 ? 1.0 / (1.0 - pi_val[r]) : 0.0;
      const double mu_obs = f.val_t.arm[r] == 1 ? m1 : m0;
      const double resid = f.val_t.y[r] - mu_obs;
      d1[j] += w * (h1 * resid + m1);
      d0[j] += w * (h0 * resid + m0);
      wsum[j] += w;
    }
    const double psi1 = sc.active ? sc.lo + sc.span * psi1_t : psi1_t;
    const double psi0 = sc.active ? sc.lo + sc.span * psi0_t : psi0_t;
    if (scale == EffectScale::Ratio && (psi1 <= 0.0 || psi0 <= 0.0))
      throw EstimatorError("nonpositive arm mean in cross-validation");
    for (Eigen::Index j = 0; j < J; ++j) {
      if (wsum[j] == 0.0) continue;  // cluster not in this fold
      const double span = sc.active ? sc.span : 1.0;
      const double D1 = span * (d1[j] - wsum[j] * psi1_t);
      const double D0 = span * (d0[j] - wsum[j] * psi0_t);
      contrib[j] = scale == EffectScale::Ratio ? D1 / psi1 - D0 / psi0 : D1 - D0;
    }
  }
  return sample_variance(contrib);
}

bool candidate_better(double loss_a, const std::vector<std::string>& set_a,
                      double loss_b, const std::vector<std::string>& set_b) {
  if (loss_a != loss_b) return loss_a < loss_b;
  if (set_a.size() != set_b.size()) return set_a.size() < set_b.size();
  return set_a < set_b;
}

bool has_empty_candidate(const std::vector<std::vector<std::string>>& cands) {
  return std::any_of(cands.begin(), cands.end(),
                     [](const auto& s) { return s.empty(); });
}

}  // namespace

Fluctuation fluctuate(const Eigen::VectorXd& y, const Eigen::VectorXd& weights,
                      const Eigen::VectorXd& mu1, const Eigen::VectorXd& mu0,
                      const Eigen::VectorXd& pi1, const Eigen::VectorXi& arm) {
  const Eigen::Index n = y.size();
  const Eigen::VectorXd m1 = clamped(mu1, kPredLo, kPredHi);
  const Eigen::VectorXd m0 = clamped(mu0, kPredLo, kPredHi);
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd offset(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = arm[i] == 1 ? 1.0 / pi1[i] : 0.0;
    X(i, 1) = arm[i] == 0 ? 1.0 / (1.0 - pi1[i]) : 0.0;
    offset[i] = logit(arm[i] == 1 ? m1[i] : m0[i]);
  }
  GlmSpec spec;
  spec.link = Link::Logit;
  spec.weights = weights;
  spec.offset = offset;
  spec.col_names = {"H1", "H0"};
  const GlmFit fit = fit_glm(X, y, spec);
  if (!fit.converged)
    throw EstimatorError("TMLE fluctuation step did not converge");
  Fluctuation fl;
  fl.eps1 = fit.coef[0];
  fl.eps0 = fit.coef[1];
  fl.mu1_star.resize(n);
  fl.mu0_star.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    fl.mu1_star[i] = expit(logit(m1[i]) + fl.eps1 / pi1[i]);
    fl.mu0_star[i] = expit(logit(m0[i]) + fl.eps0 / (1.0 - pi1[i]));
  }
  return fl;
}

EstimateResult cluster_tmle(const TrialData& trial, const FitSpec& fit,
                            const EffectTarget& target,
                            const TmleOptions& opts) {
  return run_with_spec(trial, fit, target, opts, TmleFlavor::Cluster,
                       "cluster-tmle");
}

EstimateResult hierarchical_tmle(const TrialData& trial, const FitSpec& fit,
                                 const EffectTarget& target,
                                 const TmleOptions& opts) {
  return run_with_spec(trial, fit, target, opts, TmleFlavor::Hierarchical,
                       "hierarchical-tmle");
}

EstimateResult hybrid_tmle(const TrialData& trial, const FitSpec& fit,
                           const EffectTarget& target,
                           const TmleOptions& opts) {
  return run_with_spec(trial, fit, target, opts, TmleFlavor::Hybrid,
                       "hybrid-tmle");
}

Selection adaptive_prespec(const TrialData& trial, const FitSpec& fit,
                           const EffectTarget& target, TmleFlavor flavor) {
  trial.validate();
  if (fit.mode != FitMode::Adaptive)
    throw ConfigError("adaptive_prespec requires Adaptive mode");
  if (fit.cv == CvScheme::LeaveOnePairOut && !trial.has_pairs())
    throw ConfigError("leave-one-pair-out cross-validation requires pair ids");
  if (!has_empty_candidate(fit.outcome_candidates) ||
      !has_empty_candidate(fit.propensity_candidates))
    throw ConfigError(
        "candidate lists must include the empty (unadjusted) set");

  const WeightScheme scheme = WeightScheme::for_target(trial, target.level);
  const OutcomeScale sc = outcome_scale_for(trial);
  const Link link = fit.link_override.value_or(Link::Logit);
  const int J = trial.n_clusters();

  Rows trows, irows;
  if (flavor == TmleFlavor::Cluster) {
    trows = cluster_rows(trial, scheme, sc);
  } else if (flavor == TmleFlavor::Hierarchical) {
    trows = individual_rows(trial, scheme, sc);
  } else {
    trows = cluster_rows(trial, scheme, sc);
    irows = individual_rows(trial, scheme, sc);
  }
  const Rows& fitrows = flavor == TmleFlavor::Hybrid ? irows : trows;

  std::vector<Fold> folds;
  for (const auto& members : make_folds(trial, fit.cv)) {
    std::vector<char> in_val(J, 0);
    for (int j : members) in_val[j] = 1;
    Fold f;
    f.train_t = subset_rows(trows, in_val, false);
    f.val_t = subset_rows(trows, in_val, true);
    if (flavor == TmleFlavor::Hybrid) {
      f.train_i = subset_rows(irows, in_val, false);
      f.val_i = subset_rows(irows, in_val, true);
    }
    folds.push_back(std::move(f));
  }

  constexpr double kInf = std::numeric_limits<double>::infinity();
  const auto loss_of = [&](const std::vector<std::string>& oset,
                           const std::vector<std::string>& pset) -> double {
    try {
      const std::vector<int> ocols = resolve_columns(fitrows, oset);
      const std::vector<int> pcols = resolve_columns(trows, pset);
      const double loss = cv_candidate_loss(flavor, folds, ocols, pcols, link,
                                            target.scale, sc, J);
      return std::isfinite(loss) ? loss : kInf;
    } catch (const ConfigError&) {
      throw;  // unknown covariate names are configuration bugs, not CV losses
    } catch (const std::exception&) {
      return kInf;
    }
  };

  Selection sel;
  double best_loss = kInf;
  bool first = true;
  for (const auto& cand : fit.outcome_candidates) {
    const double loss = loss_of(cand, {});
    if (cand.empty()) sel.unadjusted_loss = loss;
    if (first || candidate_better(loss, cand, best_loss, sel.outcome)) {
      best_loss = loss;
      sel.outcome = cand;
      first = false;
    }
  }
  first = true;
  for (const auto& cand : fit.propensity_candidates) {
    const double loss = loss_of(sel.outcome, cand);
    if (first || candidate_better(loss, cand, sel.cv_loss, sel.propensity)) {
      sel.cv_loss = loss;
      sel.propensity = cand;
      first = false;
    }
  }
  return sel;
}

}  // namespace crt
