#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace crt {

enum class Link { Identity, Log, Logit };

double expit(double x);
double logit(double p);

struct GlmSpec {
  Link link = Link::Logit;
  Eigen::VectorXd weights;  // observation weights; empty = unweighted
  Eigen::VectorXd offset;   // link-scale offset; empty = none
  std::vector<std::string> col_names;  // optional, used in diagnostics
  double coef_cap = 40.0;   // separation guard on the link scale
  int max_iter = 100;
  double score_tol = 1e-8;
  double dev_tol = 1e-10;
};

struct GlmFit {
  Eigen::VectorXd coef;     // aligned with input columns; dropped columns get 0
  Link link = Link::Logit;
  bool converged = false;
  bool capped = false;      // hit the coefficient cap (implies !converged)
  int iterations = 0;
  Eigen::VectorXd fitted;   // response scale, training rows
  std::vector<int> dropped_cols;  // pruned as constant/collinear before fitting
};

// Weighted GLM with canonical link via iteratively reweighted least squares.
// Rank-deficient designs are handled by pruning pivoted-out columns (recorded
// in dropped_cols); a design with no usable columns throws EstimatorError.
GlmFit fit_glm(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
               const GlmSpec& spec);

// Predictions on the response scale. The offset, if the model used one, must
// be supplied again for the new rows.
Eigen::VectorXd glm_predict(const GlmFit& fit, const Eigen::MatrixXd& X,
                            const Eigen::VectorXd& offset = Eigen::VectorXd());

// Design matrix with named columns; arm_col marks the treatment column when
// present so predictions can be taken under a fixed arm.
struct Design {
  Eigen::MatrixXd X;
  std::vector<std::string> names;
  int arm_col = -1;
};

// Predict with the arm column overridden to a constant (counterfactual arm);
// pass nullopt to predict at the observed arms.
Eigen::VectorXd predict_at_arm(const GlmFit& fit, const Design& design,
                               std::optional<int> arm,
                               const Eigen::VectorXd& offset = Eigen::VectorXd());

}  // namespace crt
