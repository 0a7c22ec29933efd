#pragma once

#include <Eigen/Dense>

#include <limits>
#include <vector>

#include "lmmsel/design.hpp"

namespace lmmsel {

// Variance-component estimates on the standard-deviation / correlation scale.
// Entries for terms a structure omits are reported as zero.
struct CovarianceEstimates {
  double subject_intercept_sd = 0.0;
  double subject_slope_sd = 0.0;
  double subject_corr = 0.0;
  double item_intercept_sd = 0.0;
  double item_slope_sd = 0.0;
  double item_corr = 0.0;
  double residual_sd = 0.0;
};

struct FitResult {
  ModelSpec spec;
  Eigen::VectorXd beta;         // intercept [, condition effect]
  CovarianceEstimates cov;
  Eigen::VectorXd theta;        // relative-covariance factor entries
  double deviance = std::numeric_limits<double>::infinity();
  bool converged = false;
  bool singular = false;        // some factor diagonal pinned at zero
  int n_free_params = 0;
};

// Per-dataset cross products, computed once and shared by every fit of that
// dataset. Column layout of the full random-effects design: the two subject
// terms (intercept, slope) per subject, then the two item terms per item.
struct FitContext {
  int n = 0;
  int n_subjects = 0;
  int n_items = 0;

  std::vector<Eigen::Matrix2d> subject_gram;  // per-subject Z_s'Z_s
  std::vector<Eigen::Matrix2d> item_gram;     // per-item Z_i'Z_i
  Eigen::MatrixXd cross;                      // (2S) x (2I) subject-item products
  Eigen::MatrixXd subject_zx;                 // (2S) x 2 against [1, x]
  Eigen::MatrixXd item_zx;                    // (2I) x 2
  Eigen::VectorXd subject_zy;                 // (2S)
  Eigen::VectorXd item_zy;                    // (2I)
  Eigen::Matrix2d xtx;
  Eigen::Vector2d xty;
  double yty = 0.0;

  explicit FitContext(const Dataset& data);
};

// Relative-covariance factor layout per grouping factor.
struct FactorLayout {
  enum Kind { kTriangle, kDiagonal, kScalar };
  Kind kind;
  int offset;  // position of the factor's first entry in theta

  int terms() const { return kind == kScalar ? 1 : 2; }
  int n_params() const { return kind == kTriangle ? 3 : (kind == kDiagonal ? 2 : 1); }
};

FactorLayout subject_layout(Structure s);
FactorLayout item_layout(Structure s);

// True at positions of theta that scale a factor diagonal and must stay >= 0.
std::vector<bool> theta_diag_mask(Structure s);

// Profiled deviance for one theta: random effects and the fixed effects are
// solved by penalized least squares, the residual variance by its closed form,
// leaving a function of theta alone. Scratch space is owned by the evaluator
// so repeated calls do not allocate.
class ProfiledDevianceEvaluator {
 public:
  ProfiledDevianceEvaluator(const FitContext& ctx, const ModelSpec& spec);

  // +inf when the factorization breaks down (flagged, not thrown).
  double operator()(const Eigen::VectorXd& theta);

  // Solves at theta and reports the profiled-out parameters as well.
  struct Solution {
    double deviance = std::numeric_limits<double>::infinity();
    Eigen::VectorXd beta;
    double sigma_sq = 0.0;
    bool ok = false;
  };
  Solution solve(const Eigen::VectorXd& theta);

  int theta_dim() const { return dim_; }
  bool last_eval_failed() const { return failed_; }

 private:
  bool factor(const Eigen::VectorXd& theta);

  FactorLayout subj_;
  FactorLayout item_;
  int dim_;
  int p_;        // fixed-effect count (1 or 2)
  int n_;
  int ns_, ni_;  // level counts
  int qs_, qi_;  // random-effect column counts per factor

  // reduced cross products for this structure's term subset
  std::vector<Eigen::Matrix2d> sg_;
  std::vector<Eigen::Matrix2d> ig_;
  Eigen::MatrixXd cross_;
  Eigen::MatrixXd rhs_s_;  // (qs) x (p+1): [Z_s'X, Z_s'y]
  Eigen::MatrixXd rhs_i_;
  Eigen::MatrixXd xtx_;    // (p+1) x (p+1): [X, y]' [X, y]

  // factor entries for the current theta
  Eigen::Matrix2d ls_, li_;

  // scratch
  Eigen::VectorXd d00_, d10_, d11_;  // per-subject block Cholesky entries
  Eigen::MatrixXd w_;                // item columns swept by the subject factor
  Eigen::MatrixXd schur_;
  Eigen::LLT<Eigen::MatrixXd> schur_llt_;
  Eigen::MatrixXd ts_, ti_;
  double logdet_ = 0.0;
  bool failed_ = false;
};

// One-shot profiled deviance. Throws std::runtime_error if the normal
// equations cannot be factorized at this theta.
double profiled_deviance(const Eigen::VectorXd& theta, const Dataset& data,
                         const ModelSpec& spec);

// Reference deviance through the explicit marginal covariance of y. Cubic in
// the number of observations, so refuses datasets above 500 rows; meant for
// cross-checking the profiled path, not for fitting.
double deviance_direct(const Dataset& data, const ModelSpec& spec,
                       const Eigen::VectorXd& beta, const CovarianceEstimates& cov);

CovarianceEstimates theta_to_covariance(const Eigen::VectorXd& theta,
                                        double sigma_sq, const ModelSpec& spec);

// Inverse map for exact generating parameters (used to seed cross-checks).
Eigen::VectorXd theta_from_params(const GeneratingParams& params, Structure s);

// Maximum-likelihood fit of one structure. Derivative-free search over theta
// with sign reflection on the diagonal entries, one deterministic restart from
// a jittered optimum, and a shared evaluation budget across both passes.
FitResult fit_ml(const FitContext& ctx, const ModelSpec& spec);
FitResult fit_ml(const Dataset& data, const ModelSpec& spec);

}  // namespace lmmsel
