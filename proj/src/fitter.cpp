#include "lmmsel/fitter.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "lmmsel/optimize.hpp"
#include "lmmsel/simulate.hpp"

namespace lmmsel {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kSingularTol = 1e-6;
constexpr int kMaxDirectRows = 500;
}  // namespace

// ---- cross products ----

FitContext::FitContext(const Dataset& data) {
  data.validate();
  n = static_cast<int>(data.y.size());
  n_subjects = data.n_subjects;
  n_items = data.n_items;

  subject_gram.assign(n_subjects, Eigen::Matrix2d::Zero());
  item_gram.assign(n_items, Eigen::Matrix2d::Zero());
  cross = Eigen::MatrixXd::Zero(2 * n_subjects, 2 * n_items);
  subject_zx = Eigen::MatrixXd::Zero(2 * n_subjects, 2);
  item_zx = Eigen::MatrixXd::Zero(2 * n_items, 2);
  subject_zy = Eigen::VectorXd::Zero(2 * n_subjects);
  item_zy = Eigen::VectorXd::Zero(2 * n_items);
  xtx.setZero();
  xty.setZero();
  yty = 0.0;

  Eigen::Matrix2d outer;
  for (int r = 0; r < n; ++r) {
    const int s = data.subject_idx[r];
    const int i = data.item_idx[r];
    const double x = data.x[r];
    const double y = data.y[r];
    outer << 1.0, x, x, x * x;  // [1, x]' [1, x]

    subject_gram[s] += outer;
    item_gram[i] += outer;
    cross.block<2, 2>(2 * s, 2 * i) += outer;
    subject_zx.block<2, 2>(2 * s, 0) += outer;
    item_zx.block<2, 2>(2 * i, 0) += outer;
    subject_zy[2 * s] += y;
    subject_zy[2 * s + 1] += x * y;
    item_zy[2 * i] += y;
    item_zy[2 * i + 1] += x * y;
    xtx += outer;
    xty += Eigen::Vector2d(y, x * y);
    yty += y * y;
  }
}

// ---- theta layout ----

FactorLayout subject_layout(Structure s) {
  switch (s) {
    case Structure::Maximal:
      return {FactorLayout::kTriangle, 0};
    case Structure::ZeroCorrelation:
    case Structure::NoItemSlope:
      return {FactorLayout::kDiagonal, 0};
    case Structure::NoSubjectSlope:
    case Structure::InterceptsOnly:
      return {FactorLayout::kScalar, 0};
  }
  throw std::invalid_argument("subject_layout: unknown structure");
}

FactorLayout item_layout(Structure s) {
  const FactorLayout subj = subject_layout(s);
  const int off = subj.n_params();
  switch (s) {
    case Structure::Maximal:
      return {FactorLayout::kTriangle, off};
    case Structure::ZeroCorrelation:
    case Structure::NoSubjectSlope:
      return {FactorLayout::kDiagonal, off};
    case Structure::NoItemSlope:
    case Structure::InterceptsOnly:
      return {FactorLayout::kScalar, off};
  }
  throw std::invalid_argument("item_layout: unknown structure");
}

std::vector<bool> theta_diag_mask(Structure s) {
  std::vector<bool> mask;
  for (const FactorLayout& f : {subject_layout(s), item_layout(s)}) {
    switch (f.kind) {
      case FactorLayout::kTriangle:
        mask.insert(mask.end(), {true, false, true});
        break;
      case FactorLayout::kDiagonal:
        mask.insert(mask.end(), {true, true});
        break;
      case FactorLayout::kScalar:
        mask.push_back(true);
        break;
    }
  }
  return mask;
}

namespace {

// Lower-triangular factor for one grouping factor; only the top-left
// terms() x terms() corner is meaningful.
Eigen::Matrix2d factor_matrix(const FactorLayout& f, const Eigen::VectorXd& theta) {
  Eigen::Matrix2d l = Eigen::Matrix2d::Zero();
  switch (f.kind) {
    case FactorLayout::kTriangle:
      l(0, 0) = theta[f.offset];
      l(1, 0) = theta[f.offset + 1];
      l(1, 1) = theta[f.offset + 2];
      break;
    case FactorLayout::kDiagonal:
      l(0, 0) = theta[f.offset];
      l(1, 1) = theta[f.offset + 1];
      break;
    case FactorLayout::kScalar:
      l(0, 0) = theta[f.offset];
      break;
  }
  return l;
}

}  // namespace

// ---- profiled deviance ----

ProfiledDevianceEvaluator::ProfiledDevianceEvaluator(const FitContext& ctx,
                                                     const ModelSpec& spec)
    : subj_(subject_layout(spec.structure)),
      item_(item_layout(spec.structure)),
      dim_(subj_.n_params() + item_.n_params()),
      p_(spec.fixed_slope ? 2 : 1),
      n_(ctx.n),
      ns_(ctx.n_subjects),
      ni_(ctx.n_items),
      qs_(subj_.terms() * ctx.n_subjects),
      qi_(item_.terms() * ctx.n_items) {
  const int ks = subj_.terms();
  const int ki = item_.terms();

  sg_ = ctx.subject_gram;
  ig_ = ctx.item_gram;

  cross_.resize(qs_, qi_);
  for (int s = 0; s < ns_; ++s)
    for (int i = 0; i < ni_; ++i)
      cross_.block(ks * s, ki * i, ks, ki) = ctx.cross.block(2 * s, 2 * i, ks, ki);

  rhs_s_.resize(qs_, p_ + 1);
  for (int s = 0; s < ns_; ++s) {
    rhs_s_.block(ks * s, 0, ks, p_) = ctx.subject_zx.block(2 * s, 0, ks, p_);
    rhs_s_.block(ks * s, p_, ks, 1) = ctx.subject_zy.segment(2 * s, ks);
  }
  rhs_i_.resize(qi_, p_ + 1);
  for (int i = 0; i < ni_; ++i) {
    rhs_i_.block(ki * i, 0, ki, p_) = ctx.item_zx.block(2 * i, 0, ki, p_);
    rhs_i_.block(ki * i, p_, ki, 1) = ctx.item_zy.segment(2 * i, ki);
  }

  xtx_.resize(p_ + 1, p_ + 1);
  xtx_.topLeftCorner(p_, p_) = ctx.xtx.topLeftCorner(p_, p_);
  xtx_.block(0, p_, p_, 1) = ctx.xty.head(p_);
  xtx_.block(p_, 0, 1, p_) = ctx.xty.head(p_).transpose();
  xtx_(p_, p_) = ctx.yty;

  d00_.resize(ns_);
  d10_.resize(ns_);
  d11_.resize(ns_);
  w_.resize(qs_, qi_);
  schur_.resize(qi_, qi_);
  ts_.resize(qs_, p_ + 1);
  ti_.resize(qi_, p_ + 1);
}

bool ProfiledDevianceEvaluator::factor(const Eigen::VectorXd& theta) {
  if (theta.size() != dim_)
    throw std::invalid_argument("ProfiledDevianceEvaluator: theta size mismatch");
  failed_ = false;
  logdet_ = 0.0;

  ls_ = factor_matrix(subj_, theta);
  li_ = factor_matrix(item_, theta);
  const double sa = ls_(0, 0), sb = ls_(1, 0), sc = ls_(1, 1);
  const double ia = li_(0, 0), ib = li_(1, 0), ic = li_(1, 1);
  const int ks = subj_.terms();
  const int ki = item_.terms();

  // per-subject blocks of the penalized system, factored in closed form
  for (int s = 0; s < ns_; ++s) {
    const Eigen::Matrix2d& g = sg_[s];
    if (ks == 2) {
      const double a00 = sa * sa * g(0, 0) + 2.0 * sa * sb * g(0, 1) + sb * sb * g(1, 1) + 1.0;
      const double a01 = sc * (sa * g(0, 1) + sb * g(1, 1));
      const double a11 = sc * sc * g(1, 1) + 1.0;
      const double d00 = std::sqrt(a00);
      const double d10 = a01 / d00;
      const double rem = a11 - d10 * d10;
      if (!(rem > 0.0) || !std::isfinite(rem)) return failed_ = true, false;
      d00_[s] = d00;
      d10_[s] = d10;
      d11_[s] = std::sqrt(rem);
      logdet_ += 2.0 * (std::log(d00) + std::log(d11_[s]));
    } else {
      const double a00 = sa * sa * g(0, 0) + 1.0;
      d00_[s] = std::sqrt(a00);
      logdet_ += std::log(a00);
    }
  }

  // sweep the subject factor out of the cross block: w = D^{-1} Ls' C Li
  if (ki == 2) {
    for (int i = 0; i < ni_; ++i) {
      w_.col(2 * i) = ia * cross_.col(2 * i) + ib * cross_.col(2 * i + 1);
      w_.col(2 * i + 1) = ic * cross_.col(2 * i + 1);
    }
  } else {
    for (int i = 0; i < ni_; ++i) w_.col(i) = ia * cross_.col(i);
  }
  if (ks == 2) {
    for (int s = 0; s < ns_; ++s) {
      auto r0 = w_.row(2 * s);
      auto r1 = w_.row(2 * s + 1);
      r0 = (sa * r0 + sb * r1) / d00_[s];
      r1 = (sc * r1 - d10_[s] * r0) / d11_[s];
    }
  } else {
    for (int s = 0; s < ns_; ++s) w_.row(s) *= sa / d00_[s];
  }

  // item-side Schur complement
  schur_.setZero();
  for (int i = 0; i < ni_; ++i) {
    const Eigen::Matrix2d& g = ig_[i];
    if (ki == 2) {
      const double a00 = ia * ia * g(0, 0) + 2.0 * ia * ib * g(0, 1) + ib * ib * g(1, 1) + 1.0;
      const double a01 = ic * (ia * g(0, 1) + ib * g(1, 1));
      const double a11 = ic * ic * g(1, 1) + 1.0;
      schur_(2 * i, 2 * i) = a00;
      schur_(2 * i + 1, 2 * i) = a01;
      schur_(2 * i, 2 * i + 1) = a01;
      schur_(2 * i + 1, 2 * i + 1) = a11;
    } else {
      schur_(i, i) = ia * ia * g(0, 0) + 1.0;
    }
  }
  schur_.selfadjointView<Eigen::Lower>().rankUpdate(w_.transpose(), -1.0);
  schur_llt_.compute(schur_);
  if (schur_llt_.info() != Eigen::Success) return failed_ = true, false;
  const auto& lsc = schur_llt_.matrixLLT();
  for (int i = 0; i < qi_; ++i) {
    const double d = lsc(i, i);
    if (!(d > 0.0) || !std::isfinite(d)) return failed_ = true, false;
    logdet_ += 2.0 * std::log(d);
  }

  // right-hand sides [Z'X, Z'y], swept the same way
  if (ks == 2) {
    for (int s = 0; s < ns_; ++s) {
      auto r0 = ts_.row(2 * s);
      auto r1 = ts_.row(2 * s + 1);
      r0 = (sa * rhs_s_.row(2 * s) + sb * rhs_s_.row(2 * s + 1)) / d00_[s];
      r1 = (sc * rhs_s_.row(2 * s + 1) - d10_[s] * r0) / d11_[s];
    }
  } else {
    for (int s = 0; s < ns_; ++s) ts_.row(s) = rhs_s_.row(s) * (sa / d00_[s]);
  }
  if (ki == 2) {
    for (int i = 0; i < ni_; ++i) {
      ti_.row(2 * i) = ia * rhs_i_.row(2 * i) + ib * rhs_i_.row(2 * i + 1);
      ti_.row(2 * i + 1) = ic * rhs_i_.row(2 * i + 1);
    }
  } else {
    for (int i = 0; i < ni_; ++i) ti_.row(i) = ia * rhs_i_.row(i);
  }
  ti_.noalias() -= w_.transpose() * ts_;
  schur_llt_.matrixL().solveInPlace(ti_);
  return true;
}

ProfiledDevianceEvaluator::Solution ProfiledDevianceEvaluator::solve(
    const Eigen::VectorXd& theta) {
  Solution sol;
  if (!factor(theta)) return sol;

  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  m.topLeftCorner(p_ + 1, p_ + 1) = xtx_.topLeftCorner(p_ + 1, p_ + 1);
  m.topLeftCorner(p_ + 1, p_ + 1).noalias() -= ts_.transpose() * ts_;
  m.topLeftCorner(p_ + 1, p_ + 1).noalias() -= ti_.transpose() * ti_;

  double rss;  // residual sum of squares after sweeping everything out
  sol.beta.resize(p_);
  if (p_ == 1) {
    if (!(m(0, 0) > 0.0)) {
      failed_ = true;
      return sol;
    }
    const double l00 = std::sqrt(m(0, 0));
    const double c0 = m(0, 1) / l00;
    rss = m(1, 1) - c0 * c0;
    sol.beta[0] = c0 / l00;
  } else {
    if (!(m(0, 0) > 0.0)) {
      failed_ = true;
      return sol;
    }
    const double l00 = std::sqrt(m(0, 0));
    const double l10 = m(1, 0) / l00;
    const double rem = m(1, 1) - l10 * l10;
    if (!(rem > 0.0)) {
      failed_ = true;
      return sol;
    }
    const double l11 = std::sqrt(rem);
    const double c0 = m(0, 2) / l00;
    const double c1 = (m(1, 2) - l10 * c0) / l11;
    rss = m(2, 2) - c0 * c0 - c1 * c1;
    sol.beta[1] = c1 / l11;
    sol.beta[0] = (c0 - l10 * sol.beta[1]) / l00;
  }

  if (!(rss > 0.0) || !std::isfinite(rss)) {
    failed_ = true;
    return sol;
  }
  sol.sigma_sq = rss / n_;
  sol.deviance = logdet_ + n_ * (1.0 + std::log(2.0 * kPi * rss / n_));
  sol.ok = std::isfinite(sol.deviance);
  if (!sol.ok) failed_ = true;
  return sol;
}

double ProfiledDevianceEvaluator::operator()(const Eigen::VectorXd& theta) {
  return solve(theta).deviance;
}

double profiled_deviance(const Eigen::VectorXd& theta, const Dataset& data,
                         const ModelSpec& spec) {
  const std::vector<bool> mask = theta_diag_mask(spec.structure);
  if (theta.size() != static_cast<Eigen::Index>(mask.size()))
    throw std::invalid_argument("profiled_deviance: theta size mismatch");
  for (size_t k = 0; k < mask.size(); ++k)
    if (mask[k] && theta[k] < 0.0)
      throw std::domain_error("profiled_deviance: negative diagonal entry in theta");

  FitContext ctx(data);
  ProfiledDevianceEvaluator ev(ctx, spec);
  const double dev = ev(theta);
  if (ev.last_eval_failed())
    throw std::runtime_error("profiled_deviance: factorization failed");
  return dev;
}

// ---- reference deviance ----

double deviance_direct(const Dataset& data, const ModelSpec& spec,
                       const Eigen::VectorXd& beta, const CovarianceEstimates& cov) {
  data.validate();
  const int n = static_cast<int>(data.y.size());
  if (n > kMaxDirectRows)
    throw std::invalid_argument("deviance_direct: dataset too large for the dense path");

  const ModelMatrices mm = build_matrices(data, spec);
  if (beta.size() != mm.x.cols())
    throw std::invalid_argument("deviance_direct: beta size mismatch");

  const Eigen::MatrixXd z = mm.dense_z();
  const int ks = mm.subject_slope ? 2 : 1;
  const int ki = mm.item_slope ? 2 : 1;
  const bool corr = has_correlations(spec.structure);

  Eigen::Matrix2d gs = Eigen::Matrix2d::Zero();
  gs(0, 0) = cov.subject_intercept_sd * cov.subject_intercept_sd;
  if (ks == 2) {
    gs(1, 1) = cov.subject_slope_sd * cov.subject_slope_sd;
    if (corr) {
      gs(0, 1) = gs(1, 0) =
          cov.subject_corr * cov.subject_intercept_sd * cov.subject_slope_sd;
    }
  }
  Eigen::Matrix2d gi = Eigen::Matrix2d::Zero();
  gi(0, 0) = cov.item_intercept_sd * cov.item_intercept_sd;
  if (ki == 2) {
    gi(1, 1) = cov.item_slope_sd * cov.item_slope_sd;
    if (corr) {
      gi(0, 1) = gi(1, 0) = cov.item_corr * cov.item_intercept_sd * cov.item_slope_sd;
    }
  }

  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(z.cols(), z.cols());
  for (int s = 0; s < mm.n_subjects; ++s)
    g.block(ks * s, ks * s, ks, ks) = gs.topLeftCorner(ks, ks);
  const int base = ks * mm.n_subjects;
  for (int i = 0; i < mm.n_items; ++i)
    g.block(base + ki * i, base + ki * i, ki, ki) = gi.topLeftCorner(ki, ki);

  Eigen::MatrixXd v = z * g * z.transpose();
  v.diagonal().array() += cov.residual_sd * cov.residual_sd;

  Eigen::LLT<Eigen::MatrixXd> llt(v);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("deviance_direct: marginal covariance is not positive definite");

  const Eigen::VectorXd resid = data.y - mm.x * beta;
  const Eigen::VectorXd half = llt.matrixL().solve(resid);
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixLLT()(i, i));
  return n * std::log(2.0 * kPi) + logdet + half.squaredNorm();
}

// ---- parameter maps ----

CovarianceEstimates theta_to_covariance(const Eigen::VectorXd& theta,
                                        double sigma_sq, const ModelSpec& spec) {
  const double sigma = std::sqrt(sigma_sq);
  CovarianceEstimates out;
  out.residual_sd = sigma;

  auto fill = [&](const FactorLayout& f, double& sd0, double& sd1, double& corr) {
    const Eigen::Matrix2d l = factor_matrix(f, theta);
    const Eigen::RowVector2d row0 = l.row(0);
    const Eigen::RowVector2d row1 = l.row(1);
    sd0 = sigma * row0.norm();
    if (f.terms() == 2) {
      sd1 = sigma * row1.norm();
      const double denom = row0.norm() * row1.norm();
      corr = denom > 0.0 ? row0.dot(row1) / denom : 0.0;
    }
  };
  fill(subject_layout(spec.structure), out.subject_intercept_sd,
       out.subject_slope_sd, out.subject_corr);
  fill(item_layout(spec.structure), out.item_intercept_sd, out.item_slope_sd,
       out.item_corr);
  return out;
}

Eigen::VectorXd theta_from_params(const GeneratingParams& params, Structure s) {
  params.validate(false);
  const double sigma = params.sigma;
  Eigen::VectorXd theta(theta_dim(s));

  auto put = [&](const FactorLayout& f, double sd0, double sd1, double rho) {
    switch (f.kind) {
      case FactorLayout::kTriangle: {
        const Eigen::Matrix2d l = chol2x2(sd0, sd1, rho) / sigma;
        theta[f.offset] = l(0, 0);
        theta[f.offset + 1] = l(1, 0);
        theta[f.offset + 2] = l(1, 1);
        break;
      }
      case FactorLayout::kDiagonal:
        theta[f.offset] = sd0 / sigma;
        theta[f.offset + 1] = sd1 / sigma;
        break;
      case FactorLayout::kScalar:
        theta[f.offset] = sd0 / sigma;
        break;
    }
  };
  put(subject_layout(s), params.tau00, params.tau11, params.rho_s);
  put(item_layout(s), params.omega00, params.omega11, params.rho_i);
  return theta;
}

// ---- maximum likelihood ----

namespace {

Eigen::VectorXd reflect_theta(const Eigen::VectorXd& theta,
                              const std::vector<bool>& mask) {
  Eigen::VectorXd out = theta;
  for (size_t k = 0; k < mask.size(); ++k)
    if (mask[k]) out[k] = std::abs(out[k]);
  return out;
}

// small deterministic perturbation for the restart, from a fixed-key
// integer hash so repeated fits of the same data agree bit for bit
Eigen::VectorXd jitter_start(const Eigen::VectorXd& x) {
  std::uint64_t state = 0x9E3779B97F4A7C15ull;
  Eigen::VectorXd out = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    state = scramble64(state + 0xD1B54A32D192ED03ull);
    const double u = (state >> 11) * 0x1.0p-53;  // [0, 1)
    out[k] += 0.05 * (1.0 + std::abs(x[k])) * (2.0 * u - 1.0);
  }
  return out;
}

}  // namespace

FitResult fit_ml(const FitContext& ctx, const ModelSpec& spec) {
  ProfiledDevianceEvaluator ev(ctx, spec);
  const std::vector<bool> mask = theta_diag_mask(spec.structure);
  const int dim = ev.theta_dim();

  auto objective = [&](const Eigen::VectorXd& t) {
    return ev(reflect_theta(t, mask));
  };

  Eigen::VectorXd start(dim);
  for (int k = 0; k < dim; ++k) start[k] = mask[k] ? 1.0 : 0.0;
  const Eigen::VectorXd step = Eigen::VectorXd::Constant(dim, 0.5);

  NelderMeadOptions opts;
  NelderMeadResult first = nelder_mead(objective, start, step, opts);

  NelderMeadResult best = first;
  if (first.evaluations < opts.max_evals) {
    NelderMeadOptions rest = opts;
    rest.max_evals = opts.max_evals - first.evaluations;
    const Eigen::VectorXd restep = Eigen::VectorXd::Constant(dim, 0.1);
    NelderMeadResult second =
        nelder_mead(objective, jitter_start(first.x), restep, rest);
    if (second.value < first.value) best = second;
  }

  FitResult res;
  res.spec = spec;
  res.theta = reflect_theta(best.x, mask);
  res.n_free_params = free_param_count(spec);

  ProfiledDevianceEvaluator::Solution sol = ev.solve(res.theta);
  res.deviance = sol.ok ? sol.deviance : best.value;
  res.converged = best.converged_by_spread && sol.ok;
  if (sol.ok) {
    res.beta = sol.beta;
    res.cov = theta_to_covariance(res.theta, sol.sigma_sq, spec);
  } else {
    res.beta = Eigen::VectorXd::Zero(spec.fixed_slope ? 2 : 1);
  }
  for (int k = 0; k < dim; ++k)
    if (mask[k] && res.theta[k] <= kSingularTol) res.singular = true;
  return res;
}

FitResult fit_ml(const Dataset& data, const ModelSpec& spec) {
  FitContext ctx(data);
  return fit_ml(ctx, spec);
}

}  // namespace lmmsel
