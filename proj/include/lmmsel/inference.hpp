#pragma once

#include <utility>

#include "lmmsel/fitter.hpp"

namespace lmmsel {

// Upper-tail probability of a chi-squared variable with one degree of
// freedom, evaluated as 2*(1 - Phi(sqrt(x))) through erfc.
double chisq1_sf(double x);

// Upper-tail probability for general integer df (regularized upper
// incomplete gamma).
double chisq_sf(double x, int df);

// Inverse of chisq1_sf: the critical value with upper-tail probability p.
double chisq1_quantile(double p);

struct LrtResult {
  double statistic = 0.0;  // deviance(null) - deviance(alt), clamped at 0
  int df = 0;
  double p_value = 1.0;

  bool significant_at(double alpha) const { return p_value < alpha; }
};

// Likelihood-ratio test of a nested pair of converged fits. The null spec
// must be nested in the alternative; a zero-df comparison yields p = 1.
LrtResult lrt(const FitResult& fit_null, const FitResult& fit_alt);

// deviance + 2 * free parameter count
double aic(const FitResult& fit);

// Wilson score interval for a binomial proportion.
std::pair<double, double> wilson_ci(int successes, int trials, double level = 0.95);

}  // namespace lmmsel
