#include "lmmsel/inference.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lmmsel {

namespace {

// Regularized upper incomplete gamma Q(a, x), series/continued-fraction
// split at x = a + 1 (Lentz's method for the fraction).
double gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::domain_error("gamma_q: bad arguments");
  if (x == 0.0) return 1.0;
  const double lg = std::lgamma(a);
  if (x < a + 1.0) {
    // P(a,x) by series, return 1 - P
    double term = 1.0 / a;
    double sum = term;
    double ap = a;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-16) break;
    }
    return 1.0 - sum * std::exp(-x + a * std::log(x) - lg);
  }
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - lg) * h;
}

}  // namespace

double chisq1_sf(double x) {
  if (x < 0.0) throw std::domain_error("chisq1_sf: negative statistic");
  return std::erfc(std::sqrt(0.5 * x));
}

double chisq_sf(double x, int df) {
  if (x < 0.0) throw std::domain_error("chisq_sf: negative statistic");
  if (df < 1) throw std::domain_error("chisq_sf: df must be >= 1");
  if (df == 1) return chisq1_sf(x);
  if (df == 2) return std::exp(-0.5 * x);
  return gamma_q(0.5 * df, 0.5 * x);
}

double chisq1_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("chisq1_quantile: p outside (0,1)");

  double lo = 0.0, hi = 1.0;
  while (chisq1_sf(hi) > p) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (chisq1_sf(mid) > p ? lo : hi) = mid;
    if (hi - lo < 1e-13 * (1.0 + hi)) break;
  }
  double x = 0.5 * (lo + hi);
  // Newton polish; the density is the negated derivative of the tail
  for (int i = 0; i < 3; ++i) {
    if (x <= 0.0) break;
    const double density = std::exp(-0.5 * x) / std::sqrt(2.0 * 3.14159265358979323846 * x);
    if (density <= 0.0) break;
    x += (chisq1_sf(x) - p) / density;
  }
  return x;
}

LrtResult lrt(const FitResult& fit_null, const FitResult& fit_alt) {
  if (!fit_null.converged || !fit_alt.converged)
    throw std::invalid_argument("lrt: both fits must have converged");
  if (!spec_nested_in(fit_null.spec, fit_alt.spec))
    throw std::invalid_argument("lrt: null model is not nested in the alternative");

  LrtResult res;
  res.statistic = std::max(0.0, fit_null.deviance - fit_alt.deviance);
  res.df = fit_alt.n_free_params - fit_null.n_free_params;
  res.p_value = res.df == 0 ? 1.0 : chisq_sf(res.statistic, res.df);
  return res;
}

double aic(const FitResult& fit) {
  if (!fit.converged) throw std::invalid_argument("aic: fit did not converge");
  return fit.deviance + 2.0 * fit.n_free_params;
}

std::pair<double, double> wilson_ci(int successes, int trials, double level) {
  if (trials < 1 || successes < 0 || successes > trials)
    throw std::domain_error("wilson_ci: invalid counts");
  if (!(level > 0.0 && level < 1.0))
    throw std::domain_error("wilson_ci: level outside (0,1)");

  const double z = std::sqrt(chisq1_quantile(1.0 - level));
  const double n = trials;
  // degenerate counts have exact bounds; skip the fp dust of center ∓ half
  if (successes == 0 || successes == trials) {
    const double z2n = z * z / n;
    const double inner = z2n / (1.0 + z2n);
    return successes == 0 ? std::make_pair(0.0, inner)
                          : std::make_pair(1.0 - inner, 1.0);
  }
  const double phat = successes / n;
  const double z2n = z * z / n;
  const double denom = 1.0 + z2n;
  const double center = (phat + 0.5 * z2n) / denom;
  const double half =
      z * std::sqrt(phat * (1.0 - phat) / n + 0.25 * z2n / n) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

}  // namespace lmmsel
