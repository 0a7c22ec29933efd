#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace lmmsel {

struct NelderMeadOptions {
  double spread_tol = 1e-8;  // terminate when max-min vertex value falls below
  int max_evals = 10000;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  bool converged_by_spread = false;
};

// Downhill simplex with the standard reflection/expansion/contraction/shrink
// coefficients. Bound handling is the caller's concern (wrap the objective).
// Infinite objective values are tolerated; if the whole initial simplex is
// infinite the search gives up immediately.
template <class F>
NelderMeadResult nelder_mead(F&& f, const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& step,
                             const NelderMeadOptions& opts = {}) {
  using Eigen::VectorXd;
  const int dim = static_cast<int>(x0.size());
  const int nv = dim + 1;

  std::vector<VectorXd> verts(nv, x0);
  std::vector<double> vals(nv);
  NelderMeadResult res;

  auto eval = [&](const VectorXd& x) {
    ++res.evaluations;
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  for (int j = 1; j < nv; ++j) verts[j][j - 1] += step[j - 1];
  for (int j = 0; j < nv; ++j) vals[j] = eval(verts[j]);

  std::vector<int> order(nv);
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return vals[a] < vals[b]; });
  };

  VectorXd centroid(dim), xr(dim), xt(dim);
  while (true) {
    sort_simplex();
    const int best = order[0], worst = order[nv - 1], second_worst = order[nv - 2];

    if (!std::isfinite(vals[best])) break;  // nowhere to go
    const double spread = vals[worst] - vals[best];
    if (spread < opts.spread_tol) {
      res.converged_by_spread = true;
      break;
    }
    if (res.evaluations >= opts.max_evals) break;

    centroid.setZero();
    for (int j = 0; j < nv; ++j) {
      if (j != worst) centroid += verts[j];
    }
    centroid /= static_cast<double>(dim);

    xr = centroid + (centroid - verts[worst]);  // reflection
    const double fr = eval(xr);
    if (fr < vals[order[0]]) {
      xt = centroid + 2.0 * (centroid - verts[worst]);  // expansion
      const double fe = eval(xt);
      if (fe < fr) {
        verts[worst] = xt;
        vals[worst] = fe;
      } else {
        verts[worst] = xr;
        vals[worst] = fr;
      }
    } else if (fr < vals[second_worst]) {
      verts[worst] = xr;
      vals[worst] = fr;
    } else {
      const bool outside = fr < vals[worst];
      xt = outside ? centroid + 0.5 * (xr - centroid)
                   : centroid + 0.5 * (verts[worst] - centroid);
      const double fc = eval(xt);
      if (fc < (outside ? fr : vals[worst])) {
        verts[worst] = xt;
        vals[worst] = fc;
      } else {
        // shrink toward the best vertex
        for (int j = 0; j < nv; ++j) {
          if (j == best) continue;
          verts[j] = verts[best] + 0.5 * (verts[j] - verts[best]);
          vals[j] = eval(verts[j]);
        }
      }
    }
    if (res.evaluations >= opts.max_evals) break;
  }

  sort_simplex();
  res.x = verts[order[0]];
  res.value = vals[order[0]];
  return res;
}

}  // namespace lmmsel
