#include <doctest.h>

#include <cmath>
#include <sstream>

#include "lmmsel/simulate.hpp"

using namespace lmmsel;

TEST_CASE("two-level factor square root") {
  SUBCASE("zero slope SD kills the correlation term") {
    const Eigen::Matrix2d l = chol2x2(100.0, 0.0, 0.6);
    CHECK(l(0, 0) == 100.0);
    CHECK(l(1, 0) == 0.0);
    CHECK(l(1, 1) == 0.0);
  }
  SUBCASE("independence") {
    const Eigen::Matrix2d l = chol2x2(100.0, 120.0, 0.0);
    CHECK(l(0, 0) == 100.0);
    CHECK(l(1, 0) == 0.0);
    CHECK(l(1, 1) == 120.0);
  }
  SUBCASE("correlated pair reproduces the covariance") {
    const Eigen::Matrix2d l = chol2x2(100.0, 120.0, 0.6);
    const Eigen::Matrix2d cov = l * l.transpose();
    CHECK(cov(0, 0) == doctest::Approx(10000.0).epsilon(1e-12));
    CHECK(cov(0, 1) == doctest::Approx(7200.0).epsilon(1e-12));
    CHECK(cov(1, 0) == doctest::Approx(7200.0).epsilon(1e-12));
    CHECK(cov(1, 1) == doctest::Approx(14400.0).epsilon(1e-12));
    CHECK(l(1, 0) >= 0.0);  // lower triangular, SD-scaled
  }
  SUBCASE("domain errors") {
    CHECK_THROWS_AS(chol2x2(-1.0, 10.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(chol2x2(10.0, 10.0, 1.5), std::domain_error);
  }
}

TEST_CASE("normal sampler moments") {
  NormalSampler gen(12345u);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0, sum3 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = gen.normal();
    sum += z;
    sum2 += z * z;
    sum3 += z * z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sum2 / n - 1.0) < 0.02);
  CHECK(std::abs(sum3 / n) < 0.05);

  NormalSampler u(99u);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("random effects draws") {
  const ExperimentDesign design(400, 50);
  GeneratingParams params;
  params.tau11 = 80.0;
  params.omega11 = 40.0;

  SUBCASE("determinism") {
    const RandomEffectsDraw a = sample_random_effects(design, params, {7, 3});
    const RandomEffectsDraw b = sample_random_effects(design, params, {7, 3});
    CHECK(a.subject_effects == b.subject_effects);
    CHECK(a.item_effects == b.item_effects);
    const RandomEffectsDraw c = sample_random_effects(design, params, {7, 4});
    CHECK(a.subject_effects != c.subject_effects);
  }

  SUBCASE("degenerate slope covariance") {
    GeneratingParams flat = params;
    flat.tau11 = 0.0;
    const RandomEffectsDraw d = sample_random_effects(design, flat, {7, 3});
    CHECK(d.subject_effects.col(1).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("sample mean of subject intercepts") {
    const ExperimentDesign big(100000, 2);
    const RandomEffectsDraw d = sample_random_effects(big, params, {11, 0});
    const double mean = d.subject_effects.col(0).mean();
    CHECK(std::abs(mean) < 3.0 * 100.0 / std::sqrt(100000.0));
  }

  SUBCASE("slope correlation approaches the target") {
    const ExperimentDesign big(50000, 2);
    const RandomEffectsDraw d = sample_random_effects(big, params, {13, 0});
    const auto c0 = d.subject_effects.col(0);
    const auto c1 = d.subject_effects.col(1);
    const double n = static_cast<double>(c0.size());
    const double m0 = c0.mean(), m1 = c1.mean();
    const double cov = ((c0.array() - m0) * (c1.array() - m1)).sum() / n;
    const double r = cov / std::sqrt((c0.array() - m0).square().sum() / n *
                                     (c1.array() - m1).square().sum() / n);
    CHECK(r == doctest::Approx(0.6).epsilon(0.03));
  }
}

TEST_CASE("dataset assembly") {
  const ExperimentDesign design(3, 2);

  SUBCASE("noise-free limit is the fixed part alone") {
    GeneratingParams p;
    p.tau00 = p.omega00 = 0.0;
    p.sigma = 0.0;
    const Dataset d = simulate_dataset(design, p, {1, 0});
    for (int r = 0; r < d.n(); ++r)
      CHECK(d.y[r] == doctest::Approx(2000.0 + 25.0 * d.x[r]).epsilon(1e-14));
    CHECK(d.y.minCoeff() == doctest::Approx(1987.5));
    CHECK(d.y.maxCoeff() == doctest::Approx(2012.5));
  }

  SUBCASE("canonical row order") {
    GeneratingParams p;
    const Dataset d = simulate_dataset(design, p, {1, 0});
    REQUIRE(d.n() == 12);
    int r = 0;
    for (int s = 0; s < 3; ++s)
      for (int i = 0; i < 2; ++i)
        for (int c = 0; c < 2; ++c, ++r) {
          CHECK(d.subject_idx[r] == s);
          CHECK(d.item_idx[r] == i);
          CHECK(d.x[r] == (c == 0 ? kConditionLo : kConditionHi));
        }
  }

  SUBCASE("determinism and stream separation") {
    GeneratingParams p;
    const Dataset a = simulate_dataset(design, p, {42, 5});
    const Dataset b = simulate_dataset(design, p, {42, 5});
    CHECK(a.y == b.y);
    const Dataset c = simulate_dataset(design, p, {42, 6});
    CHECK(a.y != c.y);
    // redraw sub-streams live far above the base ids
    const Dataset e = simulate_dataset(design, p, {42, 5 + (1ull << 32)});
    CHECK(a.y != e.y);
  }

  SUBCASE("condition-mean gap tracks the effect size") {
    const ExperimentDesign big(50, 20);
    GeneratingParams p;  // beta1 = 25
    double gap_sum = 0.0, gap_sq = 0.0;
    const int reps = 200;
    for (int k = 0; k < reps; ++k) {
      const Dataset d = simulate_dataset(big, p, {123, static_cast<std::uint64_t>(k)});
      double hi = 0.0, lo = 0.0;
      int nhi = 0, nlo = 0;
      for (int r = 0; r < d.n(); ++r) {
        if (d.x[r] > 0) {
          hi += d.y[r];
          ++nhi;
        } else {
          lo += d.y[r];
          ++nlo;
        }
      }
      const double gap = hi / nhi - lo / nlo;
      gap_sum += gap;
      gap_sq += gap * gap;
    }
    const double mean = gap_sum / reps;
    const double var = gap_sq / reps - mean * mean;
    const double se = std::sqrt(var / reps);
    CHECK(std::abs(mean - 25.0) < 3.0 * se);
  }

  SUBCASE("variance decomposition with flat slopes") {
    const ExperimentDesign big(50, 20);
    GeneratingParams p;
    p.beta1 = 0.0;
    double acc = 0.0;
    const int reps = 100;
    for (int k = 0; k < reps; ++k) {
      const Dataset d =
          simulate_dataset(big, p, {321, static_cast<std::uint64_t>(k)});
      const double mean = d.y.mean();
      acc += (d.y.array() - mean).square().sum() / (d.n() - 1);
    }
    const double expected = 100.0 * 100.0 + 100.0 * 100.0 + 300.0 * 300.0;
    CHECK(acc / reps == doctest::Approx(expected).epsilon(0.05));
  }
}

TEST_CASE("dataset csv round trip") {
  const ExperimentDesign design(4, 3);
  GeneratingParams p;
  p.tau11 = p.omega11 = 60.0;
  const Dataset d = simulate_dataset(design, p, {9, 2});

  std::stringstream ss;
  write_dataset_csv(ss, d);
  std::string first_line;
  std::getline(ss, first_line);
  CHECK(first_line == "y,subject,item,x");
  ss.seekg(0);

  const Dataset back = read_dataset_csv(ss);
  CHECK(back.n_subjects == d.n_subjects);
  CHECK(back.n_items == d.n_items);
  REQUIRE(back.n() == d.n());
  CHECK(back.y == d.y);  // round-trip precision is bit exact
  CHECK(back.subject_idx == d.subject_idx);
  CHECK(back.item_idx == d.item_idx);
  CHECK(back.x == d.x);
}

TEST_CASE("stream keys decorrelate neighbouring ids") {
  const std::uint64_t k0 = stream_key({1, 0});
  const std::uint64_t k1 = stream_key({1, 1});
  const std::uint64_t k2 = stream_key({2, 0});
  CHECK(k0 != k1);
  CHECK(k0 != k2);
  // avalanche: neighbouring streams differ in many bits
  CHECK(__builtin_popcountll(k0 ^ k1) > 10);
}
