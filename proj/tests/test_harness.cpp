#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <vector>

#include "lmmsel/harness.hpp"
#include "lmmsel/inference.hpp"

using namespace lmmsel;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// hand-built record at one slope SD with every flag set the same way
ScanRecord flat_record(double sd, bool value) {
  ScanRecord r;
  r.slope_sd = sd;
  r.h0_reject.fill(value);
  r.h1_reject.fill(value);
  r.h0_reject_lrt = r.h1_reject_lrt = value;
  r.h0_reject_aic = r.h1_reject_aic = value;
  return r;
}

}  // namespace

TEST_CASE("design presets") {
  const ExperimentDesign large = preset_design("large");
  CHECK(large.n_subjects == 50);
  CHECK(large.n_items == 20);
  CHECK(large.n_obs() == 2000);

  const ExperimentDesign small = preset_design("small");
  CHECK(small.n_subjects == 30);
  CHECK(small.n_items == 10);
  CHECK(small.n_obs() == 600);

  CHECK_THROWS_AS(preset_design("medium"), std::invalid_argument);
}

TEST_CASE("cell labels") {
  CHECK(cell_label(0) == "maximal");
  CHECK(cell_label(1) == "zero-correlation");
  CHECK(cell_label(4) == "intercepts-only");
  CHECK(cell_label(5) == "selected-LRT");
  CHECK(cell_label(6) == "selected-AIC");
  CHECK_THROWS_AS(cell_label(7), std::invalid_argument);
  CHECK_THROWS_AS(cell_label(-1), std::invalid_argument);
}

TEST_CASE("single iteration battery") {
  const ExperimentDesign design = preset_design("small");
  GeneratingParams p;
  p.tau11 = p.omega11 = 60.0;
  HarnessConfig config;

  const IterationOutcome a = run_iteration(design, p, {7, 4}, config);
  CHECK(a.redraws == 0);
  CHECK(a.reject_selected_lrt == a.reject[static_cast<int>(a.selected_lrt)]);
  CHECK(a.reject_selected_aic == a.reject[static_cast<int>(a.selected_aic)]);

  const IterationOutcome b = run_iteration(design, p, {7, 4}, config);
  CHECK(a.reject == b.reject);
  CHECK(a.selected_lrt == b.selected_lrt);
  CHECK(a.selected_aic == b.selected_aic);
  CHECK(a.reject_selected_lrt == b.reject_selected_lrt);
  CHECK(a.reject_selected_aic == b.reject_selected_aic);
}

TEST_CASE("paired scenario summary") {
  const ExperimentDesign design = preset_design("small");
  GeneratingParams p;  // slope SDs zero
  HarnessConfig config;
  const int n_iter = 30;

  const WorstCaseResult res = run_worst_case(design, p, n_iter, 11, config);
  REQUIRE(res.cells.size() == kNumCells);
  REQUIRE(res.h0_flags.size() == n_iter);
  REQUIRE(res.h1_flags.size() == n_iter);

  for (int c = 0; c < kNumCells; ++c) {
    const CellSummary& cell = res.cells[c];
    CHECK(cell.label == cell_label(c));
    CHECK(cell.n_iterations == n_iter);

    int h0 = 0, h1 = 0;
    for (int i = 0; i < n_iter; ++i) {
      h0 += res.h0_flags[i][c];
      h1 += res.h1_flags[i][c];
    }
    CHECK(cell.rejections_h0 == h0);
    CHECK(cell.rejections_h1 == h1);
    CHECK(cell.type1 == doctest::Approx(static_cast<double>(h0) / n_iter));
    CHECK(cell.power == doctest::Approx(static_cast<double>(h1) / n_iter));

    const auto [lo, hi] = wilson_ci(h0, n_iter);
    CHECK(cell.type1_lo == doctest::Approx(lo));
    CHECK(cell.type1_hi == doctest::Approx(hi));
    CHECK(cell.type1_lo <= cell.type1);
    CHECK(cell.type1 <= cell.type1_hi);
    CHECK(cell.power_lo <= cell.power);
    CHECK(cell.power <= cell.power_hi);
    CHECK(cell.redraw_count == res.redraws);
  }

  SUBCASE("csv layout and stability") {
    const std::string csv = worst_case_csv(res);
    CHECK(csv.rfind("label,n_iter,type1,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == kNumCells + 1);
    CHECK(csv.find("\nselected-LRT,30,") != std::string::npos);
    CHECK(csv.find("\nselected-AIC,30,") != std::string::npos);

    const WorstCaseResult again = run_worst_case(design, p, n_iter, 11, config);
    CHECK(worst_case_csv(again) == csv);
  }

  SUBCASE("thread count does not change the numbers") {
    HarnessConfig threaded = config;
    threaded.threads = 3;
    const WorstCaseResult par = run_worst_case(design, p, n_iter, 11, threaded);
    CHECK(par.h0_flags == res.h0_flags);
    CHECK(par.h1_flags == res.h1_flags);
    CHECK(par.redraws == res.redraws);
    CHECK(worst_case_csv(par) == worst_case_csv(res));
  }

  SUBCASE("argument validation") {
    CHECK_THROWS_AS(run_worst_case(design, p, 0, 11, config), std::invalid_argument);
  }
}

TEST_CASE("slope sweep") {
  const ExperimentDesign design = preset_design("small");
  GeneratingParams p;
  HarnessConfig config;

  const std::vector<ScanRecord> recs = run_scan(design, p, 3, 120.0, 5, config);
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].slope_sd == doctest::Approx(0.0).scale(1.0));
  CHECK(recs[1].slope_sd == doctest::Approx(60.0));
  CHECK(recs[2].slope_sd == doctest::Approx(120.0));
  for (int k = 0; k < 3; ++k) {
    CHECK(recs[k].step == k);
    CHECK(recs[k].master_seed == 5);
    CHECK(recs[k].redraws == 0);
  }

  SUBCASE("deterministic") {
    const std::vector<ScanRecord> again = run_scan(design, p, 3, 120.0, 5, config);
    for (int k = 0; k < 3; ++k) {
      CHECK(again[k].h0_reject == recs[k].h0_reject);
      CHECK(again[k].h1_reject == recs[k].h1_reject);
      CHECK(again[k].selected_lrt == recs[k].selected_lrt);
      CHECK(again[k].selected_aic == recs[k].selected_aic);
    }
  }

  SUBCASE("csv layout") {
    const std::string csv = scan_csv(recs);
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    CHECK(line == "step,slope_sd,structure_or_criterion,h0_reject,h1_reject,selected");

    int rows = 0, structure_rows = 0, criterion_rows = 0;
    while (std::getline(is, line)) {
      ++rows;
      if (line.back() == ',') {
        ++structure_rows;  // structure rows leave the selected column empty
      } else {
        ++criterion_rows;
        const bool lrt = line.find(",selected-LRT,") != std::string::npos;
        const bool aic = line.find(",selected-AIC,") != std::string::npos;
        CHECK((lrt || aic));
        // the trailing field names a real structure
        const std::string tail = line.substr(line.rfind(',') + 1);
        CHECK(structure_from_label(tail).has_value());
      }
    }
    CHECK(rows == 3 * (kNumStructures + 2));
    CHECK(structure_rows == 3 * kNumStructures);
    CHECK(criterion_rows == 3 * 2);
  }

  SUBCASE("argument validation") {
    CHECK_THROWS_AS(run_scan(design, p, 1, 120.0, 5, config), std::invalid_argument);
    CHECK_THROWS_AS(run_scan(design, p, 3, 0.0, 5, config), std::invalid_argument);
  }
}

TEST_CASE("binned rates") {
  std::vector<ScanRecord> recs;
  // 12 records across [0, 120]: four per 40-wide bin once binned at 40
  for (int k = 0; k < 12; ++k) recs.push_back(flat_record(k * 120.0 / 11.0, k % 2 == 0));

  SUBCASE("uniform flags give degenerate intervals") {
    std::vector<ScanRecord> on;
    for (int k = 0; k < 10; ++k) on.push_back(flat_record(12.0 * k, true));
    const ScanCurve c = bin_smooth(on, 60.0, [](const ScanRecord& r) {
      return r.h0_reject_lrt;
    }, 120.0);
    REQUIRE(c.rate.size() == 2);
    CHECK(c.bin_centers[0] == doctest::Approx(30.0));
    CHECK(c.bin_centers[1] == doctest::Approx(90.0));
    CHECK(c.rate[0] == 1.0);
    CHECK(c.rate[1] == 1.0);
    CHECK(c.ci_hi[0] == 1.0);
    CHECK(c.ci_lo[0] < 1.0);
    CHECK(c.n_per_bin[0] + c.n_per_bin[1] == 10);
  }

  SUBCASE("alternating flags mix to one half") {
    const ScanCurve c = bin_smooth(recs, 120.0, [](const ScanRecord& r) {
      return r.h1_reject_aic;
    }, 120.0);
    REQUIRE(c.rate.size() == 1);
    CHECK(c.n_per_bin[0] == 12);
    CHECK(c.rate[0] == doctest::Approx(0.5));
    CHECK(c.ci_lo[0] > 0.2);
    CHECK(c.ci_hi[0] < 0.8);
  }

  SUBCASE("top edge joins the last bin") {
    std::vector<ScanRecord> two = {flat_record(0.0, true), flat_record(120.0, true)};
    const ScanCurve c = bin_smooth(two, 40.0, [](const ScanRecord& r) {
      return r.h0_reject[0];
    }, 120.0);
    REQUIRE(c.n_per_bin.size() == 3);
    CHECK(c.n_per_bin[0] == 1);
    CHECK(c.n_per_bin[1] == 0);
    CHECK(c.n_per_bin[2] == 1);
    CHECK(std::isnan(c.rate[1]));
    CHECK(std::isnan(c.ci_lo[1]));
    CHECK(std::isfinite(c.rate[0]));
  }

  SUBCASE("range and width validation") {
    const auto any = [](const ScanRecord&) { return true; };
    CHECK_THROWS_AS(bin_smooth(recs, 7.0, any, 120.0), std::invalid_argument);
    CHECK_THROWS_AS(bin_smooth(recs, 0.0, any, 120.0), std::invalid_argument);
    std::vector<ScanRecord> outside = {flat_record(130.0, true)};
    CHECK_THROWS_AS(bin_smooth(outside, 40.0, any, 120.0), std::invalid_argument);
  }
}

TEST_CASE("interval coverage on synthetic draws") {
  // the binned curves lean on these intervals; spot-check their coverage on
  // a small-probability binomial like the Type I cells
  std::mt19937_64 gen(99);
  std::binomial_distribution<int> binom(200, 0.05);
  int covered = 0;
  const int reps = 1000;
  for (int k = 0; k < reps; ++k) {
    const auto [lo, hi] = wilson_ci(binom(gen), 200);
    if (lo <= 0.05 && 0.05 <= hi) ++covered;
  }
  CHECK(covered >= 930);
}

TEST_CASE("csv writer") {
  const std::string path = "/tmp/lmmsel_test_emit.csv";
  std::remove(path.c_str());
  emit_csv("a,b\n1,2\n", path);
  CHECK(slurp(path) == "a,b\n1,2\n");
  std::remove(path.c_str());

  CHECK_THROWS_AS(emit_csv("x\n", "/nonexistent-dir/out.csv"), std::runtime_error);
}

TEST_CASE("svg rendering") {
  ScanCurve c;
  for (int b = 0; b < 6; ++b) {
    c.bin_centers.push_back(10.0 + 20.0 * b);
    c.n_per_bin.push_back(b == 3 ? 0 : 50);
    if (b == 3) {  // an empty bin splits the polyline
      c.rate.push_back(std::numeric_limits<double>::quiet_NaN());
      c.ci_lo.push_back(std::numeric_limits<double>::quiet_NaN());
      c.ci_hi.push_back(std::numeric_limits<double>::quiet_NaN());
    } else {
      const double r = 0.02 + 0.01 * b;
      c.rate.push_back(r);
      c.ci_lo.push_back(r - 0.01);
      c.ci_hi.push_back(r + 0.01);
    }
  }

  const std::string path = "/tmp/lmmsel_test_plot.svg";
  std::remove(path.c_str());
  emit_svg({{"first", c}, {"second", c}}, "rate by slope SD", path, 0.05);

  const std::string svg = slurp(path);
  CHECK(svg.rfind("<svg ", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("rate by slope SD") != std::string::npos);
  CHECK(svg.find("stroke-dasharray") != std::string::npos);  // nominal level
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("polygon") != std::string::npos);  // CI ribbon
  CHECK(svg.find("#1f77b4") != std::string::npos);
  CHECK(svg.find("#d62728") != std::string::npos);  // second series colour
  CHECK(svg.find(">first<") != std::string::npos);
  CHECK(svg.find(">second<") != std::string::npos);
  // the split around the empty bin yields extra polyline segments
  CHECK(std::count(svg.begin(), svg.end(), '\n') > 20);
  std::remove(path.c_str());

  CHECK_THROWS_AS(emit_svg({{"x", c}}, "t", "/nonexistent-dir/p.svg"),
                  std::runtime_error);
}

TEST_CASE("indexed parallel execution") {
  SUBCASE("every index runs exactly once") {
    const int n = 200;
    std::vector<std::atomic<int>> hits(n);
    std::vector<int> values(n, -1);
    parallel_for(n, 4, [&](int i) {
      hits[i].fetch_add(1);
      values[i] = i * i;
    });
    for (int i = 0; i < n; ++i) {
      CHECK(hits[i].load() == 1);
      CHECK(values[i] == i * i);
    }
  }

  SUBCASE("degenerate shapes") {
    int calls = 0;
    parallel_for(0, 4, [&](int) { ++calls; });
    CHECK(calls == 0);
    std::vector<int> got(3, 0);
    parallel_for(3, 16, [&](int i) { got[i] = 1; });  // more threads than work
    CHECK(got == std::vector<int>({1, 1, 1}));
  }

  SUBCASE("exceptions surface") {
    auto boom = [](int i) {
      if (i == 13) throw std::runtime_error("slot 13");
    };
    CHECK_THROWS_AS(parallel_for(50, 4, boom), std::runtime_error);
    CHECK_THROWS_AS(parallel_for(50, 1, boom), std::runtime_error);
  }
}
