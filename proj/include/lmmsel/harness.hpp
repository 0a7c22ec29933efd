#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lmmsel/design.hpp"
#include "lmmsel/selection.hpp"
#include "lmmsel/simulate.hpp"

namespace lmmsel {

ExperimentDesign preset_design(const std::string& name);  // "large" or "small"

struct HarnessConfig {
  SelectionConfig selection;
  double criterion_threshold = 3.841458820694124;  // exact 5% chi-squared(1) value
  int max_redraws = 100;
  int threads = 1;
};

// Everything observed for one simulated dataset: the per-structure
// fixed-effect decisions plus both data-driven selections.
struct IterationOutcome {
  std::array<bool, kNumStructures> reject{};
  Structure selected_lrt = Structure::Maximal;
  Structure selected_aic = Structure::Maximal;
  bool reject_selected_lrt = false;
  bool reject_selected_aic = false;
  int redraws = 0;
};

// Simulates one dataset and runs the full battery: five structures, each
// fit with and without the condition effect. A sample where any of the ten
// fits fails to converge is discarded and redrawn on a fresh sub-stream of
// the same seed; after max_redraws consecutive failures the configuration
// is considered pathological and an exception is raised.
IterationOutcome run_iteration(const ExperimentDesign& design,
                               const GeneratingParams& params, SeedSpec seed,
                               const HarnessConfig& config);

struct CellSummary {
  std::string label;
  int n_iterations = 0;
  int rejections_h0 = 0;
  int rejections_h1 = 0;
  double type1 = 0.0, type1_lo = 0.0, type1_hi = 0.0;
  double power = 0.0, power_lo = 0.0, power_hi = 0.0;
  long redraw_count = 0;
};

// aggregate labels alongside the five structure labels
inline constexpr int kNumCells = kNumStructures + 2;
std::string cell_label(int cell);  // 0..4 structures, 5 selected-LRT, 6 selected-AIC

struct WorstCaseResult {
  std::vector<CellSummary> cells;  // kNumCells entries in cell order
  // per-iteration decision flags in cell order, for paired comparisons
  std::vector<std::array<bool, kNumCells>> h0_flags;
  std::vector<std::array<bool, kNumCells>> h1_flags;
  long redraws = 0;
};

// Both-slope-variances-at-zero scenario: one arm without the condition
// effect (Type I), one with it at 25 ms (power), sharing the master seed
// but not the streams. Iteration i uses streams 2i and 2i+1.
WorstCaseResult run_worst_case(const ExperimentDesign& design,
                               const GeneratingParams& base_params, int n_iter,
                               std::uint64_t master_seed,
                               const HarnessConfig& config);

struct ScanRecord {
  int step = 0;
  double slope_sd = 0.0;
  std::array<bool, kNumStructures> h0_reject{};
  std::array<bool, kNumStructures> h1_reject{};
  bool h0_reject_lrt = false, h1_reject_lrt = false;
  bool h0_reject_aic = false, h1_reject_aic = false;
  Structure selected_lrt = Structure::Maximal;  // from the 25 ms arm
  Structure selected_aic = Structure::Maximal;
  std::uint64_t master_seed = 0;
  int redraws = 0;
};

// Sweeps both random-slope SDs together from 0 to sd_max on an even grid
// (step k at sd_max*k/(n_steps-1)), correlations pinned at 0.6, one
// simulated dataset per step and arm. Step k uses streams 2k and 2k+1.
std::vector<ScanRecord> run_scan(const ExperimentDesign& design,
                                 const GeneratingParams& base_params,
                                 int n_steps, double sd_max,
                                 std::uint64_t master_seed,
                                 const HarnessConfig& config);

struct ScanCurve {
  std::vector<double> bin_centers;
  std::vector<double> rate;   // NaN marks an empty bin
  std::vector<double> ci_lo;
  std::vector<double> ci_hi;
  std::vector<int> n_per_bin;
};

// Proportion of records satisfying the predicate per slope-SD bin, with
// Wilson confidence bounds. bin_width must divide sd_max evenly.
ScanCurve bin_smooth(const std::vector<ScanRecord>& records, double bin_width,
                     const std::function<bool(const ScanRecord&)>& field,
                     double sd_max = 120.0, double level = 0.95);

std::string worst_case_csv(const WorstCaseResult& result);
std::string scan_csv(const std::vector<ScanRecord>& records);

void emit_csv(const std::string& csv, const std::string& path);

// One panel per file: rate curves with CI ribbons, a dashed reference line
// at the nominal 5% level, and simple axes.
void emit_svg(const std::vector<std::pair<std::string, ScanCurve>>& curves,
              const std::string& title, const std::string& path,
              double reference_level = 0.05);

// Deterministic helper: executes fn(0..n-1) on the requested number of
// threads; results must be written to index-addressed slots so scheduling
// cannot affect the outcome.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace lmmsel
