#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmmsel/design.hpp"
#include "lmmsel/fitter.hpp"

namespace lmmsel {

enum class SelectionCriterion { LrtBackward, Aic };

struct SelectionConfig {
  SelectionCriterion criterion = SelectionCriterion::LrtBackward;
  double alpha_lrt = 0.2;  // complexity/fit trade-off knob, not an error rate
};

struct SelectionStep {
  std::string comparison;
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  std::string decision;
};

struct SelectionOutcome {
  Structure chosen_structure = Structure::Maximal;
  bool fixed_effect_significant = false;
  std::vector<SelectionStep> trace;
};

// Thrown when a fit required by a selection step did not converge; the
// Monte Carlo harness responds by redrawing the sample.
struct NonconvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using StructureFits = std::array<FitResult, kNumStructures>;

// Backward elimination from the maximal structure: correlations first
// (2 df), then each slope separately from the zero-correlation structure
// (1 df each; if both reductions are acceptable the larger p wins, ties
// drop the item slope), finally the surviving slope (1 df). A reduction is
// accepted iff its p-value exceeds alpha_lrt.
Structure select_backward_lrt(const StructureFits& fits_h1,
                              const SelectionConfig& config,
                              std::vector<SelectionStep>* trace = nullptr);

// Minimal AIC; ties go to the structure with fewer parameters, then to the
// earlier enumeration position (which drops the item slope first, matching
// the LRT tie rule).
Structure select_aic(const StructureFits& fits_h1,
                     std::vector<SelectionStep>* trace = nullptr);

// Deviance-difference test of the condition effect given two fits of the
// same structure with and without it.
bool fixed_effect_reject(const FitResult& fit_h0, const FitResult& fit_h1,
                         double criterion_threshold);

// Standalone variant that fits both models itself. Throws
// NonconvergenceError when either fit fails to converge.
bool test_fixed_effect(const Dataset& data, Structure chosen,
                       double criterion_threshold);

// Full pipeline on precomputed fits: choose the structure from the H1
// fits, then test the condition effect under the chosen structure.
SelectionOutcome run_selection(const StructureFits& fits_h0,
                               const StructureFits& fits_h1,
                               const SelectionConfig& config,
                               double criterion_threshold);

// One CSV row per trace step: comparison,stat,df,p,decision.
std::string selection_trace_csv(const SelectionOutcome& outcome);

}  // namespace lmmsel
