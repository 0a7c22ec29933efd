#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <string>

namespace lmmsel {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

// Condition codes for the two-level factor. Sum to zero, differ by one.
inline constexpr double kConditionLo = -0.5;
inline constexpr double kConditionHi = +0.5;

// The five candidate random-effect structures, ordered from most to least
// complex. ZeroCorrelation keeps both slopes but drops the two correlation
// parameters; NoItemSlope / NoSubjectSlope each drop one slope (they are not
// nested in each other); InterceptsOnly keeps only the two intercepts.
enum class Structure {
  Maximal = 0,
  ZeroCorrelation = 1,
  NoItemSlope = 2,
  NoSubjectSlope = 3,
  InterceptsOnly = 4,
};

inline constexpr int kNumStructures = 5;

struct ModelSpec {
  Structure structure = Structure::Maximal;
  bool fixed_slope = true;  // true: condition effect estimated (H1), false: H0
};

// Fully crossed, balanced two-condition layout.
struct ExperimentDesign {
  int n_subjects = 0;
  int n_items = 0;

  ExperimentDesign(int subjects, int items);

  int n_obs() const { return n_subjects * n_items * 2; }
};

// Population parameters of the generating process. Defaults are the base
// scenario: intercept SDs 100, residual SD 300, correlations 0.6, slope SDs
// varied per experiment.
struct GeneratingParams {
  double beta0 = 2000.0;
  double beta1 = 25.0;
  double tau00 = 100.0;   // subject intercept SD
  double tau11 = 0.0;     // subject slope SD
  double rho_s = 0.6;
  double omega00 = 100.0; // item intercept SD
  double omega11 = 0.0;   // item slope SD
  double rho_i = 0.6;
  double sigma = 300.0;   // residual SD (> 0 for fitting; 0 allowed in simulation)

  void validate(bool allow_zero_sigma = true) const;
};

// One fully crossed sample. Vectors are index-aligned per observation.
// Order is canonical when produced by the simulator (subject-major, then
// item, then condition), but consumers only rely on the triple invariant.
struct Dataset {
  VectorXd y;
  VectorXi subject_idx;
  VectorXi item_idx;
  VectorXd x;  // condition codes, each entry in {-0.5, +0.5}
  int n_subjects = 0;
  int n_items = 0;

  int n() const { return static_cast<int>(y.size()); }

  // Checks sizes, index ranges, codes, and that every (subject, item,
  // condition) triple appears exactly once. Throws std::invalid_argument.
  void validate() const;
};

// [Maximal, ZeroCorrelation, NoItemSlope, NoSubjectSlope, InterceptsOnly]
std::array<Structure, kNumStructures> enumerate_structures();

const std::string& structure_label(Structure s);
std::optional<Structure> structure_from_label(const std::string& label);

bool has_subject_slope(Structure s);
bool has_item_slope(Structure s);
bool has_correlations(Structure s);

// Free covariance parameters including the residual SD:
// Maximal 7, ZeroCorrelation 5, NoItemSlope/NoSubjectSlope 4, InterceptsOnly 3.
int variance_param_count(const ModelSpec& spec);

// variance_param_count plus the fixed effects (intercept, and the condition
// effect under H1).
int free_param_count(const ModelSpec& spec);

// Length of the relative-covariance parameter vector for the structure:
// 6 / 4 / 3 / 3 / 2.
int theta_dim(Structure s);

// True iff `inner`'s parameter set is a strict subset of `outer`'s.
// NoItemSlope and NoSubjectSlope are incomparable.
bool structure_nested_in(Structure inner, Structure outer);

// Nesting for full model specs (random structure and fixed part combined).
bool spec_nested_in(const ModelSpec& inner, const ModelSpec& outer);

// Complexity rank used for tie-breaking and monotonicity checks:
// InterceptsOnly 0, NoItemSlope/NoSubjectSlope 1, ZeroCorrelation 2, Maximal 3.
int complexity_rank(Structure s);

// Design matrices for one model spec. X is materialized; the random-effect
// part is kept as incidence descriptors (dense Z is only needed by the
// direct-deviance path and tests).
struct ModelMatrices {
  MatrixXd x;  // n x 1 (H0) or n x 2 (H1, columns [1, condition])
  VectorXi subject_idx;
  VectorXi item_idx;
  VectorXd cond;
  int n_subjects = 0;
  int n_items = 0;
  bool subject_slope = false;
  bool item_slope = false;

  int n() const { return static_cast<int>(cond.size()); }
  int z_cols() const {
    return (subject_slope ? 2 : 1) * n_subjects + (item_slope ? 2 : 1) * n_items;
  }

  // Column layout: subject blocks first, then item blocks; within a factor,
  // levels are consecutive with (intercept, slope) pairs when the slope is
  // present.
  MatrixXd dense_z() const;
};

ModelMatrices build_matrices(const Dataset& data, const ModelSpec& spec);

}  // namespace lmmsel
