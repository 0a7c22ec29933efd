#include "lmmsel/design.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace lmmsel {

ExperimentDesign::ExperimentDesign(int subjects, int items)
    : n_subjects(subjects), n_items(items) {
  if (subjects <= 0 || items <= 0) {
    throw std::invalid_argument("ExperimentDesign: subject and item counts must be positive");
  }
}

void GeneratingParams::validate(bool allow_zero_sigma) const {
  if (!(tau00 >= 0.0 && tau11 >= 0.0 && omega00 >= 0.0 && omega11 >= 0.0)) {
    throw std::domain_error("GeneratingParams: standard deviations must be non-negative");
  }
  if (std::abs(rho_s) > 1.0 || std::abs(rho_i) > 1.0) {
    throw std::domain_error("GeneratingParams: correlations must lie in [-1, 1]");
  }
  if (allow_zero_sigma ? !(sigma >= 0.0) : !(sigma > 0.0)) {
    throw std::domain_error("GeneratingParams: invalid residual SD");
  }
  // The implied 2x2 covariance blocks are PSD whenever the SD and
  // correlation bounds above hold, so no further check is needed.
}

void Dataset::validate() const {
  const int nn = n();
  if (subject_idx.size() != nn || item_idx.size() != nn || x.size() != nn) {
    throw std::invalid_argument("Dataset: vector lengths disagree");
  }
  if (n_subjects <= 0 || n_items <= 0) {
    throw std::invalid_argument("Dataset: level counts must be positive");
  }
  if (nn != n_subjects * n_items * 2) {
    throw std::invalid_argument("Dataset: size must equal n_subjects * n_items * 2");
  }
  std::vector<char> seen(static_cast<size_t>(nn), 0);
  for (int r = 0; r < nn; ++r) {
    const int s = subject_idx[r];
    const int i = item_idx[r];
    if (s < 0 || s >= n_subjects || i < 0 || i >= n_items) {
      throw std::invalid_argument("Dataset: index out of range");
    }
    int c;
    if (x[r] == kConditionLo) {
      c = 0;
    } else if (x[r] == kConditionHi) {
      c = 1;
    } else {
      throw std::invalid_argument("Dataset: condition codes must be -0.5 or +0.5");
    }
    const size_t slot = static_cast<size_t>((s * n_items + i) * 2 + c);
    if (seen[slot]) {
      throw std::invalid_argument("Dataset: duplicate (subject, item, condition) triple");
    }
    seen[slot] = 1;
  }
}

std::array<Structure, kNumStructures> enumerate_structures() {
  return {Structure::Maximal, Structure::ZeroCorrelation, Structure::NoItemSlope,
          Structure::NoSubjectSlope, Structure::InterceptsOnly};
}

const std::string& structure_label(Structure s) {
  static const std::array<std::string, kNumStructures> labels = {
      "maximal", "zero-correlation", "no-item-slope", "no-subject-slope",
      "intercepts-only"};
  return labels[static_cast<size_t>(s)];
}

std::optional<Structure> structure_from_label(const std::string& label) {
  for (Structure s : enumerate_structures()) {
    if (structure_label(s) == label) return s;
  }
  return std::nullopt;
}

bool has_subject_slope(Structure s) {
  return s == Structure::Maximal || s == Structure::ZeroCorrelation ||
         s == Structure::NoItemSlope;
}

bool has_item_slope(Structure s) {
  return s == Structure::Maximal || s == Structure::ZeroCorrelation ||
         s == Structure::NoSubjectSlope;
}

bool has_correlations(Structure s) { return s == Structure::Maximal; }

int variance_param_count(const ModelSpec& spec) {
  switch (spec.structure) {
    case Structure::Maximal: return 7;
    case Structure::ZeroCorrelation: return 5;
    case Structure::NoItemSlope: return 4;
    case Structure::NoSubjectSlope: return 4;
    case Structure::InterceptsOnly: return 3;
  }
  throw std::logic_error("variance_param_count: unknown structure");
}

int free_param_count(const ModelSpec& spec) {
  return variance_param_count(spec) + (spec.fixed_slope ? 2 : 1);
}

int theta_dim(Structure s) {
  switch (s) {
    case Structure::Maximal: return 6;
    case Structure::ZeroCorrelation: return 4;
    case Structure::NoItemSlope: return 3;
    case Structure::NoSubjectSlope: return 3;
    case Structure::InterceptsOnly: return 2;
  }
  throw std::logic_error("theta_dim: unknown structure");
}

int complexity_rank(Structure s) {
  switch (s) {
    case Structure::Maximal: return 3;
    case Structure::ZeroCorrelation: return 2;
    case Structure::NoItemSlope: return 1;
    case Structure::NoSubjectSlope: return 1;
    case Structure::InterceptsOnly: return 0;
  }
  throw std::logic_error("complexity_rank: unknown structure");
}

bool structure_nested_in(Structure inner, Structure outer) {
  if (inner == outer) return false;
  // Parameter-set inclusion: every term of `inner` present in `outer`.
  const bool slopes_ok =
      (!has_subject_slope(inner) || has_subject_slope(outer)) &&
      (!has_item_slope(inner) || has_item_slope(outer));
  const bool corr_ok = !has_correlations(inner) || has_correlations(outer);
  return slopes_ok && corr_ok;
}

bool spec_nested_in(const ModelSpec& inner, const ModelSpec& outer) {
  if (inner.fixed_slope && !outer.fixed_slope) return false;
  if (inner.structure == outer.structure) {
    return !inner.fixed_slope && outer.fixed_slope;
  }
  return structure_nested_in(inner.structure, outer.structure);
}

MatrixXd ModelMatrices::dense_z() const {
  const int rows = n();
  MatrixXd z = MatrixXd::Zero(rows, z_cols());
  const int subj_terms = subject_slope ? 2 : 1;
  const int item_terms = item_slope ? 2 : 1;
  const int item_offset = subj_terms * n_subjects;
  for (int r = 0; r < rows; ++r) {
    const int sc = subj_terms * subject_idx[r];
    z(r, sc) = 1.0;
    if (subject_slope) z(r, sc + 1) = cond[r];
    const int ic = item_offset + item_terms * item_idx[r];
    z(r, ic) = 1.0;
    if (item_slope) z(r, ic + 1) = cond[r];
  }
  return z;
}

ModelMatrices build_matrices(const Dataset& data, const ModelSpec& spec) {
  data.validate();
  ModelMatrices m;
  const int nn = data.n();
  m.x.resize(nn, spec.fixed_slope ? 2 : 1);
  m.x.col(0).setOnes();
  if (spec.fixed_slope) m.x.col(1) = data.x;
  m.subject_idx = data.subject_idx;
  m.item_idx = data.item_idx;
  m.cond = data.x;
  m.n_subjects = data.n_subjects;
  m.n_items = data.n_items;
  m.subject_slope = has_subject_slope(spec.structure);
  m.item_slope = has_item_slope(spec.structure);
  return m;
}

}  // namespace lmmsel
