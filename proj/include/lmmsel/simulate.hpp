#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "lmmsel/design.hpp"

namespace lmmsel {

// Identifies one independent random stream. Every random number consumed for
// an iteration is a pure function of (master_seed, stream_id).
struct SeedSpec {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;
};

// SplitMix64 finalizer; bijective 64-bit scrambler.
std::uint64_t scramble64(std::uint64_t v);

// Key derivation for stream seeding: two scramble rounds over a
// golden-ratio-weighted combination, so that nearby stream ids map to
// unrelated engine seeds.
std::uint64_t stream_key(const SeedSpec& seed);

// Standard-normal generator: mt19937_64 engine plus the Marsaglia polar
// transform. Both pieces are fully specified, so a given key yields the same
// deviate sequence on every platform.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t key) : engine_(key) {}
  explicit NormalSampler(const SeedSpec& seed) : engine_(stream_key(seed)) {}

  // Uniform on [0, 1), 53-bit resolution.
  double uniform();

  // One N(0, 1) deviate.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Lower-triangular factor L with L L^T = [[sd0^2, rho sd0 sd1],
//                                         [rho sd0 sd1, sd1^2]].
// Throws std::domain_error for negative SDs or |rho| > 1.
Eigen::Matrix2d chol2x2(double sd0, double sd1, double rho);

struct RandomEffectsDraw {
  Eigen::MatrixX2d subject_effects;  // rows: subjects, cols: (intercept, slope)
  Eigen::MatrixX2d item_effects;
};

RandomEffectsDraw sample_random_effects(const ExperimentDesign& design,
                                        const GeneratingParams& params,
                                        const SeedSpec& seed);

// Draws one dataset: random effects first (subjects, then items), then one
// residual per observation in canonical row order (subject-major, then item,
// then condition).
Dataset simulate_dataset(const ExperimentDesign& design,
                         const GeneratingParams& params, const SeedSpec& seed);

// CSV with header "y,subject,item,x"; y and x use round-trip precision.
void write_dataset_csv(std::ostream& os, const Dataset& data);
void write_dataset_csv(const std::string& path, const Dataset& data);

Dataset read_dataset_csv(std::istream& is);
Dataset read_dataset_csv(const std::string& path);

}  // namespace lmmsel
