#include "lmmsel/simulate.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace lmmsel {

std::uint64_t scramble64(std::uint64_t v) {
  v ^= v >> 30;
  v *= 0xBF58476D1CE4E5B9ULL;
  v ^= v >> 27;
  v *= 0x94D049BB133111EBULL;
  v ^= v >> 31;
  return v;
}

std::uint64_t stream_key(const SeedSpec& seed) {
  const std::uint64_t golden = 0x9E3779B97F4A7C15ULL;
  std::uint64_t k = seed.master_seed + golden * (seed.stream_id + 1);
  k = scramble64(k);
  k = scramble64(k ^ seed.master_seed);
  return k;
}

double NormalSampler::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double NormalSampler::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double v0, v1, s;
  do {
    v0 = 2.0 * uniform() - 1.0;
    v1 = 2.0 * uniform() - 1.0;
    s = v0 * v0 + v1 * v1;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v1 * f;
  has_spare_ = true;
  return v0 * f;
}

Eigen::Matrix2d chol2x2(double sd0, double sd1, double rho) {
  if (sd0 < 0.0 || sd1 < 0.0) {
    throw std::domain_error("chol2x2: standard deviations must be non-negative");
  }
  if (std::abs(rho) > 1.0) {
    throw std::domain_error("chol2x2: correlation must lie in [-1, 1]");
  }
  Eigen::Matrix2d l;
  l << sd0, 0.0, rho * sd1, sd1 * std::sqrt(1.0 - rho * rho);
  return l;
}

namespace {

Eigen::MatrixX2d draw_pairs(int levels, const Eigen::Matrix2d& l,
                            NormalSampler& rng) {
  Eigen::MatrixX2d out(levels, 2);
  for (int k = 0; k < levels; ++k) {
    const double z0 = rng.normal();
    const double z1 = rng.normal();
    out(k, 0) = l(0, 0) * z0;
    out(k, 1) = l(1, 0) * z0 + l(1, 1) * z1;
  }
  return out;
}

}  // namespace

RandomEffectsDraw sample_random_effects(const ExperimentDesign& design,
                                        const GeneratingParams& params,
                                        const SeedSpec& seed) {
  params.validate();
  NormalSampler rng(seed);
  RandomEffectsDraw draw;
  draw.subject_effects =
      draw_pairs(design.n_subjects, chol2x2(params.tau00, params.tau11, params.rho_s), rng);
  draw.item_effects =
      draw_pairs(design.n_items, chol2x2(params.omega00, params.omega11, params.rho_i), rng);
  return draw;
}

Dataset simulate_dataset(const ExperimentDesign& design,
                         const GeneratingParams& params, const SeedSpec& seed) {
  params.validate();
  NormalSampler rng(seed);
  const Eigen::MatrixX2d subj =
      draw_pairs(design.n_subjects, chol2x2(params.tau00, params.tau11, params.rho_s), rng);
  const Eigen::MatrixX2d item =
      draw_pairs(design.n_items, chol2x2(params.omega00, params.omega11, params.rho_i), rng);

  const int nn = design.n_obs();
  Dataset data;
  data.n_subjects = design.n_subjects;
  data.n_items = design.n_items;
  data.y.resize(nn);
  data.subject_idx.resize(nn);
  data.item_idx.resize(nn);
  data.x.resize(nn);

  int r = 0;
  for (int s = 0; s < design.n_subjects; ++s) {
    for (int i = 0; i < design.n_items; ++i) {
      for (int c = 0; c < 2; ++c, ++r) {
        const double xc = (c == 0) ? kConditionLo : kConditionHi;
        const double slope = params.beta1 + subj(s, 1) + item(i, 1);
        data.y[r] = params.beta0 + subj(s, 0) + item(i, 0) + slope * xc +
                    params.sigma * rng.normal();
        data.subject_idx[r] = s;
        data.item_idx[r] = i;
        data.x[r] = xc;
      }
    }
  }
  return data;
}

void write_dataset_csv(std::ostream& os, const Dataset& data) {
  os << "y,subject,item,x\n";
  char buf[64];
  for (int r = 0; r < data.n(); ++r) {
    std::snprintf(buf, sizeof(buf), "%.17g", data.y[r]);
    os << buf << ',' << data.subject_idx[r] << ',' << data.item_idx[r] << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", data.x[r]);
    os << buf << '\n';
  }
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_dataset_csv(os, data);
  if (!os.good()) throw std::runtime_error("write failed: " + path);
}

Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) {
    throw std::runtime_error("dataset CSV: missing header");
  }
  if (line != "y,subject,item,x" && line != "y,subject,item,x\r") {
    throw std::runtime_error("dataset CSV: unexpected header '" + line + "'");
  }
  std::vector<double> ys, xs;
  std::vector<int> subjects, items;
  int max_subject = -1, max_item = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    double yv, xv;
    int sv, iv;
    try {
      std::getline(row, field, ',');
      yv = std::stod(field);
      std::getline(row, field, ',');
      sv = std::stoi(field);
      std::getline(row, field, ',');
      iv = std::stoi(field);
      std::getline(row, field, ',');
      xv = std::stod(field);
    } catch (const std::exception&) {
      throw std::runtime_error("dataset CSV: malformed row '" + line + "'");
    }
    ys.push_back(yv);
    subjects.push_back(sv);
    items.push_back(iv);
    xs.push_back(xv);
    max_subject = std::max(max_subject, sv);
    max_item = std::max(max_item, iv);
  }
  Dataset data;
  const int nn = static_cast<int>(ys.size());
  data.n_subjects = max_subject + 1;
  data.n_items = max_item + 1;
  data.y = Eigen::Map<VectorXd>(ys.data(), nn);
  data.x = Eigen::Map<VectorXd>(xs.data(), nn);
  data.subject_idx = Eigen::Map<VectorXi>(subjects.data(), nn);
  data.item_idx = Eigen::Map<VectorXi>(items.data(), nn);
  data.validate();
  return data;
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  return read_dataset_csv(is);
}

}  // namespace lmmsel
