#include "lmmsel/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "lmmsel/fitter.hpp"
#include "lmmsel/inference.hpp"

namespace lmmsel {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// redraw attempts get fresh sub-streams far away from the base ids
SeedSpec attempt_seed(SeedSpec seed, int attempt) {
  seed.stream_id += static_cast<std::uint64_t>(attempt) << 32;
  return seed;
}
}  // namespace

ExperimentDesign preset_design(const std::string& name) {
  if (name == "large") return ExperimentDesign(50, 20);
  if (name == "small") return ExperimentDesign(30, 10);
  throw std::invalid_argument("preset_design: unknown preset '" + name + "'");
}

std::string cell_label(int cell) {
  if (cell >= 0 && cell < kNumStructures)
    return structure_label(static_cast<Structure>(cell));
  if (cell == kNumStructures) return "selected-LRT";
  if (cell == kNumStructures + 1) return "selected-AIC";
  throw std::invalid_argument("cell_label: index out of range");
}

IterationOutcome run_iteration(const ExperimentDesign& design,
                               const GeneratingParams& params, SeedSpec seed,
                               const HarnessConfig& config) {
  IterationOutcome out;
  for (int attempt = 0; attempt <= config.max_redraws; ++attempt) {
    const Dataset data = simulate_dataset(design, params, attempt_seed(seed, attempt));
    const FitContext ctx(data);

    StructureFits fits_h0, fits_h1;
    bool all_converged = true;
    for (Structure s : enumerate_structures()) {
      const int k = static_cast<int>(s);
      fits_h0[k] = fit_ml(ctx, {s, false});
      fits_h1[k] = fit_ml(ctx, {s, true});
      if (!fits_h0[k].converged || !fits_h1[k].converged) {
        all_converged = false;
        break;
      }
    }
    if (!all_converged) {
      ++out.redraws;
      continue;
    }

    for (int k = 0; k < kNumStructures; ++k)
      out.reject[k] = fixed_effect_reject(fits_h0[k], fits_h1[k],
                                          config.criterion_threshold);
    out.selected_lrt = select_backward_lrt(fits_h1, config.selection);
    out.selected_aic = select_aic(fits_h1);
    out.reject_selected_lrt = out.reject[static_cast<int>(out.selected_lrt)];
    out.reject_selected_aic = out.reject[static_cast<int>(out.selected_aic)];
    return out;
  }
  throw std::runtime_error(
      "run_iteration: " + std::to_string(config.max_redraws) +
      " consecutive redraws without convergence (master seed " +
      std::to_string(seed.master_seed) + ", stream " +
      std::to_string(seed.stream_id) + ")");
}

namespace {

std::array<bool, kNumCells> flag_row(const IterationOutcome& it) {
  std::array<bool, kNumCells> row{};
  for (int k = 0; k < kNumStructures; ++k) row[k] = it.reject[k];
  row[kNumStructures] = it.reject_selected_lrt;
  row[kNumStructures + 1] = it.reject_selected_aic;
  return row;
}

}  // namespace

WorstCaseResult run_worst_case(const ExperimentDesign& design,
                               const GeneratingParams& base_params, int n_iter,
                               std::uint64_t master_seed,
                               const HarnessConfig& config) {
  if (n_iter < 1) throw std::invalid_argument("run_worst_case: n_iter must be >= 1");

  GeneratingParams p_h0 = base_params;
  p_h0.beta1 = 0.0;
  const GeneratingParams& p_h1 = base_params;

  WorstCaseResult res;
  res.h0_flags.resize(n_iter);
  res.h1_flags.resize(n_iter);
  std::vector<int> redraws(n_iter, 0);

  parallel_for(n_iter, config.threads, [&](int i) {
    const std::uint64_t base = 2ull * static_cast<std::uint64_t>(i);
    const IterationOutcome a =
        run_iteration(design, p_h0, {master_seed, base}, config);
    const IterationOutcome b =
        run_iteration(design, p_h1, {master_seed, base + 1}, config);
    res.h0_flags[i] = flag_row(a);
    res.h1_flags[i] = flag_row(b);
    redraws[i] = a.redraws + b.redraws;
  });

  for (int i = 0; i < n_iter; ++i) res.redraws += redraws[i];
  res.cells.resize(kNumCells);
  for (int c = 0; c < kNumCells; ++c) {
    CellSummary& cell = res.cells[c];
    cell.label = cell_label(c);
    cell.n_iterations = n_iter;
    for (int i = 0; i < n_iter; ++i) {
      cell.rejections_h0 += res.h0_flags[i][c];
      cell.rejections_h1 += res.h1_flags[i][c];
    }
    cell.type1 = static_cast<double>(cell.rejections_h0) / n_iter;
    cell.power = static_cast<double>(cell.rejections_h1) / n_iter;
    std::tie(cell.type1_lo, cell.type1_hi) = wilson_ci(cell.rejections_h0, n_iter);
    std::tie(cell.power_lo, cell.power_hi) = wilson_ci(cell.rejections_h1, n_iter);
    cell.redraw_count = res.redraws;
  }
  return res;
}

std::vector<ScanRecord> run_scan(const ExperimentDesign& design,
                                 const GeneratingParams& base_params,
                                 int n_steps, double sd_max,
                                 std::uint64_t master_seed,
                                 const HarnessConfig& config) {
  if (n_steps < 2) throw std::invalid_argument("run_scan: n_steps must be >= 2");
  if (!(sd_max > 0.0)) throw std::invalid_argument("run_scan: sd_max must be positive");

  std::vector<ScanRecord> records(n_steps);
  parallel_for(n_steps, config.threads, [&](int k) {
    const double sd = sd_max * k / (n_steps - 1);
    GeneratingParams p_h1 = base_params;
    p_h1.tau11 = p_h1.omega11 = sd;
    GeneratingParams p_h0 = p_h1;
    p_h0.beta1 = 0.0;

    const std::uint64_t base = 2ull * static_cast<std::uint64_t>(k);
    const IterationOutcome a =
        run_iteration(design, p_h0, {master_seed, base}, config);
    const IterationOutcome b =
        run_iteration(design, p_h1, {master_seed, base + 1}, config);

    ScanRecord& rec = records[k];
    rec.step = k;
    rec.slope_sd = sd;
    rec.h0_reject = a.reject;
    rec.h1_reject = b.reject;
    rec.h0_reject_lrt = a.reject_selected_lrt;
    rec.h1_reject_lrt = b.reject_selected_lrt;
    rec.h0_reject_aic = a.reject_selected_aic;
    rec.h1_reject_aic = b.reject_selected_aic;
    rec.selected_lrt = b.selected_lrt;
    rec.selected_aic = b.selected_aic;
    rec.master_seed = master_seed;
    rec.redraws = a.redraws + b.redraws;
  });
  return records;
}

ScanCurve bin_smooth(const std::vector<ScanRecord>& records, double bin_width,
                     const std::function<bool(const ScanRecord&)>& field,
                     double sd_max, double level) {
  if (!(bin_width > 0.0)) throw std::invalid_argument("bin_smooth: bin_width must be positive");
  const double ratio = sd_max / bin_width;
  const int n_bins = static_cast<int>(std::lround(ratio));
  if (n_bins < 1 || std::abs(n_bins * bin_width - sd_max) > 1e-9)
    throw std::invalid_argument("bin_smooth: bin_width must divide the scan range evenly");

  std::vector<int> hits(n_bins, 0), totals(n_bins, 0);
  for (const ScanRecord& rec : records) {
    if (rec.slope_sd < -1e-9 || rec.slope_sd > sd_max + 1e-9)
      throw std::invalid_argument("bin_smooth: record outside the scan range");
    int b = static_cast<int>(rec.slope_sd / bin_width);
    b = std::clamp(b, 0, n_bins - 1);  // top edge belongs to the last bin
    ++totals[b];
    if (field(rec)) ++hits[b];
  }

  ScanCurve curve;
  for (int b = 0; b < n_bins; ++b) {
    curve.bin_centers.push_back((b + 0.5) * bin_width);
    curve.n_per_bin.push_back(totals[b]);
    if (totals[b] == 0) {
      curve.rate.push_back(kNaN);
      curve.ci_lo.push_back(kNaN);
      curve.ci_hi.push_back(kNaN);
    } else {
      curve.rate.push_back(static_cast<double>(hits[b]) / totals[b]);
      const auto [lo, hi] = wilson_ci(hits[b], totals[b], level);
      curve.ci_lo.push_back(lo);
      curve.ci_hi.push_back(hi);
    }
  }
  return curve;
}

// ---- artifacts ----

std::string worst_case_csv(const WorstCaseResult& result) {
  std::string csv =
      "label,n_iter,type1,type1_lo,type1_hi,power,power_lo,power_hi,redraws\n";
  char buf[256];
  for (const CellSummary& c : result.cells) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%ld\n",
                  c.label.c_str(), c.n_iterations, c.type1, c.type1_lo,
                  c.type1_hi, c.power, c.power_lo, c.power_hi, c.redraw_count);
    csv += buf;
  }
  return csv;
}

std::string scan_csv(const std::vector<ScanRecord>& records) {
  std::string csv = "step,slope_sd,structure_or_criterion,h0_reject,h1_reject,selected\n";
  char buf[192];
  for (const ScanRecord& r : records) {
    for (int k = 0; k < kNumStructures; ++k) {
      std::snprintf(buf, sizeof(buf), "%d,%.6f,%s,%d,%d,\n", r.step, r.slope_sd,
                    structure_label(static_cast<Structure>(k)).c_str(),
                    r.h0_reject[k] ? 1 : 0, r.h1_reject[k] ? 1 : 0);
      csv += buf;
    }
    std::snprintf(buf, sizeof(buf), "%d,%.6f,selected-LRT,%d,%d,%s\n", r.step,
                  r.slope_sd, r.h0_reject_lrt ? 1 : 0, r.h1_reject_lrt ? 1 : 0,
                  structure_label(r.selected_lrt).c_str());
    csv += buf;
    std::snprintf(buf, sizeof(buf), "%d,%.6f,selected-AIC,%d,%d,%s\n", r.step,
                  r.slope_sd, r.h0_reject_aic ? 1 : 0, r.h1_reject_aic ? 1 : 0,
                  structure_label(r.selected_aic).c_str());
    csv += buf;
  }
  return csv;
}

void emit_csv(const std::string& csv, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("emit_csv: cannot open '" + path + "' for writing");
  os << csv;
  os.flush();
  if (!os) throw std::runtime_error("emit_csv: write failed for '" + path + "'");
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"};

struct Frame {
  double x0, x1, y0, y1;        // data ranges
  double left = 64, right = 616, top = 36, bottom = 356;  // pixel box

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (right - left); }
  double py(double y) const { return bottom - (y - y0) / (y1 - y0) * (bottom - top); }
};

void append(std::string& out, const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  out += buf;
}

}  // namespace

void emit_svg(const std::vector<std::pair<std::string, ScanCurve>>& curves,
              const std::string& title, const std::string& path,
              double reference_level) {
  double x_max = 1.0, y_max = reference_level * 1.5;
  for (const auto& [name, c] : curves) {
    for (size_t i = 0; i < c.bin_centers.size(); ++i) {
      const double half =
          c.bin_centers.size() > 1 ? 0.5 * (c.bin_centers[1] - c.bin_centers[0]) : 0.5;
      x_max = std::max(x_max, c.bin_centers[i] + half);
      if (std::isfinite(c.ci_hi[i])) y_max = std::max(y_max, c.ci_hi[i]);
    }
  }
  y_max = std::min(1.0, std::ceil(y_max * 10.0 + 0.5) / 10.0);

  Frame f{0.0, x_max, 0.0, y_max};
  std::string svg;
  append(svg, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
              "viewBox=\"0 0 640 400\">\n");
  append(svg, "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n");
  append(svg, "<text x=\"320\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
              "font-size=\"14\">%s</text>\n", title.c_str());

  // axes and ticks
  append(svg, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
         f.left, f.bottom, f.right, f.bottom);
  append(svg, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
         f.left, f.bottom, f.left, f.top);
  const double x_tick = x_max > 60.0 ? 20.0 : (x_max > 6.0 ? 2.0 : 0.2);
  for (double x = 0.0; x <= x_max + 1e-9; x += x_tick) {
    append(svg, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
           f.px(x), f.bottom, f.px(x), f.bottom + 5.0);
    append(svg, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" "
                "font-family=\"sans-serif\" font-size=\"11\">%g</text>\n",
           f.px(x), f.bottom + 18.0, x);
  }
  for (double y = 0.0; y <= y_max + 1e-9; y += y_max / 5.0) {
    append(svg, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
           f.left - 5.0, f.py(y), f.left, f.py(y));
    append(svg, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\" "
                "font-family=\"sans-serif\" font-size=\"11\">%.2f</text>\n",
           f.left - 8.0, f.py(y) + 4.0, y);
  }
  append(svg, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" "
              "font-family=\"sans-serif\" font-size=\"12\">random-slope SD</text>\n",
         0.5 * (f.left + f.right), f.bottom + 36.0);

  // nominal-level reference
  if (reference_level > 0.0 && reference_level <= y_max) {
    append(svg, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                "stroke=\"#555555\" stroke-dasharray=\"6 4\"/>\n",
           f.left, f.py(reference_level), f.right, f.py(reference_level));
  }

  int color = 0;
  double legend_y = f.top + 10.0;
  for (const auto& [name, c] : curves) {
    const char* col = kPalette[color % 5];
    ++color;

    // confidence ribbon, split at empty bins
    size_t i = 0;
    const size_t nb = c.bin_centers.size();
    while (i < nb) {
      while (i < nb && !std::isfinite(c.rate[i])) ++i;
      size_t j = i;
      while (j < nb && std::isfinite(c.rate[j])) ++j;
      if (j > i + 1) {
        std::string pts;
        for (size_t k = i; k < j; ++k)
          append(pts, "%.1f,%.1f ", f.px(c.bin_centers[k]), f.py(c.ci_hi[k]));
        for (size_t k = j; k-- > i;)
          append(pts, "%.1f,%.1f ", f.px(c.bin_centers[k]), f.py(c.ci_lo[k]));
        append(svg, "<polygon points=\"%s\" fill=\"%s\" fill-opacity=\"0.15\" "
                    "stroke=\"none\"/>\n", pts.c_str(), col);
      }
      i = j;
    }

    i = 0;
    while (i < nb) {
      while (i < nb && !std::isfinite(c.rate[i])) ++i;
      size_t j = i;
      while (j < nb && std::isfinite(c.rate[j])) ++j;
      if (j > i) {
        std::string pts;
        for (size_t k = i; k < j; ++k)
          append(pts, "%.1f,%.1f ", f.px(c.bin_centers[k]), f.py(c.rate[k]));
        append(svg, "<polyline points=\"%s\" fill=\"none\" stroke=\"%s\" "
                    "stroke-width=\"1.8\"/>\n", pts.c_str(), col);
      }
      i = j;
    }

    append(svg, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                "stroke=\"%s\" stroke-width=\"1.8\"/>\n",
           f.right - 150.0, legend_y, f.right - 126.0, legend_y, col);
    append(svg, "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" "
                "font-size=\"11\">%s</text>\n",
           f.right - 120.0, legend_y + 4.0, name.c_str());
    legend_y += 16.0;
  }

  append(svg, "</svg>\n");

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("emit_svg: cannot open '" + path + "' for writing");
  os << svg;
  os.flush();
  if (!os) throw std::runtime_error("emit_svg: write failed for '" + path + "'");
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }

  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;

  auto worker = [&] {
    while (true) {
      {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (first_error) return;
      }
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace lmmsel
