#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmmsel/design.hpp"
#include "lmmsel/fitter.hpp"
#include "lmmsel/harness.hpp"
#include "lmmsel/inference.hpp"
#include "lmmsel/selection.hpp"
#include "lmmsel/simulate.hpp"

namespace {

using nlohmann::json;

struct Options {
  std::uint64_t seed = 42;
  int iters = 2000;
  int steps = 4000;
  std::string preset = "large";
  std::string criterion = "lrt";
  double alpha_lrt = 0.2;
  bool criterion_paper_rounding = false;
  bool paper_scale = false;
  std::string out = ".";
  int threads = 1;
  std::string config_path;

  // simulate
  double slope_sd = 0.0;
  double beta1 = 25.0;
  std::uint64_t stream = 0;
  std::string output_path;

  // fit / select
  std::string input_path;
  std::string structure = "maximal";
  bool h0 = false;

  // scan
  double bin_width = 10.0;
  double sd_max = 120.0;
};

// File values fill in whatever the command line left untouched.
void apply_config_file(CLI::App& app, Options& opt) {
  if (opt.config_path.empty()) return;
  std::ifstream is(opt.config_path);
  if (!is) throw std::runtime_error("cannot open config file '" + opt.config_path + "'");
  json j = json::parse(is);

  auto untouched = [&](const char* flag) {
    const CLI::Option* o = app.get_option(flag);
    return o->count() == 0;
  };
  if (j.contains("seed") && untouched("--seed")) opt.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("iters") && untouched("--iters")) opt.iters = j["iters"].get<int>();
  if (j.contains("steps") && untouched("--steps")) opt.steps = j["steps"].get<int>();
  if (j.contains("preset") && untouched("--preset")) opt.preset = j["preset"].get<std::string>();
  if (j.contains("criterion") && untouched("--criterion"))
    opt.criterion = j["criterion"].get<std::string>();
  if (j.contains("alpha_lrt") && untouched("--alpha-lrt"))
    opt.alpha_lrt = j["alpha_lrt"].get<double>();
  if (j.contains("criterion_paper_rounding") && untouched("--criterion-paper-rounding"))
    opt.criterion_paper_rounding = j["criterion_paper_rounding"].get<bool>();
  if (j.contains("paper_scale") && untouched("--paper-scale"))
    opt.paper_scale = j["paper_scale"].get<bool>();
  if (j.contains("out") && untouched("--out")) opt.out = j["out"].get<std::string>();
  if (j.contains("threads") && untouched("--threads")) opt.threads = j["threads"].get<int>();
}

json fit_to_json(const lmmsel::FitResult& fit) {
  json j;
  j["structure"] = lmmsel::structure_label(fit.spec.structure);
  j["fixed_slope"] = fit.spec.fixed_slope;
  j["beta"] = std::vector<double>(fit.beta.data(), fit.beta.data() + fit.beta.size());
  j["covariance"] = {{"subject_intercept_sd", fit.cov.subject_intercept_sd},
                     {"subject_slope_sd", fit.cov.subject_slope_sd},
                     {"subject_corr", fit.cov.subject_corr},
                     {"item_intercept_sd", fit.cov.item_intercept_sd},
                     {"item_slope_sd", fit.cov.item_slope_sd},
                     {"item_corr", fit.cov.item_corr},
                     {"residual_sd", fit.cov.residual_sd}};
  j["theta"] = std::vector<double>(fit.theta.data(), fit.theta.data() + fit.theta.size());
  j["deviance"] = fit.deviance;
  j["converged"] = fit.converged;
  j["singular"] = fit.singular;
  j["n_free_params"] = fit.n_free_params;
  if (fit.converged) j["aic"] = lmmsel::aic(fit);
  return j;
}

int run(Options& opt, const std::string& command) {
  const lmmsel::ExperimentDesign design = lmmsel::preset_design(opt.preset);

  lmmsel::HarnessConfig hc;
  hc.selection.alpha_lrt = opt.alpha_lrt;
  hc.selection.criterion = opt.criterion == "aic"
                               ? lmmsel::SelectionCriterion::Aic
                               : lmmsel::SelectionCriterion::LrtBackward;
  hc.criterion_threshold =
      opt.criterion_paper_rounding ? 3.85 : lmmsel::chisq1_quantile(0.05);
  hc.threads = opt.threads;

  std::filesystem::create_directories(opt.out);

  if (command == "simulate") {
    lmmsel::GeneratingParams params;
    params.beta1 = opt.beta1;
    params.tau11 = params.omega11 = opt.slope_sd;
    const lmmsel::Dataset data =
        lmmsel::simulate_dataset(design, params, {opt.seed, opt.stream});
    const std::string path =
        opt.output_path.empty() ? opt.out + "/dataset.csv" : opt.output_path;
    lmmsel::write_dataset_csv(path, data);
    std::cout << "wrote " << path << " (" << data.n() << " rows)\n";
    return 0;
  }

  if (command == "fit") {
    const lmmsel::Dataset data = lmmsel::read_dataset_csv(opt.input_path);
    const auto s = lmmsel::structure_from_label(opt.structure);
    if (!s) throw std::runtime_error("unknown structure '" + opt.structure + "'");
    const lmmsel::FitResult fit = lmmsel::fit_ml(data, {*s, !opt.h0});
    std::cout << fit_to_json(fit).dump(2) << "\n";
    return fit.converged ? 0 : 2;
  }

  if (command == "select") {
    const lmmsel::Dataset data = lmmsel::read_dataset_csv(opt.input_path);
    const lmmsel::FitContext ctx(data);
    lmmsel::StructureFits fits_h0, fits_h1;
    for (lmmsel::Structure s : lmmsel::enumerate_structures()) {
      const int k = static_cast<int>(s);
      fits_h0[k] = lmmsel::fit_ml(ctx, {s, false});
      fits_h1[k] = lmmsel::fit_ml(ctx, {s, true});
    }
    const lmmsel::SelectionOutcome outcome = lmmsel::run_selection(
        fits_h0, fits_h1, hc.selection, hc.criterion_threshold);

    json j;
    j["criterion"] = opt.criterion;
    j["chosen_structure"] = lmmsel::structure_label(outcome.chosen_structure);
    j["fixed_effect_significant"] = outcome.fixed_effect_significant;
    json steps = json::array();
    for (const lmmsel::SelectionStep& st : outcome.trace) {
      steps.push_back({{"comparison", st.comparison},
                       {"stat", st.statistic},
                       {"df", st.df},
                       {"p", st.p_value},
                       {"decision", st.decision}});
    }
    j["trace"] = steps;
    std::cout << j.dump(2) << "\n";
    return 0;
  }

  if (command == "worst-case") {
    const int n_iter = opt.paper_scale && opt.iters == 2000 ? 10000 : opt.iters;
    lmmsel::GeneratingParams params;  // slope SDs zero by default
    const lmmsel::WorstCaseResult res =
        lmmsel::run_worst_case(design, params, n_iter, opt.seed, hc);
    const std::string csv = lmmsel::worst_case_csv(res);
    const std::string path = opt.out + "/worst_case.csv";
    lmmsel::emit_csv(csv, path);
    std::cout << csv;
    std::cout << "wrote " << path << "\n";
    return 0;
  }

  if (command == "scan") {
    const int n_steps = opt.paper_scale && opt.steps == 4000 ? 20000 : opt.steps;
    lmmsel::GeneratingParams params;
    const std::vector<lmmsel::ScanRecord> records =
        lmmsel::run_scan(design, params, n_steps, opt.sd_max, opt.seed, hc);
    const std::string path = opt.out + "/scan.csv";
    lmmsel::emit_csv(lmmsel::scan_csv(records), path);

    const bool use_aic = opt.criterion == "aic";
    const std::string crit_name = use_aic ? "selected-AIC" : "selected-LRT";
    auto h0_max = [](const lmmsel::ScanRecord& r) { return r.h0_reject[0]; };
    auto h1_max = [](const lmmsel::ScanRecord& r) { return r.h1_reject[0]; };
    auto h0_sel = [use_aic](const lmmsel::ScanRecord& r) {
      return use_aic ? r.h0_reject_aic : r.h0_reject_lrt;
    };
    auto h1_sel = [use_aic](const lmmsel::ScanRecord& r) {
      return use_aic ? r.h1_reject_aic : r.h1_reject_lrt;
    };
    auto selected = [use_aic](const lmmsel::ScanRecord& r) {
      return use_aic ? r.selected_aic : r.selected_lrt;
    };

    const double bw = opt.bin_width, sm = opt.sd_max;
    lmmsel::emit_svg(
        {{"maximal", lmmsel::bin_smooth(records, bw, h0_max, sm)},
         {crit_name, lmmsel::bin_smooth(records, bw, h0_sel, sm)}},
        "false-positive rate vs random-slope SD", opt.out + "/scan_type1.svg", 0.05);
    lmmsel::emit_svg(
        {{"maximal", lmmsel::bin_smooth(records, bw, h1_max, sm)},
         {crit_name, lmmsel::bin_smooth(records, bw, h1_sel, sm)}},
        "detection rate vs random-slope SD", opt.out + "/scan_power.svg", 0.0);

    using lmmsel::Structure;
    auto sel_is = [&](Structure want) {
      return [selected, want](const lmmsel::ScanRecord& r) { return selected(r) == want; };
    };
    auto sel_reduced = [selected](const lmmsel::ScanRecord& r) {
      const Structure s = selected(r);
      return s == Structure::ZeroCorrelation || s == Structure::NoItemSlope ||
             s == Structure::NoSubjectSlope;
    };
    lmmsel::emit_svg(
        {{"maximal", lmmsel::bin_smooth(records, bw, sel_is(Structure::Maximal), sm)},
         {"reduced", lmmsel::bin_smooth(records, bw, sel_reduced, sm)},
         {"intercepts-only",
          lmmsel::bin_smooth(records, bw, sel_is(Structure::InterceptsOnly), sm)}},
        "selection rate vs random-slope SD", opt.out + "/scan_selection.svg", 0.0);

    std::cout << "wrote " << path << " and scan_{type1,power,selection}.svg in "
              << opt.out << "\n";
    return 0;
  }

  throw std::runtime_error("no subcommand given (try --help)");
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"Monte Carlo study of mixed-model structure selection"};
  app.require_subcommand(0, 1);

  app.add_option("--seed", opt.seed, "master seed for all random streams");
  app.add_option("--iters", opt.iters, "iterations per arm for worst-case runs");
  app.add_option("--steps", opt.steps, "grid points for scan runs");
  app.add_option("--preset", opt.preset, "design preset: large (50x20) or small (30x10)");
  app.add_option("--criterion", opt.criterion, "selection criterion: lrt or aic");
  app.add_option("--alpha-lrt", opt.alpha_lrt, "acceptance threshold of the backward LRT");
  app.add_flag("--criterion-paper-rounding", opt.criterion_paper_rounding,
               "use the rounded 3.85 detection cutoff instead of the exact quantile");
  app.add_flag("--paper-scale", opt.paper_scale,
               "full-size runs: 10000 iterations / 20000 scan steps");
  app.add_option("--out", opt.out, "output directory for artifacts");
  app.add_option("--threads", opt.threads, "worker threads");
  app.add_option("--config", opt.config_path,
                 "JSON config mirroring the flags; command line wins");

  CLI::App* c_sim = app.add_subcommand("simulate", "dump one simulated dataset as CSV");
  c_sim->add_option("--slope-sd", opt.slope_sd, "both random-slope SDs");
  c_sim->add_option("--beta1", opt.beta1, "condition effect in ms");
  c_sim->add_option("--stream", opt.stream, "stream id under the master seed");
  c_sim->add_option("--output", opt.output_path, "output file (default <out>/dataset.csv)");

  CLI::App* c_fit = app.add_subcommand("fit", "fit one structure to a dataset CSV");
  c_fit->add_option("--input", opt.input_path, "dataset CSV")->required();
  c_fit->add_option("--structure", opt.structure, "structure label");
  c_fit->add_flag("--h0", opt.h0, "fit without the condition effect");

  CLI::App* c_sel = app.add_subcommand("select", "run structure selection on a dataset CSV");
  c_sel->add_option("--input", opt.input_path, "dataset CSV")->required();

  CLI::App* c_wc = app.add_subcommand("worst-case", "zero-slope scenario rate table");

  CLI::App* c_scan = app.add_subcommand("scan", "sweep both random-slope SDs");
  c_scan->add_option("--bin-width", opt.bin_width, "summary bin width in SD units");
  c_scan->add_option("--sd-max", opt.sd_max, "upper end of the slope-SD grid");

  for (CLI::App* sub : {c_sim, c_fit, c_sel, c_wc, c_scan}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    apply_config_file(app, opt);
    std::string command;
    for (const CLI::App* sub : app.get_subcommands())
      command = sub->get_name();
    if (command.empty()) throw std::runtime_error("no subcommand given (try --help)");
    return run(opt, command);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
