#include "lmmsel/selection.hpp"

#include <algorithm>
#include <cstdio>

#include "lmmsel/inference.hpp"

namespace lmmsel {

namespace {

const FitResult& fit_of(const StructureFits& fits, Structure s) {
  return fits[static_cast<int>(s)];
}

void require_converged(const StructureFits& fits) {
  for (const FitResult& f : fits) {
    if (!f.converged)
      throw std::invalid_argument("selection: unconverged fit for structure " +
                                  structure_label(f.spec.structure));
  }
}

std::string versus(Structure alt, Structure null_s) {
  return structure_label(alt) + "-vs-" + structure_label(null_s);
}

void push_step(std::vector<SelectionStep>* trace, std::string comparison,
               const LrtResult& r, std::string decision) {
  if (!trace) return;
  trace->push_back({std::move(comparison), r.statistic, r.df, r.p_value,
                    std::move(decision)});
}

}  // namespace

Structure select_backward_lrt(const StructureFits& fits_h1,
                              const SelectionConfig& config,
                              std::vector<SelectionStep>* trace) {
  require_converged(fits_h1);
  const double alpha = config.alpha_lrt;
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("select_backward_lrt: alpha_lrt outside (0,1)");

  using S = Structure;
  const LrtResult drop_corr =
      lrt(fit_of(fits_h1, S::ZeroCorrelation), fit_of(fits_h1, S::Maximal));
  if (!(drop_corr.p_value > alpha)) {
    push_step(trace, versus(S::Maximal, S::ZeroCorrelation), drop_corr, "keep");
    return S::Maximal;
  }
  push_step(trace, versus(S::Maximal, S::ZeroCorrelation), drop_corr, "reduce");

  const LrtResult drop_item =
      lrt(fit_of(fits_h1, S::NoItemSlope), fit_of(fits_h1, S::ZeroCorrelation));
  const LrtResult drop_subj =
      lrt(fit_of(fits_h1, S::NoSubjectSlope), fit_of(fits_h1, S::ZeroCorrelation));
  const bool item_ok = drop_item.p_value > alpha;
  const bool subj_ok = drop_subj.p_value > alpha;

  S survivor;
  if (!item_ok && !subj_ok) {
    push_step(trace, versus(S::ZeroCorrelation, S::NoItemSlope), drop_item, "keep");
    push_step(trace, versus(S::ZeroCorrelation, S::NoSubjectSlope), drop_subj, "keep");
    return S::ZeroCorrelation;
  }
  if (item_ok && subj_ok) {
    // both reductions acceptable: larger p wins, ties drop the item slope
    survivor = drop_item.p_value >= drop_subj.p_value ? S::NoItemSlope
                                                      : S::NoSubjectSlope;
  } else {
    survivor = item_ok ? S::NoItemSlope : S::NoSubjectSlope;
  }
  push_step(trace, versus(S::ZeroCorrelation, S::NoItemSlope), drop_item,
            survivor == S::NoItemSlope ? "reduce" : (item_ok ? "skip" : "keep"));
  push_step(trace, versus(S::ZeroCorrelation, S::NoSubjectSlope), drop_subj,
            survivor == S::NoSubjectSlope ? "reduce" : (subj_ok ? "skip" : "keep"));

  const LrtResult drop_last =
      lrt(fit_of(fits_h1, S::InterceptsOnly), fit_of(fits_h1, survivor));
  if (drop_last.p_value > alpha) {
    push_step(trace, versus(survivor, S::InterceptsOnly), drop_last, "reduce");
    return S::InterceptsOnly;
  }
  push_step(trace, versus(survivor, S::InterceptsOnly), drop_last, "keep");
  return survivor;
}

Structure select_aic(const StructureFits& fits_h1,
                     std::vector<SelectionStep>* trace) {
  require_converged(fits_h1);

  Structure best = Structure::Maximal;
  double best_aic = aic(fit_of(fits_h1, best));
  int best_params = fit_of(fits_h1, best).n_free_params;
  for (Structure s : enumerate_structures()) {
    if (s == Structure::Maximal) continue;
    const FitResult& f = fit_of(fits_h1, s);
    const double a = aic(f);
    if (a < best_aic || (a == best_aic && f.n_free_params < best_params)) {
      best = s;
      best_aic = a;
      best_params = f.n_free_params;
    }
  }
  if (trace) {
    for (Structure s : enumerate_structures()) {
      const FitResult& f = fit_of(fits_h1, s);
      trace->push_back({"aic-" + structure_label(s), aic(f), f.n_free_params,
                        1.0, s == best ? "choose" : "pass"});
    }
  }
  return best;
}

bool fixed_effect_reject(const FitResult& fit_h0, const FitResult& fit_h1,
                         double criterion_threshold) {
  if (fit_h0.spec.structure != fit_h1.spec.structure ||
      fit_h0.spec.fixed_slope || !fit_h1.spec.fixed_slope)
    throw std::invalid_argument("fixed_effect_reject: need H0/H1 fits of one structure");
  const double stat = std::max(0.0, fit_h0.deviance - fit_h1.deviance);
  return stat > criterion_threshold;
}

bool test_fixed_effect(const Dataset& data, Structure chosen,
                       double criterion_threshold) {
  FitContext ctx(data);
  const FitResult h0 = fit_ml(ctx, {chosen, false});
  const FitResult h1 = fit_ml(ctx, {chosen, true});
  if (!h0.converged || !h1.converged)
    throw NonconvergenceError("test_fixed_effect: fit did not converge for " +
                              structure_label(chosen));
  return fixed_effect_reject(h0, h1, criterion_threshold);
}

SelectionOutcome run_selection(const StructureFits& fits_h0,
                               const StructureFits& fits_h1,
                               const SelectionConfig& config,
                               double criterion_threshold) {
  SelectionOutcome out;
  out.chosen_structure =
      config.criterion == SelectionCriterion::LrtBackward
          ? select_backward_lrt(fits_h1, config, &out.trace)
          : select_aic(fits_h1, &out.trace);

  const FitResult& h0 = fits_h0[static_cast<int>(out.chosen_structure)];
  const FitResult& h1 = fits_h1[static_cast<int>(out.chosen_structure)];
  if (!h0.converged || !h1.converged)
    throw NonconvergenceError("run_selection: chosen-structure fit did not converge");
  const double stat = std::max(0.0, h0.deviance - h1.deviance);
  out.fixed_effect_significant = stat > criterion_threshold;
  out.trace.push_back({"fixed-effect-" + structure_label(out.chosen_structure),
                       stat, 1, chisq1_sf(stat),
                       out.fixed_effect_significant ? "reject" : "retain"});
  return out;
}

std::string selection_trace_csv(const SelectionOutcome& outcome) {
  std::string csv = "comparison,stat,df,p,decision\n";
  char buf[160];
  for (const SelectionStep& s : outcome.trace) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%d,%.6f,%s\n", s.comparison.c_str(),
                  s.statistic, s.df, s.p_value, s.decision.c_str());
    csv += buf;
  }
  return csv;
}

}  // namespace lmmsel
