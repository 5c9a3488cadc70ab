#include "usbl/calibrate.hpp"

#include <memory>

#include "usbl/error.hpp"
#include "usbl/folds.hpp"
#include "usbl/rng.hpp"

namespace usbl {

CalibrationResult calibrate_logits(const Dataset& train, const FitProcedure& fit,
                                   std::uint64_t seed, const CalibrationConfig& cfg) {
  const std::vector<int> labels = train.labels();
  int count[2] = {0, 0};
  for (int y : labels) ++count[y];
  if (static_cast<int>(labels.size()) < cfg.nested_folds || count[0] == 0 || count[1] == 0)
    throw Error(ErrorCode::StratificationFailure,
                "calibration needs >= " + std::to_string(cfg.nested_folds) +
                    " participants with both labels present");
  CVConfig cv;
  cv.k = cfg.nested_folds;
  cv.r = 1;
  cv.seed = derive_seed(seed, {0xCA1B});
  const FoldAssignment folds = make_folds(labels, cv);

  CalibrationResult out;
  for (const auto& f : folds.folds) {
    const Dataset inner = subset(train, f.train);
    bool seen[2] = {false, false};
    for (const auto& s : inner.sessions) seen[*s.label] = true;
    if (!seen[0] || !seen[1])
      throw Error(ErrorCode::StratificationFailure, "nested training split lacks a class");
    const LogitPredictor predict =
        fit(inner, derive_seed(seed, {0xF17, static_cast<std::uint64_t>(f.fold)}));
    for (int i : f.test) {
      const Session& s = train.sessions[i];
      out.heldout.push_back({predict(s), *s.label});
      out.heldout_ids.push_back(s.participant_id);
    }
  }
  MCMCConfig mc = cfg.mcmc;
  mc.seed = derive_seed(seed, {0x0E6A});
  out.omega = sample_omega(out.heldout, cfg.omega_prior_scale, mc);
  return out;
}

FittedModel calibrate_usbl(const Dataset& train, const SourceModel* source, const FitOptions& opts,
                           std::uint64_t seed, const CalibrationConfig& cfg,
                           CalibrationResult* details) {
  const FitProcedure procedure = [&](const Dataset& inner, std::uint64_t s) -> LogitPredictor {
    auto model = std::make_shared<FittedModel>(fit_usbl(inner, source, opts, s));
    return [model](const Session& session) { return model_session_logit(*model, session); };
  };
  CalibrationResult cal = calibrate_logits(train, procedure, seed, cfg);
  FittedModel final_model = fit_usbl(train, source, opts, derive_seed(seed, {0xF1A1}));
  final_model.omega = cal.omega_point();
  final_model.omega_samples = cal.omega.samples;
  if (details) *details = std::move(cal);
  return final_model;
}

}  // namespace usbl
