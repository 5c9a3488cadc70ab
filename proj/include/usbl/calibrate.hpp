#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "usbl/dataset.hpp"
#include "usbl/infer.hpp"
#include "usbl/pipeline.hpp"

namespace usbl {

using LogitPredictor = std::function<double(const Session&)>;
/// Fits on the given labeled split and returns a session-logit predictor.
using FitProcedure = std::function<LogitPredictor(const Dataset& train, std::uint64_t seed)>;

struct CalibrationConfig {
  int nested_folds = 5;
  MCMCConfig mcmc;
  double omega_prior_scale = 10.0;
};

struct CalibrationResult {
  std::vector<LogitLabel> heldout;        // (z_p, y_p) pooled over nested folds
  std::vector<std::string> heldout_ids;   // participant of each pair
  OmegaPosterior omega;

  double omega_point() const { return omega.median(); }
};

/// Nested stratified CV over participants: every z_p comes from a fit that
/// never saw participant p. Then samples omega from the pooled pairs.
CalibrationResult calibrate_logits(const Dataset& train, const FitProcedure& fit,
                                   std::uint64_t seed, const CalibrationConfig& cfg = {});

/// Calibrated stage-1 model: nested calibration plus a final fit on all of
/// `train`, with omega set to the posterior median.
FittedModel calibrate_usbl(const Dataset& train, const SourceModel* source, const FitOptions& opts,
                           std::uint64_t seed, const CalibrationConfig& cfg = {},
                           CalibrationResult* details = nullptr);

}  // namespace usbl
