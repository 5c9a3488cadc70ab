#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "usbl/calibrate.hpp"
#include "usbl/dataset.hpp"
#include "usbl/experiment.hpp"
#include "usbl/folds.hpp"
#include "usbl/pipeline.hpp"

namespace usbl {

/// Settings for `fit` / `calibrate`.
struct FitRunConfig {
  std::vector<std::string> modalities;  // empty: every dataset modality except "rt"
  FitOptions fit;
  std::uint64_t seed = 0;
  bool calibrate = false;
  CalibrationConfig calibration;
};

FitRunConfig fit_run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FitRunConfig& c);

/// Settings for `eval`. Every method runs on every modality set, except
/// dscore which always uses its own modality.
struct EvalRunConfig {
  std::vector<std::string> methods{"usbl"};
  std::vector<std::vector<std::string>> modality_sets{{"eeg"}};
  CVConfig cv;
  FitOptions fit;
  bool calibrate = false;
  CalibrationConfig calibration;
  BaselineConfig baseline;
  std::string dscore_modality = "rt";
  bool dscore_clamp = false;
  double fdr_q = 0.05;
  double alpha = 0.05;
  int jobs = 1;  // not part of the echoed configuration
};

EvalRunConfig eval_run_config_from_json(const nlohmann::json& j);
/// Echo without `jobs`, so results do not depend on the thread count.
nlohmann::json to_json(const EvalRunConfig& c);

/// Resolves default modalities and priors against the dataset.
void resolve_modalities(FitRunConfig& c, const Dataset& ds);

/// Builds the method list of an evaluation run.
std::vector<MethodSpec> build_methods(const EvalRunConfig& c, const SourceModel* source);

bool needs_source_model(const ModelConfig& c);
bool needs_source_model(const EvalRunConfig& c);

}  // namespace usbl
