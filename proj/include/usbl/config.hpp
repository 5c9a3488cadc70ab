#pragma once

#include <initializer_list>
#include <json.hpp>
#include <string>

#include "usbl/calibrate.hpp"
#include "usbl/folds.hpp"
#include "usbl/infer.hpp"
#include "usbl/model.hpp"
#include "usbl/synth.hpp"

namespace usbl {

// JSON round-tripping of configuration structs. Parsing starts from the
// given base (defaults unless stated) and rejects unknown keys.

/// Throws Usage when `j` is not an object or holds a key outside `allowed`.
void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                  const std::string& where);

nlohmann::json to_json(const HyperpriorConfig& c);
HyperpriorConfig hyper_from_json(const nlohmann::json& j, HyperpriorConfig base = {});

/// Modalities accept either "name" strings (default prior) or
/// {"name": ..., "prior": ...} objects.
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
std::vector<ModalitySpec> modality_specs(const std::vector<std::string>& names);

nlohmann::json to_json(const OptimizerSchedule& c);
OptimizerSchedule schedule_from_json(const nlohmann::json& j, OptimizerSchedule base = {});

nlohmann::json to_json(const CVConfig& c);
CVConfig cv_config_from_json(const nlohmann::json& j, CVConfig base = {});

nlohmann::json to_json(const MCMCConfig& c);
MCMCConfig mcmc_from_json(const nlohmann::json& j, MCMCConfig base = {});

nlohmann::json to_json(const CalibrationConfig& c);
CalibrationConfig calibration_from_json(const nlohmann::json& j, CalibrationConfig base = {});

nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base = {});

}  // namespace usbl
