#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "usbl/dataset.hpp"
#include "usbl/infer.hpp"
#include "usbl/leadfield.hpp"
#include "usbl/model.hpp"

namespace usbl {

/// Preprocessed lead field plus the per-region Gram matrices the source
/// prior needs; prepared once and shared across folds.
struct SourceModel {
  LeadField leadfield;
  std::vector<Eigen::MatrixXd> grams;
};

SourceModel prepare_source_model(const LeadField& raw, double kernel_multiplier = 2.0);

using StandardizerSet = std::map<std::string, Standardizer>;

StandardizerSet fit_standardizers(const Dataset& train, const std::vector<std::string>& modalities);
/// Copy of `ds` with every modality in `set` standardized.
Dataset standardize(const Dataset& ds, const StandardizerSet& set);
Session standardize(const Session& s, const StandardizerSet& set);

struct FitOptions {
  ModelConfig model;
  OptimizerSchedule schedule;
  bool laplace = false;
};

struct FittedModel {
  ModelConfig config;
  OptimizerSchedule schedule;
  std::vector<ModalityShape> shapes;  // in config order
  StandardizerSet standardizers;
  ModelContext context;
  Eigen::VectorXd params;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<double> trace;
  std::optional<Eigen::VectorXd> laplace_precision;
  // Confidence calibration; omega = 1 and no samples when uncalibrated.
  double omega = 1.0;
  std::vector<double> omega_samples;

  bool calibrated() const { return !omega_samples.empty(); }
};

/// Fits the stage-1 model on raw (unstandardized) labeled sessions.
/// `source` is required when the config holds an EEG source prior.
FittedModel fit_usbl(const Dataset& train, const SourceModel* source, const FitOptions& opts,
                     std::uint64_t seed);

/// Session logit z at omega = 1 for a raw session.
double model_session_logit(const FittedModel& m, const Session& raw);
/// logistic(omega * z).
double predict_probability(const FittedModel& m, const Session& raw);

void save_model(const FittedModel& m, const std::filesystem::path& dir);
FittedModel load_model(const std::filesystem::path& dir);

}  // namespace usbl
