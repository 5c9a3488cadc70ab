#pragma once

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "usbl/baselines.hpp"
#include "usbl/calibrate.hpp"
#include "usbl/dataset.hpp"
#include "usbl/folds.hpp"
#include "usbl/metrics.hpp"
#include "usbl/pipeline.hpp"

namespace usbl {

/// One outer train/test unit. Test sessions carry no labels.
struct TrainTestSplit {
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
  std::uint64_t seed = 0;
  int repeat = 0;
  int fold = 0;
};

/// Returns P(positive) per test session, in order.
using MethodFn = std::function<std::vector<double>(const TrainTestSplit&)>;

struct MethodSpec {
  std::string name;
  std::vector<std::string> modalities;
  MethodFn run;
};

struct MethodOptions {
  FitOptions fit;  // model.modalities may pin priors by name
  bool calibrate = false;
  CalibrationConfig calibration;
  const SourceModel* source = nullptr;
  BaselineConfig baseline;  // kind, mode and modalities are set per method
  std::string rt_modality = "rt";
  bool dscore_clamp = false;
};

/// Known names: usbl, usbl-lr, slda (= slda-s), slda-l, slda-direct, l2lr,
/// l2lr-direct, dscore.
MethodSpec make_method(const std::string& name, const std::vector<std::string>& modalities,
                       const MethodOptions& opts);
std::vector<std::string> known_methods();

struct FoldRecord {
  int repeat = 0;
  int fold = 0;
  std::string method;
  std::string modalities;  // comma-joined
  int n_train = 0;
  int n_test = 0;
  bool ok = true;
  std::string error;
  std::optional<double> auc;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> brier;
  std::optional<double> cross_entropy;
  std::vector<std::string> test_ids;
  std::vector<int> test_labels;
  std::vector<double> probabilities;
};

struct Summary {
  std::string method;
  std::string modalities;
  int folds_total = 0;
  int folds_failed = 0;
  int folds_used = 0;  // folds with a defined AUC
  std::optional<double> auc_mean, auc_sd, ci_lower, ci_upper, t, p, p_bh;
  bool significant = false;
  bool zero_variance = false;
  std::optional<double> sensitivity_mean, sensitivity_sd, specificity_mean, specificity_sd;
  std::optional<double> pooled_sensitivity, pooled_specificity;
  std::optional<double> brier_mean, cross_entropy_mean;
  std::optional<double> mdes;
};

struct ResultsTable {
  CVConfig cv;
  double mean_train_size = 0.0;
  double mean_test_size = 0.0;
  double fdr_q = 0.05;
  std::vector<FoldRecord> records;
  std::vector<Summary> summaries;
  nlohmann::json config;  // resolved configuration echo
};

struct ExperimentOptions {
  int jobs = 1;
  double fdr_q = 0.05;
  double alpha = 0.05;
  nlohmann::json config = nlohmann::json::object();
};

/// Repeated stratified k-fold over participants. Units run on `jobs` threads;
/// results do not depend on the thread count.
ResultsTable run_experiment(const Dataset& ds, std::span<const MethodSpec> methods,
                            const CVConfig& cv, const ExperimentOptions& opts = {});

/// Recomputes summaries (corrected tests, BH across configurations).
void summarize(ResultsTable& table, double alpha = 0.05);

nlohmann::json results_to_json(const ResultsTable& table);
std::string records_csv(const ResultsTable& table);

enum class ReportFormat { Text, Csv };
ReportFormat parse_report_format(const std::string& name);
/// Renders the summaries of a results document without recomputation.
std::string render_report(const nlohmann::json& results, ReportFormat format);

struct RocPoint {
  double threshold;
  double sensitivity;
  double specificity;
};
std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const int> labels);

}  // namespace usbl
