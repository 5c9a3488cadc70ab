#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "usbl/dataset.hpp"

namespace usbl {

struct RtTrial {
  double rt_ms = 0.0;
  Condition condition = Condition::Congruent;
};

struct DScoreResult {
  double mean_incongruent = 0.0;
  double mean_congruent = 0.0;
  double pooled_sd = 0.0;
  double d = 0.0;
};

/// (M_I - M_C) / SD over all trials (sample SD, n - 1). With `clamp`, RTs are
/// first limited to [300, 10000] ms.
DScoreResult dscore(std::span<const RtTrial> trials, bool clamp = false);
int dscore_classify(double d, double threshold = 0.0);

/// Per-trial RT taken as the mean of the modality's segment.
std::vector<RtTrial> session_rt_trials(const Session& session, const std::string& modality);

/// Label y on congruent trials, 1 - y on incongruent ones.
std::vector<int> recode_labels(int y, std::span<const Condition> conditions);
/// Inverse of recode_labels at the label level.
std::vector<int> unrecode_labels(std::span<const int> recoded, std::span<const Condition> conditions);
/// P(positive): p on congruent trials, 1 - p on incongruent ones.
std::vector<double> unrecode_predictions(std::span<const double> p_congruent,
                                         std::span<const Condition> conditions);

enum class WindowKind { Short, Long };

struct WindowSet {
  WindowKind kind = WindowKind::Short;
  std::vector<std::pair<double, double>> windows;  // seconds, [start, end)
};

WindowSet window_set(WindowKind kind);

/// Channel-major per-window means. Windows are clipped to the segment; a
/// window with no sample inside raises WindowOutOfRange.
Eigen::VectorXd window_features(const Segment& segment, const WindowSet& windows,
                                const ModalityShape& shape);

struct ShrunkCovariance {
  Eigen::MatrixXd cov;
  double shrinkage = 0.0;
};

/// Ledoit-Wolf shrinkage toward mu I of the (re-centered) rows of `samples`.
ShrunkCovariance ledoit_wolf(const Eigen::MatrixXd& samples);

struct LinearScorer {
  Eigen::VectorXd weights;
  double bias = 0.0;

  double score(const Eigen::VectorXd& x) const { return weights.dot(x) + bias; }
};

struct SLDAModel : LinearScorer {
  double shrinkage = 0.0;
};

/// `forced_shrinkage` < 0 uses the Ledoit-Wolf intensity.
SLDAModel fit_slda(const Eigen::MatrixXd& features, std::span<const int> labels,
                   double forced_shrinkage = -1.0);
double predict_slda(const SLDAModel& model, const Eigen::VectorXd& x);

struct RidgeLRModel : LinearScorer {
  double c = 1.0;  // inverse regularization strength
  std::vector<double> grid;
  std::vector<double> nested_loglik;  // per grid value
  double nested_auc = 0.5;            // pooled held-out AUC at the chosen value
};

std::vector<double> default_ridge_grid();

/// Minimizes 0.5 |w|^2 + C sum_i logloss_i (bias unpenalized) by damped Newton.
LinearScorer solve_ridge_logistic(const Eigen::MatrixXd& x, std::span<const int> y, double c,
                                  const LinearScorer* warm_start = nullptr);

/// Rows are grouped (e.g. trials of one session) so nested folds hold out
/// whole groups; `group_labels` drives stratification. Empty `groups` makes
/// every row its own group labelled by y.
RidgeLRModel fit_ridge_lr(const Eigen::MatrixXd& features, std::span<const int> labels,
                          std::span<const int> groups, std::span<const int> group_labels,
                          std::span<const double> grid, int nested_folds, std::uint64_t seed);

enum class BaselineKind { Slda, RidgeLR };
enum class BaselineMode { Recoded, Direct };

struct BaselineConfig {
  BaselineKind kind = BaselineKind::Slda;
  BaselineMode mode = BaselineMode::Recoded;
  std::vector<std::string> modalities{"eeg"};
  // Window set for modalities other than "eeg" (EEG always uses Short).
  WindowKind non_eeg_windows = WindowKind::Short;
  std::vector<double> ridge_grid = default_ridge_grid();
  int nested_folds = 5;
  double logit_clamp = 15.0;
};

/// Per-trial feature rows for one session.
Eigen::MatrixXd trial_features(const Session& session, const Dataset& schema,
                               const BaselineConfig& cfg);

/// Averages clamped positive-class logits over trials. `trial_scores` are
/// congruency logits in Recoded mode and positive-class logits in Direct mode.
double aggregate_session_logit(std::span<const double> trial_scores,
                               std::span<const Condition> conditions, BaselineMode mode,
                               double clamp);

struct BaselineFit {
  BaselineConfig config;
  LinearScorer scorer;
  double shrinkage = 0.0;
  double ridge_c = 0.0;
};

BaselineFit fit_baseline(const Dataset& train, const BaselineConfig& cfg, std::uint64_t seed);
double baseline_session_logit(const BaselineFit& fit, const Dataset& schema, const Session& session);

/// Fits on `train` and returns P(positive) for each session in `test`.
std::vector<double> run_baseline(const Dataset& train, const Dataset& test,
                                 const BaselineConfig& cfg, std::uint64_t seed);

}  // namespace usbl
