#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "usbl/dataset.hpp"
#include "usbl/leadfield.hpp"

namespace usbl {

/// "eeg" is generated through the lead field, "rt" as a 1x1 reaction time in
/// ms, anything else as a channel-sparse time-course pattern.
struct SynthModality {
  std::string name;
  int channels = 1;
  int samples = 1;
  double sample_rate = 1.0;
  int stimulus_index = 0;
};

struct SynthConfig {
  int n_participants = 24;
  double class_balance = 0.5;
  int blocks = 12;
  int trials_per_block = 10;
  std::vector<SynthModality> modalities{
      {"eeg", 8, 20, 32.0, 3}, {"gaze", 6, 20, 16.0, 3}, {"rt", 1, 1, 1.0, 0}};
  double effect_size = 0.05;
  double participant_variability = 0.3;
  double trial_noise_sd = 1.0;
  // SD of a per-session random pattern added to every trial.
  double within_session_correlation = 0.0;
  double ar1 = 0.0;
  int sparsity = 2;
  double rt_base_ms = 600.0;
  double rt_effect_ms = 20.0;
  double rt_noise_ms = 100.0;
  int leadfield_vertices = 200;
  int leadfield_regions = 8;
  // Permute participant labels after generation (null cohorts).
  bool shuffle_labels = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GroundTruth {
  std::map<std::string, Eigen::MatrixXd> patterns;  // true contrast per modality
  std::map<std::string, Eigen::MatrixXd> weights;   // decoding weights used by the oracle
  std::map<std::string, std::vector<int>> active;   // active vertices (eeg) or channels
  std::vector<std::string> participant_ids;
  std::vector<double> multipliers;
  std::vector<int> generating_labels;  // labels before any shuffle
  std::vector<int> labels;             // labels as written to the dataset
};

struct Cohort {
  Dataset dataset;
  GroundTruth truth;
  LeadField leadfield;  // empty gains when no eeg modality
};

Cohort generate_cohort(const SynthConfig& cfg);

/// Writes the dataset, a `leadfield/` directory (when present) and `truth/`.
void save_cohort(const Cohort& cohort, const std::filesystem::path& dir);

/// Vertices on a unit sphere cap, channels on an enclosing cap, dipole-like
/// gains; regions are equal-count azimuth sectors.
LeadField generate_leadfield(int n_channels, int n_vertices, int n_regions, std::uint64_t seed);

/// AUC of sum_m <signed mean_m, W_m> using the true weights (labels from the dataset).
double oracle_auc(const Dataset& ds, const GroundTruth& truth);

struct DeffEstimate {
  std::vector<double> deff_per_pc;
  std::vector<double> icc_per_pc;
  double deff = 1.0;
  double mean_trials = 0.0;
  double n_eff_per_session = 0.0;
  int n_pcs = 0;
  std::string warning;
};

/// Kish design effect: PCA on pooled, feature-centered trial vectors; ICC(1)
/// per component with sessions as clusters; worst case over components.
DeffEstimate kish_deff(const Dataset& ds, const std::string& modality, int n_pcs = 5);

/// One-way ANOVA ICC(1) = (MSB - MSW) / (MSB + (m - 1) MSW), clipped at 0.
double icc1(const std::vector<std::vector<double>>& clusters);

}  // namespace usbl
