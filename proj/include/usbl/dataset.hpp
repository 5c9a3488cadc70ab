#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace usbl {

/// Block pairing of a trial relative to the positive class: Congruent trials
/// carry the positively-associated concept ("C" in manifests).
enum class Condition : std::uint8_t { Congruent, Incongruent };

char condition_code(Condition c);
Condition parse_condition(const std::string& code);

/// +1 on incongruent trials, -1 on congruent ones (mirror constraint).
inline double mirror_sign(Condition c) { return c == Condition::Incongruent ? 1.0 : -1.0; }

struct ModalityShape {
  std::string name;
  int channels = 1;
  int samples = 1;
  double sample_rate = 1.0;
  // Index of the first sample at or after stimulus onset.
  int stimulus_index = 0;

  /// Time of sample i relative to stimulus onset, in seconds.
  double sample_time(int i) const { return (i - stimulus_index) / sample_rate; }
};

using Segment = Eigen::MatrixXd;  // channels x samples

struct Session {
  std::string participant_id;
  std::optional<int> label;
  std::vector<Condition> conditions;
  std::map<std::string, std::vector<Segment>> trials;

  int trial_count() const { return static_cast<int>(conditions.size()); }
  bool has_modality(const std::string& name) const { return trials.count(name) != 0; }
  const std::vector<Segment>& modality(const std::string& name) const;
};

struct Dataset {
  std::string name;
  std::vector<ModalityShape> modalities;
  std::vector<Session> sessions;
  std::optional<std::filesystem::path> leadfield_dir;

  const ModalityShape& shape(const std::string& modality) const;
  bool has_modality(const std::string& modality) const;
  std::vector<int> labels() const;
};

/// Checks every session against the declared shapes and condition sequences.
void validate_dataset(const Dataset& ds, bool require_labels);

/// Reads a JSON manifest and every tensor file it references. Relative paths
/// resolve against the manifest's directory.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes `dir/manifest.json` plus one tensor file per session and modality.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Returns a copy holding only the sessions at `indices`, in that order.
Dataset subset(const Dataset& ds, std::span<const int> indices);

/// Per-channel centering and scaling fitted on training sessions.
struct Standardizer {
  std::string modality;
  Eigen::VectorXd channel_scales;
  Eigen::VectorXd channel_offsets;
};

Standardizer fit_standardizer(std::span<const Session> train, const std::string& modality);
Session apply_standardizer(const Standardizer& s, const Session& session);
void apply_standardizer_inplace(const Standardizer& s, Session& session);

/// Pooled (trials x samples) per-channel population variance.
Eigen::VectorXd pooled_channel_variance(std::span<const Session> sessions,
                                        const std::string& modality);

}  // namespace usbl
