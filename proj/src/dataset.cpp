#include "usbl/dataset.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "usbl/error.hpp"
#include "usbl/tensor_io.hpp"

namespace usbl {

using nlohmann::json;
namespace fs = std::filesystem;

char condition_code(Condition c) { return c == Condition::Congruent ? 'C' : 'I'; }

Condition parse_condition(const std::string& code) {
  if (code == "C") return Condition::Congruent;
  if (code == "I") return Condition::Incongruent;
  throw Error(ErrorCode::BadManifest, "condition must be \"C\" or \"I\", got \"" + code + "\"");
}

const std::vector<Segment>& Session::modality(const std::string& name) const {
  auto it = trials.find(name);
  if (it == trials.end())
    throw Error(ErrorCode::MissingModality, "session " + participant_id + " lacks " + name);
  return it->second;
}

const ModalityShape& Dataset::shape(const std::string& modality) const {
  for (const auto& m : modalities)
    if (m.name == modality) return m;
  throw Error(ErrorCode::MissingModality, "dataset has no modality " + modality);
}

bool Dataset::has_modality(const std::string& modality) const {
  for (const auto& m : modalities)
    if (m.name == modality) return true;
  return false;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) {
    if (!s.label) throw Error(ErrorCode::LabelMissing, s.participant_id);
    out.push_back(*s.label);
  }
  return out;
}

void validate_dataset(const Dataset& ds, bool require_labels) {
  for (const auto& s : ds.sessions) {
    if (require_labels && !s.label) throw Error(ErrorCode::LabelMissing, s.participant_id);
    if (s.label && *s.label != 0 && *s.label != 1)
      throw Error(ErrorCode::BadManifest, "label must be 0 or 1 for " + s.participant_id);
    if (s.conditions.empty())
      throw Error(ErrorCode::ConditionLengthMismatch, s.participant_id + " has no trials");
    for (const auto& [name, segs] : s.trials) {
      const auto& shape = ds.shape(name);
      if (static_cast<int>(segs.size()) != s.trial_count())
        throw Error(ErrorCode::ConditionLengthMismatch,
                    s.participant_id + "/" + name + ": " + std::to_string(segs.size()) +
                        " trials vs " + std::to_string(s.trial_count()) + " conditions");
      for (const auto& seg : segs)
        if (seg.rows() != shape.channels || seg.cols() != shape.samples)
          throw Error(ErrorCode::ShapeMismatch, s.participant_id + "/" + name);
    }
  }
}

namespace {

ModalityShape parse_shape(const json& j) {
  ModalityShape m;
  m.name = j.at("name").get<std::string>();
  m.channels = j.at("channels").get<int>();
  m.samples = j.at("samples").get<int>();
  m.sample_rate = j.at("sample_rate").get<double>();
  m.stimulus_index = j.value("stimulus_index", 0);
  if (m.channels < 1 || m.samples < 1 || !(m.sample_rate > 0))
    throw Error(ErrorCode::BadManifest, "invalid shape for modality " + m.name);
  if (m.stimulus_index < 0 || m.stimulus_index > m.samples)
    throw Error(ErrorCode::BadManifest, "stimulus_index out of range for " + m.name);
  return m;
}

std::vector<Segment> read_trials(const fs::path& path, const ModalityShape& shape,
                                 std::size_t expected_trials, const std::string& who) {
  Tensor t = read_tensor(path);
  if (t.dims.size() != 3 || t.dims[1] != static_cast<std::uint64_t>(shape.channels) ||
      t.dims[2] != static_cast<std::uint64_t>(shape.samples))
    throw Error(ErrorCode::ShapeMismatch, who + ": expected trials x " +
                                              std::to_string(shape.channels) + " x " +
                                              std::to_string(shape.samples));
  if (t.dims[0] != expected_trials)
    throw Error(ErrorCode::ConditionLengthMismatch,
                who + ": " + std::to_string(t.dims[0]) + " trials vs " +
                    std::to_string(expected_trials) + " conditions");
  std::vector<Segment> out(expected_trials);
  const std::size_t stride = shape.channels * shape.samples;
  for (std::size_t tr = 0; tr < expected_trials; ++tr) {
    Segment seg(shape.channels, shape.samples);
    const float* base = t.values.data() + tr * stride;
    for (int c = 0; c < shape.channels; ++c)
      for (int k = 0; k < shape.samples; ++k) seg(c, k) = base[c * shape.samples + k];
    out[tr] = std::move(seg);
  }
  return out;
}

}  // namespace

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::MissingFile, manifest_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadManifest, e.what());
  }
  const fs::path base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
  };

  Dataset ds;
  try {
    ds.name = j.value("name", std::string("unnamed"));
    for (const auto& m : j.at("modalities")) ds.modalities.push_back(parse_shape(m));
    if (j.contains("leadfield") && !j.at("leadfield").is_null())
      ds.leadfield_dir = resolve(j.at("leadfield").get<std::string>());
    for (const auto& sj : j.at("sessions")) {
      Session s;
      s.participant_id = sj.at("participant_id").get<std::string>();
      if (sj.contains("label") && !sj.at("label").is_null()) s.label = sj.at("label").get<int>();
      for (const auto& c : sj.at("conditions")) s.conditions.push_back(parse_condition(c));
      for (const auto& [name, path] : sj.at("tensors").items()) {
        const auto& shape = ds.shape(name);
        s.trials[name] = read_trials(resolve(path.get<std::string>()), shape,
                                     s.conditions.size(), s.participant_id + "/" + name);
      }
      ds.sessions.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadManifest, e.what());
  }
  validate_dataset(ds, false);
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "tensors");
  json j;
  j["name"] = ds.name;
  j["modalities"] = json::array();
  for (const auto& m : ds.modalities)
    j["modalities"].push_back({{"name", m.name},
                               {"channels", m.channels},
                               {"samples", m.samples},
                               {"sample_rate", m.sample_rate},
                               {"stimulus_index", m.stimulus_index}});
  if (ds.leadfield_dir) {
    auto rel = ds.leadfield_dir->is_absolute() ? fs::relative(*ds.leadfield_dir, dir)
                                               : *ds.leadfield_dir;
    j["leadfield"] = rel.generic_string();
  }
  j["sessions"] = json::array();
  for (const auto& s : ds.sessions) {
    json sj;
    sj["participant_id"] = s.participant_id;
    sj["label"] = s.label ? json(*s.label) : json(nullptr);
    sj["conditions"] = json::array();
    for (auto c : s.conditions) sj["conditions"].push_back(std::string(1, condition_code(c)));
    sj["tensors"] = json::object();
    for (const auto& [name, segs] : s.trials) {
      const auto& shape = ds.shape(name);
      std::vector<float> values;
      values.reserve(segs.size() * shape.channels * shape.samples);
      for (const auto& seg : segs)
        for (int c = 0; c < shape.channels; ++c)
          for (int k = 0; k < shape.samples; ++k) values.push_back(static_cast<float>(seg(c, k)));
      const std::string rel = "tensors/" + s.participant_id + "_" + name + ".usbl";
      const std::vector<std::uint64_t> dims = {segs.size(),
                                               static_cast<std::uint64_t>(shape.channels),
                                               static_cast<std::uint64_t>(shape.samples)};
      write_tensor(dir / rel, dims, values);
      sj["tensors"][name] = rel;
    }
    j["sessions"].push_back(std::move(sj));
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest in " + dir.string());
  out << j.dump(2) << '\n';
}

Dataset subset(const Dataset& ds, std::span<const int> indices) {
  Dataset out;
  out.name = ds.name;
  out.modalities = ds.modalities;
  out.leadfield_dir = ds.leadfield_dir;
  out.sessions.reserve(indices.size());
  for (int i : indices) out.sessions.push_back(ds.sessions.at(i));
  return out;
}

Eigen::VectorXd pooled_channel_variance(std::span<const Session> sessions,
                                        const std::string& modality) {
  Eigen::VectorXd sum, sumsq;
  double n = 0;
  for (const auto& s : sessions)
    for (const auto& seg : s.modality(modality)) {
      if (sum.size() == 0) {
        sum = Eigen::VectorXd::Zero(seg.rows());
        sumsq = Eigen::VectorXd::Zero(seg.rows());
      }
      sum += seg.rowwise().sum();
      sumsq += seg.array().square().rowwise().sum().matrix();
      n += static_cast<double>(seg.cols());
    }
  if (n == 0) throw Error(ErrorCode::InsufficientData, "no trials for " + modality);
  Eigen::VectorXd mean = sum / n;
  return (sumsq / n - mean.cwiseAbs2()).cwiseMax(0.0);
}

Standardizer fit_standardizer(std::span<const Session> train, const std::string& modality) {
  // Two-pass for accuracy: mean first, then centered second moment.
  Eigen::VectorXd sum;
  double n = 0;
  for (const auto& s : train)
    for (const auto& seg : s.modality(modality)) {
      if (sum.size() == 0) sum = Eigen::VectorXd::Zero(seg.rows());
      sum += seg.rowwise().sum();
      n += static_cast<double>(seg.cols());
    }
  if (n == 0) throw Error(ErrorCode::InsufficientData, "no trials for " + modality);
  Eigen::VectorXd mean = sum / n;
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(mean.size());
  for (const auto& s : train)
    for (const auto& seg : s.modality(modality))
      ss += (seg.colwise() - mean).array().square().rowwise().sum().matrix();

  Standardizer out;
  out.modality = modality;
  out.channel_offsets = mean;
  out.channel_scales.resize(mean.size());
  for (Eigen::Index c = 0; c < mean.size(); ++c) {
    const double sd = std::sqrt(ss(c) / n);
    if (!(sd > 0) || !std::isfinite(sd))
      throw Error(ErrorCode::ZeroVariance, modality + " channel " + std::to_string(c));
    out.channel_scales(c) = 1.0 / sd;
  }
  return out;
}

void apply_standardizer_inplace(const Standardizer& s, Session& session) {
  auto it = session.trials.find(s.modality);
  if (it == session.trials.end())
    throw Error(ErrorCode::MissingModality, session.participant_id + " lacks " + s.modality);
  for (auto& seg : it->second) {
    if (seg.rows() != s.channel_scales.size())
      throw Error(ErrorCode::ShapeMismatch, "standardizer channel count for " + s.modality);
    seg = s.channel_scales.asDiagonal() * (seg.colwise() - s.channel_offsets);
  }
}

Session apply_standardizer(const Standardizer& s, const Session& session) {
  Session out = session;
  apply_standardizer_inplace(s, out);
  return out;
}

}  // namespace usbl
