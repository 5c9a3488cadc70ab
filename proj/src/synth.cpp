#include "usbl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>

#include "usbl/error.hpp"
#include "usbl/metrics.hpp"
#include "usbl/model.hpp"
#include "usbl/rng.hpp"
#include "usbl/tensor_io.hpp"

namespace usbl {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  if (n_participants < 2) throw Error(ErrorCode::Usage, "n_participants must be >= 2");
  if (!(class_balance > 0 && class_balance < 1))
    throw Error(ErrorCode::Usage, "class_balance must lie in (0, 1)");
  if (blocks < 2 || blocks % 2 != 0) throw Error(ErrorCode::Usage, "blocks must be even and >= 2");
  if (trials_per_block < 1) throw Error(ErrorCode::Usage, "trials_per_block must be >= 1");
  if (modalities.empty()) throw Error(ErrorCode::Usage, "at least one modality required");
  for (const auto& m : modalities) {
    if (m.channels < 1 || m.samples < 1 || !(m.sample_rate > 0))
      throw Error(ErrorCode::Usage, "modality '" + m.name + "' needs positive shape and rate");
    if (m.stimulus_index < 0 || m.stimulus_index >= m.samples)
      throw Error(ErrorCode::Usage, "modality '" + m.name + "' stimulus index out of range");
    if (m.name == "rt" && (m.channels != 1 || m.samples != 1))
      throw Error(ErrorCode::Usage, "the rt modality is 1 x 1");
  }
  if (sparsity < 1) throw Error(ErrorCode::Usage, "sparsity must be >= 1");
  if (!(trial_noise_sd >= 0) || !(participant_variability >= 0) || !(within_session_correlation >= 0))
    throw Error(ErrorCode::Usage, "noise scales must be >= 0");
  if (!(ar1 > -1 && ar1 < 1)) throw Error(ErrorCode::Usage, "ar1 must lie in (-1, 1)");
  if (leadfield_vertices < leadfield_regions || leadfield_regions < 1)
    throw Error(ErrorCode::Usage, "need leadfield_vertices >= leadfield_regions >= 1");
}

namespace {

double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }
double uniform(Rng& rng, double a, double b) {
  return std::uniform_real_distribution<double>(a, b)(rng);
}

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Eigen::RowVectorXd bump(const SynthModality& m, double latency, double width) {
  Eigen::RowVectorXd out(m.samples);
  for (int k = 0; k < m.samples; ++k) {
    const double t = (k - m.stimulus_index) / m.sample_rate;
    out[k] = t < 0 ? 0.0 : std::exp(-0.5 * std::pow((t - latency) / width, 2));
  }
  return out;
}

// Latency drawn inside the post-stimulus span so the bump is never empty.
double draw_latency(Rng& rng, const SynthModality& m, double lo, double hi) {
  const double t_end = (m.samples - 1 - m.stimulus_index) / m.sample_rate;
  hi = std::min(hi, t_end);
  lo = std::min(lo, hi);
  return uniform(rng, lo, hi + 1e-12);
}

void normalize_rms(Eigen::MatrixXd& p) {
  const double norm = p.norm();
  if (norm > 0) p *= std::sqrt(static_cast<double>(p.size())) / norm;
}

std::vector<Eigen::Vector3d> fibonacci_cap(int n, double radius, double z_min) {
  std::vector<Eigen::Vector3d> out;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (1.0 - z_min) * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    out.emplace_back(radius * r * std::cos(golden * i), radius * r * std::sin(golden * i), radius * z);
  }
  return out;
}

}  // namespace

LeadField generate_leadfield(int n_channels, int n_vertices, int n_regions, std::uint64_t seed) {
  if (n_channels < 2 || n_vertices < 1 || n_regions < 1 || n_vertices < n_regions)
    throw Error(ErrorCode::Usage, "invalid lead-field dimensions");
  Rng rng(derive_seed(seed, {0x1EAD}));
  const auto sensors = fibonacci_cap(n_channels, 1.0, 0.0);
  LeadField lf;
  lf.vertex_positions.resize(n_vertices, 3);
  std::vector<double> azimuth(n_vertices);
  for (int v = 0; v < n_vertices; ++v) {
    // Uniform on the cap z >= 0.2 of a sphere of radius 0.7.
    const double z = uniform(rng, 0.2, 1.0);
    const double phi = uniform(rng, -std::numbers::pi, std::numbers::pi);
    const double r = std::sqrt(1.0 - z * z);
    lf.vertex_positions.row(v) << 0.7 * r * std::cos(phi), 0.7 * r * std::sin(phi), 0.7 * z;
    azimuth[v] = phi;
  }
  lf.gains.resize(n_channels, 3 * n_vertices);
  for (int c = 0; c < n_channels; ++c)
    for (int v = 0; v < n_vertices; ++v) {
      const Eigen::Vector3d d = sensors[c] - lf.vertex_positions.row(v).transpose();
      const double r3 = std::pow(d.norm(), 3);
      for (int k = 0; k < 3; ++k) lf.gains(c, 3 * v + k) = round_f32(d[k] / r3);
    }
  for (int v = 0; v < n_vertices; ++v)
    for (int k = 0; k < 3; ++k) lf.vertex_positions(v, k) = round_f32(lf.vertex_positions(v, k));
  std::vector<int> order(n_vertices);
  for (int v = 0; v < n_vertices; ++v) order[v] = v;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return azimuth[a] < azimuth[b]; });
  lf.region_count = n_regions;
  lf.region_of_vertex.assign(n_vertices, 1);
  for (int i = 0; i < n_vertices; ++i)
    lf.region_of_vertex[order[i]] = 1 + static_cast<int>(static_cast<long long>(i) * n_regions / n_vertices);
  validate(lf);
  return lf;
}

Cohort generate_cohort(const SynthConfig& cfg) {
  cfg.validate();
  Cohort out;
  Dataset& ds = out.dataset;
  GroundTruth& truth = out.truth;
  ds.name = "synthetic";

  Rng pattern_rng(derive_seed(cfg.seed, {0xBA77}));
  for (const auto& m : cfg.modalities) {
    ds.modalities.push_back({m.name, m.channels, m.samples, m.sample_rate, m.stimulus_index});
    Eigen::MatrixXd pattern = Eigen::MatrixXd::Zero(m.channels, m.samples);
    std::vector<int> active;
    if (m.name == "rt") {
      pattern(0, 0) = 1.0;
      active = {0};
    } else if (m.name == "eeg") {
      out.leadfield = generate_leadfield(m.channels, cfg.leadfield_vertices, cfg.leadfield_regions,
                                         derive_seed(cfg.seed, {0x1F}));
      std::vector<int> vertices(cfg.leadfield_vertices);
      for (int v = 0; v < cfg.leadfield_vertices; ++v) vertices[v] = v;
      shuffle_in_place(vertices, pattern_rng);
      const int n_active = std::min(cfg.sparsity, cfg.leadfield_vertices);
      for (int a = 0; a < n_active; ++a) {
        const int v = vertices[a];
        Eigen::Vector3d orient(normal(pattern_rng), normal(pattern_rng), normal(pattern_rng));
        orient.normalize();
        const double latency = draw_latency(pattern_rng, m, 0.1, 0.4);
        const double sign = pattern_rng() % 2 == 0 ? 1.0 : -1.0;
        const Eigen::VectorXd topo = out.leadfield.gains.middleCols(3 * v, 3) * orient;
        pattern += sign * topo * bump(m, latency, std::max(0.05, 1.5 / m.sample_rate));
        active.push_back(v);
      }
      std::sort(active.begin(), active.end());
    } else {
      std::vector<int> channels(m.channels);
      for (int c = 0; c < m.channels; ++c) channels[c] = c;
      shuffle_in_place(channels, pattern_rng);
      const int n_active = std::min(cfg.sparsity, m.channels);
      for (int a = 0; a < n_active; ++a) {
        const double latency = draw_latency(pattern_rng, m, 0.2, 0.8);
        const double sign = pattern_rng() % 2 == 0 ? 1.0 : -1.0;
        pattern.row(channels[a]) += sign * bump(m, latency, std::max(0.1, 1.5 / m.sample_rate));
        active.push_back(channels[a]);
      }
      std::sort(active.begin(), active.end());
    }
    if (m.name != "rt") normalize_rms(pattern);
    truth.patterns[m.name] = pattern;
    truth.weights[m.name] = pattern;
    truth.active[m.name] = active;
  }

  const int n = cfg.n_participants;
  const int n_pos = std::clamp(static_cast<int>(std::lround(n * cfg.class_balance)), 1, n - 1);
  std::vector<int> labels(n, 0);
  std::fill(labels.begin(), labels.begin() + n_pos, 1);
  Rng label_rng(derive_seed(cfg.seed, {0x1AB}));
  shuffle_in_place(labels, label_rng);
  truth.generating_labels = labels;

  const int trials = cfg.blocks * cfg.trials_per_block;
  for (int p = 0; p < n; ++p) {
    Rng rng(derive_seed(cfg.seed, {0x5E55, static_cast<std::uint64_t>(p)}));
    Session s;
    char id[16];
    std::snprintf(id, sizeof id, "P%03d", p + 1);
    s.participant_id = id;
    const int y = labels[p];
    const double mult = 1.0 + cfg.participant_variability * normal(rng);
    truth.participant_ids.push_back(s.participant_id);
    truth.multipliers.push_back(mult);
    const Condition first = p % 2 == 0 ? Condition::Congruent : Condition::Incongruent;
    const Condition second = first == Condition::Congruent ? Condition::Incongruent : Condition::Congruent;
    for (int b = 0; b < cfg.blocks; ++b)
      for (int t = 0; t < cfg.trials_per_block; ++t) s.conditions.push_back(b % 2 == 0 ? first : second);

    for (const auto& m : cfg.modalities) {
      const Eigen::MatrixXd& pattern = truth.patterns[m.name];
      const bool is_rt = m.name == "rt";
      const double noise_sd = is_rt ? cfg.rt_noise_ms : cfg.trial_noise_sd;
      const double effect = is_rt ? cfg.rt_effect_ms : cfg.effect_size;
      Eigen::MatrixXd shared(m.channels, m.samples);
      for (Eigen::Index i = 0; i < shared.size(); ++i)
        shared.data()[i] = cfg.within_session_correlation * noise_sd * normal(rng);
      Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(m.channels, m.samples);
      const double innov = std::sqrt(1.0 - cfg.ar1 * cfg.ar1);
      std::vector<Segment> segs;
      segs.reserve(trials);
      for (int t = 0; t < trials; ++t) {
        for (Eigen::Index i = 0; i < noise.size(); ++i)
          noise.data()[i] = (t == 0 ? 0.0 : cfg.ar1 * noise.data()[i]) + (t == 0 ? 1.0 : innov) * normal(rng);
        const bool incongruent_for_p = (y == 1) == (s.conditions[t] == Condition::Incongruent);
        const double sign = incongruent_for_p ? 1.0 : -1.0;
        Segment x = sign * effect * mult * pattern + shared + noise_sd * noise;
        if (is_rt) x.array() += cfg.rt_base_ms;
        segs.push_back(x.unaryExpr([](double v) { return round_f32(v); }));
      }
      s.trials[m.name] = std::move(segs);
    }
    ds.sessions.push_back(std::move(s));
  }

  if (cfg.shuffle_labels) {
    Rng shuffle_rng(derive_seed(cfg.seed, {0x5AFF}));
    shuffle_in_place(labels, shuffle_rng);
  }
  for (int p = 0; p < n; ++p) ds.sessions[p].label = labels[p];
  truth.labels = labels;
  validate_dataset(ds, true);
  return out;
}

namespace {

void write_matrix32(const fs::path& path, const Eigen::MatrixXd& a) {
  std::vector<float> v;
  v.reserve(a.size());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) v.push_back(static_cast<float>(a(i, j)));
  const std::uint64_t dims[2] = {static_cast<std::uint64_t>(a.rows()), static_cast<std::uint64_t>(a.cols())};
  write_tensor(path, dims, v);
}

}  // namespace

void save_cohort(const Cohort& cohort, const fs::path& dir) {
  Dataset ds = cohort.dataset;
  if (cohort.leadfield.gains.size() > 0) {
    save_leadfield(cohort.leadfield, dir / "leadfield");
    ds.leadfield_dir = fs::path("leadfield");
  }
  save_dataset(ds, dir);
  const fs::path tdir = dir / "truth";
  fs::create_directories(tdir);
  nlohmann::json j;
  j["participants"] = cohort.truth.participant_ids;
  j["labels"] = cohort.truth.labels;
  j["generating_labels"] = cohort.truth.generating_labels;
  j["multipliers"] = cohort.truth.multipliers;
  nlohmann::json active = nlohmann::json::object();
  for (const auto& [name, a] : cohort.truth.active) {
    active[name] = a;
    write_matrix32(tdir / ("pattern_" + name + ".usbl"), cohort.truth.patterns.at(name));
  }
  j["active"] = active;
  std::ofstream out(tdir / "truth.json");
  if (!out) throw Error(ErrorCode::Io, "cannot write " + (tdir / "truth.json").string());
  out << j.dump(2) << '\n';
}

double oracle_auc(const Dataset& ds, const GroundTruth& truth) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : ds.sessions) {
    double score = 0;
    for (const auto& [name, w] : truth.weights)
      if (name != "rt") score += (signed_mean(s, name).array() * w.array()).sum();
    scores.push_back(score);
    labels.push_back(s.label.value_or(0));
  }
  return auc(scores, labels).value_or(0.5);
}

double icc1(const std::vector<std::vector<double>>& clusters) {
  const double g = static_cast<double>(clusters.size());
  double n = 0, grand = 0;
  for (const auto& c : clusters) {
    n += static_cast<double>(c.size());
    for (double v : c) grand += v;
  }
  if (g < 2 || n <= g) throw Error(ErrorCode::InsufficientData, "ICC needs >= 2 clusters of >= 2");
  grand /= n;
  double ssb = 0, ssw = 0;
  for (const auto& c : clusters) {
    double mean = 0;
    for (double v : c) mean += v;
    mean /= static_cast<double>(c.size());
    ssb += static_cast<double>(c.size()) * (mean - grand) * (mean - grand);
    for (double v : c) ssw += (v - mean) * (v - mean);
  }
  const double msb = ssb / (g - 1);
  const double msw = ssw / (n - g);
  const double m_bar = n / g;
  const double denom = msb + (m_bar - 1) * msw;
  if (!(denom > 0)) return 0.0;
  return std::max(0.0, (msb - msw) / denom);
}

DeffEstimate kish_deff(const Dataset& ds, const std::string& modality, int n_pcs) {
  if (ds.sessions.size() < 2) throw Error(ErrorCode::InsufficientData, "DEFF needs >= 2 sessions");
  const ModalityShape& shape = ds.shape(modality);
  const Eigen::Index dim = Eigen::Index(shape.channels) * shape.samples;
  Eigen::Index rows = 0;
  for (const auto& s : ds.sessions) {
    if (s.trial_count() < 2) throw Error(ErrorCode::InsufficientData, "DEFF needs >= 2 trials per session");
    rows += s.trial_count();
  }
  Eigen::MatrixXd x(rows, dim);
  Eigen::Index r = 0;
  for (const auto& s : ds.sessions)
    for (const auto& seg : s.modality(modality)) {
      const Eigen::MatrixXd rm = seg.transpose();
      x.row(r++) = Eigen::Map<const Eigen::RowVectorXd>(rm.data(), dim);
    }
  x.rowwise() -= x.colwise().mean();

  DeffEstimate out;
  const int max_pcs = static_cast<int>(std::min<Eigen::Index>(dim, rows - 1));
  out.n_pcs = n_pcs;
  if (n_pcs > max_pcs) {
    out.n_pcs = max_pcs;
    out.warning = "reduced components from " + std::to_string(n_pcs) + " to " + std::to_string(max_pcs);
  }
  if (out.n_pcs < 1) throw Error(ErrorCode::InsufficientData, "no principal components available");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(x.transpose() * x);
  const Eigen::MatrixXd scores = x * eig.eigenvectors().rightCols(out.n_pcs).rowwise().reverse();

  out.mean_trials = static_cast<double>(rows) / static_cast<double>(ds.sessions.size());
  out.deff = 0.0;
  for (int pc = 0; pc < out.n_pcs; ++pc) {
    std::vector<std::vector<double>> clusters;
    Eigen::Index at = 0;
    for (const auto& s : ds.sessions) {
      clusters.emplace_back(scores.col(pc).data() + at, scores.col(pc).data() + at + s.trial_count());
      at += s.trial_count();
    }
    const double icc = icc1(clusters);
    out.icc_per_pc.push_back(icc);
    out.deff_per_pc.push_back(1.0 + (out.mean_trials - 1.0) * icc);
    out.deff = std::max(out.deff, out.deff_per_pc.back());
  }
  out.n_eff_per_session = out.mean_trials / out.deff;
  return out;
}

}  // namespace usbl
