#include "usbl/pipeline.hpp"

#include <fstream>
#include <json.hpp>

#include "usbl/config.hpp"
#include "usbl/error.hpp"
#include "usbl/tensor_io.hpp"

namespace usbl {

namespace fs = std::filesystem;
using nlohmann::json;

SourceModel prepare_source_model(const LeadField& raw, double kernel_multiplier) {
  SourceModel s;
  s.leadfield = preprocess_leadfield(raw, kernel_multiplier);
  s.grams = region_grams(s.leadfield);
  return s;
}

StandardizerSet fit_standardizers(const Dataset& train, const std::vector<std::string>& modalities) {
  StandardizerSet out;
  for (const auto& m : modalities) out.emplace(m, fit_standardizer(train.sessions, m));
  return out;
}

Session standardize(const Session& s, const StandardizerSet& set) {
  Session out = s;
  for (const auto& [name, st] : set) apply_standardizer_inplace(st, out);
  return out;
}

Dataset standardize(const Dataset& ds, const StandardizerSet& set) {
  Dataset out = ds;
  for (auto& s : out.sessions)
    for (const auto& [name, st] : set) apply_standardizer_inplace(st, s);
  return out;
}

namespace {

std::vector<std::string> modality_names(const ModelConfig& c) {
  std::vector<std::string> out;
  for (const auto& m : c.modalities) out.push_back(m.name);
  return out;
}

void rebuild_weights(FittedModel& m) {
  ModelParameters p = unpack(m.context.layout, m.params);
  p.omega = 1.0;
  m.weights = assemble_weights(m.context, p);
}

}  // namespace

FittedModel fit_usbl(const Dataset& train, const SourceModel* source, const FitOptions& opts,
                     std::uint64_t seed) {
  validate(opts.schedule);
  validate(opts.model.hyper);
  validate_dataset(train, true);
  FittedModel m;
  m.config = opts.model;
  m.schedule = opts.schedule;
  m.context.config = opts.model;

  const auto names = modality_names(opts.model);
  for (const auto& n : names) m.shapes.push_back(train.shape(n));
  m.standardizers = fit_standardizers(train, names);
  const Dataset std_train = standardize(train, m.standardizers);

  std::map<std::string, ModalityDims> dims;
  for (const auto& spec : opts.model.modalities) {
    const ModalityShape& shape = train.shape(spec.name);
    ModalityDims d{shape.channels, shape.samples, 0};
    if (spec.prior == PriorKind::EegDugh) {
      if (!source)
        throw Error(ErrorCode::MissingFile, spec.name + ": source prior requires a lead field");
      if (source->leadfield.channels() != shape.channels)
        throw Error(ErrorCode::ShapeMismatch,
                    spec.name + ": lead field has " + std::to_string(source->leadfield.channels()) +
                        " channels, data has " + std::to_string(shape.channels));
      d.regions = source->leadfield.region_count;
      const CovarianceEstimate cov = estimate_covariances(
          std_train.sessions, shape, opts.model.noise_factors, opts.model.data_cov_shrinkage);
      m.context.eeg[spec.name] = EegContext{cov.data_cov, cov.noise_cov, source->grams};
    }
    dims[spec.name] = d;
  }
  m.context.layout = make_layout(opts.model, dims);

  const Posterior post(m.context, std_train.sessions);
  const Objective objective = [&post](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double v = post(x, g);
    g = -g;
    return -v;
  };
  OptimizerSchedule sched = opts.schedule;
  sched.seed = seed;
  MapFit fit = fit_map(objective, initial_parameters(m.context.layout, seed), sched);
  m.params = std::move(fit.x);
  m.trace = std::move(fit.trace);
  if (opts.laplace) {
    const ValueFn f = [&post](const Eigen::VectorXd& x) { return -post(x); };
    m.laplace_precision = laplace_diag(f, m.params).precision;
  }
  // Grams are only needed by the prior; predictions use Sigma_X alone.
  for (auto& [name, e] : m.context.eeg) e.grams.clear();
  rebuild_weights(m);
  return m;
}

double model_session_logit(const FittedModel& m, const Session& raw) {
  const Session s = standardize(raw, m.standardizers);
  ModelParameters p = unpack(m.context.layout, m.params);
  p.omega = 1.0;
  return session_logit(m.context, p, m.weights, s);
}

double predict_probability(const FittedModel& m, const Session& raw) {
  return predict_from_logit(model_session_logit(m, raw), m.omega);
}

namespace {

void write_matrix(const fs::path& path, const Eigen::MatrixXd& a) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = a;
  const std::uint64_t dims[2] = {static_cast<std::uint64_t>(a.rows()),
                                 static_cast<std::uint64_t>(a.cols())};
  write_tensor64(path, dims, std::span<const double>(rm.data(), rm.size()));
}

Eigen::MatrixXd read_matrix(const fs::path& path) {
  const Tensor64 t = read_tensor64(path);
  if (t.dims.size() != 2) throw Error(ErrorCode::ShapeMismatch, path.string() + ": expected a matrix");
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.values.data(), static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
}

void write_vector(const fs::path& path, std::span<const double> v) {
  const std::uint64_t dims[1] = {static_cast<std::uint64_t>(v.size())};
  write_tensor64(path, dims, v);
}

std::vector<double> read_vector(const fs::path& path) {
  Tensor64 t = read_tensor64(path);
  if (t.dims.size() != 1) throw Error(ErrorCode::ShapeMismatch, path.string() + ": expected a vector");
  return std::move(t.values);
}

json to_vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd from_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save_model(const FittedModel& m, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string());
  json j;
  j["format"] = "usbl-model";
  j["version"] = 1;
  j["model"] = to_json(m.config);
  j["schedule"] = to_json(m.schedule);
  j["omega"] = m.omega;
  j["calibrated"] = m.calibrated();
  json shapes = json::array();
  for (const auto& s : m.shapes)
    shapes.push_back({{"name", s.name},
                      {"channels", s.channels},
                      {"samples", s.samples},
                      {"sample_rate", s.sample_rate},
                      {"stimulus_index", s.stimulus_index}});
  j["shapes"] = shapes;
  json layout = json::object();
  for (const auto& ml : m.context.layout.modalities) layout[ml.spec.name] = {{"groups", ml.groups}};
  j["layout"] = layout;
  json st = json::object();
  for (const auto& [name, s] : m.standardizers)
    st[name] = {{"offsets", to_vec(s.channel_offsets)}, {"scales", to_vec(s.channel_scales)}};
  j["standardizers"] = st;

  write_vector(dir / "params.usbl", std::span<const double>(m.params.data(), m.params.size()));
  for (const auto& [name, e] : m.context.eeg) {
    write_matrix(dir / (name + "_data_cov.usbl"), e.data_cov);
    write_matrix(dir / (name + "_noise_cov.usbl"), e.noise_cov);
  }
  if (m.calibrated()) write_vector(dir / "omega_samples.usbl", m.omega_samples);
  std::ofstream out(dir / "model.json");
  if (!out) throw Error(ErrorCode::Io, "cannot write model.json in " + dir.string());
  out << j.dump(2) << '\n';
}

FittedModel load_model(const fs::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw Error(ErrorCode::MissingFile, (dir / "model.json").string());
  json j;
  try {
    in >> j;
    if (j.at("format") != "usbl-model") throw Error(ErrorCode::BadManifest, "not a model file");
    FittedModel m;
    m.config = model_config_from_json(j.at("model"));
    m.schedule = schedule_from_json(j.at("schedule"));
    m.omega = j.at("omega").get<double>();
    m.context.config = m.config;
    std::map<std::string, ModalityDims> dims;
    for (const auto& s : j.at("shapes")) {
      ModalityShape shape;
      shape.name = s.at("name").get<std::string>();
      shape.channels = s.at("channels").get<int>();
      shape.samples = s.at("samples").get<int>();
      shape.sample_rate = s.at("sample_rate").get<double>();
      shape.stimulus_index = s.at("stimulus_index").get<int>();
      m.shapes.push_back(shape);
      dims[shape.name] = {shape.channels, shape.samples, j.at("layout").at(shape.name).at("groups").get<int>()};
    }
    for (const auto& [name, s] : j.at("standardizers").items())
      m.standardizers[name] = Standardizer{name, from_vec(s.at("scales")), from_vec(s.at("offsets"))};
    m.context.layout = make_layout(m.config, dims);
    const auto params = read_vector(dir / "params.usbl");
    if (static_cast<Eigen::Index>(params.size()) != m.context.layout.size)
      throw Error(ErrorCode::ShapeMismatch, "parameter vector does not match the model layout");
    m.params = Eigen::Map<const Eigen::VectorXd>(params.data(), m.context.layout.size);
    for (const auto& spec : m.config.modalities)
      if (spec.prior == PriorKind::EegDugh)
        m.context.eeg[spec.name] = EegContext{read_matrix(dir / (spec.name + "_data_cov.usbl")),
                                              read_matrix(dir / (spec.name + "_noise_cov.usbl")),
                                              {}};
    if (j.at("calibrated").get<bool>()) m.omega_samples = read_vector(dir / "omega_samples.usbl");
    rebuild_weights(m);
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadManifest, std::string("model.json: ") + e.what());
  }
}

}  // namespace usbl
