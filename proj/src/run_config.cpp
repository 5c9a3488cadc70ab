#include "usbl/run_config.hpp"

#include "usbl/config.hpp"
#include "usbl/error.hpp"

namespace usbl {

using nlohmann::json;

namespace {

std::vector<ModalitySpec> merge_priors(const std::vector<std::string>& names,
                                       const std::vector<ModalitySpec>& pinned) {
  std::vector<ModalitySpec> out = modality_specs(names);
  for (auto& s : out)
    for (const auto& p : pinned)
      if (p.name == s.name) s.prior = p.prior;
  return out;
}

std::vector<std::string> string_list(const json& j, const std::string& where) {
  if (j.is_string()) return {j.get<std::string>()};
  if (!j.is_array()) throw Error(ErrorCode::Usage, where + ": expected a string or list of strings");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw Error(ErrorCode::Usage, where + ": expected strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

FitRunConfig fit_run_config_from_json(const json& j) {
  require_keys(j, {"modalities", "model", "optimizer", "seed", "laplace", "calibrate", "calibration"}, "fit");
  FitRunConfig c;
  try {
    if (j.contains("model")) c.fit.model = model_config_from_json(j.at("model"));
    if (j.contains("optimizer")) c.fit.schedule = schedule_from_json(j.at("optimizer"));
    if (j.contains("calibration")) c.calibration = calibration_from_json(j.at("calibration"));
    if (j.contains("modalities")) c.modalities = string_list(j.at("modalities"), "fit.modalities");
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("laplace")) c.fit.laplace = j.at("laplace").get<bool>();
    if (j.contains("calibrate")) c.calibrate = j.at("calibrate").get<bool>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Usage, std::string("fit config: ") + e.what());
  }
  if (!c.modalities.empty()) c.fit.model.modalities = merge_priors(c.modalities, c.fit.model.modalities);
  return c;
}

json to_json(const FitRunConfig& c) {
  return {{"modalities", c.modalities}, {"model", to_json(c.fit.model)},
          {"optimizer", to_json(c.fit.schedule)}, {"seed", c.seed},
          {"laplace", c.fit.laplace}, {"calibrate", c.calibrate},
          {"calibration", to_json(c.calibration)}};
}

void resolve_modalities(FitRunConfig& c, const Dataset& ds) {
  if (c.modalities.empty()) {
    if (!c.fit.model.modalities.empty()) {
      for (const auto& m : c.fit.model.modalities) c.modalities.push_back(m.name);
    } else {
      for (const auto& m : ds.modalities)
        if (m.name != "rt") c.modalities.push_back(m.name);
    }
  }
  c.fit.model.modalities = merge_priors(c.modalities, c.fit.model.modalities);
  for (const auto& m : c.modalities)
    if (!ds.has_modality(m)) throw Error(ErrorCode::MissingModality, "dataset lacks modality '" + m + "'");
}

EvalRunConfig eval_run_config_from_json(const json& j) {
  require_keys(j, {"methods", "modalities", "cv", "model", "optimizer", "calibrate", "calibration", "baseline",
                   "dscore", "fdr_q", "alpha", "jobs"},
               "eval");
  EvalRunConfig c;
  try {
    if (j.contains("methods")) c.methods = string_list(j.at("methods"), "eval.methods");
    if (j.contains("modalities")) {
      const json& m = j.at("modalities");
      c.modality_sets.clear();
      if (m.is_array() && !m.empty() && m.front().is_array()) {
        for (const auto& set : m) c.modality_sets.push_back(string_list(set, "eval.modalities[]"));
      } else {
        c.modality_sets.push_back(string_list(m, "eval.modalities"));
      }
    }
    if (j.contains("cv")) c.cv = cv_config_from_json(j.at("cv"));
    if (j.contains("model")) c.fit.model = model_config_from_json(j.at("model"));
    if (j.contains("optimizer")) c.fit.schedule = schedule_from_json(j.at("optimizer"));
    if (j.contains("calibrate")) c.calibrate = j.at("calibrate").get<bool>();
    if (j.contains("calibration")) c.calibration = calibration_from_json(j.at("calibration"));
    if (j.contains("baseline")) {
      const json& b = j.at("baseline");
      require_keys(b, {"ridge_grid", "nested_folds", "logit_clamp"}, "eval.baseline");
      if (b.contains("ridge_grid")) c.baseline.ridge_grid = b.at("ridge_grid").get<std::vector<double>>();
      if (b.contains("nested_folds")) c.baseline.nested_folds = b.at("nested_folds").get<int>();
      if (b.contains("logit_clamp")) c.baseline.logit_clamp = b.at("logit_clamp").get<double>();
    }
    if (j.contains("dscore")) {
      const json& d = j.at("dscore");
      require_keys(d, {"modality", "clamp"}, "eval.dscore");
      if (d.contains("modality")) c.dscore_modality = d.at("modality").get<std::string>();
      if (d.contains("clamp")) c.dscore_clamp = d.at("clamp").get<bool>();
    }
    if (j.contains("fdr_q")) c.fdr_q = j.at("fdr_q").get<double>();
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    if (j.contains("jobs")) c.jobs = j.at("jobs").get<int>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Usage, std::string("eval config: ") + e.what());
  }
  if (c.methods.empty()) throw Error(ErrorCode::Usage, "eval.methods is empty");
  for (const auto& set : c.modality_sets)
    if (set.empty()) throw Error(ErrorCode::Usage, "eval.modalities holds an empty set");
  if (c.baseline.ridge_grid.empty()) throw Error(ErrorCode::Usage, "eval.baseline.ridge_grid is empty");
  if (c.baseline.nested_folds < 2) throw Error(ErrorCode::Usage, "eval.baseline.nested_folds must be >= 2");
  if (!(c.fdr_q > 0 && c.fdr_q < 1) || !(c.alpha > 0 && c.alpha < 1))
    throw Error(ErrorCode::Usage, "fdr_q and alpha must lie in (0, 1)");
  if (c.jobs < 1) throw Error(ErrorCode::Usage, "jobs must be >= 1");
  return c;
}

json to_json(const EvalRunConfig& c) {
  return {{"methods", c.methods},
          {"modalities", c.modality_sets},
          {"cv", to_json(c.cv)},
          {"model", to_json(c.fit.model)},
          {"optimizer", to_json(c.fit.schedule)},
          {"calibrate", c.calibrate},
          {"calibration", to_json(c.calibration)},
          {"baseline",
           {{"ridge_grid", c.baseline.ridge_grid},
            {"nested_folds", c.baseline.nested_folds},
            {"logit_clamp", c.baseline.logit_clamp}}},
          {"dscore", {{"modality", c.dscore_modality}, {"clamp", c.dscore_clamp}}},
          {"fdr_q", c.fdr_q},
          {"alpha", c.alpha}};
}

bool needs_source_model(const ModelConfig& c) {
  for (const auto& m : c.modalities)
    if (m.prior == PriorKind::EegDugh) return true;
  return false;
}

bool needs_source_model(const EvalRunConfig& c) {
  for (const auto& method : c.methods) {
    if (method != "usbl") continue;
    for (const auto& set : c.modality_sets)
      if (needs_source_model(ModelConfig{merge_priors(set, c.fit.model.modalities)})) return true;
  }
  return false;
}

std::vector<MethodSpec> build_methods(const EvalRunConfig& c, const SourceModel* source) {
  MethodOptions opts;
  opts.fit = c.fit;
  opts.calibrate = c.calibrate;
  opts.calibration = c.calibration;
  opts.source = source;
  opts.baseline = c.baseline;
  opts.rt_modality = c.dscore_modality;
  opts.dscore_clamp = c.dscore_clamp;
  std::vector<MethodSpec> out;
  for (const auto& method : c.methods) {
    if (method == "dscore") {
      out.push_back(make_method(method, {c.dscore_modality}, opts));
      continue;
    }
    for (const auto& set : c.modality_sets) out.push_back(make_method(method, set, opts));
  }
  return out;
}

}  // namespace usbl
