#include "usbl/usbl.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <mutex>
#include <new>
#include <optional>
#include <string>

#include "usbl/baselines.hpp"
#include "usbl/config.hpp"
#include "usbl/error.hpp"
#include "usbl/experiment.hpp"
#include "usbl/metrics.hpp"
#include "usbl/pipeline.hpp"
#include "usbl/run_config.hpp"
#include "usbl/synth.hpp"
#include "usbl/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

struct usbl_dataset {
  usbl::Dataset ds;
  mutable std::mutex source_mutex;
  mutable std::optional<usbl::SourceModel> source;
  mutable double source_kernel = -1.0;
};

struct usbl_model {
  usbl::FittedModel model;
};

struct usbl_results {
  usbl::ResultsTable table;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_code;

usbl_status status_of(usbl::ErrorClass c) {
  switch (c) {
    case usbl::ErrorClass::Usage: return USBL_ERR_USAGE;
    case usbl::ErrorClass::Data: return USBL_ERR_DATA;
    case usbl::ErrorClass::Numerical: return USBL_ERR_NUMERIC;
  }
  return USBL_ERR_INTERNAL;
}

template <class F>
usbl_status guarded(F&& f) {
  g_error.clear();
  g_code.clear();
  try {
    f();
    return USBL_OK;
  } catch (const usbl::Error& e) {
    g_error = e.what();
    g_code = usbl::error_code_name(e.code());
    return status_of(usbl::error_class(e.code()));
  } catch (const json::exception& e) {
    g_error = std::string("invalid JSON: ") + e.what();
    g_code = "Usage";
    return USBL_ERR_USAGE;
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
    g_code = "Internal";
    return USBL_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_error = e.what();
    g_code = "Internal";
    return USBL_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw usbl::Error(usbl::ErrorCode::Usage, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json parse_config(const char* text) {
  if (!text || !*text) return json::object();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw usbl::Error(usbl::ErrorCode::Usage, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw usbl::Error(usbl::ErrorCode::Usage, "config must be a JSON object");
  return j;
}

const usbl::SourceModel* source_for(const usbl_dataset* h, double kernel) {
  std::lock_guard<std::mutex> lock(h->source_mutex);
  if (h->source && h->source_kernel == kernel) return &*h->source;
  if (!h->ds.leadfield_dir)
    throw usbl::Error(usbl::ErrorCode::MissingFile, "the EEG source prior needs a lead field; dataset has none");
  h->source = usbl::prepare_source_model(usbl::load_leadfield(*h->ds.leadfield_dir), kernel);
  h->source_kernel = kernel;
  return &*h->source;
}

usbl::FittedModel fit_impl(const usbl_dataset* h, const char* config_json, bool force_calibrate) {
  usbl::FitRunConfig cfg = usbl::fit_run_config_from_json(parse_config(config_json));
  if (force_calibrate) cfg.calibrate = true;
  usbl::resolve_modalities(cfg, h->ds);
  const usbl::SourceModel* source = usbl::needs_source_model(cfg.fit.model)
                                        ? source_for(h, cfg.fit.model.leadfield_kernel_multiplier)
                                        : nullptr;
  if (cfg.calibrate) return usbl::calibrate_usbl(h->ds, source, cfg.fit, cfg.seed, cfg.calibration);
  return usbl::fit_usbl(h->ds, source, cfg.fit, cfg.seed);
}

}  // namespace

extern "C" {

const char* usbl_version(void) { return USBL_VERSION_STRING; }
const char* usbl_last_error(void) { return g_error.c_str(); }
const char* usbl_last_error_code(void) { return g_code.c_str(); }
void usbl_string_free(char* s) { std::free(s); }

usbl_status usbl_simulate(const char* config_json, const char* out_dir, char** summary_json) {
  return guarded([&] {
    require(out_dir, "out_dir");
    const usbl::SynthConfig cfg = usbl::synth_config_from_json(parse_config(config_json));
    const usbl::Cohort cohort = usbl::generate_cohort(cfg);
    usbl::save_cohort(cohort, out_dir);
    if (summary_json) {
      int positives = 0;
      for (int y : cohort.truth.labels) positives += y;
      json s = {{"config", usbl::to_json(cfg)},
                {"participants", cohort.dataset.sessions.size()},
                {"positives", positives},
                {"trials_per_session", cfg.blocks * cfg.trials_per_block},
                {"oracle_auc", usbl::oracle_auc(cohort.dataset, cohort.truth)}};
      *summary_json = dup_string(s.dump(2));
    }
  });
}

usbl_status usbl_dataset_load(const char* path, usbl_dataset** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    fs::path p(path);
    if (fs::is_directory(p)) p /= "manifest.json";
    auto h = std::make_unique<usbl_dataset>();
    h->ds = usbl::load_dataset(p);
    *out = h.release();
  });
}

void usbl_dataset_free(usbl_dataset* ds) { delete ds; }

usbl_status usbl_dataset_info(const usbl_dataset* h, char** info_json) {
  return guarded([&] {
    require(h, "dataset");
    require(info_json, "info_json");
    json mods = json::array();
    for (const auto& m : h->ds.modalities)
      mods.push_back({{"name", m.name},
                      {"channels", m.channels},
                      {"samples", m.samples},
                      {"sample_rate", m.sample_rate},
                      {"stimulus_index", m.stimulus_index}});
    int labeled = 0;
    for (const auto& s : h->ds.sessions) labeled += s.label.has_value();
    json j = {{"name", h->ds.name},
              {"sessions", h->ds.sessions.size()},
              {"labeled_sessions", labeled},
              {"modalities", mods},
              {"has_leadfield", h->ds.leadfield_dir.has_value()}};
    *info_json = dup_string(j.dump(2));
  });
}

usbl_status usbl_resolve_config(const char* kind, const char* config_json, char** resolved_json) {
  return guarded([&] {
    require(kind, "kind");
    require(resolved_json, "resolved_json");
    const json j = parse_config(config_json);
    const std::string k(kind);
    json out;
    if (k == "fit") {
      out = usbl::to_json(usbl::fit_run_config_from_json(j));
    } else if (k == "eval") {
      const usbl::EvalRunConfig c = usbl::eval_run_config_from_json(j);
      out = usbl::to_json(c);
      out["jobs"] = c.jobs;
    } else if (k == "simulate") {
      out = usbl::to_json(usbl::synth_config_from_json(j));
    } else {
      throw usbl::Error(usbl::ErrorCode::Usage, "unknown config kind '" + k + "'");
    }
    *resolved_json = dup_string(out.dump(2));
  });
}

usbl_status usbl_fit(const usbl_dataset* ds, const char* config_json, usbl_model** out) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "out");
    *out = nullptr;
    auto m = std::make_unique<usbl_model>();
    m->model = fit_impl(ds, config_json, false);
    *out = m.release();
  });
}

usbl_status usbl_calibrate(const usbl_dataset* ds, const char* config_json, usbl_model** out) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "out");
    *out = nullptr;
    auto m = std::make_unique<usbl_model>();
    m->model = fit_impl(ds, config_json, true);
    *out = m.release();
  });
}

usbl_status usbl_model_save(const usbl_model* m, const char* dir) {
  return guarded([&] {
    require(m, "model");
    require(dir, "dir");
    usbl::save_model(m->model, dir);
  });
}

usbl_status usbl_model_load(const char* dir, usbl_model** out) {
  return guarded([&] {
    require(dir, "dir");
    require(out, "out");
    *out = nullptr;
    auto m = std::make_unique<usbl_model>();
    m->model = usbl::load_model(dir);
    *out = m.release();
  });
}

void usbl_model_free(usbl_model* m) { delete m; }

usbl_status usbl_model_info(const usbl_model* m, char** info_json) {
  return guarded([&] {
    require(m, "model");
    require(info_json, "info_json");
    const auto& fm = m->model;
    json j = {{"model", usbl::to_json(fm.config)},
              {"parameters", fm.params.size()},
              {"omega", fm.omega},
              {"calibrated", fm.calibrated()},
              {"final_objective", fm.trace.empty() ? json(nullptr) : json(fm.trace.back())}};
    *info_json = dup_string(j.dump(2));
  });
}

usbl_status usbl_predict(const usbl_model* m, const usbl_dataset* ds, char** predictions_json) {
  return guarded([&] {
    require(m, "model");
    require(ds, "dataset");
    require(predictions_json, "predictions_json");
    json preds = json::array();
    std::vector<double> probs;
    std::vector<int> labels;
    bool all_labeled = true;
    for (const auto& s : ds->ds.sessions) {
      const double z = usbl::model_session_logit(m->model, s);
      const double p = usbl::predict_from_logit(z, m->model.omega);
      json row = {{"participant", s.participant_id}, {"logit", z}, {"probability", p},
                  {"predicted_label", p >= 0.5 ? 1 : 0}};
      if (s.label) {
        row["label"] = *s.label;
        labels.push_back(*s.label);
      } else {
        all_labeled = false;
      }
      probs.push_back(p);
      preds.push_back(row);
    }
    json j = {{"omega", m->model.omega}, {"predictions", preds}};
    if (all_labeled && !probs.empty()) {
      const auto a = usbl::auc(probs, labels);
      j["metrics"] = {{"auc", a ? json(*a) : json(nullptr)},
                      {"brier", usbl::brier(probs, labels)},
                      {"cross_entropy", usbl::cross_entropy(probs, labels)}};
    }
    *predictions_json = dup_string(j.dump(2));
  });
}

usbl_status usbl_eval(const usbl_dataset* ds, const char* config_json, usbl_results** out) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "out");
    *out = nullptr;
    const usbl::EvalRunConfig cfg = usbl::eval_run_config_from_json(parse_config(config_json));
    const usbl::SourceModel* source =
        usbl::needs_source_model(cfg) ? source_for(ds, cfg.fit.model.leadfield_kernel_multiplier) : nullptr;
    const auto methods = usbl::build_methods(cfg, source);
    usbl::ExperimentOptions opts;
    opts.jobs = cfg.jobs;
    opts.fdr_q = cfg.fdr_q;
    opts.alpha = cfg.alpha;
    opts.config = usbl::to_json(cfg);
    auto r = std::make_unique<usbl_results>();
    r->table = usbl::run_experiment(ds->ds, methods, cfg.cv, opts);
    *out = r.release();
  });
}

usbl_status usbl_results_json(const usbl_results* r, char** out) {
  return guarded([&] {
    require(r, "results");
    require(out, "out");
    *out = dup_string(usbl::results_to_json(r->table).dump(2) + "\n");
  });
}

usbl_status usbl_results_csv(const usbl_results* r, char** out) {
  return guarded([&] {
    require(r, "results");
    require(out, "out");
    *out = dup_string(usbl::records_csv(r->table));
  });
}

void usbl_results_free(usbl_results* r) { delete r; }

usbl_status usbl_report(const char* results_json, const char* format, char** out) {
  return guarded([&] {
    require(results_json, "results_json");
    require(out, "out");
    json j;
    try {
      j = json::parse(results_json);
    } catch (const json::exception& e) {
      throw usbl::Error(usbl::ErrorCode::BadManifest, std::string("results document: ") + e.what());
    }
    *out = dup_string(usbl::render_report(j, usbl::parse_report_format(format ? format : "text")));
  });
}

usbl_status usbl_dscore(const usbl_dataset* ds, const char* modality, int clamp, char** out) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "out");
    const std::string mod = modality ? modality : "rt";
    if (!ds->ds.has_modality(mod)) throw usbl::Error(usbl::ErrorCode::MissingModality, "dataset lacks '" + mod + "'");
    json rows = json::array();
    std::vector<double> scores;
    std::vector<int> labels;
    bool all_labeled = true;
    for (const auto& s : ds->ds.sessions) {
      const usbl::DScoreResult d = usbl::dscore(usbl::session_rt_trials(s, mod), clamp != 0);
      json row = {{"participant", s.participant_id},
                  {"d", d.d},
                  {"mean_incongruent", d.mean_incongruent},
                  {"mean_congruent", d.mean_congruent},
                  {"pooled_sd", d.pooled_sd},
                  {"predicted_label", usbl::dscore_classify(d.d)}};
      if (s.label) {
        row["label"] = *s.label;
        labels.push_back(*s.label);
      } else {
        all_labeled = false;
      }
      scores.push_back(d.d);
      rows.push_back(row);
    }
    json j = {{"modality", mod}, {"clamp", clamp != 0}, {"sessions", rows}};
    if (all_labeled && !scores.empty()) {
      const auto a = usbl::auc(scores, labels);
      j["auc"] = a ? json(*a) : json(nullptr);
    }
    *out = dup_string(j.dump(2));
  });
}

usbl_status usbl_deff(const usbl_dataset* ds, const char* modality, int n_pcs, char** out) {
  return guarded([&] {
    require(ds, "dataset");
    require(modality, "modality");
    require(out, "out");
    if (n_pcs < 1) throw usbl::Error(usbl::ErrorCode::Usage, "n_pcs must be >= 1");
    const usbl::DeffEstimate d = usbl::kish_deff(ds->ds, modality, n_pcs);
    json j = {{"modality", modality},
              {"n_pcs", d.n_pcs},
              {"deff", d.deff},
              {"deff_per_pc", d.deff_per_pc},
              {"icc_per_pc", d.icc_per_pc},
              {"mean_trials", d.mean_trials},
              {"n_eff_per_session", d.n_eff_per_session}};
    if (!d.warning.empty()) j["warning"] = d.warning;
    *out = dup_string(j.dump(2));
  });
}

}  // extern "C"
