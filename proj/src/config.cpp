#include "usbl/config.hpp"

#include <algorithm>

#include "usbl/error.hpp"

namespace usbl {

using nlohmann::json;

void require_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::Usage, where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&key](const char* a) { return key == a; });
    if (!known) throw Error(ErrorCode::Usage, where + ": unknown key '" + key + "'");
  }
}

namespace {

template <class T>
void get(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::Usage, where + "." + key + ": wrong type");
  }
}

const char* likelihood_name(LikelihoodLevel l) { return l == LikelihoodLevel::Trial ? "trial" : "session"; }

}  // namespace

json to_json(const HyperpriorConfig& c) {
  return {{"half_cauchy_scale_global", c.half_cauchy_scale_global},
          {"half_cauchy_scale_local", c.half_cauchy_scale_local},
          {"half_normal_scale_innovation", c.half_normal_scale_innovation},
          {"half_student_t_df", c.half_student_t_df},
          {"half_student_t_scale", c.half_student_t_scale},
          {"alpha_prior_scale", c.alpha_prior_scale},
          {"omega_half_cauchy_scale", c.omega_half_cauchy_scale},
          {"grw_intercept_scale", c.grw_intercept_scale}};
}

HyperpriorConfig hyper_from_json(const json& j, HyperpriorConfig c) {
  const std::string w = "hyper";
  require_keys(j, {"half_cauchy_scale_global", "half_cauchy_scale_local", "half_normal_scale_innovation",
                   "half_student_t_df", "half_student_t_scale", "alpha_prior_scale",
                   "omega_half_cauchy_scale", "grw_intercept_scale"},
               w);
  get(j, "half_cauchy_scale_global", c.half_cauchy_scale_global, w);
  get(j, "half_cauchy_scale_local", c.half_cauchy_scale_local, w);
  get(j, "half_normal_scale_innovation", c.half_normal_scale_innovation, w);
  get(j, "half_student_t_df", c.half_student_t_df, w);
  get(j, "half_student_t_scale", c.half_student_t_scale, w);
  get(j, "alpha_prior_scale", c.alpha_prior_scale, w);
  get(j, "omega_half_cauchy_scale", c.omega_half_cauchy_scale, w);
  get(j, "grw_intercept_scale", c.grw_intercept_scale, w);
  validate(c);
  return c;
}

std::vector<ModalitySpec> modality_specs(const std::vector<std::string>& names) {
  std::vector<ModalitySpec> out;
  for (const auto& n : names) out.push_back({n, default_prior_for(n)});
  return out;
}

json to_json(const ModelConfig& c) {
  json mods = json::array();
  for (const auto& m : c.modalities) mods.push_back({{"name", m.name}, {"prior", prior_kind_name(m.prior)}});
  return {{"modalities", mods},
          {"hyper", to_json(c.hyper)},
          {"lowrank_max_rank", c.lowrank_max_rank},
          {"likelihood", likelihood_name(c.likelihood)},
          {"leadfield_kernel_multiplier", c.leadfield_kernel_multiplier},
          {"noise_factors", c.noise_factors},
          {"data_cov_shrinkage", c.data_cov_shrinkage}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  const std::string w = "model";
  require_keys(j, {"modalities", "hyper", "lowrank_max_rank", "likelihood", "leadfield_kernel_multiplier",
                   "noise_factors", "data_cov_shrinkage"},
               w);
  if (j.contains("modalities")) {
    const json& mods = j.at("modalities");
    if (!mods.is_array()) throw Error(ErrorCode::Usage, "model.modalities: expected an array");
    c.modalities.clear();
    for (const auto& m : mods) {
      if (m.is_string()) {
        c.modalities.push_back({m.get<std::string>(), default_prior_for(m.get<std::string>())});
        continue;
      }
      require_keys(m, {"name", "prior"}, "model.modalities[]");
      if (!m.contains("name") || !m.at("name").is_string())
        throw Error(ErrorCode::Usage, "model.modalities[]: name required");
      ModalitySpec spec{m.at("name").get<std::string>(), PriorKind::Gaussian};
      spec.prior = m.contains("prior") ? parse_prior_kind(m.at("prior").get<std::string>())
                                       : default_prior_for(spec.name);
      c.modalities.push_back(spec);
    }
  }
  if (j.contains("hyper")) c.hyper = hyper_from_json(j.at("hyper"), c.hyper);
  get(j, "lowrank_max_rank", c.lowrank_max_rank, w);
  if (j.contains("likelihood")) {
    const std::string l = j.at("likelihood").get<std::string>();
    if (l == "session")
      c.likelihood = LikelihoodLevel::Session;
    else if (l == "trial")
      c.likelihood = LikelihoodLevel::Trial;
    else
      throw Error(ErrorCode::Usage, "model.likelihood must be 'session' or 'trial'");
  }
  get(j, "leadfield_kernel_multiplier", c.leadfield_kernel_multiplier, w);
  get(j, "noise_factors", c.noise_factors, w);
  get(j, "data_cov_shrinkage", c.data_cov_shrinkage, w);
  if (c.lowrank_max_rank < 1) throw Error(ErrorCode::Usage, "model.lowrank_max_rank must be >= 1");
  if (c.noise_factors < 0) throw Error(ErrorCode::Usage, "model.noise_factors must be >= 0");
  if (!(c.data_cov_shrinkage >= 0 && c.data_cov_shrinkage <= 1))
    throw Error(ErrorCode::Usage, "model.data_cov_shrinkage must lie in [0, 1]");
  return c;
}

json to_json(const OptimizerSchedule& c) {
  return {{"lr_start", c.lr_start}, {"lr_end", c.lr_end},   {"steps", c.steps},
          {"grad_clip_norm", c.grad_clip_norm}, {"beta1", c.beta1}, {"beta2", c.beta2},
          {"epsilon", c.epsilon}};
}

OptimizerSchedule schedule_from_json(const json& j, OptimizerSchedule c) {
  const std::string w = "optimizer";
  require_keys(j, {"lr_start", "lr_end", "steps", "grad_clip_norm", "beta1", "beta2", "epsilon"}, w);
  get(j, "lr_start", c.lr_start, w);
  get(j, "lr_end", c.lr_end, w);
  get(j, "steps", c.steps, w);
  get(j, "grad_clip_norm", c.grad_clip_norm, w);
  get(j, "beta1", c.beta1, w);
  get(j, "beta2", c.beta2, w);
  get(j, "epsilon", c.epsilon, w);
  validate(c);
  return c;
}

json to_json(const CVConfig& c) {
  return {{"folds", c.k}, {"repeats", c.r}, {"seed", c.seed}, {"stratified", c.stratified},
          {"allow_unstratified", c.allow_unstratified}};
}

CVConfig cv_config_from_json(const json& j, CVConfig c) {
  const std::string w = "cv";
  require_keys(j, {"folds", "repeats", "seed", "stratified", "allow_unstratified"}, w);
  get(j, "folds", c.k, w);
  get(j, "repeats", c.r, w);
  get(j, "seed", c.seed, w);
  get(j, "stratified", c.stratified, w);
  get(j, "allow_unstratified", c.allow_unstratified, w);
  c.validate();
  return c;
}

json to_json(const MCMCConfig& c) {
  return {{"warmup", c.warmup}, {"samples", c.samples}, {"target_acceptance", c.target_acceptance},
          {"initial_step", c.initial_step}};
}

MCMCConfig mcmc_from_json(const json& j, MCMCConfig c) {
  const std::string w = "mcmc";
  require_keys(j, {"warmup", "samples", "target_acceptance", "initial_step"}, w);
  get(j, "warmup", c.warmup, w);
  get(j, "samples", c.samples, w);
  get(j, "target_acceptance", c.target_acceptance, w);
  get(j, "initial_step", c.initial_step, w);
  if (c.warmup < 0 || c.samples < 1) throw Error(ErrorCode::Usage, "mcmc: need warmup >= 0 and samples >= 1");
  if (!(c.target_acceptance > 0 && c.target_acceptance < 1) || !(c.initial_step > 0))
    throw Error(ErrorCode::Usage, "mcmc: target_acceptance in (0, 1) and initial_step > 0 required");
  return c;
}

json to_json(const CalibrationConfig& c) {
  return {{"nested_folds", c.nested_folds}, {"mcmc", to_json(c.mcmc)}, {"omega_prior_scale", c.omega_prior_scale}};
}

CalibrationConfig calibration_from_json(const json& j, CalibrationConfig c) {
  const std::string w = "calibration";
  require_keys(j, {"nested_folds", "mcmc", "omega_prior_scale"}, w);
  get(j, "nested_folds", c.nested_folds, w);
  if (j.contains("mcmc")) c.mcmc = mcmc_from_json(j.at("mcmc"), c.mcmc);
  get(j, "omega_prior_scale", c.omega_prior_scale, w);
  if (c.nested_folds < 2) throw Error(ErrorCode::Usage, "calibration.nested_folds must be >= 2");
  if (!(c.omega_prior_scale > 0)) throw Error(ErrorCode::Usage, "calibration.omega_prior_scale must be > 0");
  return c;
}

json to_json(const SynthConfig& c) {
  json mods = json::array();
  for (const auto& m : c.modalities)
    mods.push_back({{"name", m.name},
                    {"channels", m.channels},
                    {"samples", m.samples},
                    {"sample_rate", m.sample_rate},
                    {"stimulus_index", m.stimulus_index}});
  return {{"n_participants", c.n_participants},
          {"class_balance", c.class_balance},
          {"blocks", c.blocks},
          {"trials_per_block", c.trials_per_block},
          {"modalities", mods},
          {"effect_size", c.effect_size},
          {"participant_variability", c.participant_variability},
          {"trial_noise_sd", c.trial_noise_sd},
          {"within_session_correlation", c.within_session_correlation},
          {"ar1", c.ar1},
          {"sparsity", c.sparsity},
          {"rt_base_ms", c.rt_base_ms},
          {"rt_effect_ms", c.rt_effect_ms},
          {"rt_noise_ms", c.rt_noise_ms},
          {"leadfield_vertices", c.leadfield_vertices},
          {"leadfield_regions", c.leadfield_regions},
          {"shuffle_labels", c.shuffle_labels},
          {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const json& j, SynthConfig c) {
  const std::string w = "synth";
  require_keys(j, {"n_participants", "class_balance", "blocks", "trials_per_block", "modalities", "effect_size",
                   "participant_variability", "trial_noise_sd", "within_session_correlation", "ar1",
                   "sparsity", "rt_base_ms", "rt_effect_ms", "rt_noise_ms", "leadfield_vertices",
                   "leadfield_regions", "shuffle_labels", "seed"},
               w);
  get(j, "n_participants", c.n_participants, w);
  get(j, "class_balance", c.class_balance, w);
  get(j, "blocks", c.blocks, w);
  get(j, "trials_per_block", c.trials_per_block, w);
  if (j.contains("modalities")) {
    if (!j.at("modalities").is_array()) throw Error(ErrorCode::Usage, "synth.modalities: expected an array");
    c.modalities.clear();
    for (const auto& m : j.at("modalities")) {
      const std::string mw = "synth.modalities[]";
      require_keys(m, {"name", "channels", "samples", "sample_rate", "stimulus_index"}, mw);
      SynthModality sm;
      get(m, "name", sm.name, mw);
      get(m, "channels", sm.channels, mw);
      get(m, "samples", sm.samples, mw);
      get(m, "sample_rate", sm.sample_rate, mw);
      get(m, "stimulus_index", sm.stimulus_index, mw);
      if (sm.name.empty()) throw Error(ErrorCode::Usage, mw + ": name required");
      c.modalities.push_back(sm);
    }
  }
  get(j, "effect_size", c.effect_size, w);
  get(j, "participant_variability", c.participant_variability, w);
  get(j, "trial_noise_sd", c.trial_noise_sd, w);
  get(j, "within_session_correlation", c.within_session_correlation, w);
  get(j, "ar1", c.ar1, w);
  get(j, "sparsity", c.sparsity, w);
  get(j, "rt_base_ms", c.rt_base_ms, w);
  get(j, "rt_effect_ms", c.rt_effect_ms, w);
  get(j, "rt_noise_ms", c.rt_noise_ms, w);
  get(j, "leadfield_vertices", c.leadfield_vertices, w);
  get(j, "leadfield_regions", c.leadfield_regions, w);
  get(j, "shuffle_labels", c.shuffle_labels, w);
  get(j, "seed", c.seed, w);
  c.validate();
  return c;
}

}  // namespace usbl
