#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <set>

#include "toy.hpp"
#include "usbl/baselines.hpp"
#include "usbl/calibrate.hpp"
#include "usbl/config.hpp"
#include "usbl/error.hpp"
#include "usbl/metrics.hpp"
#include "usbl/pipeline.hpp"
#include "usbl/run_config.hpp"
#include "usbl/synth.hpp"

using namespace usbl;

namespace {

SynthConfig gaze_cohort(int n, std::uint64_t seed, double effect = 0.5) {
  SynthConfig c;
  c.n_participants = n;
  c.blocks = 4;
  c.trials_per_block = 5;
  c.modalities = {{"gaze", 4, 8, 10.0, 2}};
  c.effect_size = effect;
  c.participant_variability = 0.2;
  c.seed = seed;
  return c;
}

FitOptions gaze_fit(int steps) {
  FitOptions o;
  o.model.modalities = {{"gaze", PriorKind::HorseshoeGrw}};
  o.schedule.steps = steps;
  return o;
}

std::map<std::string, int> label_map(const Dataset& ds) {
  std::map<std::string, int> out;
  for (const auto& s : ds.sessions) out[s.participant_id] = *s.label;
  return out;
}

double cosine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a.array() * b.array()).sum() / (a.norm() * b.norm());
}

}  // namespace

TEST_CASE("fitted model survives save and load") {
  const Cohort c = generate_cohort(gaze_cohort(12, 3));
  const FittedModel m = fit_usbl(c.dataset, nullptr, gaze_fit(300), 5);
  const auto dir = toy::scratch("model_roundtrip");
  save_model(m, dir);
  const FittedModel back = load_model(dir);
  CHECK(back.params == m.params);
  CHECK(back.omega == m.omega);
  for (const auto& s : c.dataset.sessions)
    CHECK(predict_probability(back, s) == predict_probability(m, s));

  SUBCASE("with an EEG source prior") {
    SynthConfig sc = toy::gradient_cohort_config(4);
    sc.n_participants = 6;
    const Cohort e = generate_cohort(sc);
    const SourceModel src = prepare_source_model(e.leadfield);
    FitOptions o;
    o.model.modalities = {{"eeg", PriorKind::EegDugh}, {"gaze", PriorKind::HorseshoeGrw}};
    o.schedule.steps = 100;
    const FittedModel me = fit_usbl(e.dataset, &src, o, 2);
    const auto dir2 = toy::scratch("model_roundtrip_eeg");
    save_model(me, dir2);
    const FittedModel be = load_model(dir2);
    for (const auto& s : e.dataset.sessions)
      CHECK(model_session_logit(be, s) == model_session_logit(me, s));
  }
  SUBCASE("source prior without a lead field") {
    SynthConfig sc = toy::gradient_cohort_config(4);
    const Cohort e = generate_cohort(sc);
    FitOptions o;
    o.model.modalities = {{"eeg", PriorKind::EegDugh}};
    o.schedule.steps = 10;
    CHECK_THROWS_AS(fit_usbl(e.dataset, nullptr, o, 1), Error);
  }
  SUBCASE("loading a missing directory") {
    CHECK_THROWS_AS(load_model(toy::scratch("empty_model") / "nope"), Error);
  }
}

TEST_CASE("calibration never sees the held-out participant") {
  const Cohort c = generate_cohort(gaze_cohort(20, 8));
  const auto labels = label_map(c.dataset);
  std::vector<std::set<std::string>> fits;
  const FitProcedure spy = [&](const Dataset& train, std::uint64_t) -> LogitPredictor {
    std::set<std::string> seen;
    for (const auto& s : train.sessions) seen.insert(s.participant_id);
    fits.push_back(seen);
    auto owned = std::make_shared<std::set<std::string>>(seen);
    return [owned](const Session& s) {
      // A leak would surface here as a held-out participant in the training set.
      REQUIRE(owned->count(s.participant_id) == 0);
      return 0.1;
    };
  };
  CalibrationConfig cfg;
  cfg.mcmc.warmup = 200;
  cfg.mcmc.samples = 500;
  const CalibrationResult r = calibrate_logits(c.dataset, spy, 9, cfg);
  CHECK(fits.size() == 5);
  std::multiset<std::string> ids(r.heldout_ids.begin(), r.heldout_ids.end());
  CHECK(ids.size() == c.dataset.sessions.size());
  for (const auto& s : c.dataset.sessions) CHECK(ids.count(s.participant_id) == 1);
  for (std::size_t i = 0; i < r.heldout.size(); ++i) CHECK(r.heldout[i].y == labels.at(r.heldout_ids[i]));
  // Each participant appears in exactly four of the five nested training sets.
  for (const auto& s : c.dataset.sessions) {
    int n = 0;
    for (const auto& f : fits) n += static_cast<int>(f.count(s.participant_id));
    CHECK(n == 4);
  }
}

TEST_CASE("calibration shrinks or stretches omega") {
  const Cohort c = generate_cohort(gaze_cohort(60, 12));
  const auto labels = label_map(c.dataset);
  CalibrationConfig cfg;
  cfg.mcmc.warmup = 1000;
  cfg.mcmc.samples = 4000;

  SUBCASE("overconfident noise is pulled toward one half") {
    const FitProcedure noise = [&](const Dataset&, std::uint64_t seed) -> LogitPredictor {
      return [seed](const Session& s) {
        std::mt19937_64 rng(seed ^ std::hash<std::string>{}(s.participant_id));
        return std::normal_distribution<double>(0.0, 4.0)(rng);
      };
    };
    const CalibrationResult r = calibrate_logits(c.dataset, noise, 3, cfg);
    const double w = r.omega_point();
    CHECK(w < 0.3);
    std::vector<double> cal, raw;
    std::vector<int> y;
    for (const auto& p : r.heldout) {
      cal.push_back(logistic(w * p.z));
      raw.push_back(logistic(p.z));
      y.push_back(p.y);
    }
    CHECK(brier(cal, y) <= 0.25 + 0.01);
    CHECK(brier(cal, y) < brier(raw, y));
  }
  SUBCASE("timid but correct logits are stretched") {
    const FitProcedure timid = [&](const Dataset&, std::uint64_t) -> LogitPredictor {
      return [&labels](const Session& s) { return labels.at(s.participant_id) ? 0.2 : -0.2; };
    };
    const CalibrationResult r = calibrate_logits(c.dataset, timid, 3, cfg);
    CHECK(r.omega_point() > 5);
  }
  SUBCASE("too few participants for the nested folds") {
    Dataset small = c.dataset;
    small.sessions.resize(4);
    const FitProcedure any = [](const Dataset&, std::uint64_t) -> LogitPredictor {
      return [](const Session&) { return 0.0; };
    };
    try {
      calibrate_logits(small, any, 1, cfg);
      FAIL("expected StratificationFailure");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::StratificationFailure);
    }
  }
  SUBCASE("one class only") {
    Dataset one = c.dataset;
    std::erase_if(one.sessions, [](const Session& s) { return *s.label == 1; });
    const FitProcedure any = [](const Dataset&, std::uint64_t) -> LogitPredictor {
      return [](const Session&) { return 0.0; };
    };
    CHECK_THROWS_AS(calibrate_logits(one, any, 1, cfg), Error);
  }
}

TEST_CASE("calibrated USBL keeps ranking and decisions") {
  const Cohort train = generate_cohort(gaze_cohort(20, 21));
  const Cohort test = generate_cohort(gaze_cohort(20, 22));
  CalibrationConfig cfg;
  cfg.mcmc.warmup = 500;
  cfg.mcmc.samples = 2000;
  CalibrationResult details;
  const FittedModel cal = calibrate_usbl(train.dataset, nullptr, gaze_fit(300), 4, cfg, &details);
  CHECK(cal.calibrated());
  CHECK(cal.omega > 0);
  CHECK(cal.omega == details.omega_point());
  FittedModel raw = cal;
  raw.omega = 1.0;
  raw.omega_samples.clear();
  std::vector<double> pc, pr;
  std::vector<int> y;
  for (const auto& s : test.dataset.sessions) {
    pc.push_back(predict_probability(cal, s));
    pr.push_back(predict_probability(raw, s));
    y.push_back(*s.label);
    CHECK((pc.back() >= 0.5) == (pr.back() >= 0.5));
  }
  CHECK(*auc(pc, y) == *auc(pr, y));
}

TEST_CASE("baseline predictions are per session") {
  const Cohort c = generate_cohort(gaze_cohort(24, 31));
  Dataset train = c.dataset, test = c.dataset;
  train.sessions.resize(16);
  test.sessions.erase(test.sessions.begin(), test.sessions.begin() + 16);
  for (auto& s : test.sessions) s.label.reset();
  for (const BaselineKind kind : {BaselineKind::Slda, BaselineKind::RidgeLR}) {
    BaselineConfig cfg;
    cfg.kind = kind;
    cfg.modalities = {"gaze"};
    const std::vector<double> base = run_baseline(train, test, cfg, 7);
    Dataset moved = test;
    for (auto& seg : moved.sessions[2].trials.at("gaze")) seg.array() += 3.0;
    const std::vector<double> after = run_baseline(train, moved, cfg, 7);
    REQUIRE(base.size() == after.size());
    for (std::size_t i = 0; i < base.size(); ++i)
      if (i != 2) CHECK(after[i] == base[i]);
  }
}

TEST_CASE("configuration parsing") {
  SUBCASE("unknown keys are rejected") {
    CHECK_THROWS_AS(schedule_from_json({{"steps", 10}, {"stepz", 3}}), Error);
    CHECK_THROWS_AS(cv_config_from_json({{"folds", 5}, {"k", 5}}), Error);
    CHECK_THROWS_AS(synth_config_from_json({{"n_participants", 4}, {"bogus", true}}), Error);
    CHECK_THROWS_AS(eval_run_config_from_json({{"methods", {"usbl"}}, {"extra", 1}}), Error);
    CHECK_THROWS_AS(fit_run_config_from_json(nlohmann::json::array()), Error);
  }
  SUBCASE("round trips") {
    OptimizerSchedule s;
    s.steps = 123;
    s.lr_end = 0.001;
    CHECK(to_json(schedule_from_json(to_json(s))) == to_json(s));
    CVConfig cv;
    cv.k = 4;
    cv.r = 3;
    cv.seed = 99;
    CHECK(to_json(cv_config_from_json(to_json(cv))) == to_json(cv));
    const SynthConfig sc = gaze_cohort(7, 5, 0.3);
    CHECK(to_json(synth_config_from_json(to_json(sc))) == to_json(sc));
    EvalRunConfig ev;
    ev.methods = {"usbl", "slda"};
    ev.modality_sets = {{"gaze"}, {"eeg", "gaze"}};
    ev.fdr_q = 0.1;
    CHECK(to_json(eval_run_config_from_json(to_json(ev))) == to_json(ev));
    FitRunConfig fr;
    fr.modalities = {"gaze"};
    fr.fit.model.modalities = {{"gaze", PriorKind::HorseshoeGrw}};
    fr.calibrate = true;
    CHECK(to_json(fit_run_config_from_json(to_json(fr))) == to_json(fr));
  }
  SUBCASE("partial objects keep the defaults") {
    const OptimizerSchedule s = schedule_from_json({{"steps", 10}});
    CHECK(s.steps == 10);
    CHECK(s.lr_start == OptimizerSchedule{}.lr_start);
  }
  SUBCASE("prior names") {
    const ModelConfig m = model_config_from_json(
        {{"modalities", {{{"name", "gaze"}, {"prior", "horseshoe"}}, "eeg"}}});
    REQUIRE(m.modalities.size() == 2);
    CHECK(m.modalities[0].prior == PriorKind::Horseshoe);
    CHECK(m.modalities[1].name == "eeg");
    CHECK_THROWS_AS(model_config_from_json({{"modalities", {{{"name", "gaze"}, {"prior", "nope"}}}}}), Error);
  }
}

TEST_CASE("weights are recovered on a large low-noise cohort") {
  SynthConfig sc = gaze_cohort(200, 41, 0.3);
  sc.participant_variability = 0.0;
  const Cohort c = generate_cohort(sc);
  const Eigen::MatrixXd& truth = c.truth.patterns.at("gaze");
  // Raw-space contrast alpha * diag(scales) * W; alpha carries the sign.
  auto raw_weights = [](const FittedModel& m) {
    const double alpha = unpack(m.context.layout, m.params).modalities[0].alpha;
    return Eigen::MatrixXd(alpha * m.standardizers.at("gaze").channel_scales.asDiagonal() * m.weights[0]);
  };
  auto fit = [&](PriorKind prior, LikelihoodLevel lik) {
    FitOptions o = gaze_fit(2000);
    o.model.modalities = {{"gaze", prior}};
    o.model.likelihood = lik;
    return fit_usbl(c.dataset, nullptr, o, 6);
  };
  for (const PriorKind prior : {PriorKind::Gaussian, PriorKind::Horseshoe})
    CHECK(cosine(raw_weights(fit(prior, LikelihoodLevel::Session)), truth) > 0.9);
  CHECK(cosine(raw_weights(fit(PriorKind::HorseshoeGrw, LikelihoodLevel::Trial)), truth) > 0.9);
  // With session evidence only, MAP drives the innovation scale toward zero
  // (the hierarchical funnel) and rows flatten; channel profiles still match.
  const Eigen::MatrixXd flat = raw_weights(fit(PriorKind::HorseshoeGrw, LikelihoodLevel::Session));
  CHECK(cosine(flat.rowwise().sum(), truth.rowwise().sum()) > 0.9);
}
