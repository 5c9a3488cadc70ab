#include "usbl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "usbl/error.hpp"
#include "usbl/model.hpp"
#include "usbl/rng.hpp"

namespace usbl {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& v, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<double> run_usbl(const TrainTestSplit& split, const MethodOptions& opts,
                             const std::vector<std::string>& modalities, bool lowrank) {
  FitOptions fit = opts.fit;
  fit.model.modalities.clear();
  for (const auto& name : modalities) {
    ModalitySpec spec{name, default_prior_for(name)};
    for (const auto& pinned : opts.fit.model.modalities)
      if (pinned.name == name) spec.prior = pinned.prior;
    if (lowrank && spec.prior == PriorKind::EegDugh) spec.prior = PriorKind::EegLowRank;
    fit.model.modalities.push_back(spec);
  }
  const FittedModel m = opts.calibrate
                            ? calibrate_usbl(*split.train, opts.source, fit, split.seed, opts.calibration)
                            : fit_usbl(*split.train, opts.source, fit, split.seed);
  std::vector<double> out;
  for (const auto& s : split.test->sessions) out.push_back(predict_probability(m, s));
  return out;
}

std::vector<double> run_baseline_method(const TrainTestSplit& split, BaselineConfig cfg) {
  const StandardizerSet st = fit_standardizers(*split.train, cfg.modalities);
  return run_baseline(standardize(*split.train, st), standardize(*split.test, st), cfg, split.seed);
}

}  // namespace

std::vector<std::string> known_methods() {
  return {"usbl", "usbl-lr", "slda", "slda-s", "slda-l", "slda-direct", "l2lr", "l2lr-direct", "dscore"};
}

MethodSpec make_method(const std::string& name, const std::vector<std::string>& modalities,
                       const MethodOptions& opts) {
  MethodSpec spec;
  spec.name = name;
  spec.modalities = modalities;
  if (name == "usbl" || name == "usbl-lr") {
    if (modalities.empty()) throw Error(ErrorCode::Usage, name + " needs >= 1 modality");
    const bool lowrank = name == "usbl-lr";
    if (opts.calibrate) spec.name += "-cal";
    spec.run = [opts, modalities, lowrank](const TrainTestSplit& s) {
      return run_usbl(s, opts, modalities, lowrank);
    };
    return spec;
  }
  if (name == "dscore") {
    const std::string rt = modalities.empty() ? opts.rt_modality : modalities.front();
    spec.modalities = {rt};
    const bool clamp = opts.dscore_clamp;
    spec.run = [rt, clamp](const TrainTestSplit& s) {
      std::vector<double> out;
      for (const auto& session : s.test->sessions)
        out.push_back(logistic(dscore(session_rt_trials(session, rt), clamp).d));
      return out;
    };
    return spec;
  }
  BaselineConfig cfg = opts.baseline;
  cfg.modalities = modalities;
  if (modalities.empty()) throw Error(ErrorCode::Usage, name + " needs >= 1 modality");
  if (name == "slda" || name == "slda-s") {
    cfg.kind = BaselineKind::Slda;
    cfg.mode = BaselineMode::Recoded;
    cfg.non_eeg_windows = WindowKind::Short;
  } else if (name == "slda-l") {
    cfg.kind = BaselineKind::Slda;
    cfg.mode = BaselineMode::Recoded;
    cfg.non_eeg_windows = WindowKind::Long;
  } else if (name == "slda-direct") {
    cfg.kind = BaselineKind::Slda;
    cfg.mode = BaselineMode::Direct;
  } else if (name == "l2lr") {
    cfg.kind = BaselineKind::RidgeLR;
    cfg.mode = BaselineMode::Recoded;
  } else if (name == "l2lr-direct") {
    cfg.kind = BaselineKind::RidgeLR;
    cfg.mode = BaselineMode::Direct;
  } else {
    throw Error(ErrorCode::Usage, "unknown method '" + name + "' (known: " + join(known_methods(), ", ") + ")");
  }
  spec.run = [cfg](const TrainTestSplit& s) { return run_baseline_method(s, cfg); };
  return spec;
}

ResultsTable run_experiment(const Dataset& ds, std::span<const MethodSpec> methods, const CVConfig& cv,
                            const ExperimentOptions& opts) {
  validate_dataset(ds, true);
  if (methods.empty()) throw Error(ErrorCode::Usage, "no methods to evaluate");
  if (opts.jobs < 1) throw Error(ErrorCode::Usage, "jobs must be >= 1");
  const FoldAssignment folds = make_folds(ds.labels(), cv);

  // Train/test datasets are shared read-only by every method of a fold.
  std::vector<Dataset> trains(folds.folds.size()), tests(folds.folds.size());
  for (std::size_t f = 0; f < folds.folds.size(); ++f) {
    trains[f] = subset(ds, folds.folds[f].train);
    tests[f] = subset(ds, folds.folds[f].test);
    for (auto& s : tests[f].sessions) s.label.reset();
  }

  const std::size_t n_units = folds.folds.size() * methods.size();
  std::vector<FoldRecord> records(n_units);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t u = next++; u < n_units; u = next++) {
      const std::size_t mi = u / folds.folds.size();
      const std::size_t fi = u % folds.folds.size();
      const Fold& fold = folds.folds[fi];
      const MethodSpec& method = methods[mi];
      FoldRecord& rec = records[u];
      rec.repeat = fold.repeat;
      rec.fold = fold.fold;
      rec.method = method.name;
      rec.modalities = join(method.modalities);
      rec.n_train = static_cast<int>(fold.train.size());
      rec.n_test = static_cast<int>(fold.test.size());
      for (int i : fold.test) {
        rec.test_ids.push_back(ds.sessions[i].participant_id);
        rec.test_labels.push_back(*ds.sessions[i].label);
      }
      TrainTestSplit split{&trains[fi], &tests[fi],
                           derive_seed(cv.seed, {0xE7A1, static_cast<std::uint64_t>(fold.repeat),
                                                 static_cast<std::uint64_t>(fold.fold),
                                                 fnv1a(rec.method + "|" + rec.modalities)}),
                           fold.repeat, fold.fold};
      try {
        rec.probabilities = method.run(split);
        if (rec.probabilities.size() != fold.test.size())
          throw Error(ErrorCode::ShapeMismatch, "method returned the wrong number of predictions");
        for (double p : rec.probabilities)
          if (!(p >= 0 && p <= 1)) throw Error(ErrorCode::NonFinite, "prediction outside [0, 1]");
        rec.auc = auc(rec.probabilities, rec.test_labels);
        const Confusion c = confusion_metrics(rec.probabilities, rec.test_labels);
        rec.sensitivity = c.sensitivity;
        rec.specificity = c.specificity;
        rec.brier = brier(rec.probabilities, rec.test_labels);
        rec.cross_entropy = cross_entropy(rec.probabilities, rec.test_labels);
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
        rec.probabilities.clear();
      }
    }
  };
  const int threads = static_cast<int>(std::min<std::size_t>(opts.jobs, n_units));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ResultsTable table;
  table.cv = cv;
  table.mean_train_size = folds.mean_train_size();
  table.mean_test_size = folds.mean_test_size();
  table.fdr_q = opts.fdr_q;
  table.records = std::move(records);
  table.config = opts.config;
  summarize(table, opts.alpha);
  return table;
}

namespace {

struct MeanSd {
  std::optional<double> mean, sd;
};

MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd out;
  if (v.empty()) return out;
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  out.mean = m;
  if (v.size() >= 2) {
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    out.sd = std::sqrt(ss / (n - 1));
  }
  return out;
}

}  // namespace

void summarize(ResultsTable& table, double alpha) {
  table.summaries.clear();
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& r : table.records)
    if (std::find(keys.begin(), keys.end(), std::make_pair(r.method, r.modalities)) == keys.end())
      keys.emplace_back(r.method, r.modalities);

  for (const auto& [method, mods] : keys) {
    Summary s;
    s.method = method;
    s.modalities = mods;
    std::vector<double> aucs, sens, spec, briers, ces, pooled_p;
    std::vector<int> pooled_y;
    for (const auto& r : table.records) {
      if (r.method != method || r.modalities != mods) continue;
      ++s.folds_total;
      if (!r.ok) {
        ++s.folds_failed;
        continue;
      }
      if (r.auc) aucs.push_back(*r.auc);
      if (r.sensitivity) sens.push_back(*r.sensitivity);
      if (r.specificity) spec.push_back(*r.specificity);
      if (r.brier) briers.push_back(*r.brier);
      if (r.cross_entropy) ces.push_back(*r.cross_entropy);
      pooled_p.insert(pooled_p.end(), r.probabilities.begin(), r.probabilities.end());
      pooled_y.insert(pooled_y.end(), r.test_labels.begin(), r.test_labels.end());
    }
    s.folds_used = static_cast<int>(aucs.size());
    const MeanSd a = mean_sd(aucs);
    s.auc_mean = a.mean;
    s.auc_sd = a.sd;
    const double n1 = table.mean_train_size, n2 = table.mean_test_size;
    if (aucs.size() >= 2 && n1 > 0) {
      // Folds without a defined AUC drop out; the correction uses the
      // number of folds actually summarized.
      const int used = static_cast<int>(aucs.size());
      const CorrectedTest t = corrected_ttest(aucs, used, 1, n1, n2, 0.5);
      s.t = t.t;
      s.p = t.p;
      s.zero_variance = t.zero_variance;
      if (!t.zero_variance) {
        const Interval ci = corrected_ci(aucs, used, 1, n1, n2, 1.0 - alpha);
        s.ci_lower = ci.lower;
        s.ci_upper = ci.upper;
        s.mdes = mdes(*a.sd, used, 1, n1, n2, alpha);
      } else {
        s.ci_lower = s.ci_upper = *a.mean;
      }
    }
    const MeanSd se = mean_sd(sens), sp = mean_sd(spec);
    s.sensitivity_mean = se.mean;
    s.sensitivity_sd = se.sd;
    s.specificity_mean = sp.mean;
    s.specificity_sd = sp.sd;
    if (!pooled_p.empty()) {
      const Confusion c = confusion_metrics(pooled_p, pooled_y);
      s.pooled_sensitivity = c.sensitivity;
      s.pooled_specificity = c.specificity;
    }
    s.brier_mean = mean_sd(briers).mean;
    s.cross_entropy_mean = mean_sd(ces).mean;
    table.summaries.push_back(std::move(s));
  }

  std::vector<double> ps;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < table.summaries.size(); ++i)
    if (table.summaries[i].p) {
      ps.push_back(*table.summaries[i].p);
      idx.push_back(i);
    }
  const FdrResult fdr = bh_fdr(ps, table.fdr_q);
  for (std::size_t j = 0; j < idx.size(); ++j) {
    table.summaries[idx[j]].p_bh = fdr.adjusted[j];
    table.summaries[idx[j]].significant = fdr.rejected[j];
  }
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json results_to_json(const ResultsTable& t) {
  json j;
  j["format"] = "usbl-results";
  j["version"] = 1;
  j["config"] = t.config;
  j["cv"] = {{"folds", t.cv.k}, {"repeats", t.cv.r}, {"seed", t.cv.seed}, {"stratified", t.cv.stratified},
             {"mean_train_size", t.mean_train_size}, {"mean_test_size", t.mean_test_size}};
  j["fdr_q"] = t.fdr_q;
  json recs = json::array();
  for (const auto& r : t.records) {
    json preds = json::array();
    for (std::size_t i = 0; i < r.test_ids.size(); ++i)
      preds.push_back({{"participant", r.test_ids[i]},
                       {"label", r.test_labels[i]},
                       {"probability", r.ok ? json(r.probabilities[i]) : json(nullptr)}});
    recs.push_back({{"repeat", r.repeat},
                    {"fold", r.fold},
                    {"method", r.method},
                    {"modalities", r.modalities},
                    {"n_train", r.n_train},
                    {"n_test", r.n_test},
                    {"ok", r.ok},
                    {"error", r.ok ? json(nullptr) : json(r.error)},
                    {"auc", opt(r.auc)},
                    {"sensitivity", opt(r.sensitivity)},
                    {"specificity", opt(r.specificity)},
                    {"brier", opt(r.brier)},
                    {"cross_entropy", opt(r.cross_entropy)},
                    {"predictions", preds}});
  }
  j["records"] = recs;
  json sums = json::array();
  for (const auto& s : t.summaries)
    sums.push_back({{"method", s.method},
                    {"modalities", s.modalities},
                    {"folds_total", s.folds_total},
                    {"folds_failed", s.folds_failed},
                    {"folds_used", s.folds_used},
                    {"auc_mean", opt(s.auc_mean)},
                    {"auc_sd", opt(s.auc_sd)},
                    {"ci_lower", opt(s.ci_lower)},
                    {"ci_upper", opt(s.ci_upper)},
                    {"t", opt(s.t)},
                    {"p", opt(s.p)},
                    {"p_bh", opt(s.p_bh)},
                    {"significant", s.significant},
                    {"zero_variance", s.zero_variance},
                    {"sensitivity_mean", opt(s.sensitivity_mean)},
                    {"sensitivity_sd", opt(s.sensitivity_sd)},
                    {"specificity_mean", opt(s.specificity_mean)},
                    {"specificity_sd", opt(s.specificity_sd)},
                    {"pooled_sensitivity", opt(s.pooled_sensitivity)},
                    {"pooled_specificity", opt(s.pooled_specificity)},
                    {"brier_mean", opt(s.brier_mean)},
                    {"cross_entropy_mean", opt(s.cross_entropy_mean)},
                    {"mdes", opt(s.mdes)}});
  j["summaries"] = sums;
  return j;
}

namespace {

std::string num(const std::optional<double>& v, int digits = 6) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(digits) << *v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace

std::string records_csv(const ResultsTable& t) {
  std::ostringstream os;
  os << "repeat,fold,method,modalities,n_train,n_test,ok,auc,sensitivity,specificity,brier,cross_entropy,error\n";
  for (const auto& r : t.records)
    os << r.repeat << ',' << r.fold << ',' << csv_field(r.method) << ',' << csv_field(r.modalities) << ','
       << r.n_train << ',' << r.n_test << ',' << (r.ok ? 1 : 0) << ',' << num(r.auc, 17) << ','
       << num(r.sensitivity, 17) << ',' << num(r.specificity, 17) << ',' << num(r.brier, 17) << ','
       << num(r.cross_entropy, 17) << ',' << csv_field(r.error) << '\n';
  return os.str();
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "text" || name == "txt") return ReportFormat::Text;
  if (name == "csv") return ReportFormat::Csv;
  throw Error(ErrorCode::Usage, "unknown report format '" + name + "' (text, csv)");
}

namespace {

std::optional<double> jopt(const json& s, const char* key) {
  if (!s.contains(key) || s.at(key).is_null()) return std::nullopt;
  return s.at(key).get<double>();
}

std::string fixed(const std::optional<double>& v, int digits = 2) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << *v;
  return os.str();
}

std::string pm(const std::optional<double>& m, const std::optional<double>& sd) {
  return fixed(m) + " +/- " + fixed(sd);
}

}  // namespace

std::string render_report(const json& results, ReportFormat format) {
  if (!results.is_object() || results.value("format", "") != "usbl-results")
    throw Error(ErrorCode::BadManifest, "not a results document");
  const json& sums = results.at("summaries");
  std::ostringstream os;
  if (format == ReportFormat::Csv) {
    os << "method,modalities,auc_mean,auc_sd,ci_lower,ci_upper,p_bh,sensitivity_mean,sensitivity_sd,"
          "specificity_mean,specificity_sd,folds_used,folds_failed\n";
    for (const auto& s : sums)
      os << csv_field(s.at("method").get<std::string>()) << ','
         << csv_field(s.at("modalities").get<std::string>()) << ',' << num(jopt(s, "auc_mean")) << ','
         << num(jopt(s, "auc_sd")) << ',' << num(jopt(s, "ci_lower")) << ',' << num(jopt(s, "ci_upper")) << ','
         << num(jopt(s, "p_bh")) << ',' << num(jopt(s, "sensitivity_mean")) << ','
         << num(jopt(s, "sensitivity_sd")) << ',' << num(jopt(s, "specificity_mean")) << ','
         << num(jopt(s, "specificity_sd")) << ',' << s.at("folds_used").get<int>() << ','
         << s.at("folds_failed").get<int>() << '\n';
    return os.str();
  }
  std::vector<std::vector<std::string>> rows{
      {"Method", "Modalities", "AUC", "p_BH", "Sensitivity", "Specificity"}};
  for (const auto& s : sums) {
    std::string auc_cell = pm(jopt(s, "auc_mean"), jopt(s, "auc_sd")) + " [" + fixed(jopt(s, "ci_lower")) +
                           ", " + fixed(jopt(s, "ci_upper")) + "]";
    if (s.value("significant", false)) auc_cell += " *";
    std::string method = s.at("method").get<std::string>();
    if (s.at("folds_failed").get<int>() > 0)
      method += " (" + std::to_string(s.at("folds_failed").get<int>()) + " failed)";
    rows.push_back({method, s.at("modalities").get<std::string>(), auc_cell, fixed(jopt(s, "p_bh"), 3),
                    pm(jopt(s, "sensitivity_mean"), jopt(s, "sensitivity_sd")),
                    pm(jopt(s, "specificity_mean"), jopt(s, "specificity_sd"))});
  }
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      os << std::left << std::setw(static_cast<int>(width[c])) << rows[i][c];
      if (c + 1 < rows[i].size()) os << "  ";
    }
    os << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  if (results.contains("cv")) {
    const json& cv = results.at("cv");
    os << "\n" << cv.at("repeats").get<int>() << "x repeated " << cv.at("folds").get<int>()
       << "-fold CV; mean n_train = " << fixed(cv.at("mean_train_size").get<double>(), 1)
       << ", mean n_test = " << fixed(cv.at("mean_test_size").get<double>(), 1)
       << ". CI and p corrected for overlapping training sets; * = significant after BH-FDR.\n";
  }
  return os.str();
}

std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const int> labels) {
  std::vector<double> thresholds(scores.begin(), scores.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::vector<RocPoint> out;
  out.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  for (double th : thresholds) {
    const Confusion c = confusion_metrics(scores, labels, th);
    out.push_back({th, c.sensitivity.value_or(0.0), c.specificity.value_or(0.0)});
  }
  return out;
}

}  // namespace usbl
