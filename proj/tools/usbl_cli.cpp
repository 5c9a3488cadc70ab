// usbl command-line front end. Talks to the library only through usbl.h.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "usbl/usbl.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Failure {
  int code;
  std::string message;
};

int exit_code(usbl_status s) {
  switch (s) {
    case USBL_OK: return kOk;
    case USBL_ERR_USAGE: return kUsage;
    case USBL_ERR_NUMERIC: return kNumeric;
    default: return kData;
  }
}

void check(usbl_status s) {
  if (s != USBL_OK) throw Failure{exit_code(s), usbl_last_error()};
}

struct CString {
  char* p = nullptr;
  ~CString() { usbl_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

using DatasetPtr = std::unique_ptr<usbl_dataset, decltype(&usbl_dataset_free)>;
using ModelPtr = std::unique_ptr<usbl_model, decltype(&usbl_model_free)>;
using ResultsPtr = std::unique_ptr<usbl_results, decltype(&usbl_results_free)>;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{kData, "cannot read " + path};
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Failure{kData, "cannot write " + path.string()};
  out << text;
  if (!out) throw Failure{kData, "write failed: " + path.string()};
}

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty() || out_path == "-")
    std::cout << text << (text.empty() || text.back() == '\n' ? "" : "\n");
  else
    write_file(out_path, text.back() == '\n' ? text : text + "\n");
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    json j = json::parse(read_file(path));
    if (!j.is_object()) throw Failure{kUsage, path + ": config must be a JSON object"};
    return j;
  } catch (const json::exception& e) {
    throw Failure{kUsage, path + ": " + e.what()};
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string resolve(const char* kind, const json& cfg) {
  CString out;
  check(usbl_resolve_config(kind, cfg.dump().c_str(), &out.p));
  return out.str();
}

DatasetPtr open_dataset(std::string path) {
  if (path.empty()) {
    const char* env = std::getenv("USBL_DATA_DIR");
    if (!env || !*env) throw Failure{kUsage, "no --data given and USBL_DATA_DIR is unset"};
    path = env;
  }
  usbl_dataset* ds = nullptr;
  check(usbl_dataset_load(path.c_str(), &ds));
  return DatasetPtr(ds, usbl_dataset_free);
}

// "r.json" -> "r.<suffix>"
fs::path sibling(const std::string& out, const std::string& suffix) {
  fs::path p(out);
  return p.parent_path() / (p.stem().string() + "." + suffix);
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian congruency decoding for implicit association tests"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(usbl_version()));

  std::string data, config, out, csv_out, rt_modality = "rt", deff_modality = "eeg", format = "text", model_dir, results;
  std::vector<std::string> methods, modality_sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps, repeats, folds, jobs, participants, trials_per_block, blocks;
  std::optional<double> effect_size, variability, noise_sd, within_corr, fdr_q;
  std::string likelihood;
  bool calibrate = false, laplace = false, shuffle_labels = false, clamp = false;
  int pcs = 5;

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic cohort");
  sim->add_option("--config", config, "JSON config file");
  sim->add_option("--out", out, "Output dataset directory")->required();
  sim->add_option("--participants", participants, "Number of participants");
  sim->add_option("--blocks", blocks, "Number of blocks (even)");
  sim->add_option("--trials-per-block", trials_per_block, "Trials per block");
  sim->add_option("--effect-size", effect_size, "Scale of the true contrast");
  sim->add_option("--participant-variability", variability, "SD of per-participant effect multipliers");
  sim->add_option("--noise-sd", noise_sd, "Trial noise SD");
  sim->add_option("--within-correlation", within_corr, "SD of the shared per-session effect");
  sim->add_flag("--shuffle-labels", shuffle_labels, "Permute labels after generation");
  sim->add_option("--seed", seed, "Master seed");

  auto add_fit_options = [&](CLI::App* sub) {
    sub->add_option("--data", data, "Dataset directory or manifest (default: $USBL_DATA_DIR)");
    sub->add_option("--config", config, "JSON config file");
    sub->add_option("--modalities", modality_sets, "Comma-separated modalities");
    sub->add_option("--steps", steps, "Optimizer steps");
    sub->add_option("--likelihood", likelihood, "session or trial");
    sub->add_option("--seed", seed, "Master seed");
    sub->add_option("--out", out, "Output model directory")->required();
    sub->add_flag("--laplace", laplace, "Store diagonal Laplace precisions");
  };
  auto* fit = app.add_subcommand("fit", "Fit the stage-1 model");
  add_fit_options(fit);
  fit->add_flag("--calibrate", calibrate, "Also calibrate confidence");
  auto* cal = app.add_subcommand("calibrate", "Fit and calibrate confidence");
  add_fit_options(cal);

  auto* pred = app.add_subcommand("predict", "Predict sessions with a fitted model");
  pred->add_option("--model", model_dir, "Model directory")->required();
  pred->add_option("--data", data, "Dataset directory or manifest (default: $USBL_DATA_DIR)");
  pred->add_option("--out", out, "Output JSON (default: stdout)");

  auto* ev = app.add_subcommand("eval", "Repeated cross-validation");
  ev->add_option("--data", data, "Dataset directory or manifest (default: $USBL_DATA_DIR)");
  ev->add_option("--config", config, "JSON config file");
  ev->add_option("--method", methods, "Method(s); repeat or comma-separate");
  ev->add_option("--modalities", modality_sets, "Modality set, comma-separated; repeat for several sets");
  ev->add_option("--repeats", repeats, "CV repeats");
  ev->add_option("--folds", folds, "CV folds");
  ev->add_option("--seed", seed, "Master seed");
  ev->add_option("--steps", steps, "Optimizer steps");
  ev->add_option("--likelihood", likelihood, "session or trial");
  ev->add_option("--jobs", jobs, "Worker threads");
  ev->add_option("--fdr-q", fdr_q, "BH-FDR level");
  ev->add_flag("--calibrate", calibrate, "Calibrate USBL confidence in every fold");
  ev->add_option("--out", out, "Results JSON")->required();
  ev->add_option("--csv", csv_out, "Fold records CSV");

  auto* ds_cmd = app.add_subcommand("dscore", "Reaction-time D-scores");
  ds_cmd->add_option("--data", data, "Dataset directory or manifest (default: $USBL_DATA_DIR)");
  ds_cmd->add_option("--modality", rt_modality, "Reaction-time modality")->default_val("rt");
  ds_cmd->add_flag("--clamp", clamp, "Limit RTs to [300, 10000] ms");
  ds_cmd->add_option("--out", out, "Output JSON (default: stdout)");

  auto* deff = app.add_subcommand("deff", "Kish design effect of trial data");
  deff->add_option("--data", data, "Dataset directory or manifest (default: $USBL_DATA_DIR)");
  deff->add_option("--modality", deff_modality, "Modality")->default_val("eeg");
  deff->add_option("--pcs", pcs, "Principal components")->default_val(5);
  deff->add_option("--out", out, "Output JSON (default: stdout)");

  auto* rep = app.add_subcommand("report", "Render a results document");
  rep->add_option("--results", results, "Results JSON")->required();
  rep->add_option("--format", format, "text or csv")->default_val("text");
  rep->add_option("--out", out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    auto apply_fit_flags = [&](json& cfg) {
      if (!modality_sets.empty()) {
        std::vector<std::string> mods;
        for (const auto& s : modality_sets)
          for (const auto& m : split_list(s)) mods.push_back(m);
        cfg["modalities"] = mods;
      }
      if (steps) cfg["optimizer"]["steps"] = *steps;
      if (!likelihood.empty()) cfg["model"]["likelihood"] = likelihood;
      if (seed) cfg["seed"] = *seed;
      if (laplace) cfg["laplace"] = true;
    };

    if (sim->parsed()) {
      json cfg = load_config(config);
      if (participants) cfg["n_participants"] = *participants;
      if (blocks) cfg["blocks"] = *blocks;
      if (trials_per_block) cfg["trials_per_block"] = *trials_per_block;
      if (effect_size) cfg["effect_size"] = *effect_size;
      if (variability) cfg["participant_variability"] = *variability;
      if (noise_sd) cfg["trial_noise_sd"] = *noise_sd;
      if (within_corr) cfg["within_session_correlation"] = *within_corr;
      if (shuffle_labels) cfg["shuffle_labels"] = true;
      if (seed) cfg["seed"] = *seed;
      const std::string resolved = resolve("simulate", cfg);
      CString summary;
      check(usbl_simulate(resolved.c_str(), out.c_str(), &summary.p));
      write_file(fs::path(out) / "simulate.config.json", resolved + "\n");
      std::cout << summary.str() << "\n";
      return kOk;
    }

    if (fit->parsed() || cal->parsed()) {
      json cfg = load_config(config);
      apply_fit_flags(cfg);
      if (calibrate || cal->parsed()) cfg["calibrate"] = true;
      const std::string resolved = resolve("fit", cfg);
      DatasetPtr ds = open_dataset(data);
      usbl_model* raw = nullptr;
      check(usbl_fit(ds.get(), resolved.c_str(), &raw));
      ModelPtr model(raw, usbl_model_free);
      check(usbl_model_save(model.get(), out.c_str()));
      write_file(fs::path(out) / "fit.config.json", resolved + "\n");
      CString info;
      check(usbl_model_info(model.get(), &info.p));
      std::cout << info.str() << "\n";
      return kOk;
    }

    if (pred->parsed()) {
      usbl_model* raw = nullptr;
      check(usbl_model_load(model_dir.c_str(), &raw));
      ModelPtr model(raw, usbl_model_free);
      DatasetPtr ds = open_dataset(data);
      CString text;
      check(usbl_predict(model.get(), ds.get(), &text.p));
      emit(out, text.str());
      return kOk;
    }

    if (ev->parsed()) {
      json cfg = load_config(config);
      if (!methods.empty()) {
        std::vector<std::string> list;
        for (const auto& m : methods)
          for (const auto& x : split_list(m)) list.push_back(x);
        cfg["methods"] = list;
      }
      if (!modality_sets.empty()) {
        json sets = json::array();
        for (const auto& s : modality_sets) sets.push_back(split_list(s));
        cfg["modalities"] = sets;
      }
      if (repeats) cfg["cv"]["repeats"] = *repeats;
      if (folds) cfg["cv"]["folds"] = *folds;
      if (seed) cfg["cv"]["seed"] = *seed;
      if (steps) cfg["optimizer"]["steps"] = *steps;
      if (!likelihood.empty()) cfg["model"]["likelihood"] = likelihood;
      if (jobs) cfg["jobs"] = *jobs;
      if (fdr_q) cfg["fdr_q"] = *fdr_q;
      if (calibrate) cfg["calibrate"] = true;
      const std::string resolved = resolve("eval", cfg);
      DatasetPtr ds = open_dataset(data);
      const auto t0 = std::chrono::steady_clock::now();
      const std::string started = utc_now();
      usbl_results* raw = nullptr;
      check(usbl_eval(ds.get(), resolved.c_str(), &raw));
      ResultsPtr res(raw, usbl_results_free);
      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      CString text;
      check(usbl_results_json(res.get(), &text.p));
      write_file(out, text.str());
      write_file(sibling(out, "config.json"), resolved + "\n");
      const json meta = {{"started_utc", started},
                         {"elapsed_seconds", seconds},
                         {"library_version", usbl_version()},
                         {"data", data.empty() ? std::string(std::getenv("USBL_DATA_DIR")) : data}};
      write_file(sibling(out, "meta.json"), meta.dump(2) + "\n");
      if (!csv_out.empty()) {
        CString csv;
        check(usbl_results_csv(res.get(), &csv.p));
        write_file(csv_out, csv.str());
      }
      CString report;
      check(usbl_report(text.p, "text", &report.p));
      std::cout << report.str();
      return kOk;
    }

    if (ds_cmd->parsed()) {
      DatasetPtr ds = open_dataset(data);
      CString text;
      check(usbl_dscore(ds.get(), rt_modality.c_str(), clamp ? 1 : 0, &text.p));
      emit(out, text.str());
      return kOk;
    }

    if (deff->parsed()) {
      DatasetPtr ds = open_dataset(data);
      CString text;
      check(usbl_deff(ds.get(), deff_modality.c_str(), pcs, &text.p));
      emit(out, text.str());
      return kOk;
    }

    if (rep->parsed()) {
      const std::string doc = read_file(results);
      CString text;
      check(usbl_report(doc.c_str(), format.c_str(), &text.p));
      emit(out, text.str());
      return kOk;
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
