#include "mbmd/run_config.hpp"

#include <cmath>
#include <set>

#include "json.hpp"
#include "mbmd/preprocess.hpp"

using nlohmann::json;

namespace mbmd {

std::string distill_mode_name(DistillMode m) {
  switch (m) {
    case DistillMode::Mutual: return "mutual";
    case DistillMode::SingleDirection: return "single_direction";
    case DistillMode::None: return "none";
  }
  return "mutual";
}

DistillMode distill_mode_from_name(const std::string& s) {
  if (s == "mutual") return DistillMode::Mutual;
  if (s == "single_direction") return DistillMode::SingleDirection;
  if (s == "none") return DistillMode::None;
  fail(ErrorKind::Config, "unknown distill mode: " + s);
}

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& context) {
  require(obj.is_object(), ErrorKind::Config, context + " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    require(allowed.count(it.key()) > 0, ErrorKind::Config,
            "unknown key \"" + it.key() + "\" in " + context);
  }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Config, "bad value for key \"" + key + "\"");
  }
}

double get_snr(const json& obj, double fallback) {
  if (!obj.contains("snr_db")) return fallback;
  const auto& v = obj.at("snr_db");
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    require(s == "inf", ErrorKind::Config, "snr_db must be a number or \"inf\"");
    return std::numeric_limits<double>::infinity();
  }
  require(v.is_number(), ErrorKind::Config, "snr_db must be a number or \"inf\"");
  return v.get<double>();
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config parse error: ") + e.what());
  }
  check_keys(j, {"dataset", "preprocess", "seed", "jobs", "folds", "repeats", "window_seconds",
                 "overlap", "model", "train", "suite"},
             "config");

  RunConfig cfg;
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    if (d.is_string()) {
      cfg.dataset_path = d.get<std::string>();
    } else {
      check_keys(d, {"synth"}, "dataset");
      require(d.contains("synth"), ErrorKind::Config, "dataset object must contain \"synth\"");
      const auto& s = d.at("synth");
      check_keys(s, {"num_patients", "trials_per_patient", "num_classes", "snr_db", "seed", "channels",
                     "trial_seconds"},
                 "dataset.synth");
      cfg.use_synth = true;
      cfg.synth.num_patients = get_or(s, "num_patients", cfg.synth.num_patients);
      cfg.synth.trials_per_patient = get_or(s, "trials_per_patient", cfg.synth.trials_per_patient);
      cfg.synth.num_classes = get_or(s, "num_classes", cfg.synth.num_classes);
      cfg.synth.snr_db = get_snr(s, cfg.synth.snr_db);
      cfg.synth.seed = get_or<uint64_t>(s, "seed", cfg.synth.seed);
      cfg.synth.channels = get_or(s, "channels", cfg.synth.channels);
      cfg.synth.trial_seconds = get_or(s, "trial_seconds", cfg.synth.trial_seconds);
    }
  } else {
    cfg.use_synth = true;  // default desk-scale dataset
  }

  cfg.preprocess = get_or(j, "preprocess", cfg.preprocess);
  cfg.train.seed = get_or<uint64_t>(j, "seed", 0);
  cfg.jobs = get_or(j, "jobs", cfg.jobs);
  cfg.folds = get_or(j, "folds", cfg.folds);
  cfg.repeats = get_or(j, "repeats", cfg.repeats);
  cfg.window_seconds = get_or(j, "window_seconds", cfg.window_seconds);
  cfg.overlap = get_or(j, "overlap", cfg.overlap);
  cfg.suite = get_or<std::string>(j, "suite", "");

  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, {"num_blocks", "block_pattern", "patch_size", "embed_dim", "num_heads", "ffn_hidden",
                   "num_branches", "dropout"},
               "model");
    auto& mc = cfg.train.model;
    mc.num_blocks = get_or(m, "num_blocks", mc.num_blocks);
    mc.block_pattern = get_or<std::string>(m, "block_pattern", mc.block_pattern);
    mc.patch_size = get_or(m, "patch_size", mc.patch_size);
    mc.embed_dim = get_or(m, "embed_dim", mc.embed_dim);
    mc.num_heads = get_or(m, "num_heads", mc.num_heads);
    mc.ffn_hidden = get_or(m, "ffn_hidden", mc.ffn_hidden);
    mc.num_branches = get_or(m, "num_branches", mc.num_branches);
    mc.dropout = get_or(m, "dropout", mc.dropout);
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, {"batch_size", "learning_rate", "weight_decay", "patience", "max_epochs", "branch_ce",
                   "use_bands", "val_fraction", "distill", "ensemble_mode", "gate_importance_weight"},
               "train");
    cfg.train.batch_size = get_or(t, "batch_size", cfg.train.batch_size);
    cfg.train.learning_rate = get_or(t, "learning_rate", cfg.train.learning_rate);
    cfg.train.weight_decay = get_or(t, "weight_decay", cfg.train.weight_decay);
    cfg.train.patience = get_or(t, "patience", cfg.train.patience);
    cfg.train.max_epochs = get_or(t, "max_epochs", cfg.train.max_epochs);
    cfg.train.branch_ce = get_or(t, "branch_ce", cfg.train.branch_ce);
    cfg.train.use_bands = get_or(t, "use_bands", cfg.train.use_bands);
    cfg.train.val_fraction = get_or(t, "val_fraction", cfg.train.val_fraction);
    cfg.train.gate_importance_weight = get_or(t, "gate_importance_weight", cfg.train.gate_importance_weight);
    if (t.contains("ensemble_mode")) {
      cfg.train.ensemble_mode = ensemble_mode_from_name(t.at("ensemble_mode").get<std::string>());
    }
    if (t.contains("distill")) {
      const auto& d = t.at("distill");
      check_keys(d, {"temperature", "lambda", "mode"}, "train.distill");
      cfg.train.distill.temperature = get_or(d, "temperature", cfg.train.distill.temperature);
      cfg.train.distill.lambda = get_or(d, "lambda", cfg.train.distill.lambda);
      if (d.contains("mode")) cfg.train.distill.mode = distill_mode_from_name(d.at("mode").get<std::string>());
    }
  }

  require(cfg.jobs >= 1, ErrorKind::Config, "jobs must be >= 1");
  require(cfg.folds >= 2, ErrorKind::Config, "folds must be >= 2");
  require(cfg.repeats >= 1, ErrorKind::Config, "repeats must be >= 1");
  return cfg;
}

std::string RunConfig::to_json() const {
  json j;
  if (use_synth) {
    json s;
    s["num_patients"] = synth.num_patients;
    s["trials_per_patient"] = synth.trials_per_patient;
    s["num_classes"] = synth.num_classes;
    if (std::isinf(synth.snr_db)) {
      s["snr_db"] = "inf";
    } else {
      s["snr_db"] = synth.snr_db;
    }
    s["seed"] = synth.seed;
    s["channels"] = synth.channels;
    s["trial_seconds"] = synth.trial_seconds;
    j["dataset"] = json{{"synth", s}};
  } else {
    j["dataset"] = dataset_path;
  }
  j["preprocess"] = preprocess;
  j["seed"] = train.seed;
  j["jobs"] = jobs;
  j["folds"] = folds;
  j["repeats"] = repeats;
  j["window_seconds"] = window_seconds;
  j["overlap"] = overlap;
  if (!suite.empty()) j["suite"] = suite;

  json m;
  m["num_blocks"] = train.model.num_blocks;
  m["block_pattern"] = train.model.block_pattern;
  m["patch_size"] = train.model.patch_size;
  m["embed_dim"] = train.model.embed_dim;
  m["num_heads"] = train.model.num_heads;
  m["ffn_hidden"] = train.model.ffn_hidden;
  m["num_branches"] = train.model.num_branches;
  m["dropout"] = train.model.dropout;
  m["num_classes"] = train.model.num_classes;
  m["channels"] = train.model.channels;
  m["window_len"] = train.model.window_len;
  j["model"] = m;

  json t;
  t["batch_size"] = train.batch_size;
  t["learning_rate"] = train.learning_rate;
  t["weight_decay"] = train.weight_decay;
  t["patience"] = train.patience;
  t["max_epochs"] = train.max_epochs;
  t["branch_ce"] = train.branch_ce;
  t["use_bands"] = train.use_bands;
  t["val_fraction"] = train.val_fraction;
  t["ensemble_mode"] = ensemble_mode_name(train.ensemble_mode);
  t["gate_importance_weight"] = train.gate_importance_weight;
  t["distill"] = json{{"temperature", train.distill.temperature},
                      {"lambda", train.distill.lambda},
                      {"mode", distill_mode_name(train.distill.mode)}};
  j["train"] = t;
  return j.dump(2) + "\n";
}

Dataset load_run_dataset(const RunConfig& cfg) {
  Dataset ds = cfg.use_synth ? synth_dataset(cfg.synth) : load_dataset(cfg.dataset_path);
  require(!ds.trials.empty(), ErrorKind::Data, "dataset has no trials");
  if (cfg.preprocess) {
    for (auto& trial : ds.trials) trial = preprocess_trial(trial);
  } else {
    for (const auto& trial : ds.trials) {
      require(std::abs(trial.sample_rate_hz - kTargetRateHz) < 1e-9, ErrorKind::Data,
              "trial " + trial.trial_id + " is not at 128 Hz; enable preprocessing");
    }
  }
  return ds;
}

void resolve_model_from_data(RunConfig& cfg, const Dataset& ds) {
  cfg.train.model.num_classes = ds.manifest.class_spec.num_classes;
  cfg.train.model.channels = static_cast<int>(ds.trials.front().samples.rows);
  cfg.train.model.window_len = static_cast<int>(std::llround(cfg.window_seconds * kTargetRateHz));
  cfg.train.validate();
}

}  // namespace mbmd
