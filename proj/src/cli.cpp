#include "mbmd/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mbmd/gradcheck.hpp"
#include "mbmd/preprocess.hpp"
#include "mbmd/report.hpp"
#include "mbmd/run_config.hpp"
#include "mbmd/trainer.hpp"
#include "mbmd/wpd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mbmd {

namespace {

bool verify64_mode() {
  const char* v = std::getenv("MBMD_VERIFY");
  return v != nullptr && std::string(v) == "1";
}

void write_run_metadata(const std::string& out_dir, const RunConfig& cfg) {
  write_file((fs::path(out_dir) / "resolved_config.json").string(), cfg.to_json());
  json inputs;
  if (cfg.use_synth) {
    inputs["source"] = "synth";
    inputs["manifest_sha256"] = sha256_hex(cfg.to_json());
  } else {
    inputs["source"] = cfg.dataset_path;
    inputs["manifest_sha256"] = sha256_hex(read_file(cfg.dataset_path));
  }
  inputs["verify64"] = verify64_mode();
  write_file((fs::path(out_dir) / "inputs.json").string(), inputs.dump(2) + "\n");
}

RunConfig load_config_file(const std::string& path) { return RunConfig::from_json_text(read_file(path)); }

double parse_snr(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  try {
    return std::stod(s);
  } catch (...) {
    fail(ErrorKind::Usage, "bad --snr-db value: " + s);
  }
}

int cmd_synth(const std::string& out, int patients, int trials, int classes, const std::string& snr,
              int channels, double trial_seconds, uint64_t seed) {
  SynthConfig cfg;
  cfg.num_patients = patients;
  cfg.trials_per_patient = trials;
  cfg.num_classes = classes;
  cfg.snr_db = parse_snr(snr);
  cfg.channels = channels;
  cfg.trial_seconds = trial_seconds;
  cfg.seed = seed;
  Dataset ds = synth_dataset(cfg);
  save_dataset(ds, out);
  std::printf("synth: wrote %zu trials (%d classes) to %s\n", ds.trials.size(), classes, out.c_str());
  return 0;
}

int cmd_preprocess(const std::string& dataset, const std::string& out) {
  Dataset ds = load_dataset(dataset);
  for (auto& trial : ds.trials) trial = preprocess_trial(trial);
  for (auto& entry : ds.manifest.trials) entry.sample_rate_hz = kTargetRateHz;
  save_dataset(ds, out);
  std::printf("preprocess: wrote %zu trials at 128 Hz to %s\n", ds.trials.size(), out.c_str());
  return 0;
}

int cmd_decompose(const std::string& dataset, const std::string& out, int branches,
                  double window_seconds, double overlap) {
  Dataset ds = load_dataset(dataset);
  for (auto& trial : ds.trials) trial = preprocess_trial(trial);
  const BandGrouping grouping = band_grouping_preset(branches);
  fs::create_directories(out);
  json windows = json::array();
  int64_t window_index = 0;
  for (const auto& trial : ds.trials) {
    for (const auto& w : segment(trial, window_seconds, overlap)) {
      const std::string name = "win_" + std::to_string(window_index++) + ".eegt";
      const std::string path = (fs::path(out) / name).string();
      write_trial_binary(path, w.samples);
      write_band_cache(path, decompose_bands(w, grouping));
      json entry;
      entry["path"] = name;
      entry["patient"] = w.patient_id;
      entry["label"] = w.label;
      entry["parent_trial"] = w.parent_trial_id;
      entry["offset_samples"] = w.offset_samples;
      windows.push_back(std::move(entry));
    }
  }
  json doc;
  doc["format_version"] = 1;
  doc["branches"] = branches;
  doc["classes"] = ds.manifest.class_spec.class_names;
  doc["windows"] = windows;
  write_file((fs::path(out) / "windows.json").string(), doc.dump(2) + "\n");
  std::printf("decompose: wrote %lld windows x %d bands to %s\n",
              static_cast<long long>(window_index), branches, out.c_str());
  return 0;
}

template <typename T>
int train_and_save(const RunConfig& cfg, const Cohort& cohort, const std::string& out) {
  std::vector<int64_t> all_idx(cohort.windows.size());
  for (size_t i = 0; i < all_idx.size(); ++i) all_idx[i] = static_cast<int64_t>(i);
  std::vector<int64_t> train_idx, val_idx;
  detail::split_train_val(cohort, all_idx, cfg.train.val_fraction, cfg.train.seed, train_idx, val_idx);
  auto result = train_model<T>(cohort, train_idx, val_idx, cfg.train);
  save_checkpoint(result.best, (fs::path(out) / "checkpoint.mbmd").string());
  write_file((fs::path(out) / "train_log.csv").string(), train_log_csv(result.log));
  std::printf("train: best epoch %d (val loss %s), checkpoint at %s\n", result.best_epoch,
              fmt_fixed(result.best_val_loss, 4).c_str(), out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out, int jobs_override,
              int64_t seed_override) {
  RunConfig cfg = load_config_file(config_path);
  if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);
  if (jobs_override > 0) cfg.jobs = jobs_override;
  Dataset ds = load_run_dataset(cfg);
  resolve_model_from_data(cfg, ds);
  fs::create_directories(out);
  write_run_metadata(out, cfg);
  Cohort cohort = build_cohort(ds, band_grouping_preset(cfg.train.model.num_branches),
                               cfg.train.use_bands, cfg.window_seconds, cfg.overlap);
  set_blas_threads(2);
  return verify64_mode() ? train_and_save<double>(cfg, cohort, out)
                         : train_and_save<float>(cfg, cohort, out);
}

template <typename T>
int eval_with(const std::string& checkpoint, const Dataset& ds, const std::string& out,
              double window_seconds, double overlap) {
  Model<T> model = load_checkpoint<T>(checkpoint);
  Cohort cohort = build_cohort(ds, band_grouping_preset(model.cfg.num_branches), false,
                               window_seconds, overlap);
  std::vector<int64_t> idx(cohort.windows.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
  auto [wm, tm] = evaluate_model(model, cohort, idx);

  json j;
  j["acc"] = wm.acc;
  j["bca"] = wm.bca;
  j["weighted_f1"] = wm.weighted_f1;
  j["trial_acc"] = tm.acc;
  j["trial_bca"] = tm.bca;
  j["trial_weighted_f1"] = tm.weighted_f1;
  j["windows"] = idx.size();
  write_file((fs::path(out) / "metrics.json").string(), j.dump(2) + "\n");

  std::string conf = "true\\pred";
  for (size_t c = 0; c < wm.confusion.size(); ++c) conf += "," + std::to_string(c);
  conf += "\n";
  for (size_t i = 0; i < wm.confusion.size(); ++i) {
    conf += std::to_string(i);
    for (size_t c = 0; c < wm.confusion.size(); ++c) conf += "," + std::to_string(wm.confusion[i][c]);
    conf += "\n";
  }
  write_file((fs::path(out) / "confusion.csv").string(), conf);
  std::printf("eval: acc %s bca %s f1 %s over %zu windows\n", fmt_fixed(wm.acc, 4).c_str(),
              fmt_fixed(wm.bca, 4).c_str(), fmt_fixed(wm.weighted_f1, 4).c_str(), idx.size());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, const std::string& out,
             bool no_preprocess, double window_seconds, double overlap) {
  Dataset ds = load_dataset(dataset);
  if (!no_preprocess) {
    for (auto& trial : ds.trials) trial = preprocess_trial(trial);
  }
  fs::create_directories(out);
  return verify64_mode() ? eval_with<double>(checkpoint, ds, out, window_seconds, overlap)
                         : eval_with<float>(checkpoint, ds, out, window_seconds, overlap);
}

int cmd_cv(const std::string& config_path, const std::string& out, int jobs_override,
           int64_t seed_override) {
  RunConfig cfg = load_config_file(config_path);
  if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);
  if (jobs_override > 0) cfg.jobs = jobs_override;
  Dataset ds = load_run_dataset(cfg);
  resolve_model_from_data(cfg, ds);
  fs::create_directories(out);
  write_run_metadata(out, cfg);
  Cohort cohort = build_cohort(ds, band_grouping_preset(cfg.train.model.num_branches),
                               cfg.train.use_bands, cfg.window_seconds, cfg.overlap);
  CvResult cv = run_cross_validate(cohort, cfg.train, cfg.folds, cfg.repeats, cfg.jobs, verify64_mode());
  std::vector<NamedCv> named{{"cv", "default", cv}};
  write_file((fs::path(out) / "cv_rows.csv").string(), cv_rows_csv(named));
  write_file((fs::path(out) / "cv_aggregate.csv").string(), cv_aggregate_csv(named));
  std::printf("cv: %d folds x %d repeats  acc %s+-%s  bca %s+-%s  f1 %s+-%s\n", cfg.folds, cfg.repeats,
              fmt_fixed(cv.acc.mean, 4).c_str(), fmt_fixed(cv.acc.stddev, 4).c_str(),
              fmt_fixed(cv.bca.mean, 4).c_str(), fmt_fixed(cv.bca.stddev, 4).c_str(),
              fmt_fixed(cv.weighted_f1.mean, 4).c_str(), fmt_fixed(cv.weighted_f1.stddev, 4).c_str());
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out, const std::string& suite_flag,
               int jobs_override, int64_t seed_override) {
  RunConfig cfg = load_config_file(config_path);
  if (!suite_flag.empty()) cfg.suite = suite_flag;
  require(!cfg.suite.empty(), ErrorKind::Config, "no suite selected (use --suite or config key)");
  if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);
  if (jobs_override > 0) cfg.jobs = jobs_override;
  Dataset ds = load_run_dataset(cfg);
  resolve_model_from_data(cfg, ds);
  fs::create_directories(out);
  write_run_metadata(out, cfg);
  SuiteResult suite =
      run_ablation_suite(cfg.suite, ds, cfg.train, cfg.folds, cfg.repeats, cfg.jobs, verify64_mode());
  std::vector<NamedCv> named;
  for (const auto& row : suite.rows) named.push_back({suite.suite, row.variant, row.cv});
  write_file((fs::path(out) / (suite.suite + "_rows.csv")).string(), cv_rows_csv(named));
  write_file((fs::path(out) / (suite.suite + "_aggregate.csv")).string(), cv_aggregate_csv(named));
  std::printf("ablate: suite %s, %zu variants done\n", suite.suite.c_str(), suite.rows.size());
  return 0;
}

int cmd_gradcheck(const std::string& out, double eps, uint64_t seed, double threshold) {
  auto cases = diff::finite_diff_suite(eps, seed, threshold);
  std::string csv = "op,shape,max_rel_err,pass\n";
  bool all_pass = true;
  for (const auto& c : cases) {
    csv += c.op + "," + c.shape_desc + "," + fmt_sci(c.max_rel_err, 6) + "," + (c.pass ? "1" : "0") + "\n";
    all_pass = all_pass && c.pass;
  }
  fs::create_directories(out);
  write_file((fs::path(out) / "gradcheck.csv").string(), csv);
  std::printf("gradcheck: %zu ops, %s\n", cases.size(), all_pass ? "all pass" : "FAILURES");
  if (!all_pass) fail(ErrorKind::Numeric, "finite-difference check failed");
  return 0;
}

int cmd_report(const std::string& results, const std::string& out) {
  generate_report(results, out);
  std::printf("report: wrote tables and charts to %s\n", out.c_str());
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"MBMD Transformer: band-decomposed EEG classification pipeline"};
  app.require_subcommand(1);

  std::string out, dataset, config_path, checkpoint, suite, results, snr = "10";
  int patients = 6, trials = 32, classes = 4, channels = 2, branches = 6;
  double trial_seconds = 4.0, window_seconds = 4.0, overlap = 0.5;
  double eps = 1e-5, threshold = 1e-4;
  uint64_t seed = 0;
  int jobs = 0;
  int64_t seed_override = -1;
  bool no_preprocess = false;

  auto* synth = app.add_subcommand("synth", "generate a band-coded synthetic dataset");
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--patients", patients, "number of synthetic patients");
  synth->add_option("--trials-per-patient", trials, "trials per patient");
  synth->add_option("--classes", classes, "number of classes");
  synth->add_option("--snr-db", snr, "SNR in dB, or 'inf'");
  synth->add_option("--channels", channels, "channels per trial");
  synth->add_option("--trial-seconds", trial_seconds, "trial duration");
  synth->add_option("--seed", seed, "generator seed");

  auto* prep = app.add_subcommand("preprocess", "resample/notch/low-pass/detrend a dataset");
  prep->add_option("--dataset", dataset, "manifest.json path")->required();
  prep->add_option("--out", out, "output directory")->required();

  auto* dec = app.add_subcommand("decompose", "cache per-window band signals");
  dec->add_option("--dataset", dataset, "manifest.json path")->required();
  dec->add_option("--out", out, "output directory")->required();
  dec->add_option("--branches", branches, "band grouping preset (2, 3 or 6)");
  dec->add_option("--window-seconds", window_seconds, "window length");
  dec->add_option("--overlap", overlap, "window overlap fraction");

  auto* train = app.add_subcommand("train", "train one model from a run config");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--jobs", jobs, "worker threads");
  train->add_option("--seed", seed_override, "seed override");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--dataset", dataset, "manifest.json path")->required();
  eval->add_option("--out", out, "output directory")->required();
  eval->add_flag("--no-preprocess", no_preprocess, "skip the preprocessing pipeline");
  eval->add_option("--window-seconds", window_seconds, "window length");
  eval->add_option("--overlap", overlap, "window overlap fraction");

  auto* cv = app.add_subcommand("cv", "cross-patient cross-validation");
  cv->add_option("--config", config_path, "run config JSON")->required();
  cv->add_option("--out", out, "output directory")->required();
  cv->add_option("--jobs", jobs, "worker threads");
  cv->add_option("--seed", seed_override, "seed override");

  auto* ablate = app.add_subcommand("ablate", "run an ablation suite");
  ablate->add_option("--config", config_path, "run config JSON")->required();
  ablate->add_option("--out", out, "output directory")->required();
  ablate->add_option("--suite", suite, "loss_type | ensemble | block_pattern | temperature | branches");
  ablate->add_option("--jobs", jobs, "worker threads");
  ablate->add_option("--seed", seed_override, "seed override");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  grad->add_option("--out", out, "output directory")->required();
  grad->add_option("--eps", eps, "central-difference step");
  grad->add_option("--seed", seed, "input seed");
  grad->add_option("--threshold", threshold, "max relative error to pass");

  auto* rep = app.add_subcommand("report", "tables and charts from result CSVs");
  rep->add_option("--results", results, "directory with aggregate CSVs")->required();
  rep->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(out, patients, trials, classes, snr, channels, trial_seconds, seed);
    if (prep->parsed()) return cmd_preprocess(dataset, out);
    if (dec->parsed()) return cmd_decompose(dataset, out, branches, window_seconds, overlap);
    if (train->parsed()) return cmd_train(config_path, out, jobs, seed_override);
    if (eval->parsed()) return cmd_eval(checkpoint, dataset, out, no_preprocess, window_seconds, overlap);
    if (cv->parsed()) return cmd_cv(config_path, out, jobs, seed_override);
    if (ablate->parsed()) return cmd_ablate(config_path, out, suite, jobs, seed_override);
    if (grad->parsed()) return cmd_gradcheck(out, eps, seed, threshold);
    if (rep->parsed()) return cmd_report(results, out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}

}  // namespace mbmd
