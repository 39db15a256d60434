#pragma once

#include <string>

#include "mbmd/eeg.hpp"
#include "mbmd/trainer.hpp"

namespace mbmd {

/// Fully-resolved run description. Parsed strictly: unknown keys are a config
/// error; omitted keys take the defaults below. The resolved form is echoed
/// into every run directory.
struct RunConfig {
  std::string dataset_path;  // empty when synthetic
  bool use_synth = false;
  SynthConfig synth;
  bool preprocess = true;
  int jobs = 1;
  int folds = 3;
  int repeats = 10;
  double window_seconds = 4.0;
  double overlap = 0.5;
  TrainConfig train;
  std::string suite;

  static RunConfig from_json_text(const std::string& text);
  std::string to_json() const;
};

/// Materializes the dataset (synthetic or from disk) and applies the
/// preprocessing pipeline when requested.
Dataset load_run_dataset(const RunConfig& cfg);

/// Fills model fields that derive from the data (classes, channels, window
/// length) and validates the final config.
void resolve_model_from_data(RunConfig& cfg, const Dataset& ds);

std::string distill_mode_name(DistillMode m);
DistillMode distill_mode_from_name(const std::string& s);

}  // namespace mbmd
