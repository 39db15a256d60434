#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mbmd/common.hpp"

namespace mbmd {

inline constexpr double kTargetRateHz = 128.0;

struct ClassSpec {
  int num_classes = 0;
  std::vector<std::string> class_names;
};

/// One labeled multichannel EEG recording (channels x time points).
struct EegTrial {
  std::string trial_id;
  std::string patient_id;
  int label = 0;
  double sample_rate_hz = 0.0;
  SignalMatrix samples;  // C x L_total
  std::vector<std::string> channel_names;
};

/// A fixed-length segment cut from a trial. Inherits label and patient.
struct EegWindow {
  std::string patient_id;
  int label = 0;
  double sample_rate_hz = 0.0;
  SignalMatrix samples;  // C x L
  std::string parent_trial_id;
  int64_t offset_samples = 0;
};

struct TrialEntry {
  std::string path;
  std::string patient_id;
  int label = 0;
  double sample_rate_hz = 0.0;
  int declared_channels = -1;  // optional; -1 = unspecified
};

struct DatasetManifest {
  int format_version = 1;
  ClassSpec class_spec;
  std::vector<TrialEntry> trials;
};

struct FoldPlan {
  int k = 0;
  std::map<std::string, int> assignments;  // patient_id -> fold
  uint64_t seed = 0;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<EegTrial> trials;
};

// --- trial file IO -----------------------------------------------------------
// Two on-disk formats: CSV (one row per channel, no header) and binary
// "EEGT" (magic, u32 version, u32 C, u64 L, C*L little-endian f32 row-major).
// Readers sniff the magic; writers pick by extension (.csv vs anything else).

SignalMatrix read_trial_file(const std::string& path);
void write_trial_csv(const std::string& path, const SignalMatrix& m);
void write_trial_binary(const std::string& path, const SignalMatrix& m);

// --- manifest ----------------------------------------------------------------

DatasetManifest parse_manifest_json(const std::string& json_text, const std::string& base_dir);
std::string manifest_to_json(const DatasetManifest& m);

/// Loads the manifest and every referenced trial. Validates shapes and labels.
Dataset load_dataset(const std::string& manifest_path);

/// Writes trials (binary) plus manifest.json under out_dir.
void save_dataset(const Dataset& ds, const std::string& out_dir);

// --- segmentation and folds ----------------------------------------------------

/// Cuts a 128 Hz trial into windows of window_seconds with the given overlap.
/// Trials shorter than one window yield an empty list.
std::vector<EegWindow> segment(const EegTrial& trial, double window_seconds = 4.0,
                               double overlap_fraction = 0.5);

/// Patient-disjoint fold assignment, deterministic per seed, sizes within 1.
FoldPlan patient_folds(const DatasetManifest& manifest, int k, uint64_t seed);

/// Same contract, starting from an explicit patient list.
FoldPlan make_patient_folds(std::vector<std::string> patients, int k, uint64_t seed);

std::vector<std::string> distinct_patients(const DatasetManifest& manifest);

// --- synthetic data ------------------------------------------------------------

struct SynthConfig {
  int num_patients = 6;
  int trials_per_patient = 32;
  int num_classes = 4;
  double snr_db = 10.0;  // +inf = noiseless
  uint64_t seed = 0;
  int channels = 2;
  double trial_seconds = 4.0;
};

/// Band-coded surrogate dataset: class c trials carry narrowband power inside
/// band c (delta, theta, alpha, beta, then gamma, broadband) plus white noise
/// at the configured SNR and a per-patient amplitude jitter.
Dataset synth_dataset(const SynthConfig& cfg);

}  // namespace mbmd
