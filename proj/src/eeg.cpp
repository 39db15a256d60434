#include "mbmd/eeg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mbmd {

namespace {

constexpr char kMagic[4] = {'E', 'E', 'G', 'T'};
constexpr uint32_t kBinaryVersion = 1;

void check_finite(const SignalMatrix& m, const std::string& what) {
  for (double x : m.v) {
    require(std::isfinite(x), ErrorKind::Data, "non-finite sample in " + what);
  }
}

SignalMatrix read_trial_csv_text(const std::string& text, const std::string& path) {
  SignalMatrix m;
  std::vector<double> values;
  int64_t cols = -1, rows = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int64_t n = 0;
    const char* p = line.c_str();
    char* end = nullptr;
    while (true) {
      double x = std::strtod(p, &end);
      if (end == p) break;
      values.push_back(x);
      ++n;
      p = end;
      while (*p == ',' || *p == ' ' || *p == '\t' || *p == '\r') ++p;
      if (*p == '\0') break;
    }
    if (n == 0) continue;
    if (cols < 0) cols = n;
    require(n == cols, ErrorKind::Data, "ragged CSV row in " + path);
    ++rows;
  }
  require(rows >= 1 && cols >= 1, ErrorKind::Data, "empty trial file: " + path);
  m.rows = rows;
  m.cols = cols;
  m.v = std::move(values);
  return m;
}

template <typename T>
T read_le(std::istream& in) {
  T x{};
  in.read(reinterpret_cast<char*>(&x), sizeof(T));
  return x;
}

template <typename T>
void write_le(std::ostream& out, T x) {
  out.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

}  // namespace

SignalMatrix read_trial_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Data, "missing trial file: " + path);
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0) {
    uint32_t version = read_le<uint32_t>(in);
    require(version == kBinaryVersion, ErrorKind::Data,
            "unsupported trial file version " + std::to_string(version) + " in " + path);
    uint32_t c = read_le<uint32_t>(in);
    uint64_t l = read_le<uint64_t>(in);
    require(in.good() && c >= 1 && l >= 1, ErrorKind::Data, "corrupt trial header: " + path);
    SignalMatrix m(static_cast<int64_t>(c), static_cast<int64_t>(l));
    std::vector<float> buf(m.numel());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    require(in.gcount() == static_cast<std::streamsize>(buf.size() * sizeof(float)), ErrorKind::Data,
            "truncated trial file: " + path);
    std::copy(buf.begin(), buf.end(), m.v.begin());
    check_finite(m, path);
    return m;
  }
  SignalMatrix m = read_trial_csv_text(read_file(path), path);
  check_finite(m, path);
  return m;
}

void write_trial_csv(const std::string& path, const SignalMatrix& m) {
  std::ostringstream out;
  for (int64_t r = 0; r < m.rows; ++r) {
    for (int64_t c = 0; c < m.cols; ++c) {
      if (c) out << ',';
      out << fmt_sci(m.at(r, c), 9);
    }
    out << '\n';
  }
  write_file(path, out.str());
}

void write_trial_binary(const std::string& path, const SignalMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Data, "cannot write trial file: " + path);
  out.write(kMagic, 4);
  write_le<uint32_t>(out, kBinaryVersion);
  write_le<uint32_t>(out, static_cast<uint32_t>(m.rows));
  write_le<uint64_t>(out, static_cast<uint64_t>(m.cols));
  std::vector<float> buf(m.v.begin(), m.v.end());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  require(out.good(), ErrorKind::Data, "write failed: " + path);
}

DatasetManifest parse_manifest_json(const std::string& json_text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, std::string("manifest parse error: ") + e.what());
  }
  DatasetManifest m;
  require(j.is_object(), ErrorKind::Data, "manifest must be a JSON object");
  require(j.contains("format_version") && j["format_version"].is_number_integer(), ErrorKind::Data,
          "manifest missing format_version");
  m.format_version = j["format_version"].get<int>();
  require(m.format_version == 1, ErrorKind::Data,
          "unsupported manifest version " + std::to_string(m.format_version));
  require(j.contains("classes") && j["classes"].is_array(), ErrorKind::Data, "manifest missing classes");
  for (const auto& c : j["classes"]) {
    require(c.is_string(), ErrorKind::Data, "class names must be strings");
    m.class_spec.class_names.push_back(c.get<std::string>());
  }
  m.class_spec.num_classes = static_cast<int>(m.class_spec.class_names.size());
  require(m.class_spec.num_classes >= 2, ErrorKind::Data, "manifest needs at least 2 classes");
  {
    auto names = m.class_spec.class_names;
    std::sort(names.begin(), names.end());
    require(std::adjacent_find(names.begin(), names.end()) == names.end(), ErrorKind::Data,
            "duplicate class name in manifest");
  }
  require(j.contains("trials") && j["trials"].is_array(), ErrorKind::Data, "manifest missing trials");
  for (const auto& t : j["trials"]) {
    TrialEntry e;
    require(t.is_object() && t.contains("path") && t.contains("patient") && t.contains("label") &&
                t.contains("rate_hz"),
            ErrorKind::Data, "trial entry missing path/patient/label/rate_hz");
    e.path = t["path"].get<std::string>();
    if (!base_dir.empty() && !fs::path(e.path).is_absolute()) {
      e.path = (fs::path(base_dir) / e.path).string();
    }
    e.patient_id = t["patient"].get<std::string>();
    require(!e.patient_id.empty(), ErrorKind::Data, "empty patient id for trial " + e.path);
    e.label = t["label"].get<int>();
    require(e.label >= 0 && e.label < m.class_spec.num_classes, ErrorKind::Data,
            "unknown label " + std::to_string(e.label) + " for trial " + e.path);
    e.sample_rate_hz = t["rate_hz"].get<double>();
    require(e.sample_rate_hz > 0, ErrorKind::Data, "non-positive rate for trial " + e.path);
    if (t.contains("channels")) e.declared_channels = t["channels"].get<int>();
    m.trials.push_back(std::move(e));
  }
  return m;
}

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["classes"] = m.class_spec.class_names;
  j["trials"] = json::array();
  for (const auto& t : m.trials) {
    json e;
    e["path"] = fs::path(t.path).filename().string();
    e["patient"] = t.patient_id;
    e["label"] = t.label;
    e["rate_hz"] = t.sample_rate_hz;
    if (t.declared_channels >= 0) e["channels"] = t.declared_channels;
    j["trials"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

Dataset load_dataset(const std::string& manifest_path) {
  const std::string base_dir = fs::path(manifest_path).parent_path().string();
  Dataset ds;
  ds.manifest = parse_manifest_json(read_file(manifest_path), base_dir);
  ds.trials.reserve(ds.manifest.trials.size());
  for (const auto& e : ds.manifest.trials) {
    EegTrial t;
    t.trial_id = fs::path(e.path).stem().string();
    t.patient_id = e.patient_id;
    t.label = e.label;
    t.sample_rate_hz = e.sample_rate_hz;
    t.samples = read_trial_file(e.path);
    if (e.declared_channels >= 0) {
      require(t.samples.rows == e.declared_channels, ErrorKind::Data,
              "shape mismatch for " + e.path + ": declared " + std::to_string(e.declared_channels) +
                  " channels, file has " + std::to_string(t.samples.rows));
    }
    for (int64_t c = 0; c < t.samples.rows; ++c) t.channel_names.push_back("ch" + std::to_string(c));
    ds.trials.push_back(std::move(t));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& out_dir) {
  fs::create_directories(out_dir);
  DatasetManifest out = ds.manifest;
  require(out.trials.size() == ds.trials.size(), ErrorKind::Data, "manifest/trial count mismatch");
  for (size_t i = 0; i < ds.trials.size(); ++i) {
    std::string name =
        (ds.trials[i].trial_id.empty() ? "trial_" + std::to_string(i) : ds.trials[i].trial_id) + ".eegt";
    write_trial_binary((fs::path(out_dir) / name).string(), ds.trials[i].samples);
    out.trials[i].path = name;
    out.trials[i].declared_channels = static_cast<int>(ds.trials[i].samples.rows);
  }
  write_file((fs::path(out_dir) / "manifest.json").string(), manifest_to_json(out));
}

std::vector<EegWindow> segment(const EegTrial& trial, double window_seconds, double overlap_fraction) {
  require(std::abs(trial.sample_rate_hz - kTargetRateHz) < 1e-9, ErrorKind::Data,
          "segment expects 128 Hz trials, got " + std::to_string(trial.sample_rate_hz));
  require(overlap_fraction >= 0.0 && overlap_fraction < 1.0, ErrorKind::Data,
          "overlap_fraction must be in [0,1)");
  const int64_t win_len = static_cast<int64_t>(std::llround(window_seconds * trial.sample_rate_hz));
  require(win_len >= 1, ErrorKind::Data, "window too short");
  const int64_t step = std::max<int64_t>(1, static_cast<int64_t>(std::llround(win_len * (1.0 - overlap_fraction))));

  std::vector<EegWindow> out;
  const int64_t total = trial.samples.cols;
  if (total < win_len) return out;
  for (int64_t off = 0; off + win_len <= total; off += step) {
    EegWindow w;
    w.patient_id = trial.patient_id;
    w.label = trial.label;
    w.sample_rate_hz = trial.sample_rate_hz;
    w.parent_trial_id = trial.trial_id;
    w.offset_samples = off;
    w.samples = SignalMatrix(trial.samples.rows, win_len);
    for (int64_t c = 0; c < trial.samples.rows; ++c) {
      const double* src = trial.samples.row(c) + off;
      std::copy(src, src + win_len, w.samples.row(c));
    }
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<std::string> distinct_patients(const DatasetManifest& manifest) {
  std::vector<std::string> ids;
  for (const auto& t : manifest.trials) ids.push_back(t.patient_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

FoldPlan make_patient_folds(std::vector<std::string> patients, int k, uint64_t seed) {
  require(k >= 1, ErrorKind::Config, "fold count must be >= 1");
  std::sort(patients.begin(), patients.end());
  patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
  require(static_cast<int>(patients.size()) >= k, ErrorKind::Data,
          "infeasible folds: " + std::to_string(patients.size()) + " patients < k=" + std::to_string(k));
  auto rng = make_rng(derive_seed(seed, 0x466f6c64));  // "Fold"
  std::shuffle(patients.begin(), patients.end(), rng);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  for (size_t i = 0; i < patients.size(); ++i) plan.assignments[patients[i]] = static_cast<int>(i % k);
  return plan;
}

FoldPlan patient_folds(const DatasetManifest& manifest, int k, uint64_t seed) {
  return make_patient_folds(distinct_patients(manifest), k, seed);
}

Dataset synth_dataset(const SynthConfig& cfg) {
  require(cfg.num_classes >= 2, ErrorKind::Config, "synth needs K >= 2");
  require(cfg.num_classes <= 6, ErrorKind::Config,
          "synth supports at most 6 classes, got " + std::to_string(cfg.num_classes));
  require(cfg.num_patients >= 1 && cfg.trials_per_patient >= 1, ErrorKind::Config, "empty synth config");
  require(cfg.channels >= 1, ErrorKind::Config, "synth needs at least one channel");

  // Class c gets narrowband power inside band c. Classes 0..4 use the named
  // EEG ranges; a 6th class is broadband (noise-only spectrum), the only code
  // left once the five real bands are spoken for.
  static const double kBandLo[5] = {0.0, 4.0, 8.0, 16.0, 32.0};
  static const double kBandHi[5] = {4.0, 8.0, 16.0, 32.0, 64.0};
  static const char* kClassNames[6] = {"delta_coded", "theta_coded", "alpha_coded",
                                       "beta_coded",  "gamma_coded", "broadband"};

  const int64_t len = static_cast<int64_t>(std::llround(cfg.trial_seconds * kTargetRateHz));
  const double bin_hz = 0.25;  // 0.25 Hz grid keeps tones bin-centered in any 4 s window

  Dataset ds;
  ds.manifest.format_version = 1;
  for (int c = 0; c < cfg.num_classes; ++c) ds.manifest.class_spec.class_names.push_back(kClassNames[c]);
  ds.manifest.class_spec.num_classes = cfg.num_classes;

  for (int p = 0; p < cfg.num_patients; ++p) {
    auto patient_rng = make_rng(derive_seed(cfg.seed, 0x5059, static_cast<uint64_t>(p)));
    std::normal_distribution<double> jitter(0.0, 0.2);
    const double patient_gain = std::exp(jitter(patient_rng));

    for (int t = 0; t < cfg.trials_per_patient; ++t) {
      const int label = t % cfg.num_classes;
      EegTrial trial;
      trial.trial_id = "synth_p" + std::to_string(p) + "_t" + std::to_string(t);
      trial.patient_id = "synth_p" + std::to_string(p);
      trial.label = label;
      trial.sample_rate_hz = kTargetRateHz;
      trial.samples = SignalMatrix(cfg.channels, len);
      for (int64_t c = 0; c < cfg.channels; ++c) trial.channel_names.push_back("ch" + std::to_string(c));

      auto rng = make_rng(derive_seed(cfg.seed, static_cast<uint64_t>(p), static_cast<uint64_t>(t), 0x54));
      std::uniform_real_distribution<double> unif(0.0, 1.0);

      for (int64_t ch = 0; ch < cfg.channels; ++ch) {
        double signal_power = 0.0;
        double* row = trial.samples.row(ch);
        if (label < 5) {
          const double lo = kBandLo[label], hi = kBandHi[label];
          // tones strictly inside the band, quantized to the DFT bin grid
          const int64_t lo_bin = static_cast<int64_t>(std::llround((lo + bin_hz) / bin_hz));
          const int64_t hi_bin = static_cast<int64_t>(std::llround((hi - bin_hz) / bin_hz));
          for (int tone = 0; tone < 3; ++tone) {
            const int64_t bin = lo_bin + static_cast<int64_t>(unif(rng) * static_cast<double>(hi_bin - lo_bin + 1));
            const double f = static_cast<double>(std::min(bin, hi_bin)) * bin_hz;
            const double amp = patient_gain * (0.7 + 0.6 * unif(rng));
            const double phase = 2.0 * M_PI * unif(rng);
            const double w = 2.0 * M_PI * f / kTargetRateHz;
            for (int64_t i = 0; i < len; ++i) row[i] += amp * std::sin(w * static_cast<double>(i) + phase);
            signal_power += 0.5 * amp * amp;
          }
        } else {
          signal_power = patient_gain * patient_gain;  // broadband class: noise is the signal
        }

        if (std::isfinite(cfg.snr_db)) {
          const double noise_std = std::sqrt(signal_power / std::pow(10.0, cfg.snr_db / 10.0));
          std::normal_distribution<double> noise(0.0, noise_std);
          for (int64_t i = 0; i < len; ++i) row[i] += noise(rng);
        } else if (label >= 5) {
          // noiseless broadband still needs content
          std::normal_distribution<double> noise(0.0, patient_gain);
          for (int64_t i = 0; i < len; ++i) row[i] += noise(rng);
        }
      }

      TrialEntry e;
      e.path = "synth_p" + std::to_string(p) + "_t" + std::to_string(t);
      e.patient_id = trial.patient_id;
      e.label = label;
      e.sample_rate_hz = kTargetRateHz;
      e.declared_channels = cfg.channels;
      ds.manifest.trials.push_back(std::move(e));
      ds.trials.push_back(std::move(trial));
    }
  }
  return ds;
}

}  // namespace mbmd
