#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "mbmd/eeg.hpp"
#include "oracle_utils.hpp"

#include <filesystem>
#include <map>
#include <set>

namespace fs = std::filesystem;
using namespace mbmd;

TEST_CASE("synth dataset: counts, balance, determinism") {
  SynthConfig cfg;
  cfg.num_patients = 6;
  cfg.trials_per_patient = 8;
  cfg.num_classes = 4;
  cfg.seed = 11;
  Dataset ds = synth_dataset(cfg);
  CHECK(ds.trials.size() == 48);
  std::map<int, int> per_class;
  for (const auto& t : ds.trials) ++per_class[t.label];
  for (int c = 0; c < 4; ++c) CHECK(per_class[c] == 12);

  Dataset ds2 = synth_dataset(cfg);
  REQUIRE(ds2.trials.size() == ds.trials.size());
  for (size_t i = 0; i < ds.trials.size(); ++i) {
    CHECK(ds.trials[i].samples.v == ds2.trials[i].samples.v);  // bit-identical
  }
}

TEST_CASE("synth dataset: noiseless class 0 concentrates in 0-4 Hz") {
  SynthConfig cfg;
  cfg.num_patients = 2;
  cfg.trials_per_patient = 4;
  cfg.num_classes = 4;
  cfg.snr_db = std::numeric_limits<double>::infinity();
  cfg.channels = 2;
  cfg.seed = 3;
  Dataset ds = synth_dataset(cfg);
  for (const auto& t : ds.trials) {
    if (t.label != 0) continue;
    for (int64_t ch = 0; ch < t.samples.rows; ++ch) {
      const double frac = oracle::band_energy_fraction(oracle::channel_of(t.samples, ch), 128.0, 0.0, 4.0);
      CHECK(frac >= 0.99);
    }
  }
}

TEST_CASE("synth dataset: K > 6 rejected") {
  SynthConfig cfg;
  cfg.num_classes = 7;
  CHECK_THROWS_AS(synth_dataset(cfg), Error);
}

TEST_CASE("segment: offsets and window counts") {
  EegTrial trial;
  trial.trial_id = "t";
  trial.patient_id = "p";
  trial.label = 2;
  trial.sample_rate_hz = 128.0;
  trial.samples = oracle::random_signal(3, 1280, 5);

  auto wins = segment(trial, 4.0, 0.5);
  // floor((1280-512)/256)+1 = 4
  REQUIRE(wins.size() == 4);
  std::vector<int64_t> offsets;
  for (const auto& w : wins) {
    offsets.push_back(w.offset_samples);
    CHECK(w.samples.rows == 3);
    CHECK(w.samples.cols == 512);
    CHECK(w.label == 2);
    CHECK(w.patient_id == "p");
    CHECK(w.parent_trial_id == "t");
  }
  CHECK(offsets == std::vector<int64_t>{0, 256, 512, 768});
  // window content matches the trial slice
  CHECK(wins[1].samples.at(1, 0) == trial.samples.at(1, 256));

  trial.samples = oracle::random_signal(1, 512, 6);
  CHECK(segment(trial).size() == 1);
  trial.samples = oracle::random_signal(1, 511, 7);
  CHECK(segment(trial).empty());
}

TEST_CASE("segment: coverage property at 50% overlap") {
  auto rng = make_rng(99);
  std::uniform_int_distribution<int64_t> len_dist(512, 2500);
  for (int trial_i = 0; trial_i < 10; ++trial_i) {
    EegTrial trial;
    trial.trial_id = "t";
    trial.patient_id = "p";
    trial.sample_rate_hz = 128.0;
    const int64_t len = len_dist(rng);
    trial.samples = SignalMatrix(1, len);
    auto wins = segment(trial, 4.0, 0.5);
    std::vector<bool> covered(static_cast<size_t>(len), false);
    for (const auto& w : wins) {
      for (int64_t i = w.offset_samples; i < w.offset_samples + 512; ++i) covered[static_cast<size_t>(i)] = true;
    }
    int64_t uncovered_from = len;
    for (int64_t i = 0; i < len; ++i) {
      if (!covered[static_cast<size_t>(i)]) {
        uncovered_from = i;
        break;
      }
    }
    // only a tail shorter than L/2 may be uncovered
    CHECK(len - uncovered_from < 256);
  }
}

TEST_CASE("patient folds: partition, near-equal sizes, determinism") {
  DatasetManifest m;
  m.class_spec.num_classes = 2;
  m.class_spec.class_names = {"a", "b"};
  for (int p = 0; p < 27; ++p) {
    TrialEntry e;
    e.path = "x";
    e.patient_id = "patient" + std::to_string(p);
    e.label = 0;
    e.sample_rate_hz = 128;
    m.trials.push_back(e);
  }
  FoldPlan plan = patient_folds(m, 3, 42);
  std::vector<int> sizes(3, 0);
  std::set<std::string> seen;
  for (const auto& [pid, f] : plan.assignments) {
    ++sizes[static_cast<size_t>(f)];
    seen.insert(pid);
  }
  CHECK(seen.size() == 27);  // partition covers every patient exactly once
  CHECK(sizes == std::vector<int>{9, 9, 9});

  FoldPlan again = patient_folds(m, 3, 42);
  CHECK(again.assignments == plan.assignments);
  FoldPlan other = patient_folds(m, 3, 43);
  CHECK(other.assignments != plan.assignments);

  FoldPlan k1 = patient_folds(m, 1, 7);
  for (const auto& [pid, f] : k1.assignments) CHECK(f == 0);

  DatasetManifest small = m;
  small.trials.resize(2);
  CHECK_THROWS_AS(patient_folds(small, 3, 0), Error);
}

TEST_CASE("manifest load: per-class counts and round trip") {
  oracle::TempDir dir("manifest");
  // class layout mirroring a 4-subtype corpus: 81/87/15/16 trials
  const std::vector<int> counts = {81, 87, 15, 16};
  Dataset ds;
  ds.manifest.format_version = 1;
  ds.manifest.class_spec.num_classes = 4;
  ds.manifest.class_spec.class_names = {"absz", "fsz", "tnsz", "tcsz"};
  int trial_i = 0;
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < counts[static_cast<size_t>(c)]; ++i) {
      EegTrial t;
      t.trial_id = "t" + std::to_string(trial_i);
      t.patient_id = "p" + std::to_string(trial_i % 9);
      t.label = c;
      t.sample_rate_hz = 128;
      t.samples = SignalMatrix(2, 16);
      t.samples.at(0, 3) = static_cast<double>(trial_i);
      TrialEntry e;
      e.path = t.trial_id;
      e.patient_id = t.patient_id;
      e.label = c;
      e.sample_rate_hz = 128;
      ds.manifest.trials.push_back(e);
      ds.trials.push_back(std::move(t));
      ++trial_i;
    }
  }
  save_dataset(ds, dir.str());
  Dataset loaded = load_dataset((dir.path / "manifest.json").string());
  std::map<int, int> per_class;
  for (const auto& t : loaded.trials) ++per_class[t.label];
  CHECK(per_class[0] == 81);
  CHECK(per_class[1] == 87);
  CHECK(per_class[2] == 15);
  CHECK(per_class[3] == 16);
  CHECK(loaded.trials[5].samples.at(0, 3) == doctest::Approx(5.0));
}

TEST_CASE("manifest load: empty trial list is fine") {
  oracle::TempDir dir("empty");
  write_file((dir.path / "manifest.json").string(),
             "{\"format_version\":1,\"classes\":[\"a\",\"b\"],\"trials\":[]}");
  Dataset ds = load_dataset((dir.path / "manifest.json").string());
  CHECK(ds.trials.empty());
}

TEST_CASE("manifest load: distinct errors name the offending entry") {
  oracle::TempDir dir("errs");
  SignalMatrix sig(19, 8);
  write_trial_binary((dir.path / "t0.eegt").string(), sig);

  SUBCASE("missing file") {
    write_file((dir.path / "manifest.json").string(),
               "{\"format_version\":1,\"classes\":[\"a\",\"b\"],\"trials\":["
               "{\"path\":\"nope.eegt\",\"patient\":\"p\",\"label\":0,\"rate_hz\":128}]}");
    try {
      load_dataset((dir.path / "manifest.json").string());
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("nope.eegt") != std::string::npos);
    }
  }
  SUBCASE("shape mismatch against declared channels") {
    write_file((dir.path / "manifest.json").string(),
               "{\"format_version\":1,\"classes\":[\"a\",\"b\"],\"trials\":["
               "{\"path\":\"t0.eegt\",\"patient\":\"p\",\"label\":0,\"rate_hz\":128,\"channels\":20}]}");
    try {
      load_dataset((dir.path / "manifest.json").string());
      FAIL("expected error");
    } catch (const Error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("t0.eegt") != std::string::npos);
      CHECK(msg.find("19") != std::string::npos);
    }
  }
  SUBCASE("unknown label") {
    write_file((dir.path / "manifest.json").string(),
               "{\"format_version\":1,\"classes\":[\"a\",\"b\"],\"trials\":["
               "{\"path\":\"t0.eegt\",\"patient\":\"p\",\"label\":5,\"rate_hz\":128}]}");
    CHECK_THROWS_AS(load_dataset((dir.path / "manifest.json").string()), Error);
  }
  SUBCASE("version mismatch") {
    write_file((dir.path / "manifest.json").string(),
               "{\"format_version\":9,\"classes\":[\"a\",\"b\"],\"trials\":[]}");
    CHECK_THROWS_AS(load_dataset((dir.path / "manifest.json").string()), Error);
  }
}

TEST_CASE("trial files: CSV and binary readers agree") {
  oracle::TempDir dir("io");
  SignalMatrix sig = oracle::random_signal(3, 21, 17);
  write_trial_csv((dir.path / "a.csv").string(), sig);
  write_trial_binary((dir.path / "a.eegt").string(), sig);
  SignalMatrix from_csv = read_trial_file((dir.path / "a.csv").string());
  SignalMatrix from_bin = read_trial_file((dir.path / "a.eegt").string());
  REQUIRE(from_csv.rows == 3);
  REQUIRE(from_bin.rows == 3);
  for (int64_t i = 0; i < sig.numel(); ++i) {
    CHECK(from_csv.v[static_cast<size_t>(i)] == doctest::Approx(sig.v[static_cast<size_t>(i)]).epsilon(1e-6));
    // binary stores f32
    CHECK(from_bin.v[static_cast<size_t>(i)] == doctest::Approx(sig.v[static_cast<size_t>(i)]).epsilon(1e-6));
  }
}
