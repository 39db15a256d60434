#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "mbmd/eeg.hpp"
#include "mbmd/losses.hpp"
#include "mbmd/metrics.hpp"
#include "mbmd/model.hpp"
#include "mbmd/wpd.hpp"

extern "C" void openblas_set_num_threads(int);

namespace mbmd {

inline void set_blas_threads(int n) { openblas_set_num_threads(std::max(1, n)); }

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 0.001;
  double weight_decay = 5e-5;
  int patience = 10;
  int max_epochs = 200;
  uint64_t seed = 0;
  DistillConfig distill;
  ModelConfig model;
  EnsembleMode ensemble_mode = EnsembleMode::WaveletAttention;
  double gate_importance_weight = 0.0;
  bool branch_ce = true;    // CE also supervises the branch logits
  bool use_bands = true;    // false = raw-only training (vanilla ViT regime)
  double val_fraction = 0.2;

  void validate() const {
    require(batch_size >= 1, ErrorKind::Config, "batch_size must be >= 1");
    require(patience >= 1, ErrorKind::Config, "patience must be >= 1");
    require(max_epochs >= 1, ErrorKind::Config, "max_epochs must be >= 1");
    require(distill.temperature > 0, ErrorKind::Config, "temperature must be positive");
    require(distill.lambda >= 0, ErrorKind::Config, "lambda must be >= 0");
    require(val_fraction >= 0 && val_fraction < 1, ErrorKind::Config, "val_fraction in [0,1)");
    model.validate();
  }
};

/// Windows plus their cached band decompositions, ready for training.
struct Cohort {
  std::vector<EegWindow> windows;
  std::vector<BandSet> bands;  // parallel to windows; empty if built without bands
  ClassSpec classes;
  BandGrouping grouping;

  bool has_bands() const { return !bands.empty(); }
};

inline Cohort build_cohort(const Dataset& ds, const BandGrouping& grouping, bool with_bands,
                           double window_seconds = 4.0, double overlap = 0.5) {
  Cohort c;
  c.classes = ds.manifest.class_spec;
  c.grouping = grouping;
  for (const auto& trial : ds.trials) {
    auto wins = segment(trial, window_seconds, overlap);
    for (auto& w : wins) {
      if (with_bands) c.bands.push_back(decompose_bands(w, grouping));
      c.windows.push_back(std::move(w));
    }
  }
  return c;
}

struct EpochLog {
  int epoch = 0;
  LossBreakdown train;
  double val_loss = 0, val_acc = 0, val_bca = 0, val_f1 = 0;
};

template <typename T>
struct TrainResult {
  Model<T> best;
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val_loss = 0;
};

struct CvCell {
  int repeat = 0;
  int fold = 0;
  MetricsReport window_metrics;
  MetricsReport trial_metrics;
};

struct MetricAggregate {
  double mean = 0;
  double stddev = 0;  // sample standard deviation
};

struct CvResult {
  int k = 0;
  int repeats = 0;
  std::vector<CvCell> cells;
  MetricAggregate acc, bca, weighted_f1;
};

struct SuiteRow {
  std::string variant;
  CvResult cv;
};

struct SuiteResult {
  std::string suite;
  std::vector<SuiteRow> rows;
};

// --- internals ------------------------------------------------------------------

template <typename T>
struct AdamW {
  double lr = 0.001;
  double wd = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;

  void step(diff::ParamStore<T>& ps) {
    ++t;
    const T bc1 = static_cast<T>(1.0 - std::pow(beta1, static_cast<double>(t)));
    const T bc2 = static_cast<T>(1.0 - std::pow(beta2, static_cast<double>(t)));
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    const T lr_t = static_cast<T>(lr), wd_t = static_cast<T>(wd), eps_t = static_cast<T>(eps);
    for (auto& e : ps.entries) {
      for (size_t i = 0; i < e.value.v.size(); ++i) {
        const T g = e.grad.v[i];
        e.adam_m.v[i] = b1 * e.adam_m.v[i] + (T(1) - b1) * g;
        e.adam_v.v[i] = b2 * e.adam_v.v[i] + (T(1) - b2) * g * g;
        const T mhat = e.adam_m.v[i] / bc1;
        const T vhat = e.adam_v.v[i] / bc2;
        // decoupled decay, then the adam update
        e.value.v[i] -= lr_t * wd_t * e.value.v[i];
        e.value.v[i] -= lr_t * mhat / (std::sqrt(vhat) + eps_t);
      }
    }
  }
};

template <typename T>
struct LossRefs {
  using Ref = typename diff::Tape<T>::Ref;
  Ref ce = -1, distill = -1, norm = -1, imp = -1, total = -1;
  bool has_imp = false;
};

/// Assembles the training objective on the tape for one batch.
template <typename T>
LossRefs<T> build_total_loss(diff::Tape<T>& tape, const Model<T>& model, const ForwardRefs<T>& fwd,
                             const std::vector<int64_t>& labels, const TrainConfig& cfg) {
  using Ref = typename diff::Tape<T>::Ref;
  auto& ps = const_cast<diff::ParamStore<T>&>(model.params);
  LossRefs<T> out;

  out.ce = ce_graph(tape, fwd.z_data, labels);
  if (cfg.branch_ce && !fwd.z_branch.empty()) {
    Ref acc = -1;
    for (Ref zb : fwd.z_branch) {
      Ref cb = ce_graph(tape, zb, labels);
      acc = (acc < 0) ? cb : tape.add(acc, cb);
    }
    out.ce = tape.add(out.ce, tape.scale(acc, 1.0 / static_cast<double>(fwd.z_branch.size())));
  }

  out.distill = distill_graph(tape, fwd.z_data, fwd.z_branch, cfg.distill.temperature, cfg.distill.mode);
  out.norm = (cfg.ensemble_mode == EnsembleMode::WaveletAttention)
                 ? tape.l1_norm(tape.param(ps, "wavelet_w"))
                 : tape.input(diff::Tensor<T>({1}));

  Ref total = (cfg.distill.mode == DistillMode::None) ? out.ce : tape.add(out.ce, out.distill);
  total = tape.add(total, tape.scale(out.norm, cfg.distill.lambda));
  if (cfg.ensemble_mode == EnsembleMode::GateNetwork && cfg.gate_importance_weight > 0 &&
      fwd.gate_head >= 0) {
    out.imp = importance_graph(tape, fwd.gate_head);
    out.has_imp = true;
    total = tape.add(total, tape.scale(out.imp, cfg.gate_importance_weight));
  } else {
    out.imp = tape.input(diff::Tensor<T>({1}));
  }
  out.total = total;
  return out;
}

template <typename T>
LossBreakdown read_breakdown(const diff::Tape<T>& tape, const LossRefs<T>& refs) {
  LossBreakdown b;
  b.l_ce = tape.scalar(refs.ce);
  b.l_distill = tape.scalar(refs.distill);
  b.l_norm = tape.scalar(refs.norm);
  b.l_imp = tape.scalar(refs.imp);
  b.has_imp = refs.has_imp;
  b.total = tape.scalar(refs.total);
  return b;
}

namespace detail {

inline std::vector<std::string> patients_of(const Cohort& cohort, const std::vector<int64_t>& idx) {
  std::vector<std::string> out;
  for (int64_t i : idx) out.push_back(cohort.windows[static_cast<size_t>(i)].patient_id);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Patient-level 20% holdout carved from the training windows; all windows of
/// a patient stay on one side.
inline void split_train_val(const Cohort& cohort, const std::vector<int64_t>& all_idx,
                            double val_fraction, uint64_t seed, std::vector<int64_t>& train_idx,
                            std::vector<int64_t>& val_idx) {
  auto patients = patients_of(cohort, all_idx);
  auto rng = make_rng(derive_seed(seed, 0x76616c));  // "val"
  std::shuffle(patients.begin(), patients.end(), rng);
  size_t n_val = 0;
  if (patients.size() >= 2 && val_fraction > 0) {
    n_val = std::max<size_t>(1, static_cast<size_t>(std::llround(val_fraction * static_cast<double>(patients.size()))));
    if (n_val >= patients.size()) n_val = patients.size() - 1;
  }
  std::vector<std::string> val_patients(patients.begin(), patients.begin() + static_cast<int64_t>(n_val));
  std::sort(val_patients.begin(), val_patients.end());
  auto is_val = [&](const std::string& p) {
    return std::binary_search(val_patients.begin(), val_patients.end(), p);
  };
  for (int64_t i : all_idx) {
    (is_val(cohort.windows[static_cast<size_t>(i)].patient_id) ? val_idx : train_idx).push_back(i);
  }
}

template <typename T>
void gather_batch(const Cohort& cohort, const std::vector<int64_t>& idx, int64_t start, int64_t count,
                  bool with_bands, std::vector<const EegWindow*>& wins,
                  std::vector<const BandSet*>& bands, std::vector<int64_t>& labels) {
  wins.clear();
  bands.clear();
  labels.clear();
  for (int64_t i = start; i < start + count; ++i) {
    const int64_t w = idx[static_cast<size_t>(i)];
    wins.push_back(&cohort.windows[static_cast<size_t>(w)]);
    if (with_bands) bands.push_back(&cohort.bands[static_cast<size_t>(w)]);
    labels.push_back(cohort.windows[static_cast<size_t>(w)].label);
  }
}

}  // namespace detail

/// Loss and window-level metrics over an index set, dropout disabled.
/// The raw path is exactly the inference path; band streams run only to
/// evaluate the training objective.
template <typename T>
std::pair<LossBreakdown, MetricsReport> evaluate_loss_and_metrics(const Model<T>& model,
                                                                  const Cohort& cohort,
                                                                  const std::vector<int64_t>& idx,
                                                                  const TrainConfig& cfg) {
  require(!idx.empty(), ErrorKind::Data, "empty evaluation set");
  const bool with_bands = cfg.use_bands && cohort.has_bands();
  std::vector<const EegWindow*> wins;
  std::vector<const BandSet*> bands;
  std::vector<int64_t> labels;
  std::vector<int> y_true, y_pred;
  LossBreakdown sum;
  int64_t steps = 0;
  const int64_t chunk = 128;
  for (int64_t start = 0; start < static_cast<int64_t>(idx.size()); start += chunk) {
    const int64_t count = std::min<int64_t>(chunk, static_cast<int64_t>(idx.size()) - start);
    detail::gather_batch(cohort, idx, start, count, with_bands, wins, bands, labels);
    diff::Tape<T> tape(0, /*train_mode=*/false);
    auto fwd = model.forward(tape, wins, bands);
    auto refs = build_total_loss(tape, model, fwd, labels, cfg);
    auto b = read_breakdown(tape, refs);
    const double w = static_cast<double>(count);
    sum.l_ce += b.l_ce * w;
    sum.l_distill += b.l_distill * w;
    sum.l_norm = b.l_norm;  // batch-independent
    sum.l_imp += b.l_imp * w;
    sum.has_imp = b.has_imp;
    sum.total += b.total * w;
    ++steps;
    const auto& z = tape.value(fwd.z_data);
    for (int64_t i = 0; i < count; ++i) {
      int best = 0;
      for (int c = 1; c < cohort.classes.num_classes; ++c)
        if (z.at(i, c) > z.at(i, best)) best = c;
      y_true.push_back(static_cast<int>(labels[static_cast<size_t>(i)]));
      y_pred.push_back(best);
    }
  }
  const double n = static_cast<double>(idx.size());
  sum.l_ce /= n;
  sum.l_distill /= n;
  sum.l_imp /= n;
  sum.total /= n;
  return {sum, compute_metrics(y_true, y_pred, cohort.classes.num_classes)};
}

/// Optimization loop with early stopping on validation total loss; returns
/// the best-validation parameter snapshot and the per-epoch log.
template <typename T>
TrainResult<T> train_model(const Cohort& cohort, const std::vector<int64_t>& train_idx,
                           const std::vector<int64_t>& val_idx, const TrainConfig& cfg) {
  cfg.validate();
  require(!train_idx.empty(), ErrorKind::Data, "empty training set");
  const bool with_bands = cfg.use_bands;
  if (with_bands) {
    require(cohort.has_bands(), ErrorKind::Data, "band cache missing: cohort built without bands");
    require(cohort.grouping.num_branches() == cfg.model.num_branches, ErrorKind::Config,
            "cohort band grouping does not match model num_branches");
  }

  Model<T> model = Model<T>::init(cfg.model, cfg.ensemble_mode, cfg.seed);
  AdamW<T> opt;
  opt.lr = cfg.learning_rate;
  opt.wd = cfg.weight_decay;

  TrainResult<T> result;
  result.best = model;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  auto shuffle_rng = make_rng(derive_seed(cfg.seed, 0x73687566));  // "shuf"
  std::vector<int64_t> order = train_idx;
  std::vector<const EegWindow*> wins;
  std::vector<const BandSet*> bands;
  std::vector<int64_t> labels;

  int epochs_since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    LossBreakdown epoch_sum;
    int64_t steps = 0;
    for (int64_t start = 0; start < static_cast<int64_t>(order.size()); start += cfg.batch_size) {
      const int64_t count = std::min<int64_t>(cfg.batch_size, static_cast<int64_t>(order.size()) - start);
      detail::gather_batch(cohort, order, start, count, with_bands, wins, bands, labels);
      diff::Tape<T> tape(derive_seed(cfg.seed, 0x73746570, static_cast<uint64_t>(epoch), static_cast<uint64_t>(start)),
                         /*train_mode=*/true);
      auto fwd = model.forward(tape, wins, bands);
      auto refs = build_total_loss(tape, model, fwd, labels, cfg);
      model.params.zero_grad();
      tape.backward(refs.total);
      opt.step(model.params);
      auto b = read_breakdown(tape, refs);
      epoch_sum.l_ce += b.l_ce;
      epoch_sum.l_distill += b.l_distill;
      epoch_sum.l_norm += b.l_norm;
      epoch_sum.l_imp += b.l_imp;
      epoch_sum.has_imp = b.has_imp;
      epoch_sum.total += b.total;
      ++steps;
    }
    EpochLog log;
    log.epoch = epoch;
    log.train = epoch_sum;
    log.train.l_ce /= static_cast<double>(steps);
    log.train.l_distill /= static_cast<double>(steps);
    log.train.l_norm /= static_cast<double>(steps);
    log.train.l_imp /= static_cast<double>(steps);
    log.train.total /= static_cast<double>(steps);

    // monitor: validation total loss (training loss when no holdout exists)
    const std::vector<int64_t>& monitor_idx = val_idx.empty() ? train_idx : val_idx;
    auto [val_loss, val_metrics] = evaluate_loss_and_metrics(model, cohort, monitor_idx, cfg);
    log.val_loss = val_loss.total;
    log.val_acc = val_metrics.acc;
    log.val_bca = val_metrics.bca;
    log.val_f1 = val_metrics.weighted_f1;
    result.log.push_back(log);

    if (log.val_loss < result.best_val_loss) {
      result.best_val_loss = log.val_loss;
      result.best_epoch = epoch;
      result.best = model;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= cfg.patience) break;
    }
  }
  return result;
}

/// Window-level metrics from the raw-only inference path; `trial_metrics`
/// adds majority voting over each parent trial's windows.
template <typename T>
std::pair<MetricsReport, MetricsReport> evaluate_model(const Model<T>& model, const Cohort& cohort,
                                                       const std::vector<int64_t>& idx) {
  require(!idx.empty(), ErrorKind::Data, "empty evaluation set");
  require(model.cfg.num_classes == cohort.classes.num_classes, ErrorKind::Data,
          "class-count mismatch between checkpoint and data");
  std::vector<int> y_true, y_pred;
  std::map<std::string, std::pair<int, std::vector<int>>> per_trial;  // trial -> (label, votes)
  const int64_t chunk = 128;
  std::vector<const EegWindow*> wins;
  std::vector<const BandSet*> no_bands;
  std::vector<int64_t> labels;
  for (int64_t start = 0; start < static_cast<int64_t>(idx.size()); start += chunk) {
    const int64_t count = std::min<int64_t>(chunk, static_cast<int64_t>(idx.size()) - start);
    detail::gather_batch(cohort, idx, start, count, false, wins, no_bands, labels);
    diff::Tape<T> tape(0, false);
    auto fwd = model.forward_infer(tape, wins);
    const auto& z = tape.value(fwd.z_data);
    for (int64_t i = 0; i < count; ++i) {
      int best = 0;
      for (int c = 1; c < cohort.classes.num_classes; ++c)
        if (z.at(i, c) > z.at(i, best)) best = c;
      y_true.push_back(static_cast<int>(labels[static_cast<size_t>(i)]));
      y_pred.push_back(best);
      auto& entry = per_trial[wins[static_cast<size_t>(i)]->parent_trial_id];
      entry.first = static_cast<int>(labels[static_cast<size_t>(i)]);
      entry.second.resize(static_cast<size_t>(cohort.classes.num_classes), 0);
      ++entry.second[static_cast<size_t>(best)];
    }
  }
  MetricsReport window_metrics = compute_metrics(y_true, y_pred, cohort.classes.num_classes);

  std::vector<int> t_true, t_pred;
  for (const auto& [trial, entry] : per_trial) {
    int best = 0;
    for (int c = 1; c < cohort.classes.num_classes; ++c)
      if (entry.second[static_cast<size_t>(c)] > entry.second[static_cast<size_t>(best)]) best = c;
    t_true.push_back(entry.first);
    t_pred.push_back(best);
  }
  MetricsReport trial_metrics = compute_metrics(t_true, t_pred, cohort.classes.num_classes);
  return {window_metrics, trial_metrics};
}

namespace detail {

inline MetricAggregate aggregate(const std::vector<double>& xs) {
  MetricAggregate a;
  if (xs.empty()) return a;
  a.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - a.mean) * (x - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return a;
}

}  // namespace detail

/// k-fold cross-patient validation with repeats. Fold plans are re-drawn per
/// repeat; the per-cell seed is base + repeat*1000 + fold. Cells run on a
/// small thread pool when jobs > 1.
template <typename T>
CvResult cross_validate(const Cohort& cohort, const TrainConfig& cfg, int k, int repeats, int jobs) {
  require(k >= 2, ErrorKind::Config, "cross-validation needs k >= 2");
  require(repeats >= 1, ErrorKind::Config, "repeats must be >= 1");

  std::vector<std::string> all_patients;
  for (const auto& w : cohort.windows) all_patients.push_back(w.patient_id);
  std::sort(all_patients.begin(), all_patients.end());
  all_patients.erase(std::unique(all_patients.begin(), all_patients.end()), all_patients.end());
  require(static_cast<int>(all_patients.size()) >= k, ErrorKind::Data, "fewer patients than folds");

  struct Job {
    int repeat, fold;
    FoldPlan plan;
  };
  std::vector<Job> jobs_list;
  for (int r = 0; r < repeats; ++r) {
    FoldPlan plan = make_patient_folds(all_patients, k, cfg.seed + static_cast<uint64_t>(r) * 1000ull);
    for (int f = 0; f < k; ++f) jobs_list.push_back({r, f, plan});
  }

  CvResult result;
  result.k = k;
  result.repeats = repeats;
  result.cells.resize(jobs_list.size());

  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(jobs_list.size())));
  set_blas_threads(workers > 1 ? 1 : 2);

  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::string error_msg;
  std::mutex error_mu;
  auto worker = [&]() {
    while (true) {
      const size_t j = next.fetch_add(1);
      if (j >= jobs_list.size() || failed.load()) break;
      const Job& job = jobs_list[j];
      try {
        TrainConfig cell_cfg = cfg;
        cell_cfg.seed = cfg.seed + static_cast<uint64_t>(job.repeat) * 1000ull + static_cast<uint64_t>(job.fold);

        std::vector<int64_t> outside, test_idx;
        for (size_t i = 0; i < cohort.windows.size(); ++i) {
          const int fold = job.plan.assignments.at(cohort.windows[i].patient_id);
          (fold == job.fold ? test_idx : outside).push_back(static_cast<int64_t>(i));
        }
        std::vector<int64_t> train_idx, val_idx;
        detail::split_train_val(cohort, outside, cfg.val_fraction, cell_cfg.seed, train_idx, val_idx);

        // cross-patient hygiene audit
        auto train_p = detail::patients_of(cohort, train_idx);
        auto test_p = detail::patients_of(cohort, test_idx);
        std::vector<std::string> overlap;
        std::set_intersection(train_p.begin(), train_p.end(), test_p.begin(), test_p.end(),
                              std::back_inserter(overlap));
        require(overlap.empty(), ErrorKind::Data, "fold hygiene violation: patient in train and test");

        auto trained = train_model<T>(cohort, train_idx, val_idx, cell_cfg);
        auto [wm, tm] = evaluate_model(trained.best, cohort, test_idx);
        CvCell cell;
        cell.repeat = job.repeat;
        cell.fold = job.fold;
        cell.window_metrics = std::move(wm);
        cell.trial_metrics = std::move(tm);
        result.cells[j] = std::move(cell);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lk(error_mu);
        failed.store(true);
        if (error_msg.empty()) error_msg = e.what();
      }
    }
  };

  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  set_blas_threads(2);
  require(!failed.load(), ErrorKind::Data, "cross-validation cell failed: " + error_msg);

  std::vector<double> accs, bcas, f1s;
  for (const auto& c : result.cells) {
    accs.push_back(c.window_metrics.acc);
    bcas.push_back(c.window_metrics.bca);
    f1s.push_back(c.window_metrics.weighted_f1);
  }
  result.acc = detail::aggregate(accs);
  result.bca = detail::aggregate(bcas);
  result.weighted_f1 = detail::aggregate(f1s);
  return result;
}

// --- ablation suites -------------------------------------------------------------

inline std::vector<std::string> ablation_suite_names() {
  return {"loss_type", "ensemble", "block_pattern", "temperature", "branches"};
}

/// Runs one named suite: every variant is a full cross-validation on the
/// (already preprocessed) dataset.
template <typename T>
SuiteResult ablation_suite(const std::string& name, const Dataset& prepped, const TrainConfig& base,
                           int k, int repeats, int jobs) {
  SuiteResult out;
  out.suite = name;

  std::map<int, Cohort> cohorts;  // keyed by branch count
  auto cohort_for = [&](int branches) -> const Cohort& {
    auto it = cohorts.find(branches);
    if (it == cohorts.end()) {
      it = cohorts.emplace(branches, build_cohort(prepped, band_grouping_preset(branches), true)).first;
    }
    return it->second;
  };

  auto run = [&](const std::string& variant, const TrainConfig& cfg) {
    SuiteRow row;
    row.variant = variant;
    row.cv = cross_validate<T>(cohort_for(cfg.model.num_branches), cfg, k, repeats, jobs);
    out.rows.push_back(std::move(row));
  };

  if (name == "loss_type") {
    TrainConfig ce = base;
    ce.distill.mode = DistillMode::None;
    run("L_ce", ce);
    TrainConfig kle = base;
    kle.distill.mode = DistillMode::SingleDirection;
    run("L_ce+L_kl_e", kle);
    TrainConfig full = base;
    full.distill.mode = DistillMode::Mutual;
    run("L_ce+L_distill", full);
  } else if (name == "ensemble") {
    TrainConfig avg = base;
    avg.ensemble_mode = EnsembleMode::Average;
    run("average", avg);
    TrainConfig gate = base;
    gate.ensemble_mode = EnsembleMode::GateNetwork;
    gate.gate_importance_weight = 0.0;
    run("gate_network", gate);
    TrainConfig gate_imp = gate;
    gate_imp.gate_importance_weight = 0.01;
    run("gate_network+imp", gate_imp);
    TrainConfig wa0 = base;
    wa0.ensemble_mode = EnsembleMode::WaveletAttention;
    wa0.distill.lambda = 0.0;
    run("wavelet_attention", wa0);
    TrainConfig wa = base;
    wa.ensemble_mode = EnsembleMode::WaveletAttention;
    run("wavelet_attention+norm", wa);
  } else if (name == "block_pattern") {
    TrainConfig vit = base;
    vit.model.block_pattern = std::string(static_cast<size_t>(base.model.num_blocks), 'T');
    vit.distill.mode = DistillMode::None;
    vit.use_bands = false;
    run(vit.model.block_pattern, vit);
    for (const std::string pattern : {"TTTM", "TTMM", "TMTM"}) {
      TrainConfig cfg = base;
      require(base.model.num_blocks == 4, ErrorKind::Config, "block_pattern suite expects 4 blocks");
      cfg.model.block_pattern = pattern;
      run(pattern, cfg);
    }
  } else if (name == "temperature") {
    for (int tval = 3; tval <= 9; ++tval) {
      TrainConfig cfg = base;
      cfg.distill.temperature = static_cast<double>(tval);
      run("T=" + std::to_string(tval), cfg);
    }
  } else if (name == "branches") {
    for (int b : {2, 3, 6}) {
      TrainConfig cfg = base;
      cfg.model.num_branches = b;
      run("B=" + std::to_string(b), cfg);
    }
  } else {
    fail(ErrorKind::Config, "unknown ablation suite: " + name);
  }
  return out;
}

// --- precision dispatch -----------------------------------------------------------

inline CvResult run_cross_validate(const Cohort& cohort, const TrainConfig& cfg, int k, int repeats,
                                   int jobs, bool verify64) {
  return verify64 ? cross_validate<double>(cohort, cfg, k, repeats, jobs)
                  : cross_validate<float>(cohort, cfg, k, repeats, jobs);
}

inline SuiteResult run_ablation_suite(const std::string& name, const Dataset& prepped,
                                      const TrainConfig& base, int k, int repeats, int jobs,
                                      bool verify64) {
  return verify64 ? ablation_suite<double>(name, prepped, base, k, repeats, jobs)
                  : ablation_suite<float>(name, prepped, base, k, repeats, jobs);
}

}  // namespace mbmd
