#pragma once

#include <cmath>
#include <vector>

#include "mbmd/common.hpp"
#include "mbmd/diffcore.hpp"

namespace mbmd {

enum class DistillMode { Mutual, SingleDirection, None };

struct DistillConfig {
  double temperature = 6.0;
  double lambda = 0.01;
  DistillMode mode = DistillMode::Mutual;
};

struct LossBreakdown {
  double l_ce = 0;
  double l_distill = 0;
  double l_norm = 0;
  double l_imp = 0;
  bool has_imp = false;
  double total = 0;
};

// --- plain (non-graph) reference forms; single sample, double precision -------

inline std::vector<double> softmax_vec(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> p(z.size());
  double sum = 0;
  for (size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline std::vector<double> tempered_softmax(const std::vector<double>& z, double temperature) {
  require(temperature > 0, ErrorKind::Config, "distillation temperature must be positive");
  std::vector<double> scaled(z.size());
  for (size_t i = 0; i < z.size(); ++i) scaled[i] = z[i] / temperature;
  return softmax_vec(scaled);
}

inline double cross_entropy(const std::vector<double>& z, int label) {
  require(label >= 0 && label < static_cast<int>(z.size()), ErrorKind::Data,
          "label " + std::to_string(label) + " out of range");
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double lse = 0;
  for (double v : z) lse += std::exp(v - mx);
  return std::log(lse) + mx - z[static_cast<size_t>(label)];
}

/// KL(p_t || p_s) with 0*log0 = 0 and a 1e-12 floor inside the logarithm.
inline double kl_div(const std::vector<double>& p_t, const std::vector<double>& p_s) {
  require(p_t.size() == p_s.size(), ErrorKind::Data, "kl_div: distribution size mismatch");
  double kl = 0;
  for (size_t i = 0; i < p_t.size(); ++i) {
    if (p_t[i] <= 0) continue;
    kl += p_t[i] * (std::log(std::max(p_t[i], 1e-12)) - std::log(std::max(p_s[i], 1e-12)));
  }
  return kl;
}

/// Symmetric tempered-KL coupling between the raw prediction and each branch.
inline double mutual_distill_loss(const std::vector<double>& z_data,
                                  const std::vector<std::vector<double>>& z_branch, double temperature) {
  const auto p_data = tempered_softmax(z_data, temperature);
  double loss = 0;
  for (const auto& zb : z_branch) {
    require(zb.size() == z_data.size(), ErrorKind::Data, "mutual_distill_loss: logit size mismatch");
    const auto p_b = tempered_softmax(zb, temperature);
    loss += kl_div(p_data, p_b) + kl_div(p_b, p_data);
  }
  return 0.5 * loss;
}

/// Branch-to-raw knowledge flow only.
inline double single_direction_loss(const std::vector<double>& z_data,
                                    const std::vector<std::vector<double>>& z_branch, double temperature) {
  const auto p_data = tempered_softmax(z_data, temperature);
  double loss = 0;
  for (const auto& zb : z_branch) {
    require(zb.size() == z_data.size(), ErrorKind::Data, "single_direction_loss: logit size mismatch");
    loss += kl_div(tempered_softmax(zb, temperature), p_data);
  }
  return loss;
}

inline double l1_norm_value(const std::vector<double>& w) {
  double s = 0;
  for (double v : w) s += std::abs(v);
  return s;
}

/// Squared coefficient of variation of per-branch importance (column sums of
/// the batch of gate weights).
inline double importance_loss(const SignalMatrix& gates) {
  require(gates.rows >= 1 && gates.cols >= 1, ErrorKind::Data, "importance_loss: empty gate batch");
  std::vector<double> imp(static_cast<size_t>(gates.cols), 0.0);
  for (int64_t i = 0; i < gates.rows; ++i)
    for (int64_t j = 0; j < gates.cols; ++j) imp[static_cast<size_t>(j)] += gates.at(i, j);
  double mean = 0;
  for (double v : imp) mean += v;
  mean /= static_cast<double>(imp.size());
  require(mean != 0.0, ErrorKind::Data, "importance_loss: zero mean importance");
  double var = 0;
  for (double v : imp) var += (v - mean) * (v - mean);
  var /= static_cast<double>(imp.size());
  return var / (mean * mean);
}

/// Combines components exactly as reported: total = l_ce + l_distill + lambda*l_norm
/// (mode None drops l_distill; the importance term is added when provided).
inline LossBreakdown total_loss(double l_ce, double l_distill, double l_norm, const DistillConfig& cfg,
                                double l_imp = 0.0, bool has_imp = false, double imp_weight = 0.0) {
  LossBreakdown b;
  b.l_ce = l_ce;
  b.l_distill = (cfg.mode == DistillMode::None) ? 0.0 : l_distill;
  b.l_norm = l_norm;
  b.l_imp = has_imp ? l_imp : 0.0;
  b.has_imp = has_imp;
  b.total = b.l_ce + b.l_distill + cfg.lambda * b.l_norm;
  if (has_imp) b.total += imp_weight * b.l_imp;
  return b;
}

// --- graph builders (batched; values match the plain forms above) -------------

/// Batch-averaged cross-entropy of logits {n, K} against labels.
template <typename T>
typename diff::Tape<T>::Ref ce_graph(diff::Tape<T>& tape, typename diff::Tape<T>::Ref logits,
                                     const std::vector<int64_t>& labels) {
  auto picked = tape.gather_index(tape.log_softmax(logits), labels);
  return tape.scale(tape.mean_all(picked), -1.0);
}

/// Row-wise KL(p||q) summed over classes, then batch-averaged.
template <typename T>
typename diff::Tape<T>::Ref kl_rows_mean_graph(diff::Tape<T>& tape, typename diff::Tape<T>::Ref p,
                                               typename diff::Tape<T>::Ref q) {
  auto diff_log = tape.sub(tape.log(p), tape.log(q));
  return tape.mean_all(tape.sum_axis1(tape.mul(p, diff_log)));
}

/// Distillation loss over tempered probabilities; gradients flow into both
/// the raw logits and every branch's logits.
template <typename T>
typename diff::Tape<T>::Ref distill_graph(diff::Tape<T>& tape, typename diff::Tape<T>::Ref z_data,
                                          const std::vector<typename diff::Tape<T>::Ref>& z_branch,
                                          double temperature, DistillMode mode) {
  using Ref = typename diff::Tape<T>::Ref;
  require(temperature > 0, ErrorKind::Config, "distillation temperature must be positive");
  if (mode == DistillMode::None || z_branch.empty()) {
    return tape.input(diff::Tensor<T>({1}));
  }
  Ref p_data = tape.softmax(tape.scale(z_data, 1.0 / temperature));
  Ref acc = -1;
  for (Ref zb : z_branch) {
    Ref p_b = tape.softmax(tape.scale(zb, 1.0 / temperature));
    Ref term;
    if (mode == DistillMode::Mutual) {
      term = tape.add(kl_rows_mean_graph(tape, p_data, p_b), kl_rows_mean_graph(tape, p_b, p_data));
    } else {
      term = kl_rows_mean_graph(tape, p_b, p_data);
    }
    acc = (acc < 0) ? term : tape.add(acc, term);
  }
  return (mode == DistillMode::Mutual) ? tape.scale(acc, 0.5) : acc;
}

/// Squared CV of column importance for a {n, B} gate-weight batch.
template <typename T>
typename diff::Tape<T>::Ref importance_graph(diff::Tape<T>& tape, typename diff::Tape<T>::Ref gates) {
  auto imp = tape.sum_axis0(gates);
  auto mean = tape.mean_all(imp);
  auto centered = tape.sub(imp, mean);
  auto var = tape.mean_all(tape.mul(centered, centered));
  return tape.divide(var, tape.mul(mean, mean));
}

}  // namespace mbmd
