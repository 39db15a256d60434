// Test-only oracles, independent of the library's computation paths:
// a naive DFT band-energy oracle, a brute-force matmul, and a straight-line
// re-implementation of the model forward used to cross-check the graph.
#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mbmd/eeg.hpp"
#include "mbmd/model.hpp"

namespace oracle {

// --- spectral oracle (naive O(n^2) DFT) ---------------------------------------

struct Spectrum {
  std::vector<double> power;  // bins 0..n/2
  double bin_hz = 0;
};

inline Spectrum dft_power(const std::vector<double>& x, double fs) {
  const size_t n = x.size();
  Spectrum s;
  s.bin_hz = fs / static_cast<double>(n);
  s.power.resize(n / 2 + 1, 0.0);
  for (size_t k = 0; k <= n / 2; ++k) {
    double re = 0, im = 0;
    for (size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * M_PI * static_cast<double>(k) * static_cast<double>(t) / static_cast<double>(n);
      re += x[t] * std::cos(ang);
      im += x[t] * std::sin(ang);
    }
    s.power[k] = re * re + im * im;
  }
  return s;
}

/// Fraction of spectral power in [lo_hz, hi_hz).
inline double band_energy_fraction(const std::vector<double>& x, double fs, double lo_hz, double hi_hz) {
  const Spectrum s = dft_power(x, fs);
  double total = 0, band = 0;
  for (size_t k = 0; k < s.power.size(); ++k) {
    const double f = static_cast<double>(k) * s.bin_hz;
    total += s.power[k];
    if (f >= lo_hz && f < hi_hz) band += s.power[k];
  }
  return total > 0 ? band / total : 0.0;
}

inline double signal_energy(const std::vector<double>& x) {
  double e = 0;
  for (double v : x) e += v * v;
  return e;
}

inline double rms(const std::vector<double>& x) {
  return x.empty() ? 0.0 : std::sqrt(signal_energy(x) / static_cast<double>(x.size()));
}

inline std::vector<double> channel_of(const mbmd::SignalMatrix& m, int64_t ch) {
  return std::vector<double>(m.row(ch), m.row(ch) + m.cols);
}

// --- brute-force matmul ---------------------------------------------------------

inline std::vector<double> matmul_naive(const std::vector<double>& a, const std::vector<double>& b,
                                        int64_t m, int64_t k, int64_t n) {
  std::vector<double> c(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0;
      for (int64_t p = 0; p < k; ++p) acc += a[static_cast<size_t>(i * k + p)] * b[static_cast<size_t>(p * n + j)];
      c[static_cast<size_t>(i * n + j)] = acc;
    }
  return c;
}

// --- straight-line model forward -------------------------------------------------
// Re-derives the forward pass with plain loops over named parameters. Supports
// the wavelet-attention and average ensembles; no dropout (inference regime).

using Mat = std::vector<std::vector<double>>;  // row-major

struct OracleOut {
  std::vector<double> z_data;
  std::vector<std::vector<double>> z_branch;
};

class StraightLineModel {
 public:
  StraightLineModel(const mbmd::ModelConfig& cfg, mbmd::EnsembleMode mode,
                    const mbmd::diff::ParamStore<double>& params)
      : cfg_(cfg), mode_(mode), params_(params) {}

  OracleOut run(const mbmd::SignalMatrix& raw, const std::vector<const mbmd::SignalMatrix*>& bands) const {
    OracleOut out;
    std::vector<Mat> streams;
    streams.push_back(embed(tokens_of(raw)));
    for (const auto* b : bands) streams.push_back(embed(tokens_of(*b)));

    for (int blk = 0; blk < cfg_.num_blocks; ++blk) {
      const std::string p = "block" + std::to_string(blk) + ".";
      for (auto& s : streams) {
        Mat att = attention(layer_norm(s, p + "ln1"), p);
        add_into(s, att);
      }
      if (cfg_.block_pattern[static_cast<size_t>(blk)] == 'T') {
        for (auto& s : streams) {
          Mat f = ffn(layer_norm(s, p + "ln2"), p + "ffn");
          add_into(s, f);
        }
      } else {
        // raw stream: weighted ensemble of every expert
        Mat normed = layer_norm(streams[0], p + "ln2");
        const std::vector<double> w = branch_weights();
        Mat combined(normed.size(), std::vector<double>(static_cast<size_t>(cfg_.embed_dim), 0.0));
        for (int b = 0; b < cfg_.num_branches; ++b) {
          Mat e = ffn(normed, p + "expert" + std::to_string(b));
          for (size_t r = 0; r < e.size(); ++r)
            for (size_t c = 0; c < e[r].size(); ++c) combined[r][c] += w[static_cast<size_t>(b)] * e[r][c];
        }
        add_into(streams[0], combined);
        // band stream b: its own expert only
        for (size_t si = 1; si < streams.size(); ++si) {
          Mat f = ffn(layer_norm(streams[si], p + "ln2"),
                      p + "expert" + std::to_string(static_cast<int>(si) - 1));
          add_into(streams[si], f);
        }
      }
    }

    const std::vector<double> w = branch_weights();
    std::vector<double> rep_raw = pool(streams[0]);
    out.z_data.assign(static_cast<size_t>(cfg_.num_classes), 0.0);
    for (int b = 0; b < cfg_.num_branches; ++b) {
      const auto zb = head(rep_raw, b);
      for (int k = 0; k < cfg_.num_classes; ++k) out.z_data[static_cast<size_t>(k)] += w[static_cast<size_t>(b)] * zb[static_cast<size_t>(k)];
    }
    for (size_t si = 1; si < streams.size(); ++si) {
      out.z_branch.push_back(head(pool(streams[si]), static_cast<int>(si) - 1));
    }
    return out;
  }

 private:
  const mbmd::ModelConfig cfg_;
  const mbmd::EnsembleMode mode_;
  const mbmd::diff::ParamStore<double>& params_;

  const std::vector<double>& vec(const std::string& name) const { return params_.at(name).value.v; }
  double pval(const std::string& name, int64_t r, int64_t c, int64_t cols) const {
    return vec(name)[static_cast<size_t>(r * cols + c)];
  }

  std::vector<double> branch_weights() const {
    std::vector<double> w(static_cast<size_t>(cfg_.num_branches));
    if (mode_ == mbmd::EnsembleMode::Average) {
      std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(cfg_.num_branches));
      return w;
    }
    const auto& raw = vec("wavelet_w");
    double mx = raw[0];
    for (double v : raw) mx = std::max(mx, v);
    double sum = 0;
    for (size_t i = 0; i < w.size(); ++i) {
      w[i] = std::exp(raw[i] - mx);
      sum += w[i];
    }
    for (auto& v : w) v /= sum;
    return w;
  }

  Mat tokens_of(const mbmd::SignalMatrix& sig) const {
    const int64_t per_ch = sig.cols / cfg_.patch_size;
    Mat toks;
    for (int64_t ch = 0; ch < sig.rows; ++ch) {
      for (int64_t t = 0; t < per_ch; ++t) {
        std::vector<double> tok(static_cast<size_t>(cfg_.patch_size));
        for (int64_t i = 0; i < cfg_.patch_size; ++i) tok[static_cast<size_t>(i)] = sig.at(ch, t * cfg_.patch_size + i);
        toks.push_back(std::move(tok));
      }
    }
    return toks;
  }

  Mat embed(const Mat& toks) const {
    const int64_t d = cfg_.embed_dim, p = cfg_.patch_size;
    Mat out(toks.size(), std::vector<double>(static_cast<size_t>(d), 0.0));
    for (size_t t = 0; t < toks.size(); ++t) {
      for (int64_t j = 0; j < d; ++j) {
        double acc = vec("embed.b")[static_cast<size_t>(j)];
        for (int64_t i = 0; i < p; ++i) acc += toks[t][static_cast<size_t>(i)] * pval("embed.W", i, j, d);
        out[t][static_cast<size_t>(j)] = acc + pval("pos", static_cast<int64_t>(t), j, d);
      }
    }
    return out;
  }

  Mat layer_norm(const Mat& x, const std::string& prefix) const {
    const int64_t d = cfg_.embed_dim;
    Mat out(x.size(), std::vector<double>(static_cast<size_t>(d)));
    for (size_t r = 0; r < x.size(); ++r) {
      double mu = 0;
      for (double v : x[r]) mu += v;
      mu /= static_cast<double>(d);
      double var = 0;
      for (double v : x[r]) var += (v - mu) * (v - mu);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + 1e-5);
      for (int64_t j = 0; j < d; ++j) {
        out[r][static_cast<size_t>(j)] = (x[r][static_cast<size_t>(j)] - mu) * inv * vec(prefix + ".g")[static_cast<size_t>(j)] +
                                         vec(prefix + ".b")[static_cast<size_t>(j)];
      }
    }
    return out;
  }

  Mat attention(const Mat& x, const std::string& block_prefix) const {
    const int64_t d = cfg_.embed_dim;
    const int64_t heads = cfg_.num_heads;
    const int64_t dh = d / heads;
    const size_t n = x.size();
    // qkv projection
    Mat qkv(n, std::vector<double>(static_cast<size_t>(3 * d)));
    for (size_t r = 0; r < n; ++r) {
      for (int64_t j = 0; j < 3 * d; ++j) {
        double acc = vec(block_prefix + "attn.qkv.b")[static_cast<size_t>(j)];
        for (int64_t i = 0; i < d; ++i) acc += x[r][static_cast<size_t>(i)] * pval(block_prefix + "attn.qkv.W", i, j, 3 * d);
        qkv[r][static_cast<size_t>(j)] = acc;
      }
    }
    Mat headcat(n, std::vector<double>(static_cast<size_t>(d), 0.0));
    for (int64_t h = 0; h < heads; ++h) {
      for (size_t qi = 0; qi < n; ++qi) {
        std::vector<double> scores(n);
        double mx = -1e300;
        for (size_t ki = 0; ki < n; ++ki) {
          double acc = 0;
          for (int64_t j = 0; j < dh; ++j)
            acc += qkv[qi][static_cast<size_t>(h * dh + j)] * qkv[ki][static_cast<size_t>(d + h * dh + j)];
          scores[ki] = acc / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, scores[ki]);
        }
        double sum = 0;
        for (auto& s : scores) {
          s = std::exp(s - mx);
          sum += s;
        }
        for (auto& s : scores) s /= sum;
        for (size_t vi = 0; vi < n; ++vi) {
          for (int64_t j = 0; j < dh; ++j) {
            headcat[qi][static_cast<size_t>(h * dh + j)] += scores[vi] * qkv[vi][static_cast<size_t>(2 * d + h * dh + j)];
          }
        }
      }
    }
    Mat out(n, std::vector<double>(static_cast<size_t>(d)));
    for (size_t r = 0; r < n; ++r) {
      for (int64_t j = 0; j < d; ++j) {
        double acc = vec(block_prefix + "attn.out.b")[static_cast<size_t>(j)];
        for (int64_t i = 0; i < d; ++i) acc += headcat[r][static_cast<size_t>(i)] * pval(block_prefix + "attn.out.W", i, j, d);
        out[r][static_cast<size_t>(j)] = acc;
      }
    }
    return out;
  }

  Mat ffn(const Mat& x, const std::string& prefix) const {
    const int64_t d = cfg_.embed_dim, hdim = cfg_.ffn_hidden;
    Mat out(x.size(), std::vector<double>(static_cast<size_t>(d)));
    for (size_t r = 0; r < x.size(); ++r) {
      std::vector<double> mid(static_cast<size_t>(hdim));
      for (int64_t j = 0; j < hdim; ++j) {
        double acc = vec(prefix + ".fc1.b")[static_cast<size_t>(j)];
        for (int64_t i = 0; i < d; ++i) acc += x[r][static_cast<size_t>(i)] * pval(prefix + ".fc1.W", i, j, hdim);
        mid[static_cast<size_t>(j)] = 0.5 * acc * (1.0 + std::erf(acc * M_SQRT1_2));
      }
      for (int64_t j = 0; j < d; ++j) {
        double acc = vec(prefix + ".fc2.b")[static_cast<size_t>(j)];
        for (int64_t i = 0; i < hdim; ++i) acc += mid[static_cast<size_t>(i)] * pval(prefix + ".fc2.W", i, j, d);
        out[r][static_cast<size_t>(j)] = acc;
      }
    }
    return out;
  }

  static void add_into(Mat& a, const Mat& b) {
    for (size_t r = 0; r < a.size(); ++r)
      for (size_t c = 0; c < a[r].size(); ++c) a[r][c] += b[r][c];
  }

  std::vector<double> pool(const Mat& x) const {
    std::vector<double> out(static_cast<size_t>(cfg_.embed_dim), 0.0);
    for (const auto& row : x)
      for (size_t c = 0; c < row.size(); ++c) out[c] += row[c];
    for (auto& v : out) v /= static_cast<double>(x.size());
    return out;
  }

  std::vector<double> head(const std::vector<double>& rep, int b) const {
    const std::string prefix = "head" + std::to_string(b);
    std::vector<double> z(static_cast<size_t>(cfg_.num_classes));
    for (int64_t k = 0; k < cfg_.num_classes; ++k) {
      double acc = vec(prefix + ".b")[static_cast<size_t>(k)];
      for (int64_t i = 0; i < cfg_.embed_dim; ++i) acc += rep[static_cast<size_t>(i)] * pval(prefix + ".W", i, k, cfg_.num_classes);
      z[static_cast<size_t>(k)] = acc;
    }
    return z;
  }
};

// --- misc helpers ----------------------------------------------------------------

/// Unique scratch directory, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("mbmd_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

inline mbmd::EegWindow make_window(const mbmd::SignalMatrix& samples, int label = 0,
                                   const std::string& patient = "p0") {
  mbmd::EegWindow w;
  w.patient_id = patient;
  w.label = label;
  w.sample_rate_hz = 128.0;
  w.samples = samples;
  w.parent_trial_id = patient + "_t0";
  w.offset_samples = 0;
  return w;
}

inline mbmd::SignalMatrix random_signal(int64_t channels, int64_t len, uint64_t seed, double amp = 1.0) {
  auto rng = mbmd::make_rng(seed);
  std::normal_distribution<double> dist(0.0, amp);
  mbmd::SignalMatrix m(channels, len);
  for (auto& v : m.v) v = dist(rng);
  return m;
}

inline mbmd::SignalMatrix sine_signal(int64_t channels, int64_t len, double freq_hz, double fs = 128.0,
                                      double amp = 1.0, double phase = 0.3) {
  mbmd::SignalMatrix m(channels, len);
  for (int64_t ch = 0; ch < channels; ++ch)
    for (int64_t i = 0; i < len; ++i)
      m.at(ch, i) = amp * std::sin(2.0 * M_PI * freq_hz * static_cast<double>(i) / fs + phase + 0.1 * static_cast<double>(ch));
  return m;
}

}  // namespace oracle
