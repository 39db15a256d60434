#include "mbmd/wpd.hpp"

#include <algorithm>
#include <cmath>

namespace mbmd {

namespace {

constexpr int kDecompDepth = 4;  // leaf bandwidth 4 Hz at 128 Hz

// a[n] = sum_k h[k] x[(2n+k) mod L]; periodic extension keeps the transform
// orthogonal and every node exactly half its parent's length.
void analyze_step(const std::vector<double>& x, const std::vector<double>& h,
                  const std::vector<double>& g, std::vector<double>& approx,
                  std::vector<double>& detail) {
  const int64_t len = static_cast<int64_t>(x.size());
  const int64_t half = len / 2;
  const int64_t taps = static_cast<int64_t>(h.size());
  approx.assign(static_cast<size_t>(half), 0.0);
  detail.assign(static_cast<size_t>(half), 0.0);
  for (int64_t n = 0; n < half; ++n) {
    double a = 0.0, d = 0.0;
    for (int64_t k = 0; k < taps; ++k) {
      const double xv = x[static_cast<size_t>((2 * n + k) % len)];
      a += h[static_cast<size_t>(k)] * xv;
      d += g[static_cast<size_t>(k)] * xv;
    }
    approx[static_cast<size_t>(n)] = a;
    detail[static_cast<size_t>(n)] = d;
  }
}

// adjoint of analyze_step (the inverse, since the transform is orthogonal)
std::vector<double> synth_step(const std::vector<double>& approx, const std::vector<double>& detail,
                               const std::vector<double>& h, const std::vector<double>& g) {
  const int64_t half = static_cast<int64_t>(approx.size());
  const int64_t len = 2 * half;
  const int64_t taps = static_cast<int64_t>(h.size());
  std::vector<double> x(static_cast<size_t>(len), 0.0);
  for (int64_t n = 0; n < half; ++n) {
    const double a = approx[static_cast<size_t>(n)];
    const double d = detail[static_cast<size_t>(n)];
    for (int64_t k = 0; k < taps; ++k) {
      x[static_cast<size_t>((2 * n + k) % len)] += a * h[static_cast<size_t>(k)] + d * g[static_cast<size_t>(k)];
    }
  }
  return x;
}

}  // namespace

FilterPair FilterPair::daubechies4() {
  FilterPair f;
  f.low = {0.230377813308855230,  0.714846570552541500,  0.630880767929590400,
           -0.027983769416983850, -0.187034811718881140, 0.030841381835986965,
           0.032883011666982945,  -0.010597401784997278};
  f.high.resize(f.low.size());
  const int64_t m = static_cast<int64_t>(f.low.size());
  for (int64_t k = 0; k < m; ++k) {
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    f.high[static_cast<size_t>(k)] = sign * f.low[static_cast<size_t>(m - 1 - k)];
  }
  f.synth_low = f.low;
  f.synth_high = f.high;
  return f;
}

int64_t wpd_frequency_index(int depth, int64_t natural_pos) {
  int64_t f = 0;
  for (int level = depth - 1; level >= 0; --level) {
    const int64_t bit = (natural_pos >> level) & 1;
    f = 2 * f + ((f % 2 == 0) ? bit : (1 - bit));
  }
  return f;
}

WpdTree wpd_analyze(const std::vector<double>& signal, int depth, const FilterPair& filters) {
  require(depth >= 1, ErrorKind::Config, "wpd depth must be >= 1");
  const int64_t len = static_cast<int64_t>(signal.size());
  require(len >= 1 && len % (static_cast<int64_t>(1) << depth) == 0, ErrorKind::Data,
          "signal length " + std::to_string(len) + " not divisible by 2^" + std::to_string(depth));

  WpdTree tree;
  tree.depth = depth;
  tree.signal_len = len;
  tree.levels.resize(static_cast<size_t>(depth) + 1);
  tree.levels[0].push_back(signal);
  for (int d = 0; d < depth; ++d) {
    auto& next = tree.levels[static_cast<size_t>(d) + 1];
    next.resize(tree.levels[static_cast<size_t>(d)].size() * 2);
    for (size_t pos = 0; pos < tree.levels[static_cast<size_t>(d)].size(); ++pos) {
      analyze_step(tree.levels[static_cast<size_t>(d)][pos], filters.low, filters.high,
                   next[2 * pos], next[2 * pos + 1]);
    }
  }
  return tree;
}

std::vector<double> band_reconstruct(const WpdTree& tree, double lo_hz, double hi_hz,
                                     double sample_rate_hz, const FilterPair& filters) {
  const double nyquist = sample_rate_hz / 2.0;
  const double leaf_bw = nyquist / static_cast<double>(tree.num_leaves());
  const double lo_ratio = lo_hz / leaf_bw;
  const double hi_ratio = hi_hz / leaf_bw;
  require(std::abs(lo_ratio - std::llround(lo_ratio)) < 1e-9 &&
              std::abs(hi_ratio - std::llround(hi_ratio)) < 1e-9,
          ErrorKind::Data,
          "band edges [" + std::to_string(lo_hz) + ", " + std::to_string(hi_hz) +
              ") do not align with leaf boundaries (" + std::to_string(leaf_bw) + " Hz)");
  const int64_t lo_leaf = std::llround(lo_ratio);
  const int64_t hi_leaf = std::llround(hi_ratio);

  // keep leaves whose frequency index falls inside [lo_leaf, hi_leaf)
  std::vector<std::vector<double>> level(static_cast<size_t>(tree.num_leaves()));
  for (int64_t pos = 0; pos < tree.num_leaves(); ++pos) {
    const int64_t f = wpd_frequency_index(tree.depth, pos);
    if (f >= lo_leaf && f < hi_leaf) {
      level[static_cast<size_t>(pos)] = tree.leaf(pos);
    } else {
      level[static_cast<size_t>(pos)].assign(tree.leaf(pos).size(), 0.0);
    }
  }

  for (int d = tree.depth; d >= 1; --d) {
    std::vector<std::vector<double>> up(level.size() / 2);
    for (size_t pos = 0; pos < up.size(); ++pos) {
      up[pos] = synth_step(level[2 * pos], level[2 * pos + 1], filters.synth_low, filters.synth_high);
    }
    level = std::move(up);
  }
  return level[0];
}

BandGrouping band_grouping_preset(int num_branches) {
  BandGrouping g;
  g.include_residual = true;
  switch (num_branches) {
    case 6:
      g.bands = {{"delta", 0, 4}, {"theta", 4, 8},   {"alpha", 8, 16},
                 {"beta", 16, 32}, {"gamma", 32, 64}, {"other", 64, 64}};
      break;
    case 3:
      g.bands = {{"low", 0, 8}, {"mid", 8, 32}, {"high", 32, 64}};
      break;
    case 2:
      g.bands = {{"low", 0, 16}, {"high", 16, 64}};
      break;
    default:
      fail(ErrorKind::Config, "unsupported branch count " + std::to_string(num_branches) + " (want 2, 3 or 6)");
  }
  return g;
}

BandSet decompose_bands(const EegWindow& window, const BandGrouping& grouping) {
  require(std::abs(window.sample_rate_hz - kTargetRateHz) < 1e-9, ErrorKind::Data,
          "decompose_bands expects 128 Hz windows");
  const int64_t len = window.samples.cols;
  require(len % (static_cast<int64_t>(1) << kDecompDepth) == 0, ErrorKind::Data,
          "window length not divisible by 16");
  require(!grouping.bands.empty(), ErrorKind::Config, "empty band grouping");

  BandSet out;
  out.window_id = window.parent_trial_id + "@" + std::to_string(window.offset_samples);
  for (const auto& band : grouping.bands) {
    out.signals.emplace_back(band.name, SignalMatrix(window.samples.rows, len));
  }

  for (int64_t ch = 0; ch < window.samples.rows; ++ch) {
    std::vector<double> x(window.samples.row(ch), window.samples.row(ch) + len);
    const WpdTree tree = wpd_analyze(x, kDecompDepth);
    for (size_t b = 0; b < grouping.bands.size(); ++b) {
      const auto& band = grouping.bands[b];
      std::vector<double> rec = (band.lo_hz < band.hi_hz)
                                    ? band_reconstruct(tree, band.lo_hz, band.hi_hz, kTargetRateHz)
                                    : std::vector<double>(static_cast<size_t>(len), 0.0);
      std::copy(rec.begin(), rec.end(), out.signals[b].second.row(ch));
    }
  }

  if (grouping.include_residual) {
    SignalMatrix& last = out.signals.back().second;
    for (int64_t ch = 0; ch < window.samples.rows; ++ch) {
      for (int64_t i = 0; i < len; ++i) {
        double sum = 0.0;
        for (const auto& [name, sig] : out.signals) sum += sig.at(ch, i);
        // residual = window - sum of reconstructed bands, folded into the last
        last.at(ch, i) += window.samples.at(ch, i) - sum;
      }
    }
  }
  return out;
}

std::string band_cache_path(const std::string& window_path, const std::string& band_name) {
  return window_path + ".band." + band_name;
}

void write_band_cache(const std::string& window_path, const BandSet& bands) {
  for (const auto& [name, sig] : bands.signals) {
    write_trial_binary(band_cache_path(window_path, name), sig);
  }
}

BandSet read_band_cache(const std::string& window_path, const BandGrouping& grouping) {
  BandSet out;
  out.window_id = window_path;
  for (const auto& band : grouping.bands) {
    out.signals.emplace_back(band.name, read_trial_file(band_cache_path(window_path, band.name)));
  }
  return out;
}

}  // namespace mbmd
