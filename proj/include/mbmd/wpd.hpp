#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mbmd/eeg.hpp"

namespace mbmd {

/// Orthonormal analysis/synthesis filter bank. With periodic extension the
/// synthesis pair equals the analysis pair (the transform is orthogonal).
struct FilterPair {
  std::vector<double> low;
  std::vector<double> high;
  std::vector<double> synth_low;
  std::vector<double> synth_high;

  static FilterPair daubechies4();
};

/// Full wavelet-packet coefficient tree. levels[d][pos] holds the node at
/// depth d and natural position pos (children of pos are 2*pos and 2*pos+1);
/// levels[0][0] is the input signal.
struct WpdTree {
  int depth = 0;
  int64_t signal_len = 0;
  std::vector<std::vector<std::vector<double>>> levels;

  int64_t num_leaves() const { return static_cast<int64_t>(1) << depth; }
  const std::vector<double>& leaf(int64_t pos) const { return levels[static_cast<size_t>(depth)][static_cast<size_t>(pos)]; }
};

/// Sequency-corrected frequency index of a leaf: leaf with natural position
/// pos at the given depth covers [f, f+1) * (fs/2) / 2^depth with f the
/// returned index.
int64_t wpd_frequency_index(int depth, int64_t natural_pos);

struct BandDef {
  std::string name;
  double lo_hz = 0;
  double hi_hz = 0;
};

struct BandGrouping {
  std::vector<BandDef> bands;
  bool include_residual = true;  // residual folded into the last band

  int num_branches() const { return static_cast<int>(bands.size()); }
};

/// Per-window band signals; ordered by the grouping, all the window's shape.
struct BandSet {
  std::string window_id;
  std::vector<std::pair<std::string, SignalMatrix>> signals;

  const SignalMatrix* find(const std::string& name) const {
    for (const auto& [n, m] : signals)
      if (n == name) return &m;
    return nullptr;
  }
};

WpdTree wpd_analyze(const std::vector<double>& signal, int depth,
                    const FilterPair& filters = FilterPair::daubechies4());

/// Inverse transform keeping only leaves inside [lo_hz, hi_hz); band edges
/// must align with leaf boundaries at the tree's depth.
std::vector<double> band_reconstruct(const WpdTree& tree, double lo_hz, double hi_hz,
                                     double sample_rate_hz = kTargetRateHz,
                                     const FilterPair& filters = FilterPair::daubechies4());

/// Depth-4 per-channel decomposition of a 128 Hz window into the grouping's
/// bands; the residual (window minus all reconstructed bands) is added to the
/// last band when include_residual is set.
BandSet decompose_bands(const EegWindow& window, const BandGrouping& grouping);

/// Presets: 6 (delta/theta/alpha/beta/gamma/other), 3 (low/mid/high), 2 (low/high).
BandGrouping band_grouping_preset(int num_branches);

std::string band_cache_path(const std::string& window_path, const std::string& band_name);
void write_band_cache(const std::string& window_path, const BandSet& bands);
BandSet read_band_cache(const std::string& window_path, const BandGrouping& grouping);

}  // namespace mbmd
