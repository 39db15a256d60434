#pragma once

#include <vector>

#include "mbmd/eeg.hpp"

namespace mbmd {

struct PreprocessConfig {
  double notch_hz = 50.0;
  double notch_q = 30.0;
  double lowpass_hz = 64.0;
  bool detrend = true;
};

/// Second-order IIR section, direct form I, normalized (a0 = 1).
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

/// RBJ notch at f0 with quality factor q; two cascaded sections (order 4).
std::vector<Biquad> design_notch(double f0_hz, double q, double fs_hz);

/// Butterworth low-pass of even order as cascaded biquads. The corner is
/// clamped below Nyquist (a -3 dB point at exactly fs/2 is not realizable).
std::vector<Biquad> design_butterworth_lowpass(int order, double corner_hz, double fs_hz);

/// Zero-phase (forward-backward) application of a biquad cascade with
/// odd reflection padding at both ends.
std::vector<double> filtfilt(const std::vector<Biquad>& sections, const std::vector<double>& x);

/// Removes the per-channel least-squares line.
void detrend_linear(std::vector<double>& x);

/// Rational-ratio resampling via polyphase windowed-sinc; plain IIR
/// anti-alias + decimation when the ratio is 1/M.
std::vector<double> resample(const std::vector<double>& x, double rate_in_hz, double rate_out_hz);

/// Full pipeline: resample to 128 Hz, 50 Hz notch, 64 Hz low-pass, linear
/// detrend per channel. Rejects trials below 128 Hz.
EegTrial preprocess_trial(const EegTrial& trial, const PreprocessConfig& cfg = {});

}  // namespace mbmd
