#include "mbmd/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mbmd {

namespace {

// DF2-transposed state for one biquad.
struct SectionState {
  double z1 = 0, z2 = 0;
};

inline double step_section(const Biquad& s, SectionState& st, double x) {
  const double y = s.b0 * x + st.z1;
  st.z1 = s.b1 * x - s.a1 * y + st.z2;
  st.z2 = s.b2 * x - s.a2 * y;
  return y;
}

// Steady-state DF2T state for unit step input (scipy lfilter_zi equivalent),
// scaled by the first sample to suppress startup transients.
SectionState steady_state(const Biquad& s, double x0) {
  const double denom = 1.0 + s.a1 + s.a2;
  const double y = (std::abs(denom) > 1e-12) ? (s.b0 + s.b1 + s.b2) / denom : 0.0;
  SectionState st;
  st.z2 = (s.b2 - s.a2 * y) * x0;
  st.z1 = (s.b1 - s.a1 * y + s.b2 - s.a2 * y) * x0;
  return st;
}

std::vector<double> filter_forward(const std::vector<Biquad>& sections, std::vector<double> x) {
  for (const auto& s : sections) {
    SectionState st = steady_state(s, x.empty() ? 0.0 : x.front());
    for (double& v : x) v = step_section(s, st, v);
  }
  return x;
}

double clamp_corner(double corner_hz, double fs_hz) { return std::min(corner_hz, 0.497 * fs_hz); }

}  // namespace

std::vector<Biquad> design_notch(double f0_hz, double q, double fs_hz) {
  require(f0_hz > 0 && f0_hz < fs_hz / 2, ErrorKind::Config, "notch frequency outside (0, fs/2)");
  const double w0 = 2.0 * M_PI * f0_hz / fs_hz;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  Biquad s;
  s.b0 = 1.0 / a0;
  s.b1 = -2.0 * std::cos(w0) / a0;
  s.b2 = 1.0 / a0;
  s.a1 = -2.0 * std::cos(w0) / a0;
  s.a2 = (1.0 - alpha) / a0;
  return {s, s};  // two sections -> order 4
}

std::vector<Biquad> design_butterworth_lowpass(int order, double corner_hz, double fs_hz) {
  require(order >= 2 && order % 2 == 0, ErrorKind::Config, "butterworth order must be even and >= 2");
  const double fc = clamp_corner(corner_hz, fs_hz);
  const double k = std::tan(M_PI * fc / fs_hz);  // bilinear prewarp
  const double k2 = k * k;
  std::vector<Biquad> out;
  for (int i = 0; i < order / 2; ++i) {
    const double gamma = M_PI * (2.0 * i + 1.0) / (2.0 * order);
    const double qq = 1.0 / (2.0 * std::sin(gamma));
    const double a0 = 1.0 + k / qq + k2;
    Biquad s;
    s.b0 = k2 / a0;
    s.b1 = 2.0 * k2 / a0;
    s.b2 = k2 / a0;
    s.a1 = 2.0 * (k2 - 1.0) / a0;
    s.a2 = (1.0 - k / qq + k2) / a0;
    out.push_back(s);
  }
  return out;
}

std::vector<double> filtfilt(const std::vector<Biquad>& sections, const std::vector<double>& x) {
  const int64_t n = static_cast<int64_t>(x.size());
  if (n == 0 || sections.empty()) return x;
  const int64_t pad = std::min<int64_t>(n - 1, 256);

  // odd reflection about both endpoints
  std::vector<double> ext;
  ext.reserve(static_cast<size_t>(n + 2 * pad));
  for (int64_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (int64_t i = n - 2; i >= n - 1 - pad; --i) ext.push_back(2.0 * x[n - 1] - x[i]);

  ext = filter_forward(sections, std::move(ext));
  std::reverse(ext.begin(), ext.end());
  ext = filter_forward(sections, std::move(ext));
  std::reverse(ext.begin(), ext.end());

  return std::vector<double>(ext.begin() + pad, ext.begin() + pad + n);
}

void detrend_linear(std::vector<double>& x) {
  const int64_t n = static_cast<int64_t>(x.size());
  if (n == 0) return;
  if (n == 1) {
    x[0] = 0.0;
    return;
  }
  const double t_mean = (n - 1) / 2.0;
  double x_mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double dt = static_cast<double>(i) - t_mean;
    num += dt * (x[i] - x_mean);
    den += dt * dt;
  }
  const double slope = num / den;
  const double intercept = x_mean - slope * t_mean;
  for (int64_t i = 0; i < n; ++i) x[i] -= intercept + slope * static_cast<double>(i);
}

namespace {

// continued-fraction rationalization of a positive ratio
std::pair<int64_t, int64_t> rationalize(double ratio, int64_t max_den) {
  int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double x = ratio;
  for (int iter = 0; iter < 64; ++iter) {
    const int64_t a = static_cast<int64_t>(std::floor(x));
    int64_t p2 = a * p1 + p0, q2 = a * q1 + q0;
    if (q2 > max_den) break;
    p0 = p1;
    q0 = q1;
    p1 = p2;
    q1 = q2;
    const double frac = x - static_cast<double>(a);
    if (frac < 1e-12) break;
    x = 1.0 / frac;
  }
  return {p1, q1};
}

std::vector<double> decimate_integer(const std::vector<double>& x, int64_t m, double rate_out) {
  auto aa = design_butterworth_lowpass(8, 0.46 * rate_out, rate_out * static_cast<double>(m));
  std::vector<double> filtered = filtfilt(aa, x);
  std::vector<double> out;
  out.reserve((x.size() + m - 1) / m);
  for (size_t i = 0; i < filtered.size(); i += static_cast<size_t>(m)) out.push_back(filtered[i]);
  return out;
}

std::vector<double> upfirdn(const std::vector<double>& x, int64_t up, int64_t down) {
  // windowed-sinc kernel in the upsampled domain
  const int64_t lcm = std::max(up, down);
  const int64_t half = 10 * lcm;
  const double cutoff = 0.5 / static_cast<double>(lcm) * 0.92;  // cycles/sample, Nyquist = 0.5
  std::vector<double> h(static_cast<size_t>(2 * half + 1));
  const double beta = 8.6;
  auto bessel_i0 = [](double v) {
    double sum = 1.0, term = 1.0;
    for (int i = 1; i < 64; ++i) {
      term *= (v / (2.0 * i)) * (v / (2.0 * i));
      sum += term;
      if (term < 1e-18 * sum) break;
    }
    return sum;
  };
  const double i0b = bessel_i0(beta);
  for (int64_t i = -half; i <= half; ++i) {
    const double t = static_cast<double>(i);
    const double sinc = (i == 0) ? 2.0 * cutoff : std::sin(2.0 * M_PI * cutoff * t) / (M_PI * t);
    const double r = t / static_cast<double>(half);
    const double win = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
    h[static_cast<size_t>(i + half)] = sinc * win * static_cast<double>(up);
  }

  const int64_t n = static_cast<int64_t>(x.size());
  const int64_t out_len = (n * up + down - 1) / down;
  std::vector<double> y(static_cast<size_t>(out_len), 0.0);
  for (int64_t j = 0; j < out_len; ++j) {
    const int64_t center = j * down;  // position in upsampled grid
    // x[k] sits at position k*up; kernel support center +- half
    int64_t k_lo = (center - half + up - 1) / up;
    int64_t k_hi = (center + half) / up;
    k_lo = std::max<int64_t>(k_lo, 0);
    k_hi = std::min<int64_t>(k_hi, n - 1);
    double acc = 0.0;
    for (int64_t k = k_lo; k <= k_hi; ++k) {
      acc += x[static_cast<size_t>(k)] * h[static_cast<size_t>(center - k * up + half)];
    }
    y[static_cast<size_t>(j)] = acc;
  }
  return y;
}

}  // namespace

std::vector<double> resample(const std::vector<double>& x, double rate_in_hz, double rate_out_hz) {
  require(rate_in_hz > 0 && rate_out_hz > 0, ErrorKind::Data, "non-positive sample rate");
  if (std::abs(rate_in_hz - rate_out_hz) < 1e-9) return x;
  auto [up, down] = rationalize(rate_out_hz / rate_in_hz, 4096);
  require(up >= 1 && down >= 1, ErrorKind::Data, "cannot rationalize resampling ratio");
  if (up == 1) return decimate_integer(x, down, rate_out_hz);
  return upfirdn(x, up, down);
}

EegTrial preprocess_trial(const EegTrial& trial, const PreprocessConfig& cfg) {
  require(trial.sample_rate_hz >= kTargetRateHz - 1e-9, ErrorKind::Data,
          "unsupported rate " + std::to_string(trial.sample_rate_hz) + " Hz for trial " + trial.trial_id +
              " (must be >= 128)");
  require(trial.samples.rows >= 1 && trial.samples.cols >= 1, ErrorKind::Data,
          "empty trial " + trial.trial_id);

  EegTrial out;
  out.trial_id = trial.trial_id;
  out.patient_id = trial.patient_id;
  out.label = trial.label;
  out.channel_names = trial.channel_names;
  out.sample_rate_hz = kTargetRateHz;

  const auto notch = design_notch(cfg.notch_hz, cfg.notch_q, kTargetRateHz);
  const auto lowpass = design_butterworth_lowpass(8, cfg.lowpass_hz, kTargetRateHz);

  std::vector<std::vector<double>> channels(static_cast<size_t>(trial.samples.rows));
  for (int64_t c = 0; c < trial.samples.rows; ++c) {
    std::vector<double> ch(trial.samples.row(c), trial.samples.row(c) + trial.samples.cols);
    ch = resample(ch, trial.sample_rate_hz, kTargetRateHz);
    ch = filtfilt(notch, ch);
    ch = filtfilt(lowpass, ch);
    if (cfg.detrend) detrend_linear(ch);
    channels[static_cast<size_t>(c)] = std::move(ch);
  }

  const int64_t len = static_cast<int64_t>(channels[0].size());
  out.samples = SignalMatrix(trial.samples.rows, len);
  for (int64_t c = 0; c < trial.samples.rows; ++c) {
    std::copy(channels[static_cast<size_t>(c)].begin(), channels[static_cast<size_t>(c)].end(),
              out.samples.row(c));
  }
  return out;
}

}  // namespace mbmd
