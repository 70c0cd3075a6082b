#ifndef REPFORGE_DSP_HPP
#define REPFORGE_DSP_HPP

#include "repforge/dataio.hpp"

#include <complex>
#include <numbers>
#include <span>

namespace repforge {

// ---------------------------------------------------------------------------
// rate estimation
// ---------------------------------------------------------------------------

/// 1 / median successive difference; robust to isolated dropouts.
inline double estimate_rate(std::span<const double> t) {
  require(t.size() >= 2, "estimate_rate needs at least 2 timestamps");
  std::vector<double> d(t.size() - 1);
  for (std::size_t i = 1; i < t.size(); ++i) {
    d[i - 1] = t[i] - t[i - 1];
    if (!(d[i - 1] > 0)) throw ValidationError("estimate_rate: timestamps not strictly increasing");
  }
  return 1.0 / median_of(std::move(d));
}

// ---------------------------------------------------------------------------
// Butterworth low-pass, second-order sections
// ---------------------------------------------------------------------------

struct Biquad {
  // y = b0 x + b1 x[-1] + b2 x[-2] - a1 y[-1] - a2 y[-2]
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;

  double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
};

class SosFilter {
 public:
  SosFilter() = default;
  SosFilter(std::vector<Biquad> sections, double fs, double cutoff)
      : sections_(std::move(sections)), fs_(fs), cutoff_(cutoff) {}

  const std::vector<Biquad>& sections() const { return sections_; }

  /// Causal single pass. With steady_state, the delay line starts as if the
  /// input had been x[0] forever.
  std::vector<double> filter(std::span<const double> x, bool steady_state = false) const {
    std::vector<double> y(x.begin(), x.end());
    if (y.empty()) return y;
    for (const auto& s : sections_) {
      double z1 = 0.0;
      double z2 = 0.0;
      if (steady_state) {
        const double g = s.dc_gain();
        z2 = (s.b2 - s.a2 * g) * y[0];
        z1 = (s.b1 - s.a1 * g) * y[0] + z2;
      }
      for (double& v : y) {
        const double in = v;
        const double out = s.b0 * in + z1;
        z1 = s.b1 * in - s.a1 * out + z2;
        z2 = s.b2 * in - s.a2 * out;
        v = out;
      }
    }
    return y;
  }

  /// Forward-backward application with odd-reflection padding: zero phase,
  /// squared magnitude response.
  std::vector<double> filtfilt(std::span<const double> x) const {
    const std::size_t n = x.size();
    if (n == 0) return {};
    const std::size_t want =
        std::max<std::size_t>(3 * (2 * sections_.size() + 1), static_cast<std::size_t>(std::ceil(3.0 * fs_ / cutoff_)));
    const std::size_t pad = std::min(want, n - 1);
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    auto fwd = filter(ext, true);
    std::reverse(fwd.begin(), fwd.end());
    auto back = filter(fwd, true);
    std::reverse(back.begin(), back.end());
    return std::vector<double>(back.begin() + static_cast<std::ptrdiff_t>(pad),
                               back.begin() + static_cast<std::ptrdiff_t>(pad + n));
  }

  /// |H(e^{jw})| at frequency f (Hz).
  double magnitude(double f) const {
    const std::complex<double> z = std::polar(1.0, -2.0 * std::numbers::pi * f / fs_);
    std::complex<double> h = 1.0;
    for (const auto& s : sections_) {
      h *= (s.b0 + s.b1 * z + s.b2 * z * z) / (1.0 + s.a1 * z + s.a2 * z * z);
    }
    return std::abs(h);
  }

 private:
  std::vector<Biquad> sections_;
  double fs_ = 1.0;
  double cutoff_ = 0.25;
};

/// Digital Butterworth low-pass by bilinear transform with frequency
/// prewarping, so the -3 dB point lands exactly on `cutoff`.
inline SosFilter design_butterworth_lowpass(int order, double cutoff, double fs) {
  require(order >= 1, "Butterworth order must be >= 1");
  require(fs > 0, "sampling rate must be positive");
  require(cutoff > 0 && cutoff < fs / 2, "Butterworth cutoff must lie in (0, fs/2)");
  const double pi = std::numbers::pi;
  const double warped = 2.0 * fs * std::tan(pi * cutoff / fs);
  auto to_z = [&](std::complex<double> s) {
    const std::complex<double> k = s / (2.0 * fs);
    return (1.0 + k) / (1.0 - k);
  };
  std::vector<Biquad> sections;
  for (int k = 0; k < order / 2; ++k) {
    const double theta = pi * (2.0 * k + 1.0 + order) / (2.0 * order);
    const std::complex<double> pz = to_z(warped * std::polar(1.0, theta));
    Biquad b;
    b.a1 = -2.0 * pz.real();
    b.a2 = std::norm(pz);
    const double g = (1.0 + b.a1 + b.a2) / 4.0;  // two zeros at z = -1
    b.b0 = g;
    b.b1 = 2.0 * g;
    b.b2 = g;
    sections.push_back(b);
  }
  if (order % 2 == 1) {
    const double pr = to_z(std::complex<double>(-warped, 0.0)).real();
    Biquad b;
    b.a1 = -pr;
    const double g = (1.0 - pr) / 2.0;
    b.b0 = g;
    b.b1 = g;
    sections.push_back(b);
  }
  return SosFilter(std::move(sections), fs, cutoff);
}

inline std::vector<double> butterworth_lowpass(std::span<const double> signal, double fs, double cutoff, int order) {
  if (cutoff >= fs / 2) throw ValidationError("Butterworth cutoff at or above Nyquist");
  return design_butterworth_lowpass(order, cutoff, fs).filtfilt(signal);
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

/// Piecewise cubic through the four source samples bracketing each target
/// (Lagrange form). Reproduces any polynomial of degree <= 3 exactly, also on
/// irregular grids.
inline std::vector<double> resample_to(std::span<const double> signal, std::span<const double> src_t,
                                       std::span<const double> dst_t) {
  require(signal.size() == src_t.size(), "resample_to: signal/time length mismatch");
  require(!src_t.empty(), "resample_to: empty source");
  for (std::size_t i = 1; i < src_t.size(); ++i) {
    if (!(src_t[i] > src_t[i - 1])) throw ValidationError("resample_to: source timestamps not increasing");
  }
  const std::size_t n = src_t.size();
  std::vector<double> out(dst_t.size());
  if (n == 1) {
    for (std::size_t j = 0; j < dst_t.size(); ++j) {
      if (dst_t[j] != src_t[0]) throw ValidationError("resample_to: target outside source span");
      out[j] = signal[0];
    }
    return out;
  }
  const std::size_t stencil = std::min<std::size_t>(4, n);
  for (std::size_t j = 0; j < dst_t.size(); ++j) {
    const double t = dst_t[j];
    if (t < src_t.front() || t > src_t.back()) {
      throw ValidationError("resample_to: target time " + format_double(t) + " outside source span");
    }
    // interval [i, i+1] containing t
    auto it = std::upper_bound(src_t.begin(), src_t.end(), t);
    std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - src_t.begin()) - 1));
    i = std::min(i, n - 2);
    std::ptrdiff_t first = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(stencil / 2 - 1);
    first = std::clamp<std::ptrdiff_t>(first, 0, static_cast<std::ptrdiff_t>(n - stencil));
    double acc = 0.0;
    for (std::size_t a = 0; a < stencil; ++a) {
      const std::size_t ia = static_cast<std::size_t>(first) + a;
      double w = 1.0;
      for (std::size_t b = 0; b < stencil; ++b) {
        if (b == a) continue;
        const std::size_t ib = static_cast<std::size_t>(first) + b;
        w *= (t - src_t[ib]) / (src_t[ia] - src_t[ib]);
      }
      acc += w * signal[ia];
    }
    out[j] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// smoothing
// ---------------------------------------------------------------------------

/// Centered moving mean; windows shrink symmetrically-truncated at the edges.
inline std::vector<double> rolling_average(std::span<const double> signal, int window) {
  if (window < 1 || window % 2 == 0) throw ValidationError("rolling_average window must be odd and >= 1");
  std::vector<double> out(signal.begin(), signal.end());
  if (window == 1) return out;
  const std::ptrdiff_t half = window / 2;
  const auto n = static_cast<std::ptrdiff_t>(signal.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - half);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, i + half);
    double s = 0.0;
    for (std::ptrdiff_t k = lo; k <= hi; ++k) s += signal[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

/// Nearest odd integer to x, at least 1.
inline int nearest_odd(double x) {
  if (x <= 1.0) return 1;
  const auto r = static_cast<int>(std::lround(x));
  if (r % 2 == 1) return r;
  return x >= r ? r + 1 : r - 1;
}

// ---------------------------------------------------------------------------
// set alignment
// ---------------------------------------------------------------------------

struct AlignParams {
  double cutoff_hz = 0.0;  // 0: 0.45 x IMU rate
  int order = 4;
  double smooth_s = 0.03;

  static AlignParams from_config(const Config& cfg) {
    AlignParams p;
    p.cutoff_hz = cfg.get_double("dsp.cutoff_hz", p.cutoff_hz);
    p.order = static_cast<int>(cfg.get_int("dsp.order", p.order));
    p.smooth_s = cfg.get_double("dsp.smooth_s", p.smooth_s);
    return p;
  }
};

/// All channels on the IMU timeline.
struct AlignedSet {
  SetId id;
  std::vector<double> t;
  std::vector<double> emg;
  std::array<std::vector<double>, 3> accel;
  std::array<std::vector<double>, 3> gyro;
  double fs = 0.0;
  int smooth_window = 1;  // rolling-average length applied to every channel
  std::vector<int> rpe;

  std::size_t size() const { return t.size(); }
};

/// EMG: low-pass, then resample onto the IMU timestamps; every channel is
/// then rolling-averaged. IMU samples outside the EMG time span are dropped.
inline AlignedSet align_set(const RawSet& raw, const AlignParams& params = {}) {
  validate(raw);
  const double fs_imu = estimate_rate(raw.accel.t);
  const double fs_emg = raw.emg.size() >= 2 ? estimate_rate(raw.emg.t) : fs_imu;
  const double cutoff = params.cutoff_hz > 0 ? params.cutoff_hz : 0.45 * fs_imu;

  std::vector<double> emg = raw.emg.value;
  if (raw.emg.size() >= 2) emg = butterworth_lowpass(raw.emg.value, fs_emg, cutoff, params.order);

  std::size_t i0 = 0;
  std::size_t i1 = raw.accel.size();
  while (i0 < i1 && raw.accel.t[i0] < raw.emg.t.front()) ++i0;
  while (i1 > i0 && raw.accel.t[i1 - 1] > raw.emg.t.back()) --i1;
  if (i1 - i0 < 2) throw ValidationError(raw.id.str() + ": EMG and IMU recordings do not overlap");

  AlignedSet out;
  out.id = raw.id;
  out.rpe = raw.rpe;
  out.fs = fs_imu;
  out.t.assign(raw.accel.t.begin() + static_cast<std::ptrdiff_t>(i0), raw.accel.t.begin() + static_cast<std::ptrdiff_t>(i1));
  const int window = nearest_odd(params.smooth_s * fs_imu);
  out.smooth_window = window;
  out.emg = rolling_average(resample_to(emg, raw.emg.t, out.t), window);
  for (int a = 0; a < 3; ++a) {
    const auto slice = [&](const std::vector<double>& v) {
      return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(i0), v.begin() + static_cast<std::ptrdiff_t>(i1));
    };
    out.accel[a] = rolling_average(slice(raw.accel.axis[a]), window);
    out.gyro[a] = rolling_average(slice(raw.gyro.axis[a]), window);
  }
  return out;
}

}  // namespace repforge

#endif  // REPFORGE_DSP_HPP
