#ifndef REPFORGE_FEATURES_HPP
#define REPFORGE_FEATURES_HPP

// Per-repetition feature vectors: 55 IMU entries and 9 EMG entries.

#include <repforge/segmentation.hpp>

#include <array>
#include <span>
#include <string>
#include <vector>

namespace repforge {

inline constexpr const char* kFeatureSchemaVersion = "imu55-emg9-v1";
inline constexpr std::size_t kImuFeatureCount = 55;
inline constexpr std::size_t kEmgFeatureCount = 9;
inline constexpr int kSmoothnessDegree = 3;

// ---------------------------------------------------------------------------
// schema
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& imu_feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n = {"concentric_time", "eccentric_time", "total_time"};
    const char* axes[] = {"x", "y", "z"};
    const char* phases[] = {"con", "ecc"};
    const char* stats[] = {"mean", "std", "range", "min", "max"};
    for (const char* a : axes) {
      for (const char* p : phases) {
        for (const char* s : stats) n.push_back(std::string("accel_") + a + "_" + p + "_" + s);
      }
    }
    for (const char* p : phases) {
      for (const char* s : stats) n.push_back(std::string("jerk_") + p + "_" + s);
    }
    for (const char* a : axes) n.push_back(std::string("accel_") + a + "_r2");
    for (const char* a : axes) {
      for (const char* s : {"mean", "std", "r2"}) n.push_back(std::string("gyro_") + a + "_" + s);
    }
    return n;
  }();
  return names;
}

inline const std::vector<std::string>& emg_feature_names() {
  static const std::vector<std::string> names = {
      "emg_mean",          "emg_mav",           "emg_rms",
      "emg_variance",      "emg_zero_crossings", "emg_peak_amplitude",
      "emg_waveform_length", "emg_integrated_abs", "emg_slope_sign_changes"};
  return names;
}

inline std::size_t imu_feature_index(const std::string& name) {
  const auto& n = imu_feature_names();
  auto it = std::find(n.begin(), n.end(), name);
  require(it != n.end(), "unknown IMU feature '" + name + "'");
  return static_cast<std::size_t>(it - n.begin());
}

struct ImuFeatureVector {
  std::array<double, kImuFeatureCount> values{};
  std::string schema_version = kFeatureSchemaVersion;
  double operator[](const std::string& name) const { return values[imu_feature_index(name)]; }
};

struct EmgFeatureVector {
  std::array<double, kEmgFeatureCount> values{};
  std::string schema_version = kFeatureSchemaVersion;
  double mean() const { return values[0]; }
  double mav() const { return values[1]; }
  double rms() const { return values[2]; }
  double variance() const { return values[3]; }
  double zero_crossings() const { return values[4]; }
  double peak_amplitude() const { return values[5]; }
  double waveform_length() const { return values[6]; }
  double integrated_abs() const { return values[7]; }
  double slope_sign_changes() const { return values[8]; }
};

// ---------------------------------------------------------------------------
// building blocks
// ---------------------------------------------------------------------------

/// Offsets relative to the rep start. Concentric is [0, mid), eccentric is
/// [mid, size) and so includes end_idx.
struct PhaseSplit {
  std::size_t con_begin = 0;
  std::size_t con_end = 0;
  std::size_t ecc_begin = 0;
  std::size_t ecc_end = 0;
  double concentric_s = 0.0;
  double eccentric_s = 0.0;
  double total_s = 0.0;
};

inline PhaseSplit phase_split(std::size_t start_idx, std::size_t mid_idx, std::size_t end_idx, double fs) {
  require(start_idx < mid_idx && mid_idx < end_idx, "phase_split: need start < mid < end");
  require(fs > 0, "phase_split: fs must be positive");
  PhaseSplit p;
  p.con_end = mid_idx - start_idx;
  p.ecc_begin = p.con_end;
  p.ecc_end = end_idx - start_idx + 1;
  // durations are index spans; the eccentric window also holds end_idx
  p.concentric_s = static_cast<double>(mid_idx - start_idx) / fs;
  p.eccentric_s = static_cast<double>(end_idx - mid_idx) / fs;
  p.total_s = p.concentric_s + p.eccentric_s;
  return p;
}

inline PhaseSplit phase_split(const RepView& rep) {
  return phase_split(rep.rep().start_idx, rep.rep().mid_idx, rep.rep().end_idx, rep.fs());
}

struct SummaryStats {
  double mean = 0.0;
  double std = 0.0;  // population
  double range = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline SummaryStats summarize(std::span<const double> x) {
  require(!x.empty(), "summary statistics of an empty window");
  SummaryStats s;
  s.min = s.max = x[0];
  // shifted by the first sample so a constant window is exact
  const double shift = x[0];
  double sum = 0.0;
  for (double v : x) {
    sum += v - shift;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  const double centered = sum / static_cast<double>(x.size());
  s.mean = shift + centered;
  double ss = 0.0;
  for (double v : x) ss += (v - shift - centered) * (v - shift - centered);
  s.std = std::sqrt(ss / static_cast<double>(x.size()));
  s.range = s.max - s.min;
  return s;
}

/// R^2 of a least-squares polynomial over time normalized to [0, 1].
/// A constant signal has nothing to explain and scores 1.
inline double smoothness_r2(std::span<const double> y, int degree = kSmoothnessDegree) {
  require(degree >= 0, "smoothness_r2: negative degree");
  const auto n = static_cast<Eigen::Index>(y.size());
  if (n <= degree + 1) {
    throw ValidationError("smoothness_r2: need more than " + std::to_string(degree + 1) + " samples, got " +
                          std::to_string(n));
  }
  Eigen::Map<const Vector> yv(y.data(), n);
  const double mean = yv.mean();
  const double ss_tot = (yv.array() - mean).square().sum();
  const double scale = yv.cwiseAbs().maxCoeff();
  const double floor = static_cast<double>(n) * std::pow(64.0 * std::numeric_limits<double>::epsilon() * scale, 2);
  if (ss_tot <= floor) return 1.0;

  Matrix V(n, degree + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    double p = 1.0;
    for (int k = 0; k <= degree; ++k) {
      V(i, k) = p;
      p *= t;
    }
  }
  const Vector coef = V.colPivHouseholderQr().solve(yv);
  const double ss_res = (yv - V * coef).squaredNorm();
  return 1.0 - ss_res / ss_tot;
}

// ---------------------------------------------------------------------------
// extraction
// ---------------------------------------------------------------------------

inline ImuFeatureVector extract_imu_features(const RepView& rep, const PalmAxisConfig& palm) {
  palm.validate();
  const PhaseSplit ph = phase_split(rep);
  require(ph.con_end > ph.con_begin && ph.ecc_end > ph.ecc_begin, rep.rep().rep_id + ": empty phase");

  ImuFeatureVector f;
  std::size_t k = 0;
  auto put = [&](double v) { f.values[k++] = v; };
  auto put_stats = [&](const SummaryStats& s) {
    put(s.mean);
    put(s.std);
    put(s.range);
    put(s.min);
    put(s.max);
  };

  put(ph.concentric_s);
  put(ph.eccentric_s);
  put(ph.total_s);

  for (int a = 0; a < 3; ++a) {
    const auto x = rep.accel(a);
    put_stats(summarize(x.subspan(ph.con_begin, ph.con_end - ph.con_begin)));
    put_stats(summarize(x.subspan(ph.ecc_begin, ph.ecc_end - ph.ecc_begin)));
  }

  std::vector<double> palm_axis(rep.accel(palm.axis_index).begin(), rep.accel(palm.axis_index).end());
  for (double& v : palm_axis) v *= palm.sign;
  const std::vector<double> j = jerk(palm_axis, rep.fs());
  const std::span<const double> js(j);
  put_stats(summarize(js.subspan(ph.con_begin, ph.con_end - ph.con_begin)));
  put_stats(summarize(js.subspan(ph.ecc_begin, ph.ecc_end - ph.ecc_begin)));

  for (int a = 0; a < 3; ++a) put(smoothness_r2(rep.accel(a)));
  for (int a = 0; a < 3; ++a) {
    const auto g = rep.gyro(a);
    const SummaryStats s = summarize(g);
    put(s.mean);
    put(s.std);
    put(smoothness_r2(g));
  }
  return f;
}

/// Time-domain EMG features. Zero crossings are counted on the mean-removed
/// signal, ignoring samples within 0.05 rms of zero. Slope sign changes are
/// the same count on the first difference, against 0.05 of its rms.
inline EmgFeatureVector extract_emg_features(std::span<const double> x) {
  require(!x.empty(), "EMG window is empty");
  const auto n = static_cast<double>(x.size());
  double sum_abs = 0.0;
  double peak = 0.0;
  double wl = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sum_abs += std::abs(x[i]);
    peak = std::max(peak, std::abs(x[i]));
    if (i > 0) wl += std::abs(x[i] - x[i - 1]);
  }
  double shifted = 0.0;
  for (double v : x) shifted += v - x[0];
  const double mean = x[0] + shifted / n;
  double var = 0.0;
  for (double v : x) var += (v - x[0] - shifted / n) * (v - x[0] - shifted / n);
  var /= n;

  const double deadband = 0.05 * std::sqrt(var);
  int last_sign = 0;
  int zc = 0;
  for (double v : x) {
    const double d = v - mean;
    if (std::abs(d) <= deadband) continue;
    const int s = d > 0 ? 1 : -1;
    if (last_sign != 0 && s != last_sign) ++zc;
    last_sign = s;
  }

  int ssc = 0;
  if (x.size() >= 3) {
    double diff_sq = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) diff_sq += (x[i] - x[i - 1]) * (x[i] - x[i - 1]);
    const double slope_deadband = 0.05 * std::sqrt(diff_sq / (n - 1.0));
    int last = 0;
    for (std::size_t i = 1; i < x.size(); ++i) {
      const double d = x[i] - x[i - 1];
      if (std::abs(d) <= slope_deadband) continue;
      const int sg = d > 0 ? 1 : -1;
      if (last != 0 && sg != last) ++ssc;
      last = sg;
    }
  }

  EmgFeatureVector f;
  f.values = {mean, sum_abs / n, std::sqrt(mean * mean + var), var, static_cast<double>(zc), peak, wl, sum_abs,
              static_cast<double>(ssc)};
  return f;
}

inline EmgFeatureVector extract_emg_features(const RepView& rep) { return extract_emg_features(rep.emg()); }

// ---------------------------------------------------------------------------
// rep table assembly
// ---------------------------------------------------------------------------

inline RepRow make_rep_row(const AlignedSet& set, const RepSegment& seg, const PalmAxisConfig& palm) {
  const RepView view(set, seg);
  const auto imu = extract_imu_features(view, palm);
  const auto emg = extract_emg_features(view);
  RepRow row;
  row.rep_id = seg.rep_id;
  row.set_id = set.id.str();
  row.rep_index = seg.rep_index;
  row.start_idx = seg.start_idx;
  row.mid_idx = seg.mid_idx;
  row.end_idx = seg.end_idx;
  row.rpe = seg.rpe;
  row.imu.assign(imu.values.begin(), imu.values.end());
  row.emg.assign(emg.values.begin(), emg.values.end());
  return row;
}

inline RepTable empty_rep_table() {
  RepTable t;
  t.schema_version = kFeatureSchemaVersion;
  t.imu_names = imu_feature_names();
  t.emg_names = emg_feature_names();
  return t;
}

}  // namespace repforge

#endif  // REPFORGE_FEATURES_HPP
