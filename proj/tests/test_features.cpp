#include <repforge/features.hpp>
#include <repforge/synth.hpp>

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace repforge;

namespace {

constexpr double kPi = std::numbers::pi;

// Aligned set of n samples where every channel comes from a generator f(channel, i).
template <class F>
AlignedSet make_set(std::size_t n, double fs, F f) {
  AlignedSet s;
  s.id = SetId{"S001", 10, 1};
  s.fs = fs;
  for (std::size_t i = 0; i < n; ++i) {
    s.t.push_back(static_cast<double>(i) / fs);
    s.emg.push_back(f(6, i));
    for (int a = 0; a < 3; ++a) {
      s.accel[static_cast<std::size_t>(a)].push_back(f(a, i));
      s.gyro[static_cast<std::size_t>(a)].push_back(f(3 + a, i));
    }
  }
  return s;
}

RepSegment rep(std::size_t start, std::size_t mid, std::size_t end) {
  RepSegment r;
  r.rep_id = "S001_R01";
  r.rep_index = 1;
  r.start_idx = start;
  r.mid_idx = mid;
  r.end_idx = end;
  r.rpe = 5;
  return r;
}

// Direct least-squares oracle via normal equations in long double.
double r2_oracle(const std::vector<double>& y, int degree) {
  const std::size_t n = y.size();
  const int m = degree + 1;
  std::vector<std::vector<long double>> a(static_cast<std::size_t>(m), std::vector<long double>(static_cast<std::size_t>(m + 1), 0));
  for (std::size_t i = 0; i < n; ++i) {
    const long double t = static_cast<long double>(i) / static_cast<long double>(n - 1);
    std::vector<long double> p(static_cast<std::size_t>(m));
    p[0] = 1;
    for (int k = 1; k < m; ++k) p[static_cast<std::size_t>(k)] = p[static_cast<std::size_t>(k - 1)] * t;
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < m; ++c) a[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] += p[static_cast<std::size_t>(r)] * p[static_cast<std::size_t>(c)];
      a[static_cast<std::size_t>(r)][static_cast<std::size_t>(m)] += p[static_cast<std::size_t>(r)] * y[i];
    }
  }
  for (int c = 0; c < m; ++c) {
    for (int r = c + 1; r < m; ++r) {
      const long double f = a[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] / a[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
      for (int k = c; k <= m; ++k) a[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] -= f * a[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
    }
  }
  std::vector<long double> coef(static_cast<std::size_t>(m));
  for (int r = m - 1; r >= 0; --r) {
    long double v = a[static_cast<std::size_t>(r)][static_cast<std::size_t>(m)];
    for (int k = r + 1; k < m; ++k) v -= a[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] * coef[static_cast<std::size_t>(k)];
    coef[static_cast<std::size_t>(r)] = v / a[static_cast<std::size_t>(r)][static_cast<std::size_t>(r)];
  }
  long double mean = 0;
  for (double v : y) mean += v;
  mean /= static_cast<long double>(n);
  long double ss_res = 0;
  long double ss_tot = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const long double t = static_cast<long double>(i) / static_cast<long double>(n - 1);
    long double fit = 0;
    long double p = 1;
    for (int k = 0; k < m; ++k) {
      fit += coef[static_cast<std::size_t>(k)] * p;
      p *= t;
    }
    ss_res += (y[i] - fit) * (y[i] - fit);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  return static_cast<double>(1 - ss_res / ss_tot);
}

}  // namespace

TEST(Schema, Counts) {
  EXPECT_EQ(imu_feature_names().size(), 55u);
  EXPECT_EQ(emg_feature_names().size(), 9u);
  std::set<std::string> unique(imu_feature_names().begin(), imu_feature_names().end());
  EXPECT_EQ(unique.size(), 55u);
  EXPECT_EQ(imu_feature_names()[0], "concentric_time");
  EXPECT_EQ(imu_feature_names()[2], "total_time");
  EXPECT_EQ(imu_feature_index("jerk_con_mean"), 33u);
  EXPECT_THROW(imu_feature_index("nope"), ValidationError);
}

TEST(PhaseSplit, CenteredMidGivesEqualDurations) {
  const PhaseSplit p = phase_split(0, 50, 100, 100.0);
  EXPECT_DOUBLE_EQ(p.concentric_s, 0.5);
  EXPECT_DOUBLE_EQ(p.eccentric_s, 0.5);
  EXPECT_EQ(p.con_end - p.con_begin, 50u);
  EXPECT_EQ(p.ecc_end - p.ecc_begin, 51u);
}

TEST(PhaseSplit, DegenerateMid) {
  const PhaseSplit p = phase_split(10, 11, 40, 370.4);
  EXPECT_DOUBLE_EQ(p.concentric_s, 1.0 / 370.4);
  EXPECT_EQ(p.con_end, 1u);
}

TEST(PhaseSplit, TotalIsExactSum) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t s = rng() % 1000;
    const std::size_t m = s + 1 + rng() % 500;
    const std::size_t e = m + 1 + rng() % 500;
    const PhaseSplit p = phase_split(s, m, e, 370.4);
    EXPECT_EQ(p.total_s, p.concentric_s + p.eccentric_s);
    EXPECT_EQ(p.ecc_end, e - s + 1);
  }
}

TEST(PhaseSplit, InvalidOrderRejected) {
  EXPECT_THROW(phase_split(5, 5, 9, 100.0), ValidationError);
  EXPECT_THROW(phase_split(5, 9, 9, 100.0), ValidationError);
}

TEST(PhaseSplit, SynthProgrammedDurations) {
  SynthSpec spec;
  spec.rpe = {4, 4};
  spec.concentric_s = 1.0;
  spec.concentric_jitter_s = 0.0;
  spec.eccentric_s = 2.0;
  spec.eccentric_jitter_s = 0.0;
  spec.slowdown_s_per_rpe = 0.0;
  spec.break_min_s = spec.break_max_s = 0.0;
  spec.seed = 11;
  const SynthSet s = generate_set(spec);
  const AlignedSet a = align_set(s.raw);
  const auto reps = segment_set(a, PalmAxisConfig{});
  ASSERT_EQ(reps.size(), 2u);
  const PhaseSplit p = phase_split(RepView(a, reps[0]));
  EXPECT_NEAR(p.concentric_s, 1.0, 2.0 / a.fs);
  EXPECT_NEAR(p.eccentric_s, 2.0, 2.0 / a.fs);
}

TEST(Smoothness, ExactCubicFits) {
  std::vector<double> y;
  for (int i = 0; i < 200; ++i) {
    const double t = i / 199.0;
    y.push_back(1.5 - 2.0 * t + 0.7 * t * t + 3.0 * t * t * t);
  }
  EXPECT_NEAR(smoothness_r2(y), 1.0, 1e-9);
}

TEST(Smoothness, WhiteNoiseLow) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> y(500);
  for (double& v : y) v = g(rng);
  EXPECT_LT(smoothness_r2(y), 0.1);
}

TEST(Smoothness, ConstantIsOne) {
  const std::vector<double> y(50, -0.37);
  EXPECT_EQ(smoothness_r2(y), 1.0);
}

TEST(Smoothness, TooFewSamples) {
  const std::vector<double> y = {1, 2, 3, 4};
  EXPECT_THROW(smoothness_r2(y, 3), ValidationError);
  EXPECT_NO_THROW(smoothness_r2(y, 2));
}

TEST(Smoothness, MatchesNormalEquationOracle) {
  std::vector<double> y;
  for (int i = 0; i < 300; ++i) y.push_back(std::sin(2 * kPi * i / 170.0) + 0.1 * std::cos(i * 0.37));
  for (int d : {1, 2, 3, 4}) EXPECT_NEAR(smoothness_r2(y, d), r2_oracle(y, d), 1e-9) << d;
}

TEST(ImuFeatures, ConstantAccel) {
  const AlignedSet s = make_set(100, 100.0, [](int ch, std::size_t) { return 0.1 * (ch + 1); });
  const RepSegment r = rep(0, 40, 99);
  const auto f = extract_imu_features(RepView(s, r), PalmAxisConfig{});
  ASSERT_EQ(f.values.size(), 55u);
  for (const char* ax : {"x", "y", "z"}) {
    for (const char* ph : {"con", "ecc"}) {
      const std::string base = std::string("accel_") + ax + "_" + ph + "_";
      EXPECT_EQ(f[base + "std"], 0.0);
      EXPECT_EQ(f[base + "range"], 0.0);
      EXPECT_EQ(f[base + "min"], f[base + "max"]);
      EXPECT_DOUBLE_EQ(f[base + "min"], f[base + "mean"]);
    }
  }
  EXPECT_EQ(f["jerk_con_std"], 0.0);
  EXPECT_EQ(f["jerk_ecc_range"], 0.0);
  EXPECT_EQ(f["accel_x_r2"], 1.0);
  EXPECT_EQ(f["gyro_z_std"], 0.0);
  for (double v : f.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(ImuFeatures, SinusoidStatsMatchClosedForm) {
  // Each phase holds whole periods: mean = offset, population std = amp / sqrt(2).
  const double fs = 370.4;
  const std::size_t period = 74;
  const std::size_t mid = 5 * period;
  const std::size_t end = mid + 6 * period;  // ecc window [mid, end] has one extra sample
  const AlignedSet s = make_set(end + 1, fs, [&](int ch, std::size_t i) {
    const double amp = 0.2 + 0.1 * ch;
    const double off = -0.3 + 0.2 * ch;
    return off + amp * std::sin(2 * kPi * static_cast<double>(i) / static_cast<double>(period));
  });
  const auto f = extract_imu_features(RepView(s, rep(0, mid, end - 1)), PalmAxisConfig{});
  const char* axes[] = {"x", "y", "z"};
  for (int a = 0; a < 3; ++a) {
    const double amp = 0.2 + 0.1 * a;
    const double off = -0.3 + 0.2 * a;
    for (const char* ph : {"con", "ecc"}) {
      const std::string base = std::string("accel_") + axes[a] + "_" + ph + "_";
      EXPECT_NEAR(f[base + "mean"], off, 0.01 * amp);
      EXPECT_NEAR(f[base + "std"], amp / std::sqrt(2.0), 0.01 * amp / std::sqrt(2.0));
      EXPECT_NEAR(f[base + "max"], off + amp, 0.01 * amp);
      EXPECT_NEAR(f[base + "min"], off - amp, 0.01 * amp);
    }
  }
  for (int a = 0; a < 3; ++a) {
    const double amp = 0.2 + 0.1 * (3 + a);
    EXPECT_NEAR(f[std::string("gyro_") + axes[a] + "_std"], amp / std::sqrt(2.0), 0.01 * amp);
  }
  // palm-axis jerk of a sinusoid: amplitude amp * 2 pi f
  const double jerk_amp = 0.2 * 2 * kPi * fs / static_cast<double>(period);
  EXPECT_NEAR(f["jerk_con_std"], jerk_amp / std::sqrt(2.0), 0.01 * jerk_amp);
}

TEST(ImuFeatures, ScaleEquivariance) {
  auto gen = [](int ch, std::size_t i) {
    const double t = static_cast<double>(i) / 100.0;
    return std::sin(1.3 * t + ch) + 0.2 * t * ch + 0.05 * std::cos(7.0 * t * (ch + 1));
  };
  const AlignedSet base = make_set(300, 100.0, gen);
  const RepSegment r = rep(20, 130, 280);
  const auto f0 = extract_imu_features(RepView(base, r), PalmAxisConfig{});
  for (double k : {2.5, -0.4}) {
    AlignedSet scaled = base;
    for (auto& ax : scaled.accel) for (double& v : ax) v *= k;
    for (auto& ax : scaled.gyro) for (double& v : ax) v *= k;
    const auto f1 = extract_imu_features(RepView(scaled, r), PalmAxisConfig{});
    for (std::size_t i = 0; i < 55; ++i) {
      const std::string& name = imu_feature_names()[i];
      auto ends = [&](const std::string& suf) { return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0; };
      double expect = f0.values[i];
      if (name.find("_time") != std::string::npos || ends("_r2")) {
        expect = f0.values[i];
      } else if (ends("_std") || ends("_range")) {
        expect = std::abs(k) * f0.values[i];
      } else if (ends("_mean")) {
        expect = k * f0.values[i];
      } else if (ends("_min")) {
        expect = k * (k > 0 ? f0.values[i] : f0.values[i + 1]);
      } else if (ends("_max")) {
        expect = k * (k > 0 ? f0.values[i] : f0.values[i - 1]);
      }
      EXPECT_NEAR(f1.values[i], expect, 1e-9 * (1.0 + std::abs(expect))) << name << " k=" << k;
    }
  }
}

TEST(ImuFeatures, PalmSignFlipsJerk) {
  const AlignedSet s = make_set(200, 100.0, [](int ch, std::size_t i) { return std::sin(0.05 * static_cast<double>(i) + ch); });
  const RepSegment r = rep(0, 90, 199);
  const auto f = extract_imu_features(RepView(s, r), PalmAxisConfig{0, 1});
  const auto g = extract_imu_features(RepView(s, r), PalmAxisConfig{0, -1});
  EXPECT_NEAR(g["jerk_con_mean"], -f["jerk_con_mean"], 1e-12);
  EXPECT_NEAR(g["jerk_con_max"], -f["jerk_con_min"], 1e-12);
  EXPECT_NEAR(g["accel_x_con_mean"], f["accel_x_con_mean"], 0.0);
}

TEST(ImuFeatures, Deterministic) {
  const AlignedSet s = make_set(150, 100.0, [](int ch, std::size_t i) { return std::cos(0.07 * static_cast<double>(i) * (ch + 1)); });
  const RepSegment r = rep(5, 60, 140);
  const auto a = extract_imu_features(RepView(s, r), PalmAxisConfig{});
  const auto b = extract_imu_features(RepView(s, r), PalmAxisConfig{});
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.schema_version, kFeatureSchemaVersion);
}

TEST(EmgFeatures, Constant) {
  const std::vector<double> x(300, -0.4);
  const auto f = extract_emg_features(x);
  EXPECT_DOUBLE_EQ(f.mean(), -0.4);
  EXPECT_DOUBLE_EQ(f.rms(), 0.4);
  EXPECT_NEAR(f.variance(), 0.0, 1e-15);
  EXPECT_EQ(f.zero_crossings(), 0.0);
  EXPECT_DOUBLE_EQ(f.peak_amplitude(), 0.4);
  EXPECT_EQ(f.waveform_length(), 0.0);
  EXPECT_EQ(f.slope_sign_changes(), 0.0);
  EXPECT_EQ(f.values.size(), 9u);
}

TEST(EmgFeatures, SineZeroCrossingsAndRms) {
  // N whole periods starting one sample before an upward zero: signs run
  // - + - ... + -, so 2N changes.
  for (int periods : {1, 3, 10}) {
    for (double amp : {0.05, 1.7}) {
      const int per = 100;
      std::vector<double> x;
      for (int i = 0; i < periods * per; ++i) x.push_back(amp * std::sin(2 * kPi * (i - 1) / per));
      const auto f = extract_emg_features(x);
      EXPECT_EQ(f.zero_crossings(), 2.0 * periods) << periods;
      EXPECT_NEAR(f.rms(), amp / std::sqrt(2.0), 0.01 * amp / std::sqrt(2.0));
      EXPECT_NEAR(f.mean(), 0.0, 1e-9 * amp);
      EXPECT_NEAR(f.mav(), 2.0 * amp / kPi, 0.01 * amp);
      EXPECT_EQ(f.slope_sign_changes(), 2.0 * periods);
    }
  }
}

TEST(EmgFeatures, ScaleEquivariance) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.1, 0.5);
  std::vector<double> x(400);
  for (double& v : x) v = g(rng);
  const auto f0 = extract_emg_features(x);
  for (double k : {3.0, -0.25}) {
    std::vector<double> y = x;
    for (double& v : y) v *= k;
    const auto f1 = extract_emg_features(y);
    EXPECT_NEAR(f1.mean(), k * f0.mean(), 1e-12);
    EXPECT_NEAR(f1.rms(), std::abs(k) * f0.rms(), 1e-12);
    EXPECT_NEAR(f1.mav(), std::abs(k) * f0.mav(), 1e-12);
    EXPECT_NEAR(f1.variance(), k * k * f0.variance(), 1e-12);
    EXPECT_NEAR(f1.peak_amplitude(), std::abs(k) * f0.peak_amplitude(), 1e-12);
    EXPECT_NEAR(f1.waveform_length(), std::abs(k) * f0.waveform_length(), 1e-9);
    EXPECT_EQ(f1.zero_crossings(), f0.zero_crossings());
    EXPECT_EQ(f1.slope_sign_changes(), f0.slope_sign_changes());
  }
}

TEST(EmgFeatures, HandComputedFixture) {
  const std::vector<double> x = {1.0, -1.0, 2.0, 0.0, -2.0};
  const auto f = extract_emg_features(x);
  EXPECT_DOUBLE_EQ(f.mean(), 0.0);
  EXPECT_DOUBLE_EQ(f.mav(), 6.0 / 5.0);
  EXPECT_DOUBLE_EQ(f.rms(), std::sqrt(10.0 / 5.0));
  EXPECT_DOUBLE_EQ(f.variance(), 2.0);
  EXPECT_EQ(f.zero_crossings(), 3.0);  // + - + (skip 0) -
  EXPECT_DOUBLE_EQ(f.peak_amplitude(), 2.0);
  EXPECT_DOUBLE_EQ(f.waveform_length(), 2.0 + 3.0 + 2.0 + 2.0);
  EXPECT_DOUBLE_EQ(f.integrated_abs(), 6.0);
  EXPECT_EQ(f.slope_sign_changes(), 2.0);  // peaks at -1 and 2
  for (double v : {f.rms(), f.variance(), f.peak_amplitude(), f.zero_crossings()}) EXPECT_GE(v, 0.0);
}

TEST(EmgFeatures, EmptyRejected) {
  EXPECT_THROW(extract_emg_features(std::vector<double>{}), ValidationError);
}

TEST(RepRow, AssemblesBothVectors) {
  SynthSpec spec;
  spec.rpe = {3, 5, 7};
  spec.seed = 5;
  const AlignedSet a = align_set(generate_set(spec).raw);
  const auto reps = segment_set(a, PalmAxisConfig{});
  ASSERT_EQ(reps.size(), 3u);
  for (const auto& r : reps) {
    const RepRow row = make_rep_row(a, r, PalmAxisConfig{});
    EXPECT_EQ(row.imu.size(), 55u);
    EXPECT_EQ(row.emg.size(), 9u);
    EXPECT_EQ(row.rpe, r.rpe);
    EXPECT_GT(row.imu[0], 0.0);
    EXPECT_GT(row.imu[1], 0.0);
    for (double v : row.imu) EXPECT_TRUE(std::isfinite(v));
  }
  const RepTable t = empty_rep_table();
  EXPECT_EQ(t.imu_names.size(), 55u);
  EXPECT_EQ(t.schema_version, kFeatureSchemaVersion);
}
