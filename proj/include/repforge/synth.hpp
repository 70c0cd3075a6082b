#ifndef REPFORGE_SYNTH_HPP
#define REPFORGE_SYNTH_HPP

// Synthetic bicep-curl sets with known repetition boundaries. Strokes follow a
// raised-cosine profile, so the palm-axis jerk is zero exactly at stroke
// starts and at the top of each curl.

#include "repforge/dataio.hpp"

#include <complex>
#include <numbers>
#include <random>

namespace repforge {

struct SynthSpec {
  SetId id{"S000", 10, 1};
  std::vector<int> rpe;  // one entry per rep
  double concentric_s = 1.0;
  double concentric_jitter_s = 0.2;  // uniform +/-
  double eccentric_s = 1.3;
  double slowdown_s_per_rpe = 0.15;
  double eccentric_jitter_s = 0.1;
  double break_min_s = 0.0;
  double break_max_s = 0.4;
  double lead_min_s = 0.8;
  double lead_max_s = 1.5;
  double tail_min_s = 0.8;
  double tail_max_s = 1.5;
  double accel_noise_g = 0.002;
  double gyro_noise_dps = 0.5;
  double emg_noise_mv = 0.005;
  double emg_rest_mv = 0.02;
  double emg_active_mv = 0.25;
  double emg_rpe_gain = 0.12;  // relative envelope increase per RPE unit
  double emg_rate_hz = kNominalEmgHz;
  double imu_rate_hz = kNominalImuHz;
  std::uint64_t seed = 1;

  void validate() const {
    require(!rpe.empty(), "synth: at least one rep required");
    for (int v : rpe) check_rpe(v, "synth " + id.str());
    require(concentric_s - concentric_jitter_s > 0 && eccentric_s - eccentric_jitter_s > 0,
            "synth: stroke durations must stay positive");
    require(break_min_s >= 0 && break_max_s >= break_min_s, "synth: bad break range");
    require(lead_min_s > 0 && lead_max_s >= lead_min_s, "synth: bad lead range");
    require(tail_min_s > 0 && tail_max_s >= tail_min_s, "synth: bad tail range");
    require(accel_noise_g >= 0 && gyro_noise_dps >= 0 && emg_noise_mv >= 0, "synth: negative noise");
    require(emg_rate_hz > 0 && imu_rate_hz > 0, "synth: rates must be positive");
  }
};

/// Ground truth in IMU sample indices. boundaries has reps + 1 entries; the
/// last is the final sample (the trailing rest belongs to the last rep).
struct SynthTruth {
  std::vector<std::size_t> boundaries;
  std::vector<std::size_t> midpoints;
  std::vector<std::size_t> concentric_samples;
  std::vector<std::size_t> eccentric_samples;
  std::vector<std::size_t> break_samples;
};

struct SynthSet {
  RawSet raw;
  SynthTruth truth;
};

namespace detail {

struct Stroke {
  std::size_t start;
  std::size_t concentric;
  std::size_t eccentric;
  int rpe;
};

/// Profile value p in [0, 1], dp/dt, and muscle activity at IMU-sample
/// position x (fractional).
struct ProfilePoint {
  double p = 0.0;
  double dp_dt = 0.0;
  double activity = 0.0;
  int rpe = 0;
};

/// `cursor` remembers the last stroke so monotone scans stay linear overall.
inline ProfilePoint profile_at(const std::vector<Stroke>& strokes, double x, double fs, std::size_t& cursor) {
  const double pi = std::numbers::pi;
  while (cursor + 1 < strokes.size() && x >= static_cast<double>(strokes[cursor + 1].start)) ++cursor;
  for (std::size_t k = cursor; k < strokes.size() && k <= cursor + 1; ++k) {
    const auto& s = strokes[k];
    const double a = static_cast<double>(s.start);
    const double m = a + static_cast<double>(s.concentric);
    const double e = m + static_cast<double>(s.eccentric);
    if (x >= a && x < m) {
      const double u = (x - a) / static_cast<double>(s.concentric);
      return {(1 - std::cos(pi * u)) / 2, pi / 2 * std::sin(pi * u) * fs / static_cast<double>(s.concentric),
              std::sin(pi * u), s.rpe};
    }
    if (x >= m && x < e) {
      const double u = (x - m) / static_cast<double>(s.eccentric);
      return {(1 + std::cos(pi * u)) / 2, -pi / 2 * std::sin(pi * u) * fs / static_cast<double>(s.eccentric),
              0.6 * std::sin(pi * u), s.rpe};
    }
  }
  return {};
}

}  // namespace detail

inline SynthSet generate_set(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto uniform = [&](double lo, double hi) {
    return hi > lo ? std::uniform_real_distribution<double>(lo, hi)(rng) : lo;
  };
  const double fs = spec.imu_rate_hz;
  auto samples = [&](double seconds) { return static_cast<std::size_t>(std::lround(seconds * fs)); };

  SynthSet out;
  std::vector<detail::Stroke> strokes;
  std::size_t pos = std::max<std::size_t>(1, samples(uniform(spec.lead_min_s, spec.lead_max_s)));
  for (std::size_t r = 0; r < spec.rpe.size(); ++r) {
    detail::Stroke s;
    s.start = pos;
    s.rpe = spec.rpe[r];
    s.concentric = samples(spec.concentric_s + uniform(-spec.concentric_jitter_s, spec.concentric_jitter_s));
    s.eccentric = samples(spec.eccentric_s + spec.slowdown_s_per_rpe * (s.rpe - 1) +
                          uniform(-spec.eccentric_jitter_s, spec.eccentric_jitter_s));
    const bool last = r + 1 == spec.rpe.size();
    const std::size_t brk = last ? std::max<std::size_t>(1, samples(uniform(spec.tail_min_s, spec.tail_max_s)))
                                 : samples(uniform(spec.break_min_s, spec.break_max_s));
    out.truth.boundaries.push_back(s.start);
    out.truth.midpoints.push_back(s.start + s.concentric);
    out.truth.concentric_samples.push_back(s.concentric);
    out.truth.eccentric_samples.push_back(s.eccentric);
    out.truth.break_samples.push_back(brk);
    pos = s.start + s.concentric + s.eccentric + brk;
    strokes.push_back(s);
  }
  const std::size_t n = pos;
  out.truth.boundaries.push_back(n - 1);

  RawSet& raw = out.raw;
  raw.id = spec.id;
  raw.rpe = spec.rpe;
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double rad_to_deg = 180.0 / std::numbers::pi;
  const double sweep = 2.2;  // forearm rotation over a full curl, rad

  raw.accel.t.resize(n);
  for (auto& ax : raw.accel.axis) ax.resize(n);
  for (auto& ax : raw.gyro.axis) ax.resize(n);
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < n; ++i) {
    raw.accel.t[i] = static_cast<double>(i) / fs;
    const auto pt = detail::profile_at(strokes, static_cast<double>(i), fs, cursor);
    const double theta = sweep * pt.p;
    const double omega = sweep * pt.dp_dt;
    raw.accel.axis[0][i] = -0.1 + 0.9 * pt.p + spec.accel_noise_g * gauss(rng);
    raw.accel.axis[1][i] = 0.3 * std::sin(std::numbers::pi * pt.p) + spec.accel_noise_g * gauss(rng);
    raw.accel.axis[2][i] = -0.9 * std::cos(theta) + spec.accel_noise_g * gauss(rng);
    raw.gyro.axis[0][i] = omega * rad_to_deg + spec.gyro_noise_dps * gauss(rng);
    raw.gyro.axis[1][i] = 0.15 * omega * rad_to_deg * std::cos(theta) + spec.gyro_noise_dps * gauss(rng);
    raw.gyro.axis[2][i] = 0.08 * omega * rad_to_deg + spec.gyro_noise_dps * gauss(rng);
  }
  raw.gyro.t = raw.accel.t;

  // EMG: amplitude-modulated sum of sinusoids in the 30-120 Hz band.
  constexpr std::size_t kTones = 12;
  std::array<double, kTones> freq{};
  std::array<double, kTones> phase{};
  for (std::size_t k = 0; k < kTones; ++k) {
    freq[k] = uniform(30.0, 120.0);
    phase[k] = uniform(0.0, 2.0 * std::numbers::pi);
  }
  const double carrier_scale = std::sqrt(2.0 / kTones);
  const double t_end = raw.accel.t.back();
  const auto m = static_cast<std::size_t>(std::ceil(t_end * spec.emg_rate_hz)) + 1;
  raw.emg.t.resize(m);
  raw.emg.value.resize(m);
  // phasor recurrences; re-anchored periodically to bound drift
  std::array<std::complex<double>, kTones> rot{};
  std::array<std::complex<double>, kTones> z{};
  for (std::size_t k = 0; k < kTones; ++k) rot[k] = std::polar(1.0, 2.0 * std::numbers::pi * freq[k] / spec.emg_rate_hz);
  cursor = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double t = static_cast<double>(i) / spec.emg_rate_hz;
    if (i % 4096 == 0) {
      for (std::size_t k = 0; k < kTones; ++k) z[k] = std::polar(1.0, 2.0 * std::numbers::pi * freq[k] * t + phase[k]);
    }
    raw.emg.t[i] = t;
    const auto pt = detail::profile_at(strokes, t * fs, fs, cursor);
    const double envelope =
        spec.emg_rest_mv + spec.emg_active_mv * (1.0 + spec.emg_rpe_gain * (pt.rpe - 1)) * pt.activity;
    double carrier = 0.0;
    for (std::size_t k = 0; k < kTones; ++k) {
      carrier += z[k].imag();
      z[k] *= rot[k];
    }
    raw.emg.value[i] = envelope * carrier_scale * carrier + spec.emg_noise_mv * gauss(rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// corpora
// ---------------------------------------------------------------------------

/// Distribution over sets. Every spread can be zeroed for identical sets.
struct CorpusSpec {
  SynthSpec base;
  int participants = 8;
  int reps_min = 6;
  int reps_max = 23;
  std::vector<int> weights{5, 10, 15};
  double rpe_start_mean = 5.0;       // at 10 kg
  double rpe_per_kg = 0.25;          // shift of the starting RPE per kg
  double rpe_start_sd = 1.0;
  double rpe_rise_min = 1.0;          // RPE gained over a set
  double rpe_rise_max = 3.0;
  double rpe_rep_sd = 0.5;
  std::vector<double> accel_noise_levels;  // per-set choice; empty: base value

  static CorpusSpec from_config(const Config& cfg) {
    CorpusSpec c;
    c.participants = static_cast<int>(cfg.get_int("synth.participants", c.participants));
    c.reps_min = static_cast<int>(cfg.get_int("synth.reps_min", c.reps_min));
    c.reps_max = static_cast<int>(cfg.get_int("synth.reps_max", c.reps_max));
    c.rpe_start_mean = cfg.get_double("synth.rpe_start_mean", c.rpe_start_mean);
    c.rpe_start_sd = cfg.get_double("synth.rpe_start_sd", c.rpe_start_sd);
    c.rpe_rise_min = cfg.get_double("synth.rpe_rise_min", c.rpe_rise_min);
    c.rpe_rise_max = cfg.get_double("synth.rpe_rise_max", c.rpe_rise_max);
    c.rpe_rep_sd = cfg.get_double("synth.rpe_rep_sd", c.rpe_rep_sd);
    SynthSpec& b = c.base;
    b.concentric_s = cfg.get_double("synth.concentric_s", b.concentric_s);
    b.concentric_jitter_s = cfg.get_double("synth.concentric_jitter_s", b.concentric_jitter_s);
    b.eccentric_s = cfg.get_double("synth.eccentric_s", b.eccentric_s);
    b.slowdown_s_per_rpe = cfg.get_double("synth.slowdown_s_per_rpe", b.slowdown_s_per_rpe);
    b.eccentric_jitter_s = cfg.get_double("synth.eccentric_jitter_s", b.eccentric_jitter_s);
    b.break_min_s = cfg.get_double("synth.break_min_s", b.break_min_s);
    b.break_max_s = cfg.get_double("synth.break_max_s", b.break_max_s);
    b.tail_min_s = cfg.get_double("synth.tail_min_s", b.tail_min_s);
    b.tail_max_s = cfg.get_double("synth.tail_max_s", b.tail_max_s);
    b.accel_noise_g = cfg.get_double("synth.accel_noise_g", b.accel_noise_g);
    b.gyro_noise_dps = cfg.get_double("synth.gyro_noise_dps", b.gyro_noise_dps);
    b.emg_noise_mv = cfg.get_double("synth.emg_noise_mv", b.emg_noise_mv);
    b.emg_rpe_gain = cfg.get_double("synth.emg_rpe_gain", b.emg_rpe_gain);
    require(c.reps_min >= 1 && c.reps_max >= c.reps_min, "synth: bad reps range");
    require(c.participants >= 1, "synth: participants must be >= 1");
    return c;
  }
};

inline std::string participant_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%c%03d", 'A' + index % 26, 101 + index);
  return buf;
}

inline std::vector<SynthSet> generate_corpus(int n_sets, const CorpusSpec& cs, std::uint64_t seed) {
  require(n_sets >= 1, "generate_corpus: n_sets must be >= 1");
  require(!cs.weights.empty(), "generate_corpus: no weights");
  std::vector<SynthSet> corpus;
  std::vector<int> set_counter(static_cast<std::size_t>(cs.participants), 0);
  for (int k = 0; k < n_sets; ++k) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    auto uniform = [&](double lo, double hi) {
      return hi > lo ? std::uniform_real_distribution<double>(lo, hi)(rng) : lo;
    };
    auto normal = [&](double mu, double sd) { return sd > 0 ? std::normal_distribution<double>(mu, sd)(rng) : mu; };

    SynthSpec spec = cs.base;
    const int user = k % cs.participants;
    const int weight = cs.weights[static_cast<std::size_t>((k / cs.participants) % static_cast<int>(cs.weights.size()))];
    spec.id = SetId{participant_id(user), weight, ++set_counter[static_cast<std::size_t>(user)]};
    const int reps = cs.reps_max > cs.reps_min
                         ? std::uniform_int_distribution<int>(cs.reps_min, cs.reps_max)(rng)
                         : cs.reps_min;
    const double start = normal(cs.rpe_start_mean + cs.rpe_per_kg * (weight - 10), cs.rpe_start_sd);
    const double rise = uniform(cs.rpe_rise_min, cs.rpe_rise_max);
    spec.rpe.clear();
    for (int r = 0; r < reps; ++r) {
      const double frac = reps > 1 ? static_cast<double>(r) / (reps - 1) : 0.0;
      const double v = normal(start + rise * frac, cs.rpe_rep_sd);
      spec.rpe.push_back(std::clamp(static_cast<int>(std::lround(v)), kMinRpe, kMaxRpe));
    }
    if (!cs.accel_noise_levels.empty()) {
      spec.accel_noise_g = cs.accel_noise_levels[static_cast<std::size_t>(k) % cs.accel_noise_levels.size()];
    }
    spec.seed = derive_seed(seed, "set/" + std::to_string(k));
    corpus.push_back(generate_set(spec));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// on-disk form
// ---------------------------------------------------------------------------

/// `set_id,n_reps,indices`: each row lists n_reps + 1 boundaries, then n_reps
/// midpoints.
inline std::string format_truth(const std::vector<SynthSet>& corpus, const std::string& comment = "") {
  std::string out = comment_line(comment) + "set_id,n_reps,indices\n";
  for (const auto& s : corpus) {
    out += s.raw.id.str() + "," + std::to_string(s.truth.midpoints.size());
    for (auto b : s.truth.boundaries) out += "," + std::to_string(b);
    for (auto m : s.truth.midpoints) out += "," + std::to_string(m);
    out += "\n";
  }
  return out;
}

inline std::map<std::string, SynthTruth> read_truth(const std::string& path) {
  const CsvTable csv = read_csv(path);
  std::map<std::string, SynthTruth> out;
  for (const auto& row : csv.rows) {
    if (row.size() < 2) throw ParseError(path + ": short truth row");
    const auto reps = parse_int(row[1]);
    if (!reps || *reps < 0 || row.size() != static_cast<std::size_t>(2 + 2 * *reps + 1)) {
      throw ParseError(path + ": malformed truth row for " + row[0]);
    }
    SynthTruth t;
    for (std::size_t c = 2; c < row.size(); ++c) {
      auto v = parse_int(row[c]);
      if (!v || *v < 0) throw ParseError(path + ": bad index in truth row " + row[0]);
      (c < static_cast<std::size_t>(3 + *reps) ? t.boundaries : t.midpoints).push_back(static_cast<std::size_t>(*v));
    }
    out[row[0]] = std::move(t);
  }
  return out;
}

/// Writes raw CSVs, the RPE table, the truth sidecar and a column-map config
/// that the rest of the pipeline can read unmodified.
inline void write_corpus(const std::vector<SynthSet>& corpus, const std::string& dir, const std::string& comment = "") {
  namespace fs = std::filesystem;
  DataLayout layout;
  layout.dir = dir;
  std::vector<std::pair<SetId, std::vector<int>>> rpe_rows;
  for (const auto& s : corpus) {
    write_set_csv(s.raw, layout.emg_path(s.raw.id), layout.imu_path(s.raw.id), comment);
    rpe_rows.emplace_back(s.raw.id, s.raw.rpe);
  }
  write_rpe_table(layout.rpe_path(), rpe_rows, comment);
  write_text_file_atomic((fs::path(dir) / "truth.csv").string(), format_truth(corpus, comment));
  write_text_file_atomic((fs::path(dir) / "columns.cfg").string(),
                         comment_line(comment) + "# column map for a synthetic corpus\n"
                         "data.dir = " + dir + "\n"
                         "columns.emg_time = t_s\ncolumns.imu_time = t_s\n"
                         "rate.emg_hz = 2148.1\nrate.imu_hz = 370.4\n"
                         "palm.axis = 0\npalm.sign = 1\n");
}

}  // namespace repforge

#endif  // REPFORGE_SYNTH_HPP
