#ifndef REPFORGE_SEGMENTATION_HPP
#define REPFORGE_SEGMENTATION_HPP

#include "repforge/dsp.hpp"

namespace repforge {

/// Central difference scaled by fs; one-sided at the ends.
inline std::vector<double> jerk(std::span<const double> accel, double fs) {
  require(accel.size() >= 2, "jerk needs at least 2 samples");
  require(fs > 0, "jerk: sampling rate must be positive");
  const std::size_t n = accel.size();
  std::vector<double> j(n);
  j[0] = (accel[1] - accel[0]) * fs;
  j[n - 1] = (accel[n - 1] - accel[n - 2]) * fs;
  for (std::size_t i = 1; i + 1 < n; ++i) j[i] = (accel[i + 1] - accel[i - 1]) * fs / 2.0;
  return j;
}

// ---------------------------------------------------------------------------
// zero crossings
// ---------------------------------------------------------------------------

struct CrossingOptions {
  /// Samples with |j| below this fraction of max|j| carry no sign.
  double deadband_frac = 0.01;
  /// A signed lobe counts only if its peak reaches this fraction of max|j|.
  /// Zero keeps every lobe.
  double significance_frac = 0.1;
};

struct Crossing {
  std::size_t index = 0;  // first sample of the new sign
  int sign = 0;           // sign entered at the crossing
};

struct Boundaries {
  std::vector<Crossing> crossings;  // retained, in time order
  std::vector<std::size_t> boundaries;
  std::vector<std::size_t> midpoints;
};

namespace detail {

struct Lobe {
  int sign;
  std::size_t start;
  std::size_t end;
  double peak;
};

inline void merge_same_sign(std::vector<Lobe>& lobes) {
  std::vector<Lobe> out;
  for (const auto& l : lobes) {
    if (!out.empty() && out.back().sign == l.sign) {
      out.back().end = l.end;
      out.back().peak = std::max(out.back().peak, l.peak);
    } else {
      out.push_back(l);
    }
  }
  lobes = std::move(out);
}

}  // namespace detail

/// Sign changes of the jerk outside a deadband, thinned so retained
/// crossings are at least min_gap_s apart. The first retained crossing opens
/// rep 1; boundaries and midpoints then alternate.
inline Boundaries find_boundaries(std::span<const double> j, double fs, double min_gap_s,
                                  const CrossingOptions& opt = {}) {
  require(min_gap_s > 0, "min_gap_s must be positive");
  require(fs > 0, "find_boundaries: sampling rate must be positive");
  double peak = 0.0;
  for (double v : j) peak = std::max(peak, std::abs(v));
  const double eps = opt.deadband_frac * peak;

  std::vector<detail::Lobe> lobes;
  for (std::size_t i = 0; i < j.size();) {
    if (!(std::abs(j[i]) > eps)) {
      ++i;
      continue;
    }
    const int s = j[i] > 0 ? 1 : -1;
    detail::Lobe lobe{s, i, i, 0.0};
    while (i < j.size() && std::abs(j[i]) > eps && (j[i] > 0 ? 1 : -1) == s) {
      lobe.peak = std::max(lobe.peak, std::abs(j[i]));
      lobe.end = i++;
    }
    lobes.push_back(lobe);
  }
  // drop weak lobes before merging so a stray blip cannot pull a crossing early
  std::erase_if(lobes, [&](const detail::Lobe& l) { return l.peak < opt.significance_frac * peak; });
  detail::merge_same_sign(lobes);
  // a sign already present at the first sample was never entered
  if (!lobes.empty() && lobes.front().start == 0) lobes.erase(lobes.begin());

  const double gap = min_gap_s * fs;
  std::vector<detail::Lobe> kept;
  for (const auto& l : lobes) {
    if (!kept.empty() && static_cast<double>(l.start - kept.back().start) < gap) {
      kept.back().end = l.end;
      kept.back().peak = std::max(kept.back().peak, l.peak);
      continue;
    }
    kept.push_back(l);
  }
  detail::merge_same_sign(kept);
  if (kept.empty()) throw ValidationError("find_boundaries: no zero crossings found");

  Boundaries out;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    out.crossings.push_back({kept[k].start, kept[k].sign});
    (k % 2 == 0 ? out.boundaries : out.midpoints).push_back(kept[k].start);
  }
  return out;
}

// ---------------------------------------------------------------------------
// repetitions
// ---------------------------------------------------------------------------

struct RepSegment {
  std::string rep_id;
  std::size_t rep_index = 0;  // 1-based
  std::size_t start_idx = 0;
  std::size_t mid_idx = 0;
  std::size_t end_idx = 0;
  int rpe = 0;
};

/// Read-only window of an aligned set covering [start_idx, end_idx].
class RepView {
 public:
  RepView(const AlignedSet& set, const RepSegment& rep) : set_(&set), rep_(&rep) {
    require(rep.start_idx < rep.mid_idx && rep.mid_idx < rep.end_idx && rep.end_idx < set.size(),
            "rep " + rep.rep_id + " has invalid indices");
  }

  const RepSegment& rep() const { return *rep_; }
  double fs() const { return set_->fs; }
  std::size_t size() const { return rep_->end_idx - rep_->start_idx + 1; }
  std::size_t mid_offset() const { return rep_->mid_idx - rep_->start_idx; }

  std::span<const double> emg() const { return window(set_->emg); }
  std::span<const double> accel(int axis) const { return window(set_->accel[static_cast<std::size_t>(axis)]); }
  std::span<const double> gyro(int axis) const { return window(set_->gyro[static_cast<std::size_t>(axis)]); }

 private:
  std::span<const double> window(const std::vector<double>& v) const {
    return std::span<const double>(v).subspan(rep_->start_idx, size());
  }

  const AlignedSet* set_;
  const RepSegment* rep_;
};

struct SegmentParams {
  double min_gap_s = 0.5;
  CrossingOptions crossing;
  /// Zero-phase low-pass applied to the palm axis before differentiating
  /// for crossing detection.
  double coarse_cutoff_hz = 3.0;
  int coarse_order = 4;
  /// Local vertex refinement: fit half-width, search radius, longest rest
  /// modelled before a stroke start, passes.
  double refine_half_s = 0.3;
  double refine_search_s = 0.12;
  double refine_plateau_s = 0.5;
  int refine_passes = 2;

  static SegmentParams from_config(const Config& cfg) {
    SegmentParams p;
    p.min_gap_s = cfg.get_double("segment.min_gap_s", p.min_gap_s);
    p.crossing.deadband_frac = cfg.get_double("segment.deadband_frac", p.crossing.deadband_frac);
    p.crossing.significance_frac = cfg.get_double("segment.significance_frac", p.crossing.significance_frac);
    p.coarse_cutoff_hz = cfg.get_double("segment.coarse_cutoff_hz", p.coarse_cutoff_hz);
    p.refine_half_s = cfg.get_double("segment.refine_half_s", p.refine_half_s);
    p.refine_search_s = cfg.get_double("segment.refine_search_s", p.refine_search_s);
    p.refine_plateau_s = cfg.get_double("segment.refine_plateau_s", p.refine_plateau_s);
    p.refine_passes = static_cast<int>(cfg.get_int("segment.refine_passes", p.refine_passes));
    return p;
  }
};

/// Reported when detected midpoints disagree with the annotation count.
class SegmentationMismatch : public Error {
 public:
  SegmentationMismatch(const std::string& set_id, std::size_t detected, std::size_t annotated)
      : Error(set_id + ": detected " + std::to_string(detected) + " repetitions, annotated " +
              std::to_string(annotated) + " (count mismatch " + std::to_string(detected) +
              "!=" + std::to_string(annotated) + ")"),
        detected_(detected),
        annotated_(annotated) {}

  std::size_t detected() const { return detected_; }
  std::size_t annotated() const { return annotated_; }

 private:
  std::size_t detected_;
  std::size_t annotated_;
};

/// Sample index of the acceleration extremum near `coarse`: least-squares fit
/// of a piecewise even polynomial with zero slope (so zero jerk) at the
/// candidate vertex and independent shape on either side. `window` is the
/// centered moving-average length already applied to `a`; the model is
/// smoothed the same way so the fit stays unbiased at plateau edges. With
/// `max_plateau_s` > 0 the left branch may end up to that long before the
/// vertex, leaving a flat stretch between (a rest before a stroke).
/// `reach_s` extends the search and the fitted span to the right.
inline std::size_t refine_vertex(std::span<const double> a, std::size_t coarse, double fs, std::size_t lo_limit,
                                 std::size_t hi_limit, double half_s, double search_s, int window = 1,
                                 double max_plateau_s = 0.0, double reach_s = 0.0) {
  require(window >= 1 && window % 2 == 1, "refine_vertex: window must be odd");
  require(max_plateau_s >= 0, "refine_vertex: plateau length must be non-negative");
  using Idx = std::ptrdiff_t;
  const auto h = static_cast<Idx>(std::lround(half_s * fs));
  const auto s = static_cast<Idx>(std::lround(search_s * fs));
  const auto c = static_cast<Idx>(coarse);
  const auto reach = static_cast<Idx>(std::lround(std::max(reach_s, 0.0) * fs));
  const Idx lo = std::max<Idx>(static_cast<Idx>(lo_limit), c - h);
  const Idx hi = std::min<Idx>(static_cast<Idx>(hi_limit), c + h + reach);
  if (hi - lo < 8) return coarse;
  const Idx t_lo = std::max(lo + 2, c - s);
  const Idx t_hi = std::min(hi - 2, c + s + reach);
  if (t_hi < t_lo) return coarse;
  const Idx half_w = window / 2;
  const Idx e_lo = std::max(t_lo - static_cast<Idx>(std::lround(max_plateau_s * fs)), lo - half_w - 1);

  // One-sided smoothed basis q(r) = avg_j [d^2, d^4] 1{d > 0}, d = (r + j) / fs.
  // The right branch is q(k - t0); by symmetry the left branch is q(e - k).
  using V2 = Eigen::Vector2d;
  const Idx r_min = -half_w - 1;
  const Idx r_max = std::max(hi - t_lo, t_hi - lo) + 1;
  std::vector<V2> q(static_cast<std::size_t>(r_max - r_min + 1), V2::Zero());
  for (Idx r = r_min; r <= r_max; ++r) {
    V2 acc = V2::Zero();
    for (Idx j = -half_w; j <= half_w; ++j) {
      if (r + j <= 0) continue;
      const double d2 = std::pow(static_cast<double>(r + j) / fs, 2);
      acc += V2(d2, d2 * d2);
    }
    q[static_cast<std::size_t>(r - r_min)] = acc / static_cast<double>(window);
  }
  auto basis = [&](Idx r) -> const V2& {
    static const V2 zero = V2::Zero();
    return r < r_min ? zero : q[static_cast<std::size_t>(r - r_min)];
  };

  struct Side {
    V2 sum = V2::Zero();
    Eigen::Matrix2d outer = Eigen::Matrix2d::Zero();
    V2 dot_y = V2::Zero();
  };
  auto side_sums = [&](Idx from, Idx to, auto&& offset) {
    std::vector<Side> out(static_cast<std::size_t>(to - from + 1));
    for (Idx v = from; v <= to; ++v) {
      Side& sd = out[static_cast<std::size_t>(v - from)];
      for (Idx k = lo; k <= hi; ++k) {
        const V2& b = basis(offset(k, v));
        if (b.isZero(0.0)) continue;
        const double y = a[static_cast<std::size_t>(k)];
        sd.sum += b;
        sd.outer += b * b.transpose();
        sd.dot_y += b * y;
      }
    }
    return out;
  };
  const auto right = side_sums(t_lo, t_hi, [](Idx k, Idx t0) { return k - t0; });
  const auto left = side_sums(e_lo, t_hi, [](Idx k, Idx e) { return e - k; });

  double sy = 0.0;
  double yy = 0.0;
  for (Idx k = lo; k <= hi; ++k) {
    const double y = a[static_cast<std::size_t>(k)];
    sy += y;
    yy += y * y;
  }

  using M5 = Eigen::Matrix<double, 5, 5>;
  using V5 = Eigen::Matrix<double, 5, 1>;
  double best_sse = std::numeric_limits<double>::infinity();
  Idx best = c;
  for (Idx t0 = t_lo; t0 <= t_hi; ++t0) {
    const Side& R = right[static_cast<std::size_t>(t0 - t_lo)];
    for (Idx e = t0; e >= std::max(e_lo, t0 - static_cast<Idx>(std::lround(max_plateau_s * fs))); --e) {
      const Side& L = left[static_cast<std::size_t>(e - e_lo)];
      // both branches are nonzero on a row only within the smoothing window
      Eigen::Matrix2d cross = Eigen::Matrix2d::Zero();
      for (Idx k = std::max(lo, t0 - half_w); k <= std::min(hi, e + half_w); ++k) {
        cross += basis(e - k) * basis(k - t0).transpose();
      }
      M5 gram;
      gram(0, 0) = static_cast<double>(hi - lo + 1);
      gram.block<1, 2>(0, 1) = L.sum.transpose();
      gram.block<1, 2>(0, 3) = R.sum.transpose();
      gram.block<2, 1>(1, 0) = L.sum;
      gram.block<2, 1>(3, 0) = R.sum;
      gram.block<2, 2>(1, 1) = L.outer;
      gram.block<2, 2>(3, 3) = R.outer;
      gram.block<2, 2>(1, 3) = cross;
      gram.block<2, 2>(3, 1) = cross.transpose();
      V5 rhs;
      rhs << sy, L.dot_y, R.dot_y;
      gram.diagonal().array() += 1e-12 * gram.diagonal().maxCoeff();
      const V5 coef = gram.ldlt().solve(rhs);
      const double sse = yy - 2.0 * coef.dot(rhs) + coef.dot(gram * coef);
      if (sse < best_sse) {
        best_sse = sse;
        best = t0;
      }
    }
  }
  return static_cast<std::size_t>(best);
}

/// Boundary and midpoint indices detected in a set, before any check against
/// the annotations. boundaries has one more entry than midpoints: the last
/// is the terminal sample (the trailing break belongs to the last rep).
struct DetectedReps {
  std::vector<std::size_t> boundaries;
  std::vector<std::size_t> midpoints;

  std::size_t count() const { return midpoints.size(); }
};

inline DetectedReps detect_reps(const AlignedSet& set, const PalmAxisConfig& palm, const SegmentParams& p = {}) {
  palm.validate();
  const std::size_t n = set.size();
  require(n >= 8, set.id.str() + ": too few samples to segment");
  std::vector<double> a(set.accel[static_cast<std::size_t>(palm.axis_index)]);
  for (double& v : a) v *= palm.sign;

  const double cutoff = std::min(p.coarse_cutoff_hz, 0.45 * set.fs);
  const auto smooth = butterworth_lowpass(a, set.fs, cutoff, p.coarse_order);
  const auto [lo_it, hi_it] = std::minmax_element(smooth.begin(), smooth.end());
  double scale = 1.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  if (*hi_it - *lo_it <= 1e-9 * scale) return DetectedReps{{n - 1}, {}};  // flat palm axis: nothing to count
  Boundaries found;
  try {
    found = find_boundaries(jerk(smooth, set.fs), set.fs, p.min_gap_s, p.crossing);
  } catch (const ValidationError&) {
    return DetectedReps{{n - 1}, {}};  // flat palm axis: nothing to count
  }

  // Extended-arm plateau: the level the set starts from. Crossings nearer
  // to it than to the far extreme are boundaries.
  const std::size_t first = found.crossings.front().index;
  std::vector<double> lead(smooth.begin(), smooth.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(first, 1)));
  const double rest = median_of(lead);
  double extreme = rest;
  for (double v : smooth) {
    if (std::abs(v - rest) > std::abs(extreme - rest)) extreme = v;
  }

  std::vector<std::pair<std::size_t, bool>> marks;  // (index, is_boundary)
  for (std::size_t k = 0; k < found.crossings.size(); ++k) {
    const double v = smooth[found.crossings[k].index];
    const bool boundary = k == 0 || std::abs(v - rest) <= std::abs(v - extreme);
    marks.emplace_back(found.crossings[k].index, boundary);
  }

  // Assemble B M B M ...: a later boundary before any midpoint replaces the
  // pending start; surplus midpoints are ignored.
  DetectedReps coarse;
  std::optional<std::size_t> start;
  std::optional<std::size_t> mid;
  for (const auto& [idx, boundary] : marks) {
    if (boundary) {
      if (start && mid) {
        coarse.boundaries.push_back(*start);
        coarse.midpoints.push_back(*mid);
        mid.reset();
      }
      start = idx;
    } else if (start && !mid) {
      mid = idx;
    }
  }
  if (start && mid) {
    coarse.boundaries.push_back(*start);
    coarse.midpoints.push_back(*mid);
  }
  if (coarse.midpoints.empty()) {
    coarse.boundaries = {n - 1};
    return coarse;
  }

  // Refine every crossing on the aligned (unfiltered) axis, confined halfway
  // to its neighbours.
  std::vector<std::size_t> pts;
  for (std::size_t r = 0; r < coarse.midpoints.size(); ++r) {
    pts.push_back(coarse.boundaries[r]);
    pts.push_back(coarse.midpoints[r]);
  }
  std::vector<std::size_t> refined = pts;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const std::size_t lo = k == 0 ? 0 : (pts[k - 1] + pts[k]) / 2 + 1;
    const std::size_t hi = k + 1 == pts.size() ? n - 1 : (pts[k] + pts[k + 1]) / 2;
    auto fit = [&](std::size_t at, double search, double plateau, double reach = 0.0) {
      return refine_vertex(a, at, set.fs, lo, hi, p.refine_half_s, search, set.smooth_window, plateau, reach);
    };
    if (k % 2 == 1) {
      for (int pass = 0; pass < p.refine_passes; ++pass) {
        refined[k] = fit(refined[k], pass == 0 ? p.refine_search_s : std::min(p.refine_search_s, 0.03), 0.0);
      }
      continue;
    }
    // A rest has a vertex at each end and the stroke starts at the right
    // one. The coarse crossing sits mid-rest, so the first pass looks right
    // across a whole rest with the plateau in the model.
    for (int pass = 0; pass < p.refine_passes; ++pass) {
      refined[k] = pass == 0 ? fit(refined[k], p.refine_search_s, p.refine_plateau_s, p.refine_plateau_s)
                             : fit(refined[k], std::min(p.refine_search_s, 0.03), p.refine_plateau_s);
    }
  }
  bool ordered = refined.front() > 0 || pts.front() == 0;
  for (std::size_t k = 1; k < refined.size(); ++k) ordered = ordered && refined[k] > refined[k - 1];
  ordered = ordered && refined.back() < n - 1;
  if (!ordered) refined = pts;

  DetectedReps out;
  for (std::size_t r = 0; r < coarse.midpoints.size(); ++r) {
    out.boundaries.push_back(refined[2 * r]);
    out.midpoints.push_back(refined[2 * r + 1]);
  }
  out.boundaries.push_back(n - 1);
  return out;
}

/// Splits a set into reps and attaches the annotations in order. Throws
/// SegmentationMismatch when the detected count differs from the annotations.
inline std::vector<RepSegment> segment_set(const AlignedSet& set, const PalmAxisConfig& palm,
                                           const SegmentParams& p = {}) {
  require(!set.rpe.empty(), set.id.str() + ": no annotations to segment against");
  const DetectedReps found = detect_reps(set, palm, p);
  if (found.count() != set.rpe.size()) throw SegmentationMismatch(set.id.str(), found.count(), set.rpe.size());
  std::vector<RepSegment> reps;
  for (std::size_t r = 0; r < found.count(); ++r) {
    RepSegment rep;
    rep.rep_index = r + 1;
    rep.rep_id = make_rep_id(set.id, r + 1);
    rep.start_idx = found.boundaries[r];
    rep.mid_idx = found.midpoints[r];
    rep.end_idx = found.boundaries[r + 1];
    rep.rpe = set.rpe[r];
    reps.push_back(rep);
  }
  return reps;
}

}  // namespace repforge

#endif  // REPFORGE_SEGMENTATION_HPP
