#ifndef REPFORGE_EVALUATION_HPP
#define REPFORGE_EVALUATION_HPP

// Metrics, fold plans, random hyperparameter search, EMG-impact differencing
// and correlation.

#include <repforge/core.hpp>

#include <array>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace repforge {

inline constexpr int kNumClasses = 10;  // RPE 1..10

using Confusion = std::array<std::array<long, kNumClasses>, kNumClasses>;  // [true-1][pred-1]

struct MetricBundle {
  std::size_t n = 0;
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
  double exact_accuracy = 0.0;
  double pm1_accuracy = 0.0;
  double precision_macro = 0.0;
  double recall_macro = 0.0;
  double f1_macro = 0.0;
  double precision_weighted = 0.0;
  double recall_weighted = 0.0;
  double f1_weighted = 0.0;
  Confusion confusion{};
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {
      "mae",          "mse",          "rmse",     "r2",
      "exact_accuracy", "pm1_accuracy", "precision_macro", "recall_macro",
      "f1_macro",     "precision_weighted", "recall_weighted", "f1_weighted"};
  return names;
}

inline double metric_value(const MetricBundle& m, const std::string& name) {
  if (name == "mae") return m.mae;
  if (name == "mse") return m.mse;
  if (name == "rmse") return m.rmse;
  if (name == "r2") return m.r2;
  if (name == "exact_accuracy") return m.exact_accuracy;
  if (name == "pm1_accuracy") return m.pm1_accuracy;
  if (name == "precision_macro") return m.precision_macro;
  if (name == "recall_macro") return m.recall_macro;
  if (name == "f1_macro") return m.f1_macro;
  if (name == "precision_weighted") return m.precision_weighted;
  if (name == "recall_weighted") return m.recall_weighted;
  if (name == "f1_weighted") return m.f1_weighted;
  throw ValidationError("unknown metric '" + name + "'");
}

inline void set_metric(MetricBundle& m, const std::string& name, double v) {
  if (name == "mae") m.mae = v;
  else if (name == "mse") m.mse = v;
  else if (name == "rmse") m.rmse = v;
  else if (name == "r2") m.r2 = v;
  else if (name == "exact_accuracy") m.exact_accuracy = v;
  else if (name == "pm1_accuracy") m.pm1_accuracy = v;
  else if (name == "precision_macro") m.precision_macro = v;
  else if (name == "recall_macro") m.recall_macro = v;
  else if (name == "f1_macro") m.f1_macro = v;
  else if (name == "precision_weighted") m.precision_weighted = v;
  else if (name == "recall_weighted") m.recall_weighted = v;
  else if (name == "f1_weighted") m.f1_weighted = v;
  else throw ValidationError("unknown metric '" + name + "'");
}

/// R^2 = 1 - SSres/SStot; a constant target scores 1 when matched exactly,
/// else 0.
inline double r2_score(const std::vector<double>& y, const std::vector<double>& yhat) {
  const double m = mean_of(y);
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    ss_tot += (y[i] - m) * (y[i] - m);
  }
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

namespace detail {

inline void check_label(int v, const char* what) {
  if (v < 1 || v > kNumClasses) {
    throw ValidationError(std::string(what) + " label " + std::to_string(v) + " outside 1.." +
                          std::to_string(kNumClasses));
  }
}

/// Precision/recall/F1 over classes present in y; zero denominators give 0.
inline void fill_class_scores(MetricBundle& m, const std::vector<int>& y, const std::vector<int>& yhat) {
  for (auto& row : m.confusion) row.fill(0);
  for (std::size_t i = 0; i < y.size(); ++i) ++m.confusion[static_cast<std::size_t>(y[i] - 1)][static_cast<std::size_t>(yhat[i] - 1)];
  double n_present = 0.0;
  double total = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    long support = 0;
    long predicted = 0;
    for (std::size_t j = 0; j < kNumClasses; ++j) {
      support += m.confusion[c][j];
      predicted += m.confusion[j][c];
    }
    if (support == 0) continue;
    const double tp = static_cast<double>(m.confusion[c][c]);
    const double prec = predicted > 0 ? tp / static_cast<double>(predicted) : 0.0;
    const double rec = tp / static_cast<double>(support);
    const double f1 = prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    const auto w = static_cast<double>(support);
    m.precision_macro += prec;
    m.recall_macro += rec;
    m.f1_macro += f1;
    m.precision_weighted += w * prec;
    m.recall_weighted += w * rec;
    m.f1_weighted += w * f1;
    n_present += 1.0;
    total += w;
  }
  m.precision_macro /= n_present;
  m.recall_macro /= n_present;
  m.f1_macro /= n_present;
  m.precision_weighted /= total;
  m.recall_weighted /= total;
  m.f1_weighted /= total;
}

inline void fill_errors(MetricBundle& m, const std::vector<int>& y, const std::vector<double>& yhat) {
  std::vector<double> yd(y.begin(), y.end());
  double ae = 0.0;
  double se = 0.0;
  std::size_t hit1 = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = yhat[i] - yd[i];
    ae += std::abs(d);
    se += d * d;
    if (std::abs(d) <= 1.0) ++hit1;
  }
  const auto n = static_cast<double>(y.size());
  m.mae = ae / n;
  m.mse = se / n;
  m.rmse = std::sqrt(m.mse);
  m.r2 = r2_score(yd, yhat);
  m.pm1_accuracy = static_cast<double>(hit1) / n;
}

}  // namespace detail

inline MetricBundle classification_metrics(const std::vector<int>& y, const std::vector<int>& yhat) {
  require(!y.empty(), "classification_metrics: empty input");
  require(y.size() == yhat.size(), "classification_metrics: length mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) {
    detail::check_label(y[i], "true");
    detail::check_label(yhat[i], "predicted");
  }
  MetricBundle m;
  m.n = y.size();
  detail::fill_errors(m, y, std::vector<double>(yhat.begin(), yhat.end()));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += y[i] == yhat[i];
  m.exact_accuracy = static_cast<double>(hit) / static_cast<double>(y.size());
  detail::fill_class_scores(m, y, yhat);
  return m;
}

inline int round_clamp(double v) {
  return static_cast<int>(std::clamp<long>(std::lround(v), 1, kNumClasses));
}

/// Error metrics and +-1 accuracy on the raw outputs; exact accuracy and the
/// class scores on outputs rounded to the nearest integer and clamped to 1..10.
inline MetricBundle regression_metrics(const std::vector<int>& y, const std::vector<double>& yhat) {
  require(!y.empty(), "regression_metrics: empty input");
  require(y.size() == yhat.size(), "regression_metrics: length mismatch");
  for (int v : y) detail::check_label(v, "true");
  for (double v : yhat) require(std::isfinite(v), "regression_metrics: non-finite prediction");
  MetricBundle m;
  m.n = y.size();
  detail::fill_errors(m, y, yhat);
  std::vector<int> rounded(yhat.size());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < yhat.size(); ++i) {
    rounded[i] = round_clamp(yhat[i]);
    hit += rounded[i] == y[i];
  }
  m.exact_accuracy = static_cast<double>(hit) / static_cast<double>(y.size());
  detail::fill_class_scores(m, y, rounded);
  return m;
}

inline double confusion_accuracy(const Confusion& c) {
  long diag = 0;
  long total = 0;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    for (std::size_t j = 0; j < kNumClasses; ++j) {
      total += c[i][j];
      if (i == j) diag += c[i][j];
    }
  }
  return total > 0 ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------------------
// confidence intervals
// ---------------------------------------------------------------------------

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

inline Interval normal_ci(double p, std::size_t n, double z = 1.959963984540054) {
  require(n > 0, "normal_ci: n must be positive");
  const double half = z * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
  return {std::max(0.0, p - half), std::min(1.0, p + half)};
}

/// Percentile bootstrap of the mean of 0/1 outcomes.
inline Interval bootstrap_ci(const std::vector<int>& hits, std::uint64_t seed, int resamples = 2000,
                             double level = 0.95) {
  require(!hits.empty(), "bootstrap_ci: empty sample");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, hits.size() - 1);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    long s = 0;
    for (std::size_t i = 0; i < hits.size(); ++i) s += hits[pick(rng)];
    m = static_cast<double>(s) / static_cast<double>(hits.size());
  }
  return {quantile_of(means, (1.0 - level) / 2.0), quantile_of(means, 1.0 - (1.0 - level) / 2.0)};
}

// ---------------------------------------------------------------------------
// fold plans
// ---------------------------------------------------------------------------

enum class FoldMode { rep_shuffle, by_set };

inline std::string to_string(FoldMode m) { return m == FoldMode::rep_shuffle ? "rep-shuffle" : "by-set"; }

inline FoldMode parse_fold_mode(const std::string& s) {
  if (s == "rep-shuffle" || s == "rep_shuffle") return FoldMode::rep_shuffle;
  if (s == "by-set" || s == "by_set") return FoldMode::by_set;
  throw ParseError("unknown fold mode '" + s + "' (expected rep-shuffle or by-set)");
}

struct FoldPlan {
  int k = 4;
  FoldMode mode = FoldMode::rep_shuffle;
  std::uint64_t seed = 0;
  std::vector<int> fold_of;  // per rep

  IndexList test_rows(int f) const {
    IndexList out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] == f) out.push_back(i);
    }
    return out;
  }
  IndexList train_rows(int f) const {
    IndexList out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] != f) out.push_back(i);
    }
    return out;
  }
  std::uint64_t hash() const {
    std::string s = std::to_string(k) + to_string(mode);
    for (int f : fold_of) s += static_cast<char>('0' + f);
    return fnv1a(s);
  }
};

/// rep-shuffle: seeded permutation dealt round-robin into k folds.
/// by-set: seeded permutation of sets, each assigned whole to the currently
/// smallest fold.
inline FoldPlan make_fold_plan(const std::vector<std::string>& set_of_rep, int k, FoldMode mode, std::uint64_t seed) {
  require(k >= 2, "fold plan: need at least 2 folds");
  const std::size_t n = set_of_rep.size();
  if (static_cast<std::size_t>(k) > n) {
    throw ValidationError("fold plan: " + std::to_string(k) + " folds for " + std::to_string(n) + " reps");
  }
  FoldPlan plan;
  plan.k = k;
  plan.mode = mode;
  plan.seed = seed;
  plan.fold_of.assign(n, 0);
  std::mt19937_64 rng(seed);
  if (mode == FoldMode::rep_shuffle) {
    IndexList order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < n; ++i) plan.fold_of[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    return plan;
  }
  std::map<std::string, IndexList> groups;
  for (std::size_t i = 0; i < n; ++i) groups[set_of_rep[i]].push_back(i);
  if (groups.size() < static_cast<std::size_t>(k)) {
    throw ValidationError("fold plan: by-set mode needs at least " + std::to_string(k) + " sets, got " +
                          std::to_string(groups.size()));
  }
  std::vector<const IndexList*> sets;
  for (const auto& [_, g] : groups) sets.push_back(&g);
  std::shuffle(sets.begin(), sets.end(), rng);
  std::vector<std::size_t> size(static_cast<std::size_t>(k), 0);
  for (const auto* g : sets) {
    const auto f = static_cast<std::size_t>(std::min_element(size.begin(), size.end()) - size.begin());
    for (auto i : *g) plan.fold_of[i] = static_cast<int>(f);
    size[f] += g->size();
  }
  return plan;
}

// ---------------------------------------------------------------------------
// random search
// ---------------------------------------------------------------------------

struct ParamRange {
  enum class Kind { uniform, log_uniform, integer, choice };
  std::string name;
  Kind kind = Kind::uniform;
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::string> choices;

  /// `uniform:lo:hi`, `log:lo:hi`, `int:lo:hi` or `choice:a|b|c`.
  static ParamRange parse(const std::string& name, const std::string& text) {
    ParamRange r;
    r.name = name;
    const auto parts = split(text, ':');
    if (parts.size() == 2 && trim(parts[0]) == "choice") {
      r.kind = Kind::choice;
      for (const auto& c : split(parts[1], '|')) {
        if (!trim(c).empty()) r.choices.push_back(trim(c));
      }
      if (r.choices.empty()) throw ValidationError("range '" + name + "' has no choices");
      return r;
    }
    if (parts.size() != 3) throw ParseError("range '" + name + "': expected kind:lo:hi, got '" + text + "'");
    const std::string kind = trim(parts[0]);
    auto lo = parse_double(parts[1]);
    auto hi = parse_double(parts[2]);
    if (!lo || !hi) throw ParseError("range '" + name + "': bounds must be numbers");
    r.lo = *lo;
    r.hi = *hi;
    if (kind == "uniform") r.kind = Kind::uniform;
    else if (kind == "log") r.kind = Kind::log_uniform;
    else if (kind == "int") r.kind = Kind::integer;
    else throw ParseError("range '" + name + "': unknown kind '" + kind + "'");
    if (r.hi < r.lo) throw ValidationError("range '" + name + "' is empty");
    if (r.kind == Kind::log_uniform && r.lo <= 0) throw ValidationError("range '" + name + "': log bounds must be > 0");
    return r;
  }

  std::string sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    switch (kind) {
      case Kind::uniform:
        return format_double(lo + (hi - lo) * unit(rng));
      case Kind::log_uniform:
        return format_double(std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * unit(rng)));
      case Kind::integer: {
        std::uniform_int_distribution<long long> d(static_cast<long long>(std::ceil(lo)),
                                                   static_cast<long long>(std::floor(hi)));
        return std::to_string(d(rng));
      }
      case Kind::choice: {
        std::uniform_int_distribution<std::size_t> d(0, choices.size() - 1);
        return choices[d(rng)];
      }
    }
    return {};
  }
};

struct Trial {
  std::size_t index = 0;
  std::map<std::string, std::string> params;
  double score = 0.0;
};

struct SearchResult {
  std::map<std::string, std::string> best;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<Trial> trials;  // in trial-index order
};

/// Trial i draws from derive_seed(seed, i); the objective is maximized and
/// ties keep the earliest trial.
inline SearchResult random_search(const std::vector<ParamRange>& ranges, int budget,
                                  const std::function<double(const std::map<std::string, std::string>&, std::uint64_t)>& objective,
                                  std::uint64_t seed) {
  require(budget >= 1, "random_search: budget must be >= 1");
  require(!ranges.empty(), "random_search: no ranges");
  SearchResult res;
  res.trials.resize(static_cast<std::size_t>(budget));
  for (std::size_t i = 0; i < res.trials.size(); ++i) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    res.trials[i].index = i;
    for (const auto& r : ranges) res.trials[i].params[r.name] = r.sample(rng);
  }
  parallel_for(res.trials.size(), [&](std::size_t i) {
    res.trials[i].score = objective(res.trials[i].params, derive_seed(seed, "trial/" + std::to_string(i)));
  });
  for (const auto& t : res.trials) {
    if (t.score > res.best_score) {
      res.best_score = t.score;
      res.best = t.params;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// EMG impact
// ---------------------------------------------------------------------------

struct ImpactRow {
  std::string metric;
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;  // sample (n-1); 0 for a single pair
  double max = 0.0;
  double min = 0.0;
};

struct LabeledMetrics {
  std::string key;  // model family + task
  MetricBundle metrics;
};

/// Differences (with EMG - without EMG) per metric across model pairs.
inline std::vector<ImpactRow> emg_impact_table(const std::vector<LabeledMetrics>& with_emg,
                                               const std::vector<LabeledMetrics>& without_emg) {
  require(!with_emg.empty(), "emg_impact_table: no reports");
  std::map<std::string, const MetricBundle*> base;
  for (const auto& r : without_emg) base[r.key] = &r.metrics;
  if (with_emg.size() != without_emg.size() || base.size() != without_emg.size()) {
    throw ValidationError("emg_impact_table: reports are not paired one-to-one");
  }
  std::vector<ImpactRow> rows;
  for (const auto& name : metric_names()) {
    std::vector<double> d;
    for (const auto& r : with_emg) {
      auto it = base.find(r.key);
      if (it == base.end()) throw ValidationError("emg_impact_table: unpaired report '" + r.key + "'");
      d.push_back(metric_value(r.metrics, name) - metric_value(*it->second, name));
    }
    ImpactRow row;
    row.metric = name;
    row.mean = mean_of(d);
    row.median = median_of(d);
    row.max = *std::max_element(d.begin(), d.end());
    row.min = *std::min_element(d.begin(), d.end());
    double ss = 0.0;
    for (double v : d) ss += (v - row.mean) * (v - row.mean);
    row.std = d.size() > 1 ? std::sqrt(ss / static_cast<double>(d.size() - 1)) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// correlation
// ---------------------------------------------------------------------------

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size(), "pearson: length mismatch");
  require(x.size() >= 2, "pearson: need at least two points");
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0 || syy <= 0) throw ValidationError("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

struct FoldResult {
  int fold = 0;
  IndexList test_rows;
  std::vector<double> predictions;  // aligned with test_rows
  MetricBundle metrics;
  int n_clusters = 0;
  std::map<std::string, double> importance;
};

struct EvalReport {
  std::string family;
  std::string task;
  std::string emg_mode;
  std::string spec_hash;
  FoldPlan plan;
  std::uint64_t seed = 0;
  std::vector<FoldResult> folds;
  MetricBundle fold_mean;  // mean of per-fold metrics; confusion summed
  MetricBundle pooled;     // all test predictions scored together
  Interval pm1_normal_ci;
  Interval pm1_bootstrap_ci;
  std::map<std::string, double> importance;  // mean over folds

  std::string key() const { return family + "/" + task; }
};

inline MetricBundle mean_of_folds(const std::vector<FoldResult>& folds) {
  require(!folds.empty(), "no folds to aggregate");
  MetricBundle out;
  for (const auto& name : metric_names()) {
    double s = 0.0;
    for (const auto& f : folds) s += metric_value(f.metrics, name);
    set_metric(out, name, s / static_cast<double>(folds.size()));
  }
  for (const auto& f : folds) {
    out.n += f.metrics.n;
    for (std::size_t i = 0; i < kNumClasses; ++i) {
      for (std::size_t j = 0; j < kNumClasses; ++j) out.confusion[i][j] += f.metrics.confusion[i][j];
    }
  }
  return out;
}

}  // namespace repforge

#endif  // REPFORGE_EVALUATION_HPP
