#ifndef REPFORGE_PIPELINE_HPP
#define REPFORGE_PIPELINE_HPP

// Two-stage RPE estimation: EMG-derived labels are built and estimated from
// IMU features inside each training fold, appended to the IMU features, and
// an RPE model is trained and scored on the held-out fold.

#include <repforge/embedding.hpp>
#include <repforge/evaluation.hpp>
#include <repforge/features.hpp>
#include <repforge/learners.hpp>

#include <mutex>

namespace repforge {

// ---------------------------------------------------------------------------
// raw sets -> rep table
// ---------------------------------------------------------------------------

struct Reject {
  std::string set_id;
  std::size_t detected = 0;
  std::size_t annotated = 0;
  std::string reason;
};

struct CorpusTable {
  RepTable table;
  std::vector<Reject> rejects;
  std::size_t sets_accepted = 0;
};

/// Align, segment and featurize every set. Sets whose detected rep count
/// disagrees with their annotations are quarantined into `rejects`.
inline CorpusTable build_rep_table(const std::vector<RawSet>& sets, const AlignParams& align,
                                   const SegmentParams& seg, const PalmAxisConfig& palm) {
  std::vector<std::vector<RepRow>> rows(sets.size());
  std::vector<std::optional<Reject>> rejects(sets.size());
  parallel_for(sets.size(), [&](std::size_t i) {
    const AlignedSet a = align_set(sets[i], align);
    try {
      for (const auto& s : segment_set(a, palm, seg)) rows[i].push_back(make_rep_row(a, s, palm));
    } catch (const SegmentationMismatch& e) {
      rejects[i] = Reject{a.id.str(), e.detected(), e.annotated(), "count mismatch"};
    }
  });
  CorpusTable out;
  out.table = empty_rep_table();
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (rejects[i]) {
      out.rejects.push_back(*rejects[i]);
      continue;
    }
    ++out.sets_accepted;
    for (auto& r : rows[i]) out.table.rows.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// dataset and leakage guards
// ---------------------------------------------------------------------------

/// Debug injections that deliberately break fold nesting. Tests switch them
/// on to prove the matching guard raises LeakageError.
struct LeakageInjection {
  bool label_fit_reads_test_emg = false;
  bool smote_row_in_test = false;
  bool standardize_on_all_rows = false;
};

class RepDataset;

/// EMG feature access scoped to one fold. Reads for fitting must avoid the
/// fold's evaluation rows; reads of evaluation rows as model inputs are only
/// allowed when the experiment feeds EMG features directly.
class GuardedEmg {
 public:
  GuardedEmg(const Matrix& emg, const IndexList& evaluation_rows, bool inputs_allowed)
      : emg_(&emg), inputs_allowed_(inputs_allowed) {
    for (auto r : evaluation_rows) forbidden_.insert(r);
  }

  Matrix for_fit(const IndexList& rows) const {
    for (auto r : rows) {
      if (forbidden_.count(r)) {
        throw LeakageError("EMG features of evaluation row " + std::to_string(r) + " requested for a fit");
      }
    }
    return select_rows(*emg_, rows);
  }

  Matrix for_input(const IndexList& rows) const {
    if (!inputs_allowed_) {
      for (auto r : rows) {
        if (forbidden_.count(r)) throw LeakageError("EMG features of evaluation row " + std::to_string(r) + " read");
      }
    }
    return select_rows(*emg_, rows);
  }

 private:
  const Matrix* emg_;
  std::set<std::size_t> forbidden_;
  bool inputs_allowed_;
};

inline void check_standardization_rows(const StandardizationStats& s, const IndexList& evaluation_rows) {
  const std::set<std::size_t> eval(evaluation_rows.begin(), evaluation_rows.end());
  for (auto r : s.fitted_on) {
    if (eval.count(r)) throw LeakageError("standardization was fit on evaluation row " + std::to_string(r));
  }
}

/// Every scored row must be an original dataset row from the evaluation fold.
inline constexpr std::size_t kSyntheticRow = std::numeric_limits<std::size_t>::max();

inline void check_test_provenance(const IndexList& scored_origin, const IndexList& evaluation_rows) {
  const std::set<std::size_t> eval(evaluation_rows.begin(), evaluation_rows.end());
  for (auto r : scored_origin) {
    if (r == kSyntheticRow) throw LeakageError("an oversampled row reached the evaluation split");
    if (!eval.count(r)) throw LeakageError("row " + std::to_string(r) + " scored outside its evaluation fold");
  }
}

class RepDataset {
 public:
  std::vector<std::string> rep_ids;
  std::vector<std::string> set_ids;
  std::vector<int> rpe;
  Matrix imu;
  std::vector<std::string> imu_names;
  std::vector<std::string> emg_names;

  static RepDataset from_table(const RepTable& t) {
    RepDataset d;
    d.imu_names = t.imu_names;
    d.emg_names = t.emg_names;
    const auto n = static_cast<Eigen::Index>(t.rows.size());
    d.imu.resize(n, static_cast<Eigen::Index>(t.imu_names.size()));
    d.emg_.resize(n, static_cast<Eigen::Index>(t.emg_names.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& r = t.rows[static_cast<std::size_t>(i)];
      d.rep_ids.push_back(r.rep_id);
      d.set_ids.push_back(r.set_id);
      d.rpe.push_back(r.rpe);
      for (std::size_t c = 0; c < r.imu.size(); ++c) d.imu(i, static_cast<Eigen::Index>(c)) = r.imu[c];
      for (std::size_t c = 0; c < r.emg.size(); ++c) d.emg_(i, static_cast<Eigen::Index>(c)) = r.emg[c];
    }
    return d;
  }

  std::size_t size() const { return rpe.size(); }

  GuardedEmg emg_for_fold(const IndexList& evaluation_rows, bool inputs_allowed) const {
    return GuardedEmg(emg_, evaluation_rows, inputs_allowed);
  }

  /// Unscoped access for corpus-level analyses outside any CV loop.
  const Matrix& emg_all_rows() const { return emg_; }

  Vector rpe_vector(const IndexList& rows) const {
    Vector y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) y(static_cast<Eigen::Index>(i)) = rpe[rows[i]];
    return y;
  }

  IndexList all_rows() const {
    IndexList r(size());
    std::iota(r.begin(), r.end(), std::size_t{0});
    return r;
  }

 private:
  Matrix emg_;
};

// ---------------------------------------------------------------------------
// EMG labels
// ---------------------------------------------------------------------------

struct LabelParams {
  int k_lo = 2;
  int k_hi = 8;
  int fixed_k = 0;  // > 0 skips silhouette selection
  int kmeans_restarts = 10;
  TsneParams tsne;

  static LabelParams from_config(const Config& cfg) {
    LabelParams p;
    p.k_lo = static_cast<int>(cfg.get_int("labels.k_min", p.k_lo));
    p.k_hi = static_cast<int>(cfg.get_int("labels.k_max", p.k_hi));
    p.fixed_k = static_cast<int>(cfg.get_int("labels.k", p.fixed_k));
    p.kmeans_restarts = static_cast<int>(cfg.get_int("labels.kmeans_restarts", p.kmeans_restarts));
    p.tsne.perplexity = cfg.get_double("labels.perplexity", p.tsne.perplexity);
    p.tsne.iterations = static_cast<int>(cfg.get_int("labels.tsne_iters", p.tsne.iterations));
    p.tsne.learning_rate = cfg.get_double("labels.learning_rate", p.tsne.learning_rate);
    return p;
  }
  std::string canonical() const {
    return std::to_string(k_lo) + ":" + std::to_string(k_hi) + ":" + std::to_string(fixed_k) + ":" +
           std::to_string(kmeans_restarts) + ":" + format_double(tsne.perplexity) + ":" +
           std::to_string(tsne.iterations) + ":" + format_double(tsne.learning_rate);
  }
};

struct EmgLabels {
  IndexList rows;  // dataset rows the labels belong to
  std::vector<double> pc1;
  std::vector<double> pc2;
  std::vector<int> cluster;
  int k = 0;
  StandardizationStats stats;
  PcaModel pca;
  Matrix embedding;
  std::vector<std::pair<int, double>> silhouette;
};

/// PC1/PC2 of the z-scored EMG features, and k-means clusters (k chosen by
/// silhouette) of their t-SNE embedding. Perplexity shrinks to n/3 for small
/// inputs.
inline EmgLabels build_emg_labels(const Matrix& emg, const IndexList& rows, std::uint64_t seed,
                                  const LabelParams& p = {}) {
  require(emg.rows() == static_cast<Eigen::Index>(rows.size()), "labels: row id count mismatch");
  require(emg.rows() >= 4, "labels: need at least 4 reps");
  EmgLabels out;
  out.rows = rows;
  out.stats = StandardizationStats::fit(emg, rows);
  if (std::all_of(out.stats.constant.begin(), out.stats.constant.end(), [](bool c) { return c; })) {
    throw ValidationError("labels: every EMG feature is constant");
  }
  const Matrix Z = out.stats.transform(emg);
  out.pca = pca_fit(Z, std::min<int>(2, static_cast<int>(Z.cols())));
  const Matrix pcs = out.pca.transform(Z);
  for (Eigen::Index i = 0; i < pcs.rows(); ++i) {
    out.pc1.push_back(pcs(i, 0));
    out.pc2.push_back(pcs.cols() > 1 ? pcs(i, 1) : 0.0);
  }
  TsneParams tp = p.tsne;
  tp.perplexity = std::min(tp.perplexity, static_cast<double>(emg.rows()) / 3.0);
  out.embedding = tsne_embed(Z, derive_seed(seed, "tsne"), tp);
  if (p.fixed_k > 0) {
    out.k = p.fixed_k;
  } else {
    const auto sel = select_k(out.embedding, p.k_lo, p.k_hi, derive_seed(seed, "select_k"), p.kmeans_restarts);
    out.k = sel.k;
    out.silhouette = sel.scores;
  }
  out.cluster = kmeans(out.embedding, out.k, p.kmeans_restarts, derive_seed(seed, "kmeans")).assignments;
  return out;
}

// ---------------------------------------------------------------------------
// EMG estimators
// ---------------------------------------------------------------------------

struct EstimatorSpec {
  std::string pc_family = "gbt";
  Params pc_params = {{"rounds", "150"}, {"max_depth", "3"}, {"learning_rate", "0.05"}};
  std::string cluster_family = "rf";
  Params cluster_params = {{"n_trees", "200"}};
  int smote_k = 5;
  bool smote = true;

  static EstimatorSpec from_config(const Config& cfg) {
    EstimatorSpec s;
    s.pc_family = cfg.get("estimators.pc_model", s.pc_family);
    s.cluster_family = cfg.get("estimators.cluster_model", s.cluster_family);
    s.smote_k = static_cast<int>(cfg.get_int("estimators.smote_k", s.smote_k));
    s.smote = cfg.get_bool("estimators.smote", s.smote);
    for (const auto& [k, v] : cfg.section("estimators.pc")) s.pc_params[k] = v;
    for (const auto& [k, v] : cfg.section("estimators.cluster")) s.cluster_params[k] = v;
    return s;
  }
  std::string canonical() const {
    std::string s = pc_family + "|" + cluster_family + "|" + std::to_string(smote_k) + "|" + (smote ? "1" : "0");
    for (const auto& [k, v] : pc_params) s += "|p." + k + "=" + v;
    for (const auto& [k, v] : cluster_params) s += "|c." + k + "=" + v;
    return s;
  }
};

struct EmgEstimators {
  std::unique_ptr<Estimator> pc1;
  std::unique_ptr<Estimator> pc2;
  std::unique_ptr<Estimator> cluster;
  int k = 0;
  std::size_t smote_rows = 0;
};

/// SMOTE on the classes that can be interpolated; singleton classes are kept
/// as they are.
inline SmoteResult oversample(const Matrix& X, const std::vector<int>& y, int k_neighbors, std::uint64_t seed) {
  std::map<int, std::size_t> count;
  for (int c : y) ++count[c];
  IndexList keep;
  IndexList single;
  for (std::size_t i = 0; i < y.size(); ++i) (count[y[i]] >= 2 ? keep : single).push_back(i);
  std::set<int> classes;
  for (auto i : keep) classes.insert(y[i]);
  if (classes.size() < 2) {
    SmoteResult r{X, y, {}};
    for (std::size_t i = 0; i < y.size(); ++i) r.origin.push_back({static_cast<std::ptrdiff_t>(i), -1, 0.0});
    return r;
  }
  SmoteResult r = smote(select_rows(X, keep), select(y, keep), k_neighbors, seed);
  for (auto& o : r.origin) {
    o.a = static_cast<std::ptrdiff_t>(keep[static_cast<std::size_t>(o.a)]);
    if (o.b >= 0) o.b = static_cast<std::ptrdiff_t>(keep[static_cast<std::size_t>(o.b)]);
  }
  const Eigen::Index base = r.X.rows();
  r.X.conservativeResize(base + static_cast<Eigen::Index>(single.size()), Eigen::NoChange);
  for (std::size_t s = 0; s < single.size(); ++s) {
    r.X.row(base + static_cast<Eigen::Index>(s)) = X.row(static_cast<Eigen::Index>(single[s]));
    r.labels.push_back(y[single[s]]);
    r.origin.push_back({static_cast<std::ptrdiff_t>(single[s]), -1, 0.0});
  }
  return r;
}

/// Regressors for PC1/PC2 and a classifier for the cluster label, all fed
/// IMU features only. `label_rows` are the positions within `labels` to train
/// on; SMOTE runs on the classifier's training data only.
inline EmgEstimators fit_emg_estimators(const Matrix& imu, const EmgLabels& labels, const IndexList& label_rows,
                                        const EstimatorSpec& spec, std::uint64_t seed) {
  require(imu.rows() == static_cast<Eigen::Index>(label_rows.size()), "estimators: row count mismatch");
  EmgEstimators est;
  est.k = labels.k;
  Vector y1(imu.rows());
  Vector y2(imu.rows());
  std::vector<int> yc(label_rows.size());
  for (std::size_t i = 0; i < label_rows.size(); ++i) {
    y1(static_cast<Eigen::Index>(i)) = labels.pc1[label_rows[i]];
    y2(static_cast<Eigen::Index>(i)) = labels.pc2[label_rows[i]];
    yc[i] = labels.cluster[label_rows[i]];
  }
  est.pc1 = make_estimator(spec.pc_family, Task::regress, spec.pc_params);
  est.pc2 = make_estimator(spec.pc_family, Task::regress, spec.pc_params);
  est.cluster = make_estimator(spec.cluster_family, Task::classify, spec.cluster_params);
  est.pc1->fit(imu, y1, derive_seed(seed, "pc1"));
  est.pc2->fit(imu, y2, derive_seed(seed, "pc2"));

  Matrix Xc = imu;
  std::vector<int> lc = yc;
  if (spec.smote) {
    SmoteResult sm = oversample(imu, yc, spec.smote_k, derive_seed(seed, "smote"));
    for (const auto& o : sm.origin) {
      require(o.a >= 0 && o.a < imu.rows() && o.b < imu.rows(), "smote produced a row outside its training input");
    }
    est.smote_rows = static_cast<std::size_t>(sm.X.rows() - imu.rows());
    Xc = std::move(sm.X);
    lc = std::move(sm.labels);
  }
  Vector ycv(static_cast<Eigen::Index>(lc.size()));
  for (std::size_t i = 0; i < lc.size(); ++i) ycv(static_cast<Eigen::Index>(i)) = lc[i];
  if (distinct_labels(ycv).size() < 2 && spec.cluster_family == "logreg") {
    throw ValidationError("estimators: cluster labels have a single class");
  }
  est.cluster->fit(Xc, ycv, derive_seed(seed, "cluster"));
  return est;
}

/// est_pc1, est_pc2 and a one-hot est_cluster block of width k.
inline Matrix estimate_columns(const Matrix& imu, const EmgEstimators& est) {
  Matrix out = Matrix::Zero(imu.rows(), 2 + est.k);
  out.col(0) = est.pc1->predict(imu);
  out.col(1) = est.pc2->predict(imu);
  const Vector c = est.cluster->predict(imu);
  for (Eigen::Index i = 0; i < imu.rows(); ++i) {
    const auto cls = static_cast<Eigen::Index>(std::lround(c(i)));
    if (cls >= 0 && cls < est.k) out(i, 2 + cls) = 1.0;
  }
  return out;
}

inline Matrix augment(const Matrix& imu, const EmgEstimators* est) {
  if (est == nullptr) return imu;
  const Matrix extra = estimate_columns(imu, *est);
  Matrix out(imu.rows(), imu.cols() + extra.cols());
  out << imu, extra;
  return out;
}

inline std::vector<std::string> augmented_names(const std::vector<std::string>& imu_names, int k) {
  auto n = imu_names;
  n.push_back("est_pc1");
  n.push_back("est_pc2");
  for (int c = 0; c < k; ++c) n.push_back("est_cluster_" + std::to_string(c));
  return n;
}

// ---------------------------------------------------------------------------
// experiments
// ---------------------------------------------------------------------------

enum class EmgMode { off, estimated, ground_truth };

inline std::string to_string(EmgMode m) {
  switch (m) {
    case EmgMode::off: return "off";
    case EmgMode::estimated: return "estimated";
    case EmgMode::ground_truth: return "ground-truth";
  }
  return {};
}

inline EmgMode parse_emg_mode(const std::string& s) {
  if (s == "off") return EmgMode::off;
  if (s == "estimated") return EmgMode::estimated;
  if (s == "ground-truth" || s == "ground_truth") return EmgMode::ground_truth;
  throw ParseError("unknown emg mode '" + s + "' (expected off, estimated or ground-truth)");
}

struct ExperimentSpec {
  std::string family = "rf";
  Task task = Task::classify;
  Params params;
  EmgMode mode = EmgMode::estimated;
  LabelParams labels;
  EstimatorSpec estimators;
  int inner_folds = 4;  // cross-fitted estimates for training rows; 0 = in-sample

  std::string hash() const {
    std::string s = family + "|" + to_string(task) + "|" + to_string(mode) + "|" + labels.canonical() + "|" +
                    estimators.canonical() + "|" + std::to_string(inner_folds);
    for (const auto& [k, v] : params) s += "|" + k + "=" + v;
    return hex64(fnv1a(s));
  }
};

/// Augmentation columns for one fold, shareable across RPE model families.
struct FoldAugmentation {
  Matrix train_extra;
  Matrix test_extra;
  std::vector<std::string> names;
  int k = 0;
};

/// Per-process memo of fold augmentations keyed by plan, seed, fold and
/// label/estimator settings.
class FoldCache {
 public:
  std::optional<FoldAugmentation> get(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = items_.find(key);
    if (it == items_.end()) return std::nullopt;
    return it->second;
  }
  void put(const std::string& key, FoldAugmentation v) {
    std::lock_guard<std::mutex> lock(mu_);
    items_.emplace(key, std::move(v));
  }
  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return items_.size();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, FoldAugmentation> items_;
};

namespace detail {

inline FoldAugmentation estimated_augmentation(const RepDataset& ds, const ExperimentSpec& spec, const IndexList& train,
                                               const IndexList& test, std::uint64_t seed,
                                               const LeakageInjection& inj) {
  const GuardedEmg emg = ds.emg_for_fold(test, false);
  IndexList label_rows = train;
  if (inj.label_fit_reads_test_emg) label_rows.insert(label_rows.end(), test.begin(), test.end());
  const EmgLabels labels = build_emg_labels(emg.for_fit(label_rows), label_rows, derive_seed(seed, "labels"), spec.labels);
  check_standardization_rows(labels.stats, test);

  const Matrix imu_train = select_rows(ds.imu, train);
  const Matrix imu_test = select_rows(ds.imu, test);
  IndexList pos(train.size());
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  const EmgEstimators full = fit_emg_estimators(imu_train, labels, pos, spec.estimators, derive_seed(seed, "estimators"));

  FoldAugmentation aug;
  aug.k = labels.k;
  aug.names = augmented_names({}, labels.k);
  aug.test_extra = estimate_columns(imu_test, full);
  if (spec.inner_folds >= 2 && train.size() >= static_cast<std::size_t>(2 * spec.inner_folds)) {
    // training rows get estimates from estimators that never saw them
    aug.train_extra = Matrix::Zero(imu_train.rows(), 2 + labels.k);
    const FoldPlan inner = make_fold_plan(std::vector<std::string>(train.size()), spec.inner_folds,
                                          FoldMode::rep_shuffle, derive_seed(seed, "inner"));
    for (int f = 0; f < inner.k; ++f) {
      const IndexList fit_pos = inner.train_rows(f);
      const IndexList hold_pos = inner.test_rows(f);
      const EmgEstimators e = fit_emg_estimators(select_rows(imu_train, fit_pos), labels, fit_pos, spec.estimators,
                                                 derive_seed(seed, "inner/" + std::to_string(f)));
      const Matrix cols = estimate_columns(select_rows(imu_train, hold_pos), e);
      for (std::size_t i = 0; i < hold_pos.size(); ++i) {
        aug.train_extra.row(static_cast<Eigen::Index>(hold_pos[i])) = cols.row(static_cast<Eigen::Index>(i));
      }
    }
  } else {
    aug.train_extra = estimate_columns(imu_train, full);
  }
  return aug;
}

inline FoldAugmentation ground_truth_augmentation(const RepDataset& ds, const IndexList& train, const IndexList& test,
                                                  const LeakageInjection& inj) {
  const GuardedEmg emg = ds.emg_for_fold(test, true);
  IndexList fit_rows = train;
  if (inj.standardize_on_all_rows) fit_rows.insert(fit_rows.end(), test.begin(), test.end());
  const StandardizationStats stats = StandardizationStats::fit(emg.for_input(fit_rows), fit_rows);
  check_standardization_rows(stats, test);
  FoldAugmentation aug;
  aug.train_extra = stats.transform(emg.for_fit(train));
  aug.test_extra = stats.transform(emg.for_input(test));
  for (const auto& n : ds.emg_names) aug.names.push_back("gt_" + n);
  return aug;
}

inline Matrix hcat(const Matrix& a, const Matrix& b) {
  if (b.cols() == 0) return a;
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

}  // namespace detail

/// Cross-validated RPE experiment. Labels, estimators and scalers are fit on
/// each fold's training rows only.
inline EvalReport run_rpe_experiment(const RepDataset& ds, const ExperimentSpec& spec, const FoldPlan& plan,
                                     std::uint64_t seed, const LeakageInjection& inj = {}, FoldCache* cache = nullptr) {
  require(plan.fold_of.size() == ds.size(), "experiment: fold plan does not match the dataset");
  EvalReport rep;
  rep.family = spec.family;
  rep.task = to_string(spec.task);
  rep.emg_mode = to_string(spec.mode);
  rep.spec_hash = spec.hash();
  rep.plan = plan;
  rep.seed = seed;
  rep.folds.resize(static_cast<std::size_t>(plan.k));

  parallel_for(static_cast<std::size_t>(plan.k), [&](std::size_t fi) {
    const int f = static_cast<int>(fi);
    const IndexList train = plan.train_rows(f);
    const IndexList test = plan.test_rows(f);
    require(!train.empty() && !test.empty(), "experiment: fold " + std::to_string(f) + " is empty");
    const std::uint64_t fs = derive_seed(seed, "fold/" + std::to_string(f));

    FoldAugmentation aug;
    if (spec.mode != EmgMode::off) {
      const std::string key = hex64(plan.hash()) + "/" + std::to_string(seed) + "/" + std::to_string(f) + "/" +
                              to_string(spec.mode) + "/" + spec.labels.canonical() + "/" + spec.estimators.canonical() +
                              "/" + std::to_string(spec.inner_folds);
      const bool injected = inj.label_fit_reads_test_emg || inj.smote_row_in_test || inj.standardize_on_all_rows;
      std::optional<FoldAugmentation> hit;
      if (cache && !injected) hit = cache->get(key);
      if (hit) {
        aug = std::move(*hit);
      } else {
        aug = spec.mode == EmgMode::estimated ? detail::estimated_augmentation(ds, spec, train, test, fs, inj)
                                              : detail::ground_truth_augmentation(ds, train, test, inj);
        if (cache && !injected) cache->put(key, aug);
      }
    }
    const Matrix X_train = detail::hcat(select_rows(ds.imu, train), aug.train_extra);
    Matrix X_test = detail::hcat(select_rows(ds.imu, test), aug.test_extra);
    IndexList scored = test;
    if (inj.smote_row_in_test) {
      // plant an interpolated training row in the evaluation split
      X_test.conservativeResize(X_test.rows() + 1, Eigen::NoChange);
      X_test.row(X_test.rows() - 1) = 0.5 * (X_train.row(0) + X_train.row(X_train.rows() - 1));
      scored.push_back(kSyntheticRow);
    }
    check_test_provenance(scored, test);

    auto model = make_estimator(spec.family, spec.task, spec.params);
    model->fit(X_train, ds.rpe_vector(train), derive_seed(fs, "model"));
    const Vector pred = model->predict(X_test);

    FoldResult& out = rep.folds[fi];
    out.fold = f;
    out.test_rows = test;
    out.n_clusters = aug.k;
    out.predictions.assign(pred.data(), pred.data() + pred.size());
    const std::vector<int> y = select(ds.rpe, test);
    if (spec.task == Task::classify) {
      std::vector<int> yhat(out.predictions.size());
      for (std::size_t i = 0; i < yhat.size(); ++i) yhat[i] = static_cast<int>(std::lround(out.predictions[i]));
      out.metrics = classification_metrics(y, yhat);
    } else {
      out.metrics = regression_metrics(y, out.predictions);
    }
    const auto imp = model->importance();
    if (!imp.empty()) {
      auto names = ds.imu_names;
      names.insert(names.end(), aug.names.begin(), aug.names.end());
      for (std::size_t c = 0; c < imp.size() && c < names.size(); ++c) out.importance[names[c]] = imp[c];
    }
  });

  rep.fold_mean = mean_of_folds(rep.folds);
  std::vector<int> y_all;
  std::vector<double> p_all;
  for (const auto& f : rep.folds) {
    for (std::size_t i = 0; i < f.test_rows.size(); ++i) {
      y_all.push_back(ds.rpe[f.test_rows[i]]);
      p_all.push_back(f.predictions[i]);
    }
    for (const auto& [k, v] : f.importance) rep.importance[k] += v / static_cast<double>(rep.folds.size());
  }
  if (spec.task == Task::classify) {
    std::vector<int> yhat(p_all.size());
    for (std::size_t i = 0; i < yhat.size(); ++i) yhat[i] = static_cast<int>(std::lround(p_all[i]));
    rep.pooled = classification_metrics(y_all, yhat);
  } else {
    rep.pooled = regression_metrics(y_all, p_all);
  }
  std::vector<int> hits(y_all.size());
  for (std::size_t i = 0; i < hits.size(); ++i) hits[i] = std::abs(p_all[i] - y_all[i]) <= 1.0 ? 1 : 0;
  rep.pm1_normal_ci = normal_ci(rep.pooled.pm1_accuracy, hits.size());
  rep.pm1_bootstrap_ci = bootstrap_ci(hits, derive_seed(seed, "bootstrap"));
  return rep;
}

// ---------------------------------------------------------------------------
// corpus-level analyses
// ---------------------------------------------------------------------------

struct EmgBenchmark {
  double pc1_rmse = 0.0;
  double pc2_rmse = 0.0;
  double cluster_accuracy = 0.0;
  double pc1_r2 = 0.0;
  double pc2_r2 = 0.0;
  int k = 0;
};

/// How well IMU features predict EMG labels: labels are built once on the
/// whole corpus, then the estimators are cross-validated on the plan.
inline EmgBenchmark emg_estimator_benchmark(const RepDataset& ds, const FoldPlan& plan, const EstimatorSpec& spec,
                                            const LabelParams& lp, std::uint64_t seed) {
  const IndexList all = ds.all_rows();
  const EmgLabels labels = build_emg_labels(ds.emg_all_rows(), all, derive_seed(seed, "labels"), lp);
  std::vector<double> y1, y2, p1, p2;
  std::size_t hit = 0;
  std::vector<std::vector<double>> fold_p1(static_cast<std::size_t>(plan.k));
  std::vector<std::vector<double>> fold_p2(static_cast<std::size_t>(plan.k));
  std::vector<std::vector<int>> fold_c(static_cast<std::size_t>(plan.k));
  parallel_for(static_cast<std::size_t>(plan.k), [&](std::size_t f) {
    const IndexList train = plan.train_rows(static_cast<int>(f));
    const IndexList test = plan.test_rows(static_cast<int>(f));
    const EmgEstimators est = fit_emg_estimators(select_rows(ds.imu, train), labels, train, spec,
                                                 derive_seed(seed, "bench/" + std::to_string(f)));
    const Matrix Xt = select_rows(ds.imu, test);
    const Vector a = est.pc1->predict(Xt);
    const Vector b = est.pc2->predict(Xt);
    const Vector c = est.cluster->predict(Xt);
    fold_p1[f].assign(a.data(), a.data() + a.size());
    fold_p2[f].assign(b.data(), b.data() + b.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) fold_c[f].push_back(static_cast<int>(std::lround(c(i))));
  });
  for (int f = 0; f < plan.k; ++f) {
    const IndexList test = plan.test_rows(f);
    for (std::size_t i = 0; i < test.size(); ++i) {
      y1.push_back(labels.pc1[test[i]]);
      y2.push_back(labels.pc2[test[i]]);
      p1.push_back(fold_p1[static_cast<std::size_t>(f)][i]);
      p2.push_back(fold_p2[static_cast<std::size_t>(f)][i]);
      hit += fold_c[static_cast<std::size_t>(f)][i] == labels.cluster[test[i]];
    }
  }
  auto rmse = [](const std::vector<double>& y, const std::vector<double>& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - p[i]) * (y[i] - p[i]);
    return std::sqrt(s / static_cast<double>(y.size()));
  };
  EmgBenchmark b;
  b.pc1_rmse = rmse(y1, p1);
  b.pc2_rmse = rmse(y2, p2);
  b.pc1_r2 = r2_score(y1, p1);
  b.pc2_r2 = r2_score(y2, p2);
  b.cluster_accuracy = static_cast<double>(hit) / static_cast<double>(y1.size());
  b.k = labels.k;
  return b;
}

struct CorpusCorrelations {
  double total_time_vs_rpe = 0.0;
  double emg_pc1_vs_rpe = 0.0;
  double imu_pc1_vs_emg_pc1 = 0.0;
};

/// Corpus-wide Pearson correlations between rep duration, RPE and the first
/// principal components of the z-scored EMG and IMU features.
inline CorpusCorrelations corpus_correlations(const RepDataset& ds) {
  const IndexList all = ds.all_rows();
  std::vector<double> rpe(ds.rpe.begin(), ds.rpe.end());
  const auto total = static_cast<Eigen::Index>(imu_feature_index("total_time"));
  std::vector<double> dur(ds.imu.col(total).data(), ds.imu.col(total).data() + ds.imu.rows());

  const auto emg_stats = StandardizationStats::fit(ds.emg_all_rows(), all);
  const Matrix emg_pc = pca_fit(emg_stats.transform(ds.emg_all_rows()), 1).transform(emg_stats.transform(ds.emg_all_rows()));
  const auto imu_stats = StandardizationStats::fit(ds.imu, all);
  const Matrix imu_pc = pca_fit(imu_stats.transform(ds.imu), 1).transform(imu_stats.transform(ds.imu));
  const std::vector<double> e(emg_pc.data(), emg_pc.data() + emg_pc.rows());
  const std::vector<double> m(imu_pc.data(), imu_pc.data() + imu_pc.rows());

  CorpusCorrelations c;
  c.total_time_vs_rpe = pearson(dur, rpe);
  c.emg_pc1_vs_rpe = pearson(e, rpe);
  c.imu_pc1_vs_emg_pc1 = pearson(m, e);
  return c;
}

}  // namespace repforge

#endif  // REPFORGE_PIPELINE_HPP
