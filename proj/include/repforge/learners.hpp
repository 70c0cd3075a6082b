#ifndef REPFORGE_LEARNERS_HPP
#define REPFORGE_LEARNERS_HPP

// CART trees, random forests, gradient-boosted trees, multinomial logistic
// regression and elastic-net linear regression behind one Estimator
// interface, plus a versioned text model format.

#include <repforge/core.hpp>

#include <iomanip>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

namespace repforge {

enum class Task { classify, regress };

inline std::string to_string(Task t) { return t == Task::classify ? "classify" : "regress"; }

inline Task parse_task(const std::string& s) {
  if (s == "classify" || s == "classification") return Task::classify;
  if (s == "regress" || s == "regression") return Task::regress;
  throw ParseError("unknown task '" + s + "' (expected classify or regress)");
}

/// Sorted distinct integer labels.
inline std::vector<int> distinct_labels(const Vector& y) {
  std::set<int> s;
  for (Eigen::Index i = 0; i < y.size(); ++i) s.insert(static_cast<int>(std::lround(y(i))));
  return {s.begin(), s.end()};
}

inline std::vector<int> encode_labels(const Vector& y, const std::vector<int>& classes) {
  std::vector<int> out(static_cast<std::size_t>(y.size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const int v = static_cast<int>(std::lround(y(i)));
    auto it = std::lower_bound(classes.begin(), classes.end(), v);
    require(it != classes.end() && *it == v, "label " + std::to_string(v) + " not among fitted classes");
    out[static_cast<std::size_t>(i)] = static_cast<int>(it - classes.begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// CART
// ---------------------------------------------------------------------------

struct TreeParams {
  int max_depth = 0;     // 0 = unlimited
  int min_leaf = 1;
  int max_features = 0;  // 0 = all
};

struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::vector<double> value;  // class distribution or {mean}
  bool leaf() const { return feature < 0; }
};

/// Greedy CART. Classification targets are class indices 0..K-1 and leaves
/// hold class frequencies; regression leaves hold the mean. Samples with
/// x <= threshold go left.
class DecisionTree {
 public:
  void fit(const Matrix& X, const Vector& y, const IndexList& rows, Task task, int n_classes, const TreeParams& p,
           std::uint64_t seed) {
    require(!rows.empty(), "tree: no training rows");
    require(p.min_leaf >= 1, "tree: min_leaf must be >= 1");
    require(task == Task::regress || n_classes >= 1, "tree: need at least one class");
    task_ = task;
    n_classes_ = task == Task::classify ? n_classes : 1;
    n_features_ = static_cast<int>(X.cols());
    nodes_.clear();
    importance_.assign(static_cast<std::size_t>(X.cols()), 0.0);
    Builder b{X, y, p, std::mt19937_64(seed), this};
    IndexList r = rows;
    build(b, r, 0, r.size(), 0);
  }

  const std::vector<double>& leaf_value(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    int k = 0;
    while (!nodes_[static_cast<std::size_t>(k)].leaf()) {
      const auto& nd = nodes_[static_cast<std::size_t>(k)];
      k = x(nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes_[static_cast<std::size_t>(k)].value;
  }

  double predict_value(const Eigen::Ref<const Eigen::RowVectorXd>& x) const { return leaf_value(x)[0]; }

  int predict_class(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    const auto& v = leaf_value(x);
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  }

  /// Unnormalized impurity decrease per feature, weighted by node size.
  const std::vector<double>& raw_importance() const { return importance_; }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::vector<TreeNode>& mutable_nodes() { return nodes_; }
  int depth() const { return depth_of(0); }
  Task task() const { return task_; }
  int n_classes() const { return n_classes_; }

  void save(std::ostream& os) const {
    os << "tree " << nodes_.size() << ' ' << n_classes_ << ' ' << n_features_ << '\n';
    for (const auto& nd : nodes_) {
      os << nd.feature << ' ' << format_double(nd.threshold) << ' ' << nd.left << ' ' << nd.right << ' '
         << nd.value.size();
      for (double v : nd.value) os << ' ' << format_double(v);
      os << '\n';
    }
  }

  void load(std::istream& is, Task task) {
    std::string tag;
    std::size_t n = 0;
    is >> tag >> n >> n_classes_ >> n_features_;
    if (tag != "tree" || !is) throw ParseError("model: expected tree block");
    task_ = task;
    nodes_.assign(n, {});
    for (auto& nd : nodes_) {
      std::size_t nv = 0;
      std::string thr;
      is >> nd.feature >> thr >> nd.left >> nd.right >> nv;
      auto t = parse_double(thr);
      if (!is || !t) throw ParseError("model: malformed tree node");
      nd.threshold = *t;
      nd.value.resize(nv);
      for (auto& v : nd.value) {
        std::string s;
        is >> s;
        auto d = parse_double(s);
        if (!d) throw ParseError("model: malformed leaf value");
        v = *d;
      }
    }
    importance_.assign(static_cast<std::size_t>(n_features_), 0.0);
  }

 private:
  struct Builder {
    const Matrix& X;
    const Vector& y;
    const TreeParams& p;
    std::mt19937_64 rng;
    DecisionTree* self;
  };

  int depth_of(int k) const {
    const auto& nd = nodes_[static_cast<std::size_t>(k)];
    return nd.leaf() ? 0 : 1 + std::max(depth_of(nd.left), depth_of(nd.right));
  }

  std::vector<double> node_value(const Builder& b, const IndexList& r, std::size_t lo, std::size_t hi) const {
    const auto m = static_cast<double>(hi - lo);
    if (task_ == Task::classify) {
      std::vector<double> v(static_cast<std::size_t>(n_classes_), 0.0);
      for (std::size_t i = lo; i < hi; ++i) v[static_cast<std::size_t>(b.y(static_cast<Eigen::Index>(r[i])))] += 1.0;
      for (double& c : v) c /= m;
      return v;
    }
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += b.y(static_cast<Eigen::Index>(r[i]));
    return {s / m};
  }

  /// Gini (classify) or variance (regress) of a leaf value / row range.
  double impurity(const Builder& b, const IndexList& r, std::size_t lo, std::size_t hi,
                  const std::vector<double>& value) const {
    if (task_ == Task::classify) {
      double g = 1.0;
      for (double q : value) g -= q * q;
      return std::max(0.0, g);
    }
    double ss = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      const double d = b.y(static_cast<Eigen::Index>(r[i])) - value[0];
      ss += d * d;
    }
    return ss / static_cast<double>(hi - lo);
  }

  int build(Builder& b, IndexList& r, std::size_t lo, std::size_t hi, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    nodes_.back().value = node_value(b, r, lo, hi);
    const std::size_t m = hi - lo;
    const double imp = impurity(b, r, lo, hi, nodes_.back().value);
    const auto min_leaf = static_cast<std::size_t>(b.p.min_leaf);
    if ((b.p.max_depth > 0 && depth >= b.p.max_depth) || m < 2 * min_leaf || imp <= 1e-14) return id;

    // candidate features
    std::vector<int> feats(static_cast<std::size_t>(n_features_));
    std::iota(feats.begin(), feats.end(), 0);
    int mtry = b.p.max_features > 0 ? std::min(b.p.max_features, n_features_) : n_features_;
    if (mtry < n_features_) {
      for (int i = 0; i < mtry; ++i) {
        std::uniform_int_distribution<int> pick(i, n_features_ - 1);
        std::swap(feats[static_cast<std::size_t>(i)], feats[static_cast<std::size_t>(pick(b.rng))]);
      }
      feats.resize(static_cast<std::size_t>(mtry));
    }

    double best_score = -std::numeric_limits<double>::infinity();
    int best_feat = -1;
    double best_thr = 0.0;
    std::vector<std::pair<double, double>> xs(m);
    std::vector<double> left_counts(static_cast<std::size_t>(n_classes_));
    std::vector<double> total_counts(static_cast<std::size_t>(n_classes_), 0.0);
    double total_sum = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      const double yi = b.y(static_cast<Eigen::Index>(r[i]));
      if (task_ == Task::classify) {
        total_counts[static_cast<std::size_t>(yi)] += 1.0;
      } else {
        total_sum += yi;
      }
    }
    for (int f : feats) {
      for (std::size_t i = lo; i < hi; ++i) {
        const auto row = static_cast<Eigen::Index>(r[i]);
        xs[i - lo] = {b.X(row, f), b.y(row)};
      }
      std::sort(xs.begin(), xs.end(), [](const auto& a, const auto& c) { return a.first < c.first; });
      if (xs.front().first == xs.back().first) continue;
      std::fill(left_counts.begin(), left_counts.end(), 0.0);
      double sq_left = 0.0;
      double sq_right = 0.0;
      for (double c : total_counts) sq_right += c * c;
      double sum_left = 0.0;
      for (std::size_t i = 0; i + 1 < m; ++i) {
        const double yi = xs[i].second;
        if (task_ == Task::classify) {
          const auto c = static_cast<std::size_t>(yi);
          const double right_c = total_counts[c] - left_counts[c];
          sq_left += 2.0 * left_counts[c] + 1.0;
          sq_right -= 2.0 * right_c - 1.0;
          left_counts[c] += 1.0;
        } else {
          sum_left += yi;
        }
        const std::size_t nl = i + 1;
        const std::size_t nr = m - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        if (!(xs[i].first < xs[i + 1].first)) continue;
        double score = 0.0;
        if (task_ == Task::classify) {
          score = sq_left / static_cast<double>(nl) + sq_right / static_cast<double>(nr);
        } else {
          const double sr = total_sum - sum_left;
          score = sum_left * sum_left / static_cast<double>(nl) + sr * sr / static_cast<double>(nr);
        }
        if (score > best_score) {
          best_score = score;
          best_feat = f;
          double thr = 0.5 * (xs[i].first + xs[i + 1].first);
          if (!(thr < xs[i + 1].first)) thr = xs[i].first;
          best_thr = thr;
        }
      }
    }
    if (best_feat < 0) return id;

    const auto mid_it = std::partition(r.begin() + static_cast<std::ptrdiff_t>(lo), r.begin() + static_cast<std::ptrdiff_t>(hi),
                                       [&](std::size_t row) { return b.X(static_cast<Eigen::Index>(row), best_feat) <= best_thr; });
    const auto mid = static_cast<std::size_t>(mid_it - r.begin());
    const auto lv = node_value(b, r, lo, mid);
    const auto rv = node_value(b, r, mid, hi);
    const double decrease = static_cast<double>(m) * imp -
                            static_cast<double>(mid - lo) * impurity(b, r, lo, mid, lv) -
                            static_cast<double>(hi - mid) * impurity(b, r, mid, hi, rv);
    importance_[static_cast<std::size_t>(best_feat)] += std::max(0.0, decrease);

    nodes_[static_cast<std::size_t>(id)].feature = best_feat;
    nodes_[static_cast<std::size_t>(id)].threshold = best_thr;
    const int left = build(b, r, lo, mid, depth + 1);
    const int right = build(b, r, mid, hi, depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
  }

  Task task_ = Task::regress;
  int n_classes_ = 1;
  int n_features_ = 0;
  std::vector<TreeNode> nodes_;
  std::vector<double> importance_;
};

inline std::vector<double> normalized(std::vector<double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  if (s <= 0) {
    std::fill(v.begin(), v.end(), v.empty() ? 0.0 : 1.0 / static_cast<double>(v.size()));
    return v;
  }
  for (double& x : v) x /= s;
  return v;
}

/// Bootstrap sample (with replacement) of n row indices.
inline IndexList bootstrap_rows(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  IndexList rows(n);
  for (auto& r : rows) r = pick(rng);
  return rows;
}

// ---------------------------------------------------------------------------
// estimator interface
// ---------------------------------------------------------------------------

using Params = std::map<std::string, std::string>;

inline double param_double(const Params& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  if (it == p.end()) return fallback;
  auto v = parse_double(it->second);
  if (!v) throw ParseError("parameter '" + key + "' is not a number: " + it->second);
  return *v;
}

inline int param_int(const Params& p, const std::string& key, int fallback) {
  auto it = p.find(key);
  if (it == p.end()) return fallback;
  auto v = parse_double(it->second);
  if (!v || *v != std::floor(*v)) throw ParseError("parameter '" + key + "' is not an integer: " + it->second);
  return static_cast<int>(*v);
}

class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual std::string family() const = 0;
  virtual Task task() const = 0;
  virtual Params params() const = 0;
  virtual void fit(const Matrix& X, const Vector& y, std::uint64_t seed) = 0;
  /// Class labels (classify) or real values (regress).
  virtual Vector predict(const Matrix& X) const = 0;
  virtual Matrix predict_proba(const Matrix&) const {
    throw ValidationError(family() + ": predict_proba needs a classifier");
  }
  virtual std::vector<int> classes() const { return {}; }
  /// Normalized impurity importance; empty when the family has none.
  virtual std::vector<double> importance() const { return {}; }
  virtual void save_body(std::ostream& os) const = 0;
  virtual void load_body(std::istream& is) = 0;

  int n_features() const { return n_features_; }
  bool fitted() const { return n_features_ > 0; }

 protected:
  void check_predict(const Matrix& X) const {
    if (!fitted()) throw ValidationError(family() + ": model is not fitted");
    if (X.cols() != n_features_) {
      throw ValidationError(family() + ": schema mismatch, model has " + std::to_string(n_features_) +
                            " features, input has " + std::to_string(X.cols()));
    }
  }
  void check_fit(const Matrix& X, const Vector& y) const {
    require(X.rows() == y.size(), family() + ": X and y row counts differ");
    require(X.rows() >= 1 && X.cols() >= 1, family() + ": empty training matrix");
    require(X.allFinite() && y.allFinite(), family() + ": non-finite training input");
  }
  int n_features_ = 0;
};

// ---------------------------------------------------------------------------
// random forest
// ---------------------------------------------------------------------------

struct ForestParams {
  int n_trees = 300;
  int max_depth = 0;
  int min_leaf = 2;
  int max_features = 0;  // 0 = sqrt(d) for classify, d/3 for regress
  bool bootstrap = true;

  static ForestParams from(const Params& p) {
    ForestParams f;
    f.n_trees = param_int(p, "n_trees", f.n_trees);
    f.max_depth = param_int(p, "max_depth", f.max_depth);
    f.min_leaf = param_int(p, "min_leaf", f.min_leaf);
    f.max_features = param_int(p, "max_features", f.max_features);
    f.bootstrap = param_int(p, "bootstrap", f.bootstrap ? 1 : 0) != 0;
    return f;
  }
  Params to_params() const {
    return {{"n_trees", std::to_string(n_trees)},
            {"max_depth", std::to_string(max_depth)},
            {"min_leaf", std::to_string(min_leaf)},
            {"max_features", std::to_string(max_features)},
            {"bootstrap", bootstrap ? "1" : "0"}};
  }
};

inline int default_max_features(Task task, int d) {
  if (task == Task::classify) return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));
  return std::max(1, d / 3);
}

/// Per-tree seeds: tree t uses derive_seed(seed, t); its bootstrap draws from
/// derive_seed(tree_seed, "bootstrap") and its splits from
/// derive_seed(tree_seed, "split").
class RandomForest : public Estimator {
 public:
  RandomForest(Task task, ForestParams p = {}) : task_(task), p_(p) {
    require(p_.n_trees >= 1, "rf: n_trees must be >= 1");
  }

  std::string family() const override { return "rf"; }
  Task task() const override { return task_; }
  Params params() const override { return p_.to_params(); }

  void fit(const Matrix& X, const Vector& y, std::uint64_t seed) override {
    check_fit(X, y);
    Vector target = y;
    int k = 1;
    if (task_ == Task::classify) {
      classes_ = distinct_labels(y);
      const auto enc = encode_labels(y, classes_);
      for (Eigen::Index i = 0; i < y.size(); ++i) target(i) = enc[static_cast<std::size_t>(i)];
      k = static_cast<int>(classes_.size());
    }
    TreeParams tp;
    tp.max_depth = p_.max_depth;
    tp.min_leaf = p_.min_leaf;
    tp.max_features = p_.max_features > 0 ? p_.max_features : default_max_features(task_, static_cast<int>(X.cols()));
    trees_.assign(static_cast<std::size_t>(p_.n_trees), {});
    const auto n = static_cast<std::size_t>(X.rows());
    parallel_for(trees_.size(), [&](std::size_t t) {
      const std::uint64_t ts = derive_seed(seed, static_cast<std::uint64_t>(t));
      IndexList rows(n);
      if (p_.bootstrap) {
        rows = bootstrap_rows(n, derive_seed(ts, "bootstrap"));
      } else {
        std::iota(rows.begin(), rows.end(), std::size_t{0});
      }
      trees_[t].fit(X, target, rows, task_, k, tp, derive_seed(ts, "split"));
    });
    n_features_ = static_cast<int>(X.cols());
    importance_.assign(static_cast<std::size_t>(n_features_), 0.0);
    for (const auto& t : trees_) {
      const auto imp = normalized(t.raw_importance());
      for (std::size_t f = 0; f < imp.size(); ++f) importance_[f] += imp[f];
    }
    importance_ = normalized(importance_);
  }

  /// Majority vote over trees (ties to the lower class) or mean prediction.
  Vector predict(const Matrix& X) const override {
    check_predict(X);
    Vector out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      if (task_ == Task::classify) {
        std::vector<int> votes(classes_.size(), 0);
        for (const auto& t : trees_) ++votes[static_cast<std::size_t>(t.predict_class(X.row(i)))];
        const auto best = std::max_element(votes.begin(), votes.end()) - votes.begin();
        out(i) = classes_[static_cast<std::size_t>(best)];
      } else {
        double s = 0.0;
        for (const auto& t : trees_) s += t.predict_value(X.row(i));
        out(i) = s / static_cast<double>(trees_.size());
      }
    }
    return out;
  }

  Matrix predict_proba(const Matrix& X) const override {
    require(task_ == Task::classify, "rf: predict_proba needs a classifier");
    check_predict(X);
    Matrix P = Matrix::Zero(X.rows(), static_cast<Eigen::Index>(classes_.size()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      for (const auto& t : trees_) {
        const auto& v = t.leaf_value(X.row(i));
        for (std::size_t c = 0; c < v.size(); ++c) P(i, static_cast<Eigen::Index>(c)) += v[c];
      }
    }
    return P / static_cast<double>(trees_.size());
  }

  std::vector<int> classes() const override { return classes_; }
  std::vector<double> importance() const override { return importance_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }

  void save_body(std::ostream& os) const override {
    os << "classes " << classes_.size();
    for (int c : classes_) os << ' ' << c;
    os << "\nimportance " << importance_.size();
    for (double v : importance_) os << ' ' << format_double(v);
    os << "\ntrees " << trees_.size() << '\n';
    for (const auto& t : trees_) t.save(os);
  }

  void load_body(std::istream& is) override {
    classes_ = read_int_list(is, "classes");
    importance_ = read_double_list(is, "importance");
    std::string tag;
    std::size_t nt = 0;
    is >> tag >> nt;
    if (tag != "trees" || !is) throw ParseError("model: expected trees block");
    trees_.assign(nt, {});
    for (auto& t : trees_) t.load(is, task_);
    n_features_ = static_cast<int>(importance_.size());
  }

  static std::vector<int> read_int_list(std::istream& is, const std::string& expect) {
    std::string tag;
    std::size_t n = 0;
    is >> tag >> n;
    if (tag != expect || !is) throw ParseError("model: expected " + expect);
    std::vector<int> v(n);
    for (auto& x : v) is >> x;
    if (!is) throw ParseError("model: truncated " + expect);
    return v;
  }

  static std::vector<double> read_double_list(std::istream& is, const std::string& expect) {
    std::string tag;
    std::size_t n = 0;
    is >> tag >> n;
    if (tag != expect || !is) throw ParseError("model: expected " + expect);
    std::vector<double> v(n);
    for (auto& x : v) {
      std::string s;
      is >> s;
      auto d = parse_double(s);
      if (!d) throw ParseError("model: malformed number in " + expect);
      x = *d;
    }
    return v;
  }

 private:
  Task task_;
  ForestParams p_;
  std::vector<int> classes_;
  std::vector<DecisionTree> trees_;
  std::vector<double> importance_;
};

// ---------------------------------------------------------------------------
// gradient-boosted trees
// ---------------------------------------------------------------------------

struct GbtParams {
  int rounds = 100;
  int max_depth = 3;
  double learning_rate = 0.1;
  int min_leaf = 1;
  int max_features = 0;

  static GbtParams from(const Params& p) {
    GbtParams g;
    g.rounds = param_int(p, "rounds", g.rounds);
    g.max_depth = param_int(p, "max_depth", g.max_depth);
    g.learning_rate = param_double(p, "learning_rate", g.learning_rate);
    g.min_leaf = param_int(p, "min_leaf", g.min_leaf);
    g.max_features = param_int(p, "max_features", g.max_features);
    return g;
  }
  Params to_params() const {
    return {{"rounds", std::to_string(rounds)},
            {"max_depth", std::to_string(max_depth)},
            {"learning_rate", format_double(learning_rate)},
            {"min_leaf", std::to_string(min_leaf)},
            {"max_features", std::to_string(max_features)}};
  }
};

/// Stagewise additive regression trees with mean-residual leaves. Regression
/// starts from the target mean and fits residuals; classification keeps one
/// score per class, starts from log priors and fits one tree per class per
/// round to (one_hot - softmax).
class GradientBoosting : public Estimator {
 public:
  GradientBoosting(Task task, GbtParams p = {}) : task_(task), p_(p) {
    require(p_.rounds >= 1, "gbt: rounds must be >= 1");
    if (!(p_.learning_rate > 0)) throw ValidationError("gbt: learning_rate must be > 0");
  }

  std::string family() const override { return "gbt"; }
  Task task() const override { return task_; }
  Params params() const override { return p_.to_params(); }

  void fit(const Matrix& X, const Vector& y, std::uint64_t seed) override {
    check_fit(X, y);
    const Eigen::Index n = X.rows();
    TreeParams tp;
    tp.max_depth = p_.max_depth;
    tp.min_leaf = p_.min_leaf;
    tp.max_features = p_.max_features;
    IndexList rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    trees_.clear();
    loss_trace_.clear();

    if (task_ == Task::regress) {
      k_ = 1;
      base_ = {y.mean()};
      Vector F = Vector::Constant(n, base_[0]);
      loss_trace_.push_back((y - F).squaredNorm() / static_cast<double>(n));
      for (int m = 0; m < p_.rounds; ++m) {
        const Vector r = y - F;
        DecisionTree t;
        t.fit(X, r, rows, Task::regress, 1, tp, derive_seed(seed, static_cast<std::uint64_t>(m)));
        for (Eigen::Index i = 0; i < n; ++i) F(i) += p_.learning_rate * t.predict_value(X.row(i));
        trees_.push_back(std::move(t));
        loss_trace_.push_back((y - F).squaredNorm() / static_cast<double>(n));
      }
    } else {
      classes_ = distinct_labels(y);
      const auto enc = encode_labels(y, classes_);
      k_ = static_cast<int>(classes_.size());
      base_.assign(static_cast<std::size_t>(k_), 0.0);
      for (int c : enc) base_[static_cast<std::size_t>(c)] += 1.0;
      for (double& b : base_) b = std::log(b / static_cast<double>(n));
      Matrix F(n, k_);
      for (int c = 0; c < k_; ++c) F.col(c).setConstant(base_[static_cast<std::size_t>(c)]);
      loss_trace_.push_back(cross_entropy(F, enc));
      for (int m = 0; m < p_.rounds; ++m) {
        const Matrix P = softmax_rows(F);
        std::vector<DecisionTree> round(static_cast<std::size_t>(k_));
        for (int c = 0; c < k_; ++c) {
          Vector r(n);
          for (Eigen::Index i = 0; i < n; ++i) r(i) = (enc[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0) - P(i, c);
          round[static_cast<std::size_t>(c)].fit(
              X, r, rows, Task::regress, 1, tp,
              derive_seed(seed, static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(k_) + static_cast<std::uint64_t>(c)));
        }
        for (int c = 0; c < k_; ++c) {
          for (Eigen::Index i = 0; i < n; ++i) {
            F(i, c) += p_.learning_rate * round[static_cast<std::size_t>(c)].predict_value(X.row(i));
          }
        }
        for (auto& t : round) trees_.push_back(std::move(t));
        loss_trace_.push_back(cross_entropy(F, enc));
      }
    }
    n_features_ = static_cast<int>(X.cols());
    std::vector<double> imp(static_cast<std::size_t>(n_features_), 0.0);
    for (const auto& t : trees_) {
      for (std::size_t f = 0; f < imp.size(); ++f) imp[f] += t.raw_importance()[f];
    }
    importance_ = normalized(imp);
  }

  Matrix decision_function(const Matrix& X) const {
    check_predict(X);
    Matrix F(X.rows(), k_);
    for (int c = 0; c < k_; ++c) F.col(c).setConstant(base_[static_cast<std::size_t>(c)]);
    for (std::size_t t = 0; t < trees_.size(); ++t) {
      const auto c = static_cast<Eigen::Index>(t % static_cast<std::size_t>(k_));
      for (Eigen::Index i = 0; i < X.rows(); ++i) F(i, c) += p_.learning_rate * trees_[t].predict_value(X.row(i));
    }
    return F;
  }

  Vector predict(const Matrix& X) const override {
    const Matrix F = decision_function(X);
    if (task_ == Task::regress) return F.col(0);
    Vector out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      Eigen::Index arg = 0;
      F.row(i).maxCoeff(&arg);
      out(i) = classes_[static_cast<std::size_t>(arg)];
    }
    return out;
  }

  Matrix predict_proba(const Matrix& X) const override {
    require(task_ == Task::classify, "gbt: predict_proba needs a classifier");
    return softmax_rows(decision_function(X));
  }

  std::vector<int> classes() const override { return classes_; }
  std::vector<double> importance() const override { return importance_; }
  /// Training loss before any round, then after each round: MSE for
  /// regression, mean cross-entropy for classification.
  const std::vector<double>& loss_trace() const { return loss_trace_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }

  static Matrix softmax_rows(const Matrix& F) {
    Matrix P(F.rows(), F.cols());
    for (Eigen::Index i = 0; i < F.rows(); ++i) {
      const double mx = F.row(i).maxCoeff();
      P.row(i) = (F.row(i).array() - mx).exp();
      P.row(i) /= P.row(i).sum();
    }
    return P;
  }

  void save_body(std::ostream& os) const override {
    os << "classes " << classes_.size();
    for (int c : classes_) os << ' ' << c;
    os << "\nbase " << base_.size();
    for (double b : base_) os << ' ' << format_double(b);
    os << "\nimportance " << importance_.size();
    for (double v : importance_) os << ' ' << format_double(v);
    os << "\ntrees " << trees_.size() << '\n';
    for (const auto& t : trees_) t.save(os);
  }

  void load_body(std::istream& is) override {
    classes_ = RandomForest::read_int_list(is, "classes");
    base_ = RandomForest::read_double_list(is, "base");
    importance_ = RandomForest::read_double_list(is, "importance");
    k_ = static_cast<int>(base_.size());
    std::string tag;
    std::size_t nt = 0;
    is >> tag >> nt;
    if (tag != "trees" || !is) throw ParseError("model: expected trees block");
    trees_.assign(nt, {});
    for (auto& t : trees_) t.load(is, Task::regress);
    n_features_ = static_cast<int>(importance_.size());
  }

 private:
  static double cross_entropy(const Matrix& F, const std::vector<int>& enc) {
    double loss = 0.0;
    for (Eigen::Index i = 0; i < F.rows(); ++i) {
      const double mx = F.row(i).maxCoeff();
      const double lse = mx + std::log((F.row(i).array() - mx).exp().sum());
      loss += lse - F(i, enc[static_cast<std::size_t>(i)]);
    }
    return loss / static_cast<double>(F.rows());
  }

  Task task_;
  GbtParams p_;
  int k_ = 1;
  std::vector<int> classes_;
  std::vector<double> base_;
  std::vector<DecisionTree> trees_;
  std::vector<double> loss_trace_;
  std::vector<double> importance_;
};

// ---------------------------------------------------------------------------
// multinomial logistic regression
// ---------------------------------------------------------------------------

struct LossGrad {
  double loss = 0.0;
  Matrix grad_w;  // d x K
  Vector grad_b;  // K
};

/// Mean cross-entropy of softmax(XW + b) plus (l2/2)||W||^2, with gradient.
inline LossGrad logistic_loss_grad(const Matrix& W, const Vector& b, const Matrix& X, const std::vector<int>& y,
                                   double l2) {
  const Eigen::Index n = X.rows();
  const Eigen::Index k = W.cols();
  Matrix F = X * W;
  F.rowwise() += b.transpose();
  Matrix P(n, k);
  LossGrad out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = F.row(i).maxCoeff();
    const double lse = mx + std::log((F.row(i).array() - mx).exp().sum());
    out.loss += lse - F(i, y[static_cast<std::size_t>(i)]);
    P.row(i) = (F.row(i).array() - lse).exp();
    P(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  }
  const auto nn = static_cast<double>(n);
  out.loss = out.loss / nn + 0.5 * l2 * W.squaredNorm();
  out.grad_w = X.transpose() * P / nn + l2 * W;
  out.grad_b = P.colwise().sum().transpose() / nn;
  return out;
}

struct LogisticParams {
  double l2 = 1e-3;
  int iters = 500;
  double tol = 1e-7;

  static LogisticParams from(const Params& p) {
    LogisticParams l;
    l.l2 = param_double(p, "l2", l.l2);
    l.iters = param_int(p, "iters", l.iters);
    l.tol = param_double(p, "tol", l.tol);
    return l;
  }
  Params to_params() const {
    return {{"l2", format_double(l2)}, {"iters", std::to_string(iters)}, {"tol", format_double(tol)}};
  }
};

/// Features are z-scored internally; weights start at zero and follow
/// gradient descent with Armijo backtracking.
class LogisticRegression : public Estimator {
 public:
  explicit LogisticRegression(LogisticParams p = {}) : p_(p) {
    require(p_.l2 >= 0, "logreg: l2 must be >= 0");
    require(p_.iters >= 0, "logreg: iters must be >= 0");
  }

  std::string family() const override { return "logreg"; }
  Task task() const override { return Task::classify; }
  Params params() const override { return p_.to_params(); }

  void fit(const Matrix& X, const Vector& y, std::uint64_t) override {
    check_fit(X, y);
    classes_ = distinct_labels(y);
    if (classes_.size() < 2) throw ValidationError("logreg: need at least two classes, got " + std::to_string(classes_.size()));
    const auto enc = encode_labels(y, classes_);
    mean_ = X.colwise().mean();
    scale_.resize(X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const double sd = std::sqrt((X.col(c).array() - mean_(c)).square().mean());
      scale_(c) = sd > 1e-12 ? sd : 1.0;
    }
    const Matrix Z = standardize(X);
    const auto k = static_cast<Eigen::Index>(classes_.size());
    W_ = Matrix::Zero(X.cols(), k);
    b_ = Vector::Zero(k);
    double step = 1.0;
    loss_trace_.clear();
    LossGrad g = logistic_loss_grad(W_, b_, Z, enc, p_.l2);
    loss_trace_.push_back(g.loss);
    for (int it = 0; it < p_.iters; ++it) {
      const double gnorm2 = g.grad_w.squaredNorm() + g.grad_b.squaredNorm();
      if (std::sqrt(gnorm2) < p_.tol) break;
      for (int bt = 0; bt < 60; ++bt) {
        const Matrix W2 = W_ - step * g.grad_w;
        const Vector b2 = b_ - step * g.grad_b;
        LossGrad g2 = logistic_loss_grad(W2, b2, Z, enc, p_.l2);
        if (g2.loss <= g.loss - 0.5 * step * gnorm2) {
          W_ = W2;
          b_ = b2;
          g = std::move(g2);
          step = std::min(step * 2.0, 64.0);
          break;
        }
        step *= 0.5;
      }
      loss_trace_.push_back(g.loss);
    }
    n_features_ = static_cast<int>(X.cols());
  }

  Matrix predict_proba(const Matrix& X) const override {
    check_predict(X);
    Matrix F = standardize(X) * W_;
    F.rowwise() += b_.transpose();
    return GradientBoosting::softmax_rows(F);
  }

  Vector predict(const Matrix& X) const override {
    const Matrix P = predict_proba(X);
    Vector out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      Eigen::Index arg = 0;
      P.row(i).maxCoeff(&arg);
      out(i) = classes_[static_cast<std::size_t>(arg)];
    }
    return out;
  }

  std::vector<int> classes() const override { return classes_; }
  const Matrix& weights() const { return W_; }
  const std::vector<double>& loss_trace() const { return loss_trace_; }

  void save_body(std::ostream& os) const override {
    os << "classes " << classes_.size();
    for (int c : classes_) os << ' ' << c;
    os << '\n';
    write_vec(os, "mean", mean_);
    write_vec(os, "scale", scale_);
    write_vec(os, "bias", b_);
    write_vec(os, "weights", Eigen::Map<const Vector>(W_.data(), W_.size()));
  }

  void load_body(std::istream& is) override {
    classes_ = RandomForest::read_int_list(is, "classes");
    mean_ = read_vec(is, "mean");
    scale_ = read_vec(is, "scale");
    b_ = read_vec(is, "bias");
    const Vector w = read_vec(is, "weights");
    if (w.size() != mean_.size() * b_.size()) throw ParseError("model: weight block has wrong size");
    W_ = Eigen::Map<const Matrix>(w.data(), mean_.size(), b_.size());
    n_features_ = static_cast<int>(mean_.size());
  }

  static void write_vec(std::ostream& os, const std::string& tag, const Eigen::Ref<const Vector>& v) {
    os << tag << ' ' << v.size();
    for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << format_double(v(i));
    os << '\n';
  }

  static Vector read_vec(std::istream& is, const std::string& tag) {
    const auto v = RandomForest::read_double_list(is, tag);
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

 private:
  Matrix standardize(const Matrix& X) const {
    return (X.rowwise() - mean_.transpose()).array().rowwise() / scale_.transpose().array();
  }

  LogisticParams p_;
  std::vector<int> classes_;
  Vector mean_;
  Vector scale_;
  Matrix W_;
  Vector b_;
  std::vector<double> loss_trace_;
};

// ---------------------------------------------------------------------------
// elastic net
// ---------------------------------------------------------------------------

struct LinearModel {
  Vector weights;
  double intercept = 0.0;
  double alpha = 0.0;
  double l1_ratio = 0.0;
  int iterations = 0;

  Vector predict(const Matrix& X) const { return (X * weights).array() + intercept; }
};

/// Coordinate descent on
///   1/(2n) ||y - Xw - b||^2 + alpha*l1_ratio*||w||_1 + alpha*(1-l1_ratio)/2*||w||^2
/// with an unpenalized intercept.
inline LinearModel elastic_net_fit(const Matrix& X, const Vector& y, double alpha, double l1_ratio,
                                   int max_iter = 100000, double tol = 1e-12) {
  require(X.rows() == y.size() && X.rows() >= 1, "elastic_net: X and y row counts differ");
  require(X.allFinite() && y.allFinite(), "elastic_net: non-finite input");
  require(alpha >= 0, "elastic_net: alpha must be >= 0");
  require(l1_ratio >= 0 && l1_ratio <= 1, "elastic_net: l1_ratio must be in [0, 1]");
  const auto n = static_cast<double>(X.rows());
  const Vector xm = X.colwise().mean();
  const double ym = y.mean();
  const Matrix Xc = X.rowwise() - xm.transpose();
  const Vector yc = y.array() - ym;
  const Vector z = Xc.colwise().squaredNorm().transpose() / n;
  const double l1 = alpha * l1_ratio;
  const double l2 = alpha * (1.0 - l1_ratio);

  LinearModel m;
  m.alpha = alpha;
  m.l1_ratio = l1_ratio;
  m.weights = Vector::Zero(X.cols());
  Vector r = yc;
  for (int it = 0; it < max_iter; ++it) {
    double max_step = 0.0;
    double max_w = 0.0;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const double old = m.weights(j);
      const double denom = z(j) + l2;
      double w = 0.0;
      if (denom > 0) {
        const double rho = Xc.col(j).dot(r) / n + z(j) * old;
        w = (rho > l1 ? rho - l1 : rho < -l1 ? rho + l1 : 0.0) / denom;
      }
      if (w != old) {
        r -= (w - old) * Xc.col(j);
        m.weights(j) = w;
      }
      max_step = std::max(max_step, std::abs(w - old));
      max_w = std::max(max_w, std::abs(w));
    }
    m.iterations = it + 1;
    if (max_step <= tol * std::max(1.0, max_w)) break;
  }
  m.intercept = ym - xm.dot(m.weights);
  return m;
}

struct LinearParams {
  double alpha = 1.0;
  double l1_ratio = 0.5;
  int max_iter = 10000;
};

/// Elastic net on internally z-scored features; reported weights are mapped
/// back to the original feature scale.
class LinearRegressor : public Estimator {
 public:
  LinearRegressor(std::string family, LinearParams p) : family_(std::move(family)), p_(p) {
    require(p_.alpha >= 0, family_ + ": alpha must be >= 0");
  }

  std::string family() const override { return family_; }
  Task task() const override { return Task::regress; }
  Params params() const override {
    return {{"alpha", format_double(p_.alpha)}, {"l1_ratio", format_double(p_.l1_ratio)},
            {"max_iter", std::to_string(p_.max_iter)}};
  }

  void fit(const Matrix& X, const Vector& y, std::uint64_t) override {
    check_fit(X, y);
    const Vector mean = X.colwise().mean();
    Vector scale(X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const double sd = std::sqrt((X.col(c).array() - mean(c)).square().mean());
      scale(c) = sd > 1e-12 ? sd : 1.0;
    }
    const Matrix Z = (X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    const LinearModel zm = elastic_net_fit(Z, y, p_.alpha, p_.l1_ratio, p_.max_iter, 1e-9);
    model_ = zm;
    model_.weights = zm.weights.array() / scale.array();
    model_.intercept = zm.intercept - mean.dot(model_.weights);
    n_features_ = static_cast<int>(X.cols());
  }

  Vector predict(const Matrix& X) const override {
    check_predict(X);
    return model_.predict(X);
  }

  const LinearModel& model() const { return model_; }

  void save_body(std::ostream& os) const override {
    LogisticRegression::write_vec(os, "weights", model_.weights);
    os << "intercept " << format_double(model_.intercept) << '\n';
  }

  void load_body(std::istream& is) override {
    model_.weights = LogisticRegression::read_vec(is, "weights");
    std::string tag;
    std::string v;
    is >> tag >> v;
    auto d = parse_double(v);
    if (tag != "intercept" || !d) throw ParseError("model: expected intercept");
    model_.intercept = *d;
    model_.alpha = p_.alpha;
    model_.l1_ratio = p_.l1_ratio;
    n_features_ = static_cast<int>(model_.weights.size());
  }

 private:
  std::string family_;
  LinearParams p_;
  LinearModel model_;
};

// ---------------------------------------------------------------------------
// factory and model files
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& estimator_families() {
  static const std::vector<std::string> f = {"rf", "gbt", "logreg", "lasso", "ridge", "elasticnet"};
  return f;
}

inline std::unique_ptr<Estimator> make_estimator(const std::string& family, Task task, const Params& params = {}) {
  auto mismatch = [&] {
    return ValidationError("model family '" + family + "' does not support task " + to_string(task));
  };
  if (family == "rf") return std::make_unique<RandomForest>(task, ForestParams::from(params));
  if (family == "gbt") return std::make_unique<GradientBoosting>(task, GbtParams::from(params));
  if (family == "logreg") {
    if (task != Task::classify) throw mismatch();
    return std::make_unique<LogisticRegression>(LogisticParams::from(params));
  }
  if (family == "lasso" || family == "ridge" || family == "elasticnet") {
    if (task != Task::regress) throw mismatch();
    LinearParams lp;
    lp.l1_ratio = family == "lasso" ? 1.0 : family == "ridge" ? 0.0 : 0.5;
    lp.alpha = family == "lasso" ? 0.01 : family == "ridge" ? 1.0 : 0.01;
    lp.alpha = param_double(params, "alpha", lp.alpha);
    if (family == "elasticnet") lp.l1_ratio = param_double(params, "l1_ratio", lp.l1_ratio);
    lp.max_iter = param_int(params, "max_iter", lp.max_iter);
    return std::make_unique<LinearRegressor>(family, lp);
  }
  throw ValidationError("unknown model family '" + family + "'");
}

inline constexpr const char* kModelMagic = "repforge-model";
inline constexpr int kModelFormatVersion = 1;

inline std::uint64_t schema_hash(const std::vector<std::string>& names) {
  std::string joined;
  for (const auto& n : names) joined += n + "\n";
  return fnv1a(joined);
}

struct ModelFile {
  std::unique_ptr<Estimator> model;
  std::vector<std::string> feature_names;
  std::uint64_t schema = 0;
};

inline void save_model(std::ostream& os, const Estimator& m, const std::vector<std::string>& feature_names) {
  require(m.fitted(), "save_model: model is not fitted");
  require(static_cast<int>(feature_names.size()) == m.n_features(), "save_model: feature name count mismatch");
  os << kModelMagic << ' ' << kModelFormatVersion << '\n';
  os << "family " << m.family() << '\n';
  os << "task " << to_string(m.task()) << '\n';
  os << "schema " << hex64(schema_hash(feature_names)) << '\n';
  os << "features " << feature_names.size();
  for (const auto& f : feature_names) os << ' ' << f;
  os << '\n';
  const auto ps = m.params();
  os << "params " << ps.size() << '\n';
  for (const auto& [k, v] : ps) os << k << ' ' << v << '\n';
  m.save_body(os);
  os << "end\n";
}

/// Leading `#` lines (provenance) are skipped.
inline ModelFile load_model(std::istream& is) {
  for (std::string line; is.peek() == '#';) std::getline(is, line);
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != kModelMagic) throw ParseError("model: not a repforge model file");
  if (version != kModelFormatVersion) throw ParseError("model: unsupported format version " + std::to_string(version));
  std::string tag;
  std::string family;
  std::string task;
  std::string schema;
  is >> tag >> family;
  if (tag != "family") throw ParseError("model: expected family");
  is >> tag >> task;
  if (tag != "task") throw ParseError("model: expected task");
  is >> tag >> schema;
  if (tag != "schema") throw ParseError("model: expected schema");
  ModelFile mf;
  std::size_t nf = 0;
  is >> tag >> nf;
  if (tag != "features") throw ParseError("model: expected features");
  mf.feature_names.resize(nf);
  for (auto& f : mf.feature_names) is >> f;
  std::size_t np = 0;
  is >> tag >> np;
  if (tag != "params" || !is) throw ParseError("model: expected params");
  Params ps;
  for (std::size_t i = 0; i < np; ++i) {
    std::string k;
    std::string v;
    is >> k >> v;
    ps[k] = v;
  }
  mf.schema = schema_hash(mf.feature_names);
  if (hex64(mf.schema) != schema) throw ParseError("model: schema hash does not match feature names");
  mf.model = make_estimator(family, parse_task(task), ps);
  mf.model->load_body(is);
  is >> tag;
  if (tag != "end") throw ParseError("model: missing end marker");
  return mf;
}

}  // namespace repforge

#endif  // REPFORGE_LEARNERS_HPP
