#ifndef REPFORGE_EMBEDDING_HPP
#define REPFORGE_EMBEDDING_HPP

// Standardization, PCA, exact t-SNE, k-means, silhouette-based k selection,
// DBSCAN and SMOTE.

#include <repforge/core.hpp>

#include <Eigen/Eigenvalues>

#include <map>
#include <numeric>
#include <random>
#include <set>

namespace repforge {

// ---------------------------------------------------------------------------
// standardization
// ---------------------------------------------------------------------------

/// Column z-scoring. Columns with no spread are flagged constant and map to 0.
/// `fitted_on` keeps the dataset row ids the stats came from so callers can
/// audit that no evaluation row contributed.
struct StandardizationStats {
  Vector mean;
  Vector std;
  std::vector<bool> constant;
  IndexList fitted_on;

  static StandardizationStats fit(const Matrix& X, IndexList row_ids = {}) {
    require(X.rows() >= 1, "standardize: no rows");
    require(X.allFinite(), "standardize: non-finite input");
    StandardizationStats s;
    const auto n = static_cast<double>(X.rows());
    s.mean = X.colwise().mean();
    s.std.resize(X.cols());
    s.constant.resize(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const double var = (X.col(c).array() - s.mean(c)).square().sum() / n;
      const double sd = std::sqrt(var);
      const bool flat = sd <= 1e-12 * std::max(1.0, std::abs(s.mean(c)));
      s.constant[static_cast<std::size_t>(c)] = flat;
      s.std(c) = flat ? 1.0 : sd;
    }
    s.fitted_on = std::move(row_ids);
    return s;
  }

  Matrix transform(const Matrix& X) const {
    require(X.cols() == mean.size(), "standardize: column count mismatch");
    Matrix Z = (X.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
    for (std::size_t c = 0; c < constant.size(); ++c) {
      if (constant[c]) Z.col(static_cast<Eigen::Index>(c)).setZero();
    }
    return Z;
  }
};

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaModel {
  Vector mean;
  Matrix components;           // d x c, orthonormal columns
  Vector explained_variance;   // c entries, sample variance (n-1)
  double total_variance = 0.0;

  Matrix transform(const Matrix& X) const {
    require(X.cols() == mean.size(), "pca: column count mismatch");
    return (X.rowwise() - mean.transpose()) * components;
  }

  Matrix inverse_transform(const Matrix& Z) const {
    require(Z.cols() == components.cols(), "pca: component count mismatch");
    return (Z * components.transpose()).rowwise() + mean.transpose();
  }

  Vector explained_ratio() const {
    return total_variance > 0 ? Vector(explained_variance / total_variance)
                              : Vector(Vector::Zero(explained_variance.size()));
  }
};

/// Top eigenvectors of the sample covariance. Each component is flipped so its
/// largest-magnitude loading is positive.
inline PcaModel pca_fit(const Matrix& X, int n_components) {
  require(X.allFinite(), "pca: non-finite input");
  require(X.rows() >= 2, "pca: need at least two rows");
  require(n_components >= 1 && n_components <= X.cols(),
          "pca: n_components must be in [1, " + std::to_string(X.cols()) + "]");
  PcaModel m;
  m.mean = X.colwise().mean();
  const Matrix C = X.rowwise() - m.mean.transpose();
  const Matrix cov = (C.transpose() * C) / static_cast<double>(X.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  require(es.info() == Eigen::Success, "pca: eigendecomposition failed");
  const Eigen::Index d = X.cols();
  m.components.resize(d, n_components);
  m.explained_variance.resize(n_components);
  m.total_variance = cov.trace();
  for (int k = 0; k < n_components; ++k) {
    const Eigen::Index src = d - 1 - k;  // eigenvalues come ascending
    Vector v = es.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    m.components.col(k) = v;
    m.explained_variance(k) = std::max(0.0, es.eigenvalues()(src));
  }
  return m;
}

// ---------------------------------------------------------------------------
// distances
// ---------------------------------------------------------------------------

inline Matrix pairwise_sq_distances(const Matrix& X) {
  const Vector sq = X.rowwise().squaredNorm();
  Matrix D = (-2.0 * X * X.transpose()).colwise() + sq;
  D.rowwise() += sq.transpose();
  D = D.cwiseMax(0.0);
  D.diagonal().setZero();
  return D;
}

// ---------------------------------------------------------------------------
// t-SNE (exact)
// ---------------------------------------------------------------------------

struct TsneParams {
  double perplexity = 30.0;
  int iterations = 1000;
  double early_exaggeration = 12.0;
  int exaggeration_iters = 250;
  double learning_rate = 200.0;
  double momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch_iter = 250;
};

namespace detail {

/// Row-conditional affinities whose entropy matches log(perplexity).
inline Matrix conditional_affinities(const Matrix& D, double perplexity) {
  const Eigen::Index n = D.rows();
  const double target = std::log(perplexity);
  Matrix P = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    // distances relative to the nearest neighbour keep exp() in range
    double dmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) dmin = std::min(dmin, D(i, j));
    }
    for (int it = 0; it < 200; ++it) {
      double sum = 0.0;
      double wsum = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double p = std::exp(-beta * (D(i, j) - dmin));
        P(i, j) = p;
        sum += p;
        wsum += p * (D(i, j) - dmin);
      }
      const double H = std::log(sum) + beta * wsum / sum;
      for (Eigen::Index j = 0; j < n; ++j) P(i, j) /= sum;
      const double diff = H - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = std::isinf(lo) ? beta / 2.0 : 0.5 * (beta + lo);
      }
    }
  }
  return P;
}

}  // namespace detail

inline Matrix tsne_embed(const Matrix& X, std::uint64_t seed, const TsneParams& p = {}) {
  const Eigen::Index n = X.rows();
  require(X.allFinite(), "tsne: non-finite input");
  require(p.perplexity > 0, "tsne: perplexity must be positive");
  if (static_cast<double>(n) < 3.0 * p.perplexity || n < 2) {
    throw ValidationError("tsne: perplexity " + format_double(p.perplexity) + " too large for " + std::to_string(n) +
                          " points (need n >= 3*perplexity)");
  }
  const Matrix cond = detail::conditional_affinities(pairwise_sq_distances(X), p.perplexity);
  Matrix P = ((cond + cond.transpose()) / (2.0 * static_cast<double>(n))).cwiseMax(1e-12);
  P.diagonal().setZero();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1e-4);
  Matrix Y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    Y(i, 0) = gauss(rng);
    Y(i, 1) = gauss(rng);
  }
  Matrix update = Matrix::Zero(n, 2);
  Matrix gains = Matrix::Ones(n, 2);
  Matrix num(n, n);
  Matrix grad(n, 2);

  for (int iter = 0; iter < p.iterations; ++iter) {
    const double exag = iter < p.exaggeration_iters ? p.early_exaggeration : 1.0;
    const double mom = iter < p.momentum_switch_iter ? p.momentum : p.final_momentum;
    double zsum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double dx = Y(i, 0) - Y(j, 0);
        const double dy = Y(i, 1) - Y(j, 1);
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        num(i, j) = q;
        num(j, i) = q;
        zsum += 2.0 * q;
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      double gx = 0.0;
      double gy = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double q = num(i, j);
        const double w = (exag * P(i, j) - q / zsum) * q;
        gx += w * (Y(i, 0) - Y(j, 0));
        gy += w * (Y(i, 1) - Y(j, 1));
      }
      grad(i, 0) = 4.0 * gx;
      grad(i, 1) = 4.0 * gy;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int c = 0; c < 2; ++c) {
        const bool same = (grad(i, c) > 0) == (update(i, c) > 0);
        gains(i, c) = same ? std::max(0.01, gains(i, c) * 0.8) : gains(i, c) + 0.2;
        update(i, c) = mom * update(i, c) - p.learning_rate * gains(i, c) * grad(i, c);
        Y(i, c) += update(i, c);
      }
    }
    Y.rowwise() -= Y.colwise().mean();
  }
  return Y;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansResult {
  std::vector<int> assignments;
  Matrix centroids;
  double inertia = 0.0;
  std::vector<double> inertia_trace;  // per iteration of the winning restart
};

namespace detail {

inline KMeansResult kmeans_once(const Matrix& X, int k, std::uint64_t seed, int max_iter) {
  const Eigen::Index n = X.rows();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // k-means++ seeding
  Matrix C(k, X.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  C.row(0) = X.row(pick(rng));
  Vector d2 = (X.rowwise() - C.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total <= 0) {
      chosen = pick(rng);
    } else {
      double r = unit(rng) * total;
      for (chosen = 0; chosen < n - 1; ++chosen) {
        r -= d2(chosen);
        if (r < 0 && d2(chosen) > 0) break;
      }
      while (d2(chosen) <= 0 && chosen > 0) --chosen;
    }
    C.row(c) = X.row(chosen);
    d2 = d2.cwiseMin((X.rowwise() - C.row(c)).rowwise().squaredNorm());
  }

  KMeansResult r;
  r.assignments.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    Vector best_d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (X.row(i) - C.row(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      best_d(i) = bd;
      inertia += bd;
      if (r.assignments[static_cast<std::size_t>(i)] != best) {
        r.assignments[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    r.inertia_trace.push_back(inertia);
    r.inertia = inertia;
    if (!changed && iter > 0) break;

    Matrix sums = Matrix::Zero(k, X.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = r.assignments[static_cast<std::size_t>(i)];
      sums.row(a) += X.row(i);
      ++counts[static_cast<std::size_t>(a)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        C.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
      } else {
        // empty cluster takes the point farthest from its centroid
        Eigen::Index far = 0;
        best_d.maxCoeff(&far);
        C.row(c) = X.row(far);
        best_d(far) = 0.0;
      }
    }
  }
  r.centroids = C;
  return r;
}

}  // namespace detail

/// Lloyd iterations from k-means++ seeds; the restart with the lowest inertia
/// wins (ties keep the earlier restart).
inline KMeansResult kmeans(const Matrix& X, int k, int restarts, std::uint64_t seed, int max_iter = 300) {
  require(k >= 1, "kmeans: k must be >= 1");
  require(k <= X.rows(), "kmeans: k=" + std::to_string(k) + " exceeds n=" + std::to_string(X.rows()));
  require(restarts >= 1, "kmeans: restarts must be >= 1");
  require(X.allFinite(), "kmeans: non-finite input");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    KMeansResult cand = detail::kmeans_once(X, k, derive_seed(seed, static_cast<std::uint64_t>(r)), max_iter);
    if (cand.inertia < best.inertia) best = std::move(cand);
  }
  return best;
}

// ---------------------------------------------------------------------------
// cluster quality
// ---------------------------------------------------------------------------

inline double silhouette_score(const Matrix& X, const std::vector<int>& labels) {
  require(static_cast<Eigen::Index>(labels.size()) == X.rows(), "silhouette: label count mismatch");
  std::map<int, int> sizes;
  for (int l : labels) ++sizes[l];
  require(sizes.size() >= 2, "silhouette: need at least two clusters");
  const Matrix D = pairwise_sq_distances(X).cwiseSqrt();
  const auto n = labels.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sizes[labels[i]] == 1) continue;
    std::map<int, double> sum;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sum[labels[j]] += D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    const double a = sum[labels[i]] / (sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, s] : sum) {
      if (l != labels[i]) b = std::min(b, s / sizes[l]);
    }
    const double m = std::max(a, b);
    if (m > 0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

struct KSelection {
  int k = 0;
  std::vector<std::pair<int, double>> scores;  // (k, silhouette)
};

/// Silhouette-maximizing k over [k_lo, k_hi] (clipped to n-1); ties go to
/// the smaller k.
inline KSelection select_k(const Matrix& X, int k_lo, int k_hi, std::uint64_t seed, int restarts = 10) {
  const int hi = std::min<int>(k_hi, static_cast<int>(X.rows()) - 1);
  if (k_lo < 2 || hi < k_lo) throw ValidationError("select_k: empty k range");
  KSelection sel;
  double best = -std::numeric_limits<double>::infinity();
  for (int k = k_lo; k <= hi; ++k) {
    const auto km = kmeans(X, k, restarts, derive_seed(seed, static_cast<std::uint64_t>(k)));
    std::set<int> used(km.assignments.begin(), km.assignments.end());
    const double s = used.size() >= 2 ? silhouette_score(X, km.assignments) : -1.0;
    sel.scores.emplace_back(k, s);
    if (s > best) {
      best = s;
      sel.k = k;
    }
  }
  return sel;
}

inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  require(a.size() == b.size() && !a.empty(), "ari: label vectors must be non-empty and equal length");
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra;
  std::map<int, double> rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2.0; };
  double index = 0, sa = 0, sb = 0;
  for (const auto& [_, v] : joint) index += c2(v);
  for (const auto& [_, v] : ra) sa += c2(v);
  for (const auto& [_, v] : rb) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// DBSCAN
// ---------------------------------------------------------------------------

inline constexpr int kNoise = -1;

/// Density clustering; a point is core when its eps-ball (itself included)
/// holds at least min_pts points.
inline std::vector<int> dbscan(const Matrix& X, double eps, int min_pts) {
  require(eps > 0, "dbscan: eps must be positive");
  require(min_pts >= 1, "dbscan: min_pts must be >= 1");
  const Eigen::Index n = X.rows();
  const Matrix D = pairwise_sq_distances(X);
  const double e2 = eps * eps;
  std::vector<std::vector<Eigen::Index>> nbr(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (D(i, j) <= e2) nbr[static_cast<std::size_t>(i)].push_back(j);
    }
  }
  std::vector<int> label(static_cast<std::size_t>(n), -2);
  int cluster = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (label[static_cast<std::size_t>(i)] != -2) continue;
    if (static_cast<int>(nbr[static_cast<std::size_t>(i)].size()) < min_pts) {
      label[static_cast<std::size_t>(i)] = kNoise;
      continue;
    }
    label[static_cast<std::size_t>(i)] = cluster;
    std::vector<Eigen::Index> frontier = nbr[static_cast<std::size_t>(i)];
    for (std::size_t f = 0; f < frontier.size(); ++f) {
      const auto j = static_cast<std::size_t>(frontier[f]);
      if (label[j] == kNoise) label[j] = cluster;
      if (label[j] != -2) continue;
      label[j] = cluster;
      if (static_cast<int>(nbr[j].size()) >= min_pts) {
        frontier.insert(frontier.end(), nbr[j].begin(), nbr[j].end());
      }
    }
    ++cluster;
  }
  return label;
}

// ---------------------------------------------------------------------------
// SMOTE
// ---------------------------------------------------------------------------

/// Where an output row came from. Originals have `a` = source row and
/// `b` = -1; synthetic rows lie at a + u * (b - a).
struct SmoteOrigin {
  std::ptrdiff_t a = -1;
  std::ptrdiff_t b = -1;
  double u = 0.0;
  bool synthetic() const { return b >= 0; }
};

struct SmoteResult {
  Matrix X;
  std::vector<int> labels;
  std::vector<SmoteOrigin> origin;
};

/// Oversamples every class up to the majority count. Originals come first,
/// unchanged and in input order.
inline SmoteResult smote(const Matrix& X, const std::vector<int>& labels, int k_neighbors, std::uint64_t seed) {
  require(static_cast<Eigen::Index>(labels.size()) == X.rows(), "smote: label count mismatch");
  require(k_neighbors >= 1, "smote: k_neighbors must be >= 1");
  require(X.allFinite(), "smote: non-finite input");
  std::map<int, IndexList> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  std::size_t target = 0;
  for (const auto& [_, m] : members) target = std::max(target, m.size());

  std::size_t total = labels.size();
  for (const auto& [cls, m] : members) {
    if (m.size() < target && m.size() < 2) {
      throw ValidationError("smote: class " + std::to_string(cls) + " has a single member; cannot interpolate");
    }
    total += target - m.size();
  }

  SmoteResult out;
  out.X.resize(static_cast<Eigen::Index>(total), X.cols());
  out.X.topRows(X.rows()) = X;
  out.labels = labels;
  for (std::size_t i = 0; i < labels.size(); ++i) out.origin.push_back({static_cast<std::ptrdiff_t>(i), -1, 0.0});

  Eigen::Index row = X.rows();
  for (const auto& [cls, m] : members) {
    const std::size_t need = target - m.size();
    if (need == 0) continue;
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(static_cast<std::int64_t>(cls))));
    std::uniform_int_distribution<std::size_t> pick_base(0, m.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // k nearest distinct same-class neighbours of every member
    std::vector<IndexList> knn(m.size());
    for (std::size_t p = 0; p < m.size(); ++p) {
      std::vector<std::pair<double, std::size_t>> d;
      for (std::size_t q = 0; q < m.size(); ++q) {
        if (q == p) continue;
        const double dist = (X.row(static_cast<Eigen::Index>(m[p])) - X.row(static_cast<Eigen::Index>(m[q]))).squaredNorm();
        if (dist > 0) d.emplace_back(dist, q);
      }
      std::sort(d.begin(), d.end());
      const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k_neighbors), d.size());
      for (std::size_t t = 0; t < kk; ++t) knn[p].push_back(d[t].second);
    }

    for (std::size_t s = 0; s < need; ++s) {
      std::size_t p = pick_base(rng);
      for (std::size_t tries = 0; knn[p].empty() && tries < m.size(); ++tries) p = (p + 1) % m.size();
      if (knn[p].empty()) {
        throw ValidationError("smote: class " + std::to_string(cls) + " has no two distinct points");
      }
      std::uniform_int_distribution<std::size_t> pick_nb(0, knn[p].size() - 1);
      const std::size_t q = knn[p][pick_nb(rng)];
      double u = 0.0;
      while (u <= 0.0 || u >= 1.0) u = unit(rng);
      const auto ia = static_cast<Eigen::Index>(m[p]);
      const auto ib = static_cast<Eigen::Index>(m[q]);
      out.X.row(row) = X.row(ia) + u * (X.row(ib) - X.row(ia));
      out.labels.push_back(cls);
      out.origin.push_back({ia, ib, u});
      ++row;
    }
  }
  return out;
}

}  // namespace repforge

#endif  // REPFORGE_EMBEDDING_HPP
