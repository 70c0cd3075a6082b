#include <repforge/embedding.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace repforge;

namespace {

struct Blobs {
  Matrix X;
  std::vector<int> labels;
};

Blobs make_blobs(int k, int per, int dims, double spread, std::uint64_t seed, double sep = 10.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, spread);
  Blobs b;
  b.X.resize(k * per, dims);
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < per; ++i) {
      const int r = c * per + i;
      for (int d = 0; d < dims; ++d) {
        // centers on a simplex-like layout: axis c (mod dims) shifted by sep
        const double center = (d == c % dims ? sep : 0.0) + (c >= dims && d == 0 ? -sep : 0.0);
        b.X(r, d) = center + g(rng);
      }
      b.labels.push_back(c);
    }
  }
  return b;
}

// Largest eigenpair by power iteration, for cross-checking the eigensolver.
std::pair<double, Vector> power_iteration(const Matrix& A) {
  Vector v = Vector::Ones(A.rows()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 5000; ++it) {
    const Vector w = A * v;
    const double next = v.dot(w);
    v = w.normalized();
    if (std::abs(next - lambda) < 1e-15 * std::abs(next)) break;
    lambda = next;
  }
  return {v.dot(A * v), v};
}

// Plain silhouette from the definition, with explicit loops.
double silhouette_oracle(const Matrix& X, const std::vector<int>& l) {
  const auto n = static_cast<std::size_t>(X.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::pair<double, int>> acc;
    int own = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (l[j] == l[i]) ++own;
      if (j == i) continue;
      const double d = (X.row(static_cast<Eigen::Index>(i)) - X.row(static_cast<Eigen::Index>(j))).norm();
      acc[l[j]].first += d;
      acc[l[j]].second += 1;
    }
    if (own == 1) continue;
    const double a = acc[l[i]].first / acc[l[i]].second;
    double b = 1e300;
    for (const auto& [c, v] : acc) {
      if (c != l[i]) b = std::min(b, v.first / v.second);
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST(Standardize, ConstantColumnFlaggedAndZeroed) {
  Matrix X(4, 2);
  X << 1, 5, 2, 5, 3, 5, 4, 5;
  const auto s = StandardizationStats::fit(X, {0, 1, 2, 3});
  EXPECT_FALSE(s.constant[0]);
  EXPECT_TRUE(s.constant[1]);
  const Matrix Z = s.transform(X);
  EXPECT_NEAR(Z.col(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(std::sqrt(Z.col(0).squaredNorm() / 4.0), 1.0, 1e-12);
  EXPECT_TRUE(Z.col(1).isZero(0.0));
  EXPECT_EQ(s.fitted_on.size(), 4u);
}

TEST(Pca, LineGivesDiagonalAxis) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix X(400, 2);
  for (int i = 0; i < 400; ++i) {
    const double t = g(rng);
    X(i, 0) = t + 1e-3 * g(rng);
    X(i, 1) = t + 1e-3 * g(rng);
  }
  const PcaModel m = pca_fit(X, 2);
  EXPECT_NEAR(m.components(0, 0), 1.0 / std::sqrt(2.0), 1e-3);
  EXPECT_NEAR(m.components(1, 0), 1.0 / std::sqrt(2.0), 1e-3);
  EXPECT_GT(m.explained_ratio()(0), 0.99);
}

TEST(Pca, IsotropicVariancesEqual) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix X(20000, 3);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (int d = 0; d < 3; ++d) X(i, d) = g(rng);
  }
  const PcaModel m = pca_fit(X, 3);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(m.explained_variance(k), 1.0, 0.05);
}

TEST(Pca, StructuralProperties) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  const int d = 6;
  Matrix A(d, d);
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < d; ++c) A(r, c) = g(rng);
  }
  Matrix X(300, d);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Vector z(d);
    for (int c = 0; c < d; ++c) z(c) = g(rng) * (c + 1);
    X.row(i) = (A * z).transpose();
  }
  const PcaModel m = pca_fit(X, d);
  const Matrix gram = m.components.transpose() * m.components;
  EXPECT_LT((gram - Matrix::Identity(d, d)).cwiseAbs().maxCoeff(), 1e-8);
  for (int k = 1; k < d; ++k) EXPECT_LE(m.explained_variance(k), m.explained_variance(k - 1));

  const Matrix Z = m.transform(X);
  EXPECT_LT((m.inverse_transform(Z) - X).cwiseAbs().maxCoeff(), 1e-9);
  for (int k = 0; k < d; ++k) {
    EXPECT_NEAR(Z.col(k).mean(), 0.0, 1e-9);
    const double var = Z.col(k).squaredNorm() / static_cast<double>(X.rows() - 1);
    EXPECT_NEAR(var, m.explained_variance(k), 1e-9 * m.explained_variance(0));
  }

  // leading eigenpair against power iteration on the covariance
  const Matrix C = X.rowwise() - X.colwise().mean();
  const Matrix cov = C.transpose() * C / static_cast<double>(X.rows() - 1);
  const auto [lambda, v] = power_iteration(cov);
  EXPECT_NEAR(m.explained_variance(0), lambda, 1e-9 * lambda);
  EXPECT_NEAR(std::abs(m.components.col(0).dot(v)), 1.0, 1e-9);
  Eigen::Index arg = 0;
  m.components.col(0).cwiseAbs().maxCoeff(&arg);
  EXPECT_GT(m.components(arg, 0), 0.0);
}

TEST(Pca, Errors) {
  Matrix X(5, 2);
  X.setRandom();
  EXPECT_THROW(pca_fit(X, 3), ValidationError);
  EXPECT_THROW(pca_fit(X, 0), ValidationError);
  X(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(pca_fit(X, 1), ValidationError);
}

TEST(Tsne, ThreeBlobsRecovered) {
  const Blobs b = make_blobs(3, 100, 5, 1.0, 11);
  const Matrix Y = tsne_embed(b.X, 5);
  const auto km = kmeans(Y, 3, 10, 6);
  EXPECT_GE(adjusted_rand_index(km.assignments, b.labels), 0.9);
}

TEST(Tsne, DeterministicForSeed) {
  const Blobs b = make_blobs(2, 40, 3, 1.0, 12);
  TsneParams p;
  p.perplexity = 10;
  p.iterations = 300;
  const Matrix a = tsne_embed(b.X, 9, p);
  const Matrix c = tsne_embed(b.X, 9, p);
  EXPECT_TRUE((a.array() == c.array()).all());
  const Matrix other = tsne_embed(b.X, 10, p);
  EXPECT_FALSE((a.array() == other.array()).all());
}

TEST(Tsne, DuplicatesStayTogether) {
  Blobs b = make_blobs(2, 40, 3, 1.0, 13);
  b.X.row(5) = b.X.row(17);
  TsneParams p;
  p.perplexity = 10;
  p.iterations = 500;
  const Matrix Y = tsne_embed(b.X, 4, p);
  double diameter = 0.0;
  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
    for (Eigen::Index j = 0; j < Y.rows(); ++j) diameter = std::max(diameter, (Y.row(i) - Y.row(j)).norm());
  }
  EXPECT_LT((Y.row(5) - Y.row(17)).norm(), 0.02 * diameter);
}

TEST(Tsne, PerplexityTooLarge) {
  Matrix X(20, 2);
  X.setRandom();
  TsneParams p;
  p.perplexity = 7;
  EXPECT_THROW(tsne_embed(X, 1, p), ValidationError);
}

TEST(Tsne, AffinityEntropyMatchesPerplexity) {
  const Blobs b = make_blobs(2, 30, 2, 1.0, 14);
  const Matrix P = detail::conditional_affinities(pairwise_sq_distances(b.X), 8.0);
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    double h = 0.0;
    for (Eigen::Index j = 0; j < P.cols(); ++j) {
      if (P(i, j) > 0) h -= P(i, j) * std::log(P(i, j));
    }
    EXPECT_NEAR(std::exp(h), 8.0, 1e-3);
    EXPECT_NEAR(P.row(i).sum(), 1.0, 1e-12);
  }
}

TEST(KMeans, FourBlobs) {
  const Blobs b = make_blobs(4, 50, 4, 0.8, 15);
  const auto km = kmeans(b.X, 4, 5, 1);
  EXPECT_GE(adjusted_rand_index(km.assignments, b.labels), 0.99);
}

TEST(KMeans, SingleClusterIsMean) {
  const Blobs b = make_blobs(2, 30, 3, 1.0, 16);
  const auto km = kmeans(b.X, 1, 3, 2);
  const Vector mean = b.X.colwise().mean();
  EXPECT_LT((km.centroids.row(0).transpose() - mean).cwiseAbs().maxCoeff(), 1e-12);
  const double total = (b.X.rowwise() - mean.transpose()).squaredNorm();
  EXPECT_NEAR(km.inertia, total, 1e-9 * total);
}

TEST(KMeans, KEqualsNHasZeroInertia) {
  const Blobs b = make_blobs(2, 6, 2, 1.0, 17);
  const auto km = kmeans(b.X, 12, 3, 3);
  EXPECT_NEAR(km.inertia, 0.0, 1e-12);
}

TEST(KMeans, InertiaNonIncreasing) {
  const Blobs b = make_blobs(5, 40, 3, 3.0, 18, 4.0);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto km = kmeans(b.X, 5, 1, s);
    for (std::size_t i = 1; i < km.inertia_trace.size(); ++i) {
      EXPECT_LE(km.inertia_trace[i], km.inertia_trace[i - 1] + 1e-9);
    }
  }
}

TEST(KMeans, Errors) {
  Matrix X(3, 2);
  X.setRandom();
  EXPECT_THROW(kmeans(X, 4, 1, 0), ValidationError);
  EXPECT_THROW(kmeans(X, 0, 1, 0), ValidationError);
}

TEST(KMeans, Deterministic) {
  const Blobs b = make_blobs(3, 30, 2, 2.0, 19, 3.0);
  const auto a = kmeans(b.X, 3, 4, 77);
  const auto c = kmeans(b.X, 3, 4, 77);
  EXPECT_EQ(a.assignments, c.assignments);
  EXPECT_EQ(a.inertia, c.inertia);
}

TEST(Silhouette, FourPointInstance) {
  Matrix X(4, 2);
  X << 0, 0, 0, 1, 10, 0, 10, 1;
  // a = 1, b = (10 + sqrt(101)) / 2 for every point
  const double b = (10.0 + std::sqrt(101.0)) / 2.0;
  const double good = silhouette_score(X, {0, 0, 1, 1});
  EXPECT_NEAR(good, 1.0 - 1.0 / b, 1e-12);
  EXPECT_GT(good, 0.9);
  EXPECT_LT(silhouette_score(X, {0, 1, 0, 1}), 0.0);
}

TEST(Silhouette, MatchesDefinitionOracle) {
  const Blobs b = make_blobs(3, 20, 2, 2.0, 20, 3.0);
  std::vector<int> l = b.labels;
  l[3] = 2;
  l[40] = 0;
  l[59] = 7;  // singleton
  EXPECT_NEAR(silhouette_score(b.X, l), silhouette_oracle(b.X, l), 1e-12);
}

TEST(Silhouette, RandomLabelsNearZero) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix X(400, 2);
  std::vector<int> l;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    X(i, 0) = g(rng);
    X(i, 1) = g(rng);
    l.push_back(static_cast<int>(rng() % 3));
  }
  EXPECT_NEAR(silhouette_score(X, l), 0.0, 0.1);
}

TEST(Silhouette, SingleClusterRejected) {
  Matrix X(3, 1);
  X << 1, 2, 3;
  EXPECT_THROW(silhouette_score(X, {0, 0, 0}), ValidationError);
}

TEST(SelectK, RecoversPlantedCounts) {
  EXPECT_EQ(select_k(make_blobs(4, 40, 4, 0.8, 22).X, 2, 8, 1).k, 4);
  EXPECT_EQ(select_k(make_blobs(2, 40, 4, 0.8, 23).X, 2, 8, 1).k, 2);
}

TEST(SelectK, EmptyRangeAndClipping) {
  Matrix X(4, 1);
  X << 0, 0.1, 5, 5.1;
  EXPECT_THROW(select_k(X, 5, 8, 1), ValidationError);
  EXPECT_THROW(select_k(X, 1, 3, 1), ValidationError);
  const auto s = select_k(X, 2, 8, 1);
  EXPECT_EQ(s.scores.size(), 2u);  // k in {2, 3}
  EXPECT_EQ(s.k, 2);
}

TEST(Dbscan, TwoBlobsNoNoise) {
  const Blobs b = make_blobs(2, 50, 2, 0.3, 24);
  const auto l = dbscan(b.X, 1.5, 4);
  EXPECT_EQ(std::count(l.begin(), l.end(), kNoise), 0);
  EXPECT_EQ(*std::max_element(l.begin(), l.end()), 1);
  EXPECT_NEAR(adjusted_rand_index(l, b.labels), 1.0, 1e-12);
}

TEST(Dbscan, SparseScatterIsNoise) {
  Matrix X(30, 2);
  for (int i = 0; i < 30; ++i) {
    X(i, 0) = 10.0 * (i % 6);
    X(i, 1) = 10.0 * (i / 6);
  }
  const auto l = dbscan(X, 1.0, 2);
  EXPECT_EQ(std::count(l.begin(), l.end(), kNoise), 30);
}

TEST(Dbscan, SingleDenseCluster) {
  const Blobs b = make_blobs(1, 60, 2, 0.3, 25);
  const auto l = dbscan(b.X, 2.0, 3);
  EXPECT_EQ(std::set<int>(l.begin(), l.end()), std::set<int>{0});
}

TEST(Smote, BalancesWithCollinearSynthetics) {
  const Blobs a = make_blobs(1, 10, 3, 1.0, 26);
  const Blobs b = make_blobs(1, 4, 3, 1.0, 27);
  Matrix X(14, 3);
  X << a.X, b.X;
  std::vector<int> y(10, 0);
  y.insert(y.end(), 4, 1);
  const auto out = smote(X, y, 5, 3);
  ASSERT_EQ(out.X.rows(), 20);
  EXPECT_EQ(std::count(out.labels.begin(), out.labels.end(), 0), 10);
  EXPECT_EQ(std::count(out.labels.begin(), out.labels.end(), 1), 10);
  EXPECT_TRUE((out.X.topRows(14).array() == X.array()).all());

  for (Eigen::Index r = 14; r < 20; ++r) {
    EXPECT_EQ(out.labels[static_cast<std::size_t>(r)], 1);
    // geometric check: some pair of B originals spans the point
    bool on_segment = false;
    for (Eigen::Index i = 10; i < 14 && !on_segment; ++i) {
      for (Eigen::Index j = 10; j < 14 && !on_segment; ++j) {
        if (i == j) continue;
        const Vector d = (X.row(j) - X.row(i)).transpose();
        const Vector p = (out.X.row(r) - X.row(i)).transpose();
        const double u = p.dot(d) / d.squaredNorm();
        const double resid = (p - u * d).norm();
        on_segment = resid <= 1e-9 && u > 0 && u < 1;
      }
    }
    EXPECT_TRUE(on_segment) << r;
  }
  for (Eigen::Index r = 0; r < out.X.rows(); ++r) {
    for (Eigen::Index s = r + 1; s < out.X.rows(); ++s) EXPECT_FALSE(out.X.row(r) == out.X.row(s));
  }
}

TEST(Smote, BalancedInputUnchanged) {
  const Blobs b = make_blobs(2, 5, 2, 1.0, 28);
  const auto out = smote(b.X, b.labels, 3, 1);
  EXPECT_TRUE((out.X.array() == b.X.array()).all());
  EXPECT_EQ(out.labels, b.labels);
}

TEST(Smote, SingletonClassRejected) {
  const Blobs b = make_blobs(2, 5, 2, 1.0, 29);
  std::vector<int> y = b.labels;
  y[9] = 2;
  EXPECT_THROW(smote(b.X, y, 3, 1), ValidationError);
}

TEST(Smote, Deterministic) {
  const Blobs b = make_blobs(3, 8, 2, 1.0, 30);
  std::vector<int> y = b.labels;
  y.resize(20);
  const Matrix X = b.X.topRows(20);
  const auto p = smote(X, y, 2, 5);
  const auto q = smote(X, y, 2, 5);
  EXPECT_TRUE((p.X.array() == q.X.array()).all());
}

TEST(Ari, KnownValues) {
  EXPECT_DOUBLE_EQ(adjusted_rand_index({0, 0, 1, 1}, {5, 5, 9, 9}), 1.0);
  EXPECT_NEAR(adjusted_rand_index({0, 0, 1, 1}, {0, 1, 0, 1}), -0.5, 1e-12);
  EXPECT_THROW(adjusted_rand_index({0}, {0, 1}), ValidationError);
}
