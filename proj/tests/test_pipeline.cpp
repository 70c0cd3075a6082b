#include <repforge/pipeline.hpp>
#include <repforge/synth.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace repforge;

namespace {

constexpr int kPlanted = 4;

// Rep table with 4 planted EMG clusters. The cluster also shifts IMU
// columns 0..3 so it is learnable from IMU alone; RPE is a step function of
// total_time.
RepTable planted_table(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RepTable t = empty_rep_table();
  const std::size_t total = imu_feature_index("total_time");
  for (int i = 0; i < n; ++i) {
    const int c = i % kPlanted;
    RepRow r;
    r.set_id = "S" + std::to_string(i / 10);
    r.rep_id = r.set_id + "_r" + std::to_string(i % 10 + 1);
    r.rep_index = static_cast<std::size_t>(i % 10 + 1);
    r.rpe = 2 + static_cast<int>(rng() % 7);
    r.imu.resize(kImuFeatureCount);
    for (auto& v : r.imu) v = g(rng);
    r.imu[static_cast<std::size_t>(c)] += 6.0;
    r.imu[total] = r.rpe + 0.2 + 0.6 * u(rng);
    r.emg.resize(kEmgFeatureCount);
    for (std::size_t k = 0; k < r.emg.size(); ++k) r.emg[k] = 0.3 * g(rng) + (k % kPlanted == static_cast<std::size_t>(c) ? 5.0 : 0.0);
    t.rows.push_back(std::move(r));
  }
  return t;
}

std::vector<int> planted_labels(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i % kPlanted;
  return v;
}

LabelParams quick_labels() {
  LabelParams p;
  p.tsne.iterations = 400;
  p.tsne.exaggeration_iters = 100;
  p.tsne.momentum_switch_iter = 100;
  p.kmeans_restarts = 4;
  p.k_hi = 6;
  return p;
}

ExperimentSpec quick_spec(EmgMode mode) {
  ExperimentSpec s;
  s.family = "rf";
  s.params = {{"n_trees", "40"}};
  s.mode = mode;
  s.labels = quick_labels();
  s.estimators.pc_params = {{"rounds", "30"}, {"max_depth", "2"}, {"learning_rate", "0.1"}};
  s.estimators.cluster_params = {{"n_trees", "30"}};
  s.inner_folds = 2;
  return s;
}

}  // namespace

TEST(Labels, RecoverPlantedClusters) {
  const RepDataset ds = RepDataset::from_table(planted_table(120, 1));
  const EmgLabels l = build_emg_labels(ds.emg_all_rows(), ds.all_rows(), 3, quick_labels());
  EXPECT_EQ(l.k, kPlanted);
  EXPECT_GE(adjusted_rand_index(l.cluster, planted_labels(120)), 0.9);
  auto var = [](const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
  };
  EXPECT_GE(var(l.pc1), var(l.pc2));
  EXPECT_EQ(l.stats.fitted_on, ds.all_rows());
}

TEST(Labels, ConstantEmgRejected) {
  const Matrix flat = Matrix::Constant(10, kEmgFeatureCount, 0.4);
  IndexList rows(10);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  EXPECT_THROW(build_emg_labels(flat, rows, 1), ValidationError);
}

TEST(Estimators, ClusterClassifierLearnsPlantedLabels) {
  const RepDataset ds = RepDataset::from_table(planted_table(200, 2));
  IndexList all = ds.all_rows();
  const EmgLabels l = build_emg_labels(ds.emg_all_rows(), all, 4, quick_labels());
  IndexList train, test;
  for (auto r : all) (r % 5 == 0 ? test : train).push_back(r);
  EstimatorSpec spec = quick_spec(EmgMode::estimated).estimators;
  const EmgEstimators est = fit_emg_estimators(select_rows(ds.imu, train), l, train, spec, 5);
  const Vector c = est.cluster->predict(select_rows(ds.imu, test));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < test.size(); ++i) hit += std::lround(c(static_cast<Eigen::Index>(i))) == l.cluster[test[i]];
  EXPECT_GE(static_cast<double>(hit) / static_cast<double>(test.size()), 0.9);
  EXPECT_THROW(make_estimator("logreg", Task::regress), ValidationError);
}

TEST(Estimators, OversampleKeepsSingletonsAndBalancesRest) {
  Matrix X(9, 2);
  X << 0, 0, 1, 0, 0, 1, 1, 1, 0.5, 0.5, 5, 5, 6, 5, 9, 9, 0.2, 0.7;
  const std::vector<int> y = {0, 0, 0, 0, 0, 1, 1, 2, 0};
  const SmoteResult r = oversample(X, y, 3, 1);
  std::map<int, int> count;
  for (int c : r.labels) ++count[c];
  EXPECT_EQ(count[0], 6);
  EXPECT_EQ(count[1], 6);
  EXPECT_EQ(count[2], 1);
  for (const auto& o : r.origin) {
    EXPECT_GE(o.a, 0);
    EXPECT_LT(o.a, 9);
  }
}

TEST(Augment, IdentityWidthAndPurity) {
  const RepDataset ds = RepDataset::from_table(planted_table(120, 6));
  const EmgLabels l = build_emg_labels(ds.emg_all_rows(), ds.all_rows(), 7, quick_labels());
  ASSERT_EQ(l.k, 4);
  const EmgEstimators est = fit_emg_estimators(ds.imu, l, ds.all_rows(), quick_spec(EmgMode::estimated).estimators, 8);
  EXPECT_TRUE((augment(ds.imu, nullptr).array() == ds.imu.array()).all());
  const Matrix a = augment(ds.imu, &est);
  EXPECT_EQ(a.cols(), 61);
  EXPECT_EQ(augmented_names(ds.imu_names, 4).size(), 61u);
  EXPECT_TRUE((a.leftCols(55).array() == ds.imu.array()).all());
  for (Eigen::Index i = 0; i < a.rows(); ++i) EXPECT_EQ(a.row(i).tail(4).sum(), 1.0);
  EXPECT_TRUE((augment(ds.imu.topRows(5), &est).array() == a.topRows(5).array()).all());
}

TEST(Experiment, OffModeEqualsPlainModel) {
  const RepDataset ds = RepDataset::from_table(planted_table(80, 9));
  const FoldPlan plan = make_fold_plan(ds.set_ids, 4, FoldMode::rep_shuffle, 1);
  const ExperimentSpec spec = quick_spec(EmgMode::off);
  const EvalReport rep = run_rpe_experiment(ds, spec, plan, 11);
  for (int f = 0; f < 4; ++f) {
    const IndexList train = plan.train_rows(f);
    const IndexList test = plan.test_rows(f);
    auto m = make_estimator("rf", Task::classify, spec.params);
    m->fit(select_rows(ds.imu, train), ds.rpe_vector(train),
           derive_seed(derive_seed(11, "fold/" + std::to_string(f)), "model"));
    const Vector p = m->predict(select_rows(ds.imu, test));
    const auto& got = rep.folds[static_cast<std::size_t>(f)].predictions;
    ASSERT_EQ(got.size(), test.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], p(static_cast<Eigen::Index>(i)));
    EXPECT_EQ(rep.folds[static_cast<std::size_t>(f)].n_clusters, 0);
  }
}

TEST(Experiment, DeterministicMappingIsLearned) {
  const RepDataset ds = RepDataset::from_table(planted_table(240, 10));
  const FoldPlan plan = make_fold_plan(ds.set_ids, 4, FoldMode::rep_shuffle, 2);
  ExperimentSpec spec = quick_spec(EmgMode::off);
  spec.params = {{"n_trees", "100"}, {"max_features", "55"}};
  const EvalReport rep = run_rpe_experiment(ds, spec, plan, 3);
  EXPECT_GE(rep.pooled.exact_accuracy, 0.95);
  EXPECT_LE(rep.pooled.exact_accuracy, rep.pooled.pm1_accuracy);
  EXPECT_GT(rep.importance.at("total_time"), 0.0);
}

TEST(Experiment, AggregatesAreFoldMeans) {
  const RepDataset ds = RepDataset::from_table(planted_table(80, 12));
  const FoldPlan plan = make_fold_plan(ds.set_ids, 4, FoldMode::by_set, 4);
  ExperimentSpec spec = quick_spec(EmgMode::off);
  spec.family = "ridge";
  spec.task = Task::regress;
  spec.params = {};
  const EvalReport rep = run_rpe_experiment(ds, spec, plan, 5);
  for (const auto& name : metric_names()) {
    double s = 0.0;
    for (const auto& f : rep.folds) s += metric_value(f.metrics, name);
    EXPECT_NEAR(metric_value(rep.fold_mean, name), s / 4.0, 1e-12) << name;
  }
  long pooled = 0;
  for (const auto& row : rep.pooled.confusion) pooled += std::accumulate(row.begin(), row.end(), 0L);
  EXPECT_EQ(pooled, 80);
  EXPECT_LE(rep.pm1_normal_ci.lo, rep.pooled.pm1_accuracy);
  EXPECT_GE(rep.pm1_normal_ci.hi, rep.pooled.pm1_accuracy);
}

TEST(Experiment, EstimatedModeCachedAndReproducible) {
  const RepDataset ds = RepDataset::from_table(planted_table(96, 13));
  const FoldPlan plan = make_fold_plan(ds.set_ids, 4, FoldMode::rep_shuffle, 6);
  const ExperimentSpec spec = quick_spec(EmgMode::estimated);
  FoldCache cache;
  const EvalReport a = run_rpe_experiment(ds, spec, plan, 7, {}, &cache);
  EXPECT_EQ(cache.size(), 4u);
  ExperimentSpec other = spec;
  other.family = "logreg";
  other.params = {};
  run_rpe_experiment(ds, other, plan, 7, {}, &cache);
  EXPECT_EQ(cache.size(), 4u);
  const EvalReport b = run_rpe_experiment(ds, spec, plan, 7);
  for (std::size_t f = 0; f < 4; ++f) {
    EXPECT_EQ(a.folds[f].predictions, b.folds[f].predictions);
    EXPECT_EQ(a.folds[f].n_clusters, b.folds[f].n_clusters);
    EXPECT_GE(a.folds[f].n_clusters, 2);
  }
  EXPECT_TRUE(a.importance.count("est_pc1"));
}

TEST(Experiment, GroundTruthModeAppendsEmg) {
  const RepDataset ds = RepDataset::from_table(planted_table(80, 14));
  const FoldPlan plan = make_fold_plan(ds.set_ids, 4, FoldMode::rep_shuffle, 8);
  const EvalReport rep = run_rpe_experiment(ds, quick_spec(EmgMode::ground_truth), plan, 9);
  EXPECT_TRUE(rep.importance.count("gt_" + ds.emg_names[0]));
  EXPECT_EQ(rep.emg_mode, "ground-truth");
}

TEST(Leakage, EachInjectionIsCaught) {
  const RepDataset ds = RepDataset::from_table(planted_table(64, 15));
  const FoldPlan plan = make_fold_plan(ds.set_ids, 4, FoldMode::rep_shuffle, 10);
  LeakageInjection a;
  a.label_fit_reads_test_emg = true;
  EXPECT_THROW(run_rpe_experiment(ds, quick_spec(EmgMode::estimated), plan, 1, a), LeakageError);
  LeakageInjection b;
  b.smote_row_in_test = true;
  EXPECT_THROW(run_rpe_experiment(ds, quick_spec(EmgMode::off), plan, 1, b), LeakageError);
  LeakageInjection c;
  c.standardize_on_all_rows = true;
  EXPECT_THROW(run_rpe_experiment(ds, quick_spec(EmgMode::ground_truth), plan, 1, c), LeakageError);
}

TEST(Leakage, GuardedAccess) {
  const RepDataset ds = RepDataset::from_table(planted_table(20, 16));
  const GuardedEmg strict = ds.emg_for_fold({3, 4}, false);
  EXPECT_NO_THROW(strict.for_fit({0, 1, 2}));
  EXPECT_THROW(strict.for_fit({2, 3}), LeakageError);
  EXPECT_THROW(strict.for_input({4}), LeakageError);
  const GuardedEmg gt = ds.emg_for_fold({3, 4}, true);
  EXPECT_NO_THROW(gt.for_input({4}));
  EXPECT_THROW(gt.for_fit({4}), LeakageError);
  EXPECT_THROW(check_test_provenance({3, kSyntheticRow}, {3, 4}), LeakageError);
  EXPECT_THROW(check_test_provenance({5}, {3, 4}), LeakageError);
}

TEST(Experiment, PlanMustMatchDataset) {
  const RepDataset ds = RepDataset::from_table(planted_table(20, 17));
  const FoldPlan plan = make_fold_plan(std::vector<std::string>(19, "x"), 4, FoldMode::rep_shuffle, 1);
  EXPECT_THROW(run_rpe_experiment(ds, quick_spec(EmgMode::off), plan, 1), ValidationError);
  EXPECT_THROW(parse_emg_mode("maybe"), ParseError);
}

TEST(Corpus, SynthSetsBecomeRowsAndMismatchesQuarantine) {
  CorpusSpec cs;
  cs.reps_min = 5;
  cs.reps_max = 8;
  auto corpus = generate_corpus(6, cs, 21);
  std::vector<RawSet> raws;
  std::size_t expected = 0;
  for (const auto& s : corpus) raws.push_back(s.raw);
  raws[2].rpe.pop_back();
  for (std::size_t i = 0; i < raws.size(); ++i) {
    if (i != 2) expected += raws[i].rpe.size();
  }
  const CorpusTable t = build_rep_table(raws, {}, {}, {});
  ASSERT_EQ(t.rejects.size(), 1u);
  EXPECT_EQ(t.rejects[0].set_id, raws[2].id.str());
  EXPECT_EQ(t.rejects[0].annotated + 1, t.rejects[0].detected);
  EXPECT_EQ(t.sets_accepted, 5u);
  EXPECT_EQ(t.table.rows.size(), expected);
  for (const auto& r : t.table.rows) {
    EXPECT_EQ(r.imu.size(), kImuFeatureCount);
    EXPECT_EQ(r.emg.size(), kEmgFeatureCount);
    EXPECT_LT(r.start_idx, r.mid_idx);
    EXPECT_LT(r.mid_idx, r.end_idx);
  }
}

TEST(Corpus, DurationTracksRpeOnSynthetic) {
  CorpusSpec cs;
  cs.rpe_rise_min = 3.0;
  cs.rpe_rise_max = 5.0;
  const auto corpus = generate_corpus(12, cs, 22);
  std::vector<RawSet> raws;
  for (const auto& s : corpus) raws.push_back(s.raw);
  const CorpusTable t = build_rep_table(raws, {}, {}, {});
  const RepDataset ds = RepDataset::from_table(t.table);
  const CorpusCorrelations c = corpus_correlations(ds);
  EXPECT_GT(c.total_time_vs_rpe, 0.5);
  EXPECT_GE(c.emg_pc1_vs_rpe, -1.0);
  EXPECT_LE(c.emg_pc1_vs_rpe, 1.0);
}
