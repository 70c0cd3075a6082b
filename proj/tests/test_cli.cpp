#include <repforge/cli.hpp>

#include <gtest/gtest.h>

#include <sstream>

using namespace repforge;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "repforge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

std::string without_first_line(const std::string& s) { return s.substr(s.find('\n') + 1); }

// One synthetic corpus shared by the whole suite.
class CliFlow : public ::testing::Test {
 protected:
  static fs::path root;
  static fs::path data;
  static fs::path cfg;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / ("repforge_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    data = root / "data";
    const fs::path synth_cfg = root / "synth.cfg";
    write_text_file_atomic(synth_cfg.string(), "synth.n_sets = 8\nsynth.reps_min = 6\nsynth.reps_max = 8\n");
    ASSERT_EQ(run_cli({"synth", "--config", synth_cfg.string(), "--out", data.string(), "--seed", "4"}).code, 0);
    cfg = root / "run.cfg";
    write_text_file_atomic(cfg.string(), slurp(data / "columns.cfg") +
                                             "experiment.models = rf:classify, ridge:regress\n"
                                             "model.rf.n_trees = 30\n"
                                             "labels.tsne_iters = 300\n"
                                             "labels.k_max = 4\n"
                                             "labels.kmeans_restarts = 3\n"
                                             "estimators.pc.rounds = 20\n"
                                             "estimators.cluster.n_trees = 20\n"
                                             "estimators.inner_folds = 2\n");
  }
  static void TearDownTestSuite() { fs::remove_all(root); }

  static Result stage(const std::string& cmd, const fs::path& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args = {cmd, "--config", cfg.string(), "--out", out.string(), "--seed", "11"};
    args.insert(args.end(), extra.begin(), extra.end());
    return run_cli(args);
  }
};

fs::path CliFlow::root;
fs::path CliFlow::data;
fs::path CliFlow::cfg;

}  // namespace

TEST_F(CliFlow, SynthWritesCorpusWithProvenance) {
  EXPECT_TRUE(fs::exists(data / "truth.csv"));
  EXPECT_TRUE(fs::exists(data / "rpe.csv"));
  const std::string rpe = slurp(data / "rpe.csv");
  EXPECT_EQ(rpe.rfind("# repforge config_hash=", 0), 0u);
  EXPECT_NE(rpe.find(" seed=4"), std::string::npos);
}

TEST_F(CliFlow, FullRunProducesReports) {
  const fs::path out = root / "full";
  ASSERT_EQ(stage("ingest", out).code, 0);
  const Result f = stage("features", out);
  ASSERT_EQ(f.code, 0) << f.err;
  EXPECT_TRUE(fs::exists(out / "reps.csv"));
  const Result l = stage("label", out);
  ASSERT_EQ(l.code, 0) << l.err;
  for (const char* file : {"labels.csv", "silhouette.csv", "emg_pca.csv", "correlations.csv", "emg_estimators.csv"}) {
    EXPECT_TRUE(fs::exists(out / file)) << file;
  }
  for (const char* mode : {"off", "estimated"}) {
    const Result e = stage("evaluate", out, {"--emg-mode", mode});
    ASSERT_EQ(e.code, 0) << e.err;
  }
  const Result r = stage("report", out);
  ASSERT_EQ(r.code, 0) << r.err;

  const CsvTable report = read_csv((out / "report.csv").string());
  std::map<std::string, int> aggregates;
  for (const auto& row : report.rows) {
    if (row[3] == "aggregate") ++aggregates[row[0] + "/" + row[1] + "/" + row[2]];
  }
  EXPECT_EQ(aggregates.size(), 4u);
  for (const auto& [key, n] : aggregates) EXPECT_EQ(n, 1) << key;
  EXPECT_TRUE(fs::exists(out / "pooled.csv"));
  EXPECT_TRUE(fs::exists(out / "confusion_rf-classify_off.csv"));
  EXPECT_TRUE(fs::exists(out / "importance_rf-classify_estimated.csv"));
  const CsvTable impact = read_csv((out / "impact.csv").string());
  EXPECT_EQ(impact.rows.size(), metric_names().size());

  // train and inspect
  ASSERT_EQ(stage("train", out, {"--emg-mode", "estimated"}).code, 0);
  const Result ins = run_cli({"model", "inspect", (out / "model_rf-classify_estimated.model").string()});
  ASSERT_EQ(ins.code, 0) << ins.err;
  EXPECT_NE(ins.out.find("family rf"), std::string::npos);
  EXPECT_NE(ins.out.find("est_pc1"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "emg_cluster.model"));
}

TEST_F(CliFlow, SameSeedIsByteIdentical) {
  const fs::path a = root / "rep_a";
  const fs::path b = root / "rep_b";
  for (const auto& out : {a, b}) {
    ASSERT_EQ(stage("features", out).code, 0);
    ASSERT_EQ(stage("evaluate", out, {"--emg-mode", "off"}).code, 0);
  }
  for (const char* file : {"reps.csv", "evaluation_off.csv", "predictions_off.csv"}) {
    EXPECT_EQ(slurp(a / file), slurp(b / file)) << file;
  }
  const fs::path c = root / "rep_c";
  ASSERT_EQ(run_cli({"features", "--config", cfg.string(), "--out", c.string(), "--seed", "12"}).code, 0);
  EXPECT_NE(slurp(a / "reps.csv"), slurp(c / "reps.csv"));
  EXPECT_EQ(without_first_line(slurp(a / "reps.csv")), without_first_line(slurp(c / "reps.csv")));
}

TEST_F(CliFlow, SkipFreshIsNoOp) {
  const fs::path out = root / "fresh";
  ASSERT_EQ(stage("segment", out).code, 0);
  const auto t0 = fs::last_write_time(out / "segments.csv");
  const Result again = stage("segment", out, {"--skip-fresh"});
  EXPECT_EQ(again.code, 0);
  EXPECT_NE(again.err.find("skip: segments.csv"), std::string::npos);
  EXPECT_EQ(fs::last_write_time(out / "segments.csv"), t0);
  const Result changed = stage("segment", out, {"--skip-fresh", "--min-gap-s", "0.4"});
  EXPECT_EQ(changed.err.find("skip:"), std::string::npos);
}

TEST_F(CliFlow, MismatchQuarantinesAndStrictFails) {
  const fs::path bad = root / "bad_data";
  fs::create_directories(bad);
  for (const auto& e : fs::directory_iterator(data)) fs::copy_file(e.path(), bad / e.path().filename());
  // drop the last annotation of the first set
  std::string rpe = slurp(bad / "rpe.csv");
  const auto line_start = rpe.find('\n', rpe.find("set_id")) + 1;
  const auto line_end = rpe.find('\n', line_start);
  std::string line = rpe.substr(line_start, line_end - line_start);
  while (!line.empty() && line.back() == ',') line.pop_back();
  line = line.substr(0, line.rfind(','));
  rpe.replace(line_start, line_end - line_start, line);
  write_text_file_atomic((bad / "rpe.csv").string(), rpe);
  const fs::path bad_cfg = root / "bad.cfg";
  write_text_file_atomic(bad_cfg.string(), slurp(cfg) + "data.dir = " + bad.string() + "\n");

  const fs::path out = root / "quarantine";
  const Result lax = run_cli({"segment", "--config", bad_cfg.string(), "--out", out.string()});
  EXPECT_EQ(lax.code, 0) << lax.err;
  const CsvTable rejects = read_csv((out / "rejects.csv").string());
  ASSERT_EQ(rejects.rows.size(), 1u);
  EXPECT_EQ(rejects.rows[0][3], "count mismatch");
  const Result strict = run_cli({"segment", "--config", bad_cfg.string(), "--out", out.string(), "--strict"});
  EXPECT_EQ(strict.code, cli::kQuarantine);
}

TEST(Cli, ErrorsAreMachineReadable) {
  const Result unknown = run_cli({"frobnicate"});
  EXPECT_EQ(unknown.code, cli::kBadInput);
  EXPECT_EQ(unknown.err.rfind("repforge-error stage=- kind=usage", 0), 0u);

  const fs::path empty = fs::temp_directory_path() / ("repforge_cli_empty_" + std::to_string(::getpid()));
  const Result missing = run_cli({"label", "--out", empty.string()});
  EXPECT_EQ(missing.code, cli::kBadInput);
  EXPECT_NE(missing.err.find("repforge-error stage=label kind=validation"), std::string::npos);

  const Result mode = run_cli({"evaluate", "--out", empty.string(), "--emg-mode", "sometimes"});
  EXPECT_EQ(mode.code, cli::kBadInput);
  EXPECT_NE(mode.err.find("kind=parse"), std::string::npos);

  const Result axis = run_cli({"segment", "--out", empty.string(), "--palm-axis", "w"});
  EXPECT_NE(axis.err.find("kind=parse"), std::string::npos);

  const Result help = run_cli({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("evaluate"), std::string::npos);
  fs::remove_all(empty);
}

TEST(Cli, PalmAxisSpelling) {
  Config c;
  cli::apply_palm_axis(c, "-y");
  EXPECT_EQ(c.get("palm.axis", ""), "1");
  EXPECT_EQ(c.get("palm.sign", ""), "-1");
  cli::apply_palm_axis(c, "z");
  EXPECT_EQ(c.get("palm.axis", ""), "2");
  EXPECT_EQ(c.get("palm.sign", ""), "1");
}
