#ifndef REPFORGE_CLI_HPP
#define REPFORGE_CLI_HPP

// Command-line stages. Each stage reads the documented CSVs from the output
// directory (or the raw corpus) and writes its own, every file starting with
// a provenance line carrying the config hash and seed.

#include <repforge/pipeline.hpp>
#include <repforge/synth.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace repforge::cli {

namespace fs = std::filesystem;

inline constexpr std::uint64_t kDefaultSeed = 20240917;

enum ExitCode : int { kOk = 0, kFailure = 1, kBadInput = 2, kQuarantine = 3, kLeakage = 4 };

struct RunContext {
  Config cfg;
  std::uint64_t seed = kDefaultSeed;
  std::string out = "out";
  bool strict = false;
  bool skip_fresh = false;
  std::ostream* log = &std::cerr;

  std::string config_hash() const { return hex64(cfg.hash()); }

  /// First line of every output. `inputs` is a content hash of what the stage read.
  std::string provenance(std::uint64_t inputs = 0) const {
    std::string s = "repforge config_hash=" + config_hash() + " seed=" + std::to_string(seed);
    if (inputs != 0) s += " inputs=" + hex64(inputs);
    return s;
  }

  std::string path(const std::string& name) const { return (fs::path(out) / name).string(); }

  /// True when `--skip-fresh` is set and `file` already carries this provenance.
  bool fresh(const std::string& file, const std::string& prov) const {
    if (!skip_fresh || !fs::exists(path(file))) return false;
    std::ifstream in(path(file));
    std::string first;
    std::getline(in, first);
    if (first != "# " + prov) return false;
    *log << "skip: " << file << " is up to date\n";
    return true;
  }

  void write(const std::string& file, const std::string& prov, const std::string& body) const {
    write_text_file_atomic(path(file), "# " + prov + "\n" + body);
  }
};

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

inline std::uint64_t hash_files(const std::vector<std::string>& paths) {
  std::uint64_t h = fnv1a("inputs");
  for (const auto& p : paths) h = fnv1a(read_text_file(p), h ^ fnv1a(fs::path(p).filename().string()));
  return h;
}

inline std::vector<std::string> corpus_files(const DataLayout& layout) {
  std::vector<std::string> files{layout.rpe_path()};
  for (const auto& [key, _] : read_rpe_table(layout.rpe_path())) {
    const SetId id = parse_set_id(key);
    files.push_back(layout.emg_path(id));
    files.push_back(layout.imu_path(id));
  }
  return files;
}

inline std::string csv_row(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
  return s + "\n";
}

/// `x`, `-y`, `+z` or 0..2 into the palm.axis / palm.sign keys.
inline void apply_palm_axis(Config& cfg, const std::string& text) {
  std::string t = trim(text);
  int sign = 1;
  if (!t.empty() && (t[0] == '+' || t[0] == '-')) {
    sign = t[0] == '-' ? -1 : 1;
    t = t.substr(1);
  }
  int axis = -1;
  if (t == "x" || t == "0") axis = 0;
  if (t == "y" || t == "1") axis = 1;
  if (t == "z" || t == "2") axis = 2;
  if (axis < 0) throw ParseError("palm axis '" + text + "' is not one of x, y, z (optionally signed)");
  cfg.set("palm.axis", std::to_string(axis));
  cfg.set("palm.sign", std::to_string(sign));
}

struct ModelChoice {
  std::string family;
  Task task;
  std::string name() const { return family + "-" + to_string(task); }
};

/// `experiment.models = rf:classify, gbt:regress, ...`
inline std::vector<ModelChoice> model_choices(const Config& cfg) {
  const std::string text =
      cfg.get("experiment.models",
              "rf:classify,gbt:classify,logreg:classify,rf:regress,gbt:regress,lasso:regress,ridge:regress,"
              "elasticnet:regress");
  std::vector<ModelChoice> out;
  for (const auto& item : split(text, ',')) {
    const auto t = trim(item);
    if (t.empty()) continue;
    const auto parts = split(t, ':');
    if (parts.size() != 2) throw ParseError("experiment.models entry '" + t + "' is not family:task");
    out.push_back({trim(parts[0]), parse_task(trim(parts[1]))});
  }
  if (out.empty()) throw ValidationError("experiment.models lists no models");
  return out;
}

inline Params model_params(const Config& cfg, const std::string& family) {
  Params p;
  for (const auto& [k, v] : cfg.section("model." + family)) p[k] = v;
  return p;
}

inline FoldPlan plan_for(const RepDataset& ds, const Config& cfg, std::uint64_t seed) {
  return make_fold_plan(ds.set_ids, static_cast<int>(cfg.get_int("cv.folds", 4)),
                        parse_fold_mode(cfg.get("cv.mode", "rep-shuffle")), derive_seed(seed, "folds"));
}

inline std::string reps_path(const RunContext& ctx) { return ctx.cfg.get("features.path", ctx.path("reps.csv")); }

inline RepDataset load_dataset(const RunContext& ctx) {
  const std::string p = reps_path(ctx);
  if (!fs::exists(p)) throw ValidationError("missing input '" + p + "' (run the features stage first)");
  const RepTable t = read_rep_dataset(p);
  if (t.schema_version != kFeatureSchemaVersion) {
    throw ValidationError(p + ": feature schema '" + t.schema_version + "' does not match " + kFeatureSchemaVersion);
  }
  require(!t.rows.empty(), p + ": no repetitions");
  return RepDataset::from_table(t);
}

inline std::string format_segments(const std::vector<RepRow>& rows) {
  std::string s = "rep_id,set_id,rep_index,start_idx,mid_idx,end_idx,rpe\n";
  for (const auto& r : rows) {
    s += csv_row({r.rep_id, r.set_id, std::to_string(r.rep_index), std::to_string(r.start_idx),
                  std::to_string(r.mid_idx), std::to_string(r.end_idx), std::to_string(r.rpe)});
  }
  return s;
}

inline std::string format_rejects(const std::vector<Reject>& rejects) {
  std::string s = "set_id,detected,annotated,reason\n";
  for (const auto& r : rejects) {
    s += csv_row({r.set_id, std::to_string(r.detected), std::to_string(r.annotated), r.reason});
  }
  return s;
}

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

inline int cmd_synth(const RunContext& ctx) {
  const int n = static_cast<int>(ctx.cfg.get_int("synth.n_sets", 69));
  CorpusSpec cs = CorpusSpec::from_config(ctx.cfg);
  const std::string prov = ctx.provenance();
  if (ctx.fresh("truth.csv", prov)) return kOk;
  const auto corpus = generate_corpus(n, cs, derive_seed(ctx.seed, "synth"));
  write_corpus(corpus, ctx.out, prov);
  std::size_t reps = 0;
  for (const auto& s : corpus) reps += s.raw.rpe.size();
  *ctx.log << "synth: " << corpus.size() << " sets, " << reps << " reps -> " << ctx.out << "\n";
  return kOk;
}

inline int cmd_ingest(const RunContext& ctx) {
  const DataLayout layout = DataLayout::from_config(ctx.cfg);
  const ColumnMap columns = ColumnMap::from_config(ctx.cfg);
  const std::string prov = ctx.provenance(hash_files(corpus_files(layout)));
  if (ctx.fresh("ingest.csv", prov)) return kOk;
  const auto sets = load_corpus(layout, columns);
  std::string body = "set_id,emg_samples,imu_samples,annotated_reps,duration_s,emg_rate_hz,imu_rate_hz\n";
  for (const auto& s : sets) {
    body += csv_row({s.id.str(), std::to_string(s.emg.size()), std::to_string(s.accel.size()),
                     std::to_string(s.rpe.size()), format_double(s.accel.t.back() - s.accel.t.front()),
                     format_double(estimate_rate(s.emg.t)), format_double(estimate_rate(s.accel.t))});
  }
  ctx.write("ingest.csv", prov, body);
  *ctx.log << "ingest: " << sets.size() << " sets validated\n";
  return kOk;
}

inline int cmd_segment_or_features(const RunContext& ctx, bool features) {
  const DataLayout layout = DataLayout::from_config(ctx.cfg);
  const ColumnMap columns = ColumnMap::from_config(ctx.cfg);
  const std::string prov = ctx.provenance(hash_files(corpus_files(layout)));
  const std::string primary = features ? "reps.csv" : "segments.csv";
  if (ctx.fresh(primary, prov)) return kOk;
  const auto sets = load_corpus(layout, columns);
  CorpusTable ct = build_rep_table(sets, AlignParams::from_config(ctx.cfg), SegmentParams::from_config(ctx.cfg),
                                   columns.palm);
  ctx.write("rejects.csv", prov, format_rejects(ct.rejects));
  if (features) {
    ct.table.comments.push_back(prov);
    write_rep_dataset(ct.table, ctx.path("reps.csv"));
  } else {
    ctx.write("segments.csv", prov, format_segments(ct.table.rows));
  }
  *ctx.log << (features ? "features: " : "segment: ") << ct.sets_accepted << " sets, " << ct.table.rows.size()
           << " reps, " << ct.rejects.size() << " quarantined\n";
  for (const auto& r : ct.rejects) {
    *ctx.log << "quarantine: " << r.set_id << " detected=" << r.detected << " annotated=" << r.annotated << "\n";
  }
  return ctx.strict && !ct.rejects.empty() ? kQuarantine : kOk;
}

inline int cmd_label(const RunContext& ctx) {
  const RepDataset ds = load_dataset(ctx);
  const std::string prov = ctx.provenance(hash_files({reps_path(ctx)}));
  if (ctx.fresh("labels.csv", prov)) return kOk;
  const LabelParams lp = LabelParams::from_config(ctx.cfg);
  const EmgLabels labels = build_emg_labels(ds.emg_all_rows(), ds.all_rows(), derive_seed(ctx.seed, "labels"), lp);

  std::string body = "rep_id,set_id,rpe,emg_pc1,emg_pc2,cluster,tsne_1,tsne_2\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    body += csv_row({ds.rep_ids[i], ds.set_ids[i], std::to_string(ds.rpe[i]), format_double(labels.pc1[i]),
                     format_double(labels.pc2[i]), std::to_string(labels.cluster[i]),
                     format_double(labels.embedding(r, 0)), format_double(labels.embedding(r, 1))});
  }
  ctx.write("labels.csv", prov, body);

  std::string sil = "k,silhouette,selected\n";
  for (const auto& [k, s] : labels.silhouette) {
    sil += csv_row({std::to_string(k), format_double(s), k == labels.k ? "1" : "0"});
  }
  ctx.write("silhouette.csv", prov, sil);

  std::string pca = "component,explained_variance,explained_ratio";
  for (const auto& n : ds.emg_names) pca += "," + n;
  pca += "\n";
  const Vector ratio = labels.pca.explained_ratio();
  for (Eigen::Index c = 0; c < labels.pca.components.cols(); ++c) {
    pca += "pc" + std::to_string(c + 1) + "," + format_double(labels.pca.explained_variance(c)) + "," +
           format_double(ratio(c));
    for (Eigen::Index d = 0; d < labels.pca.components.rows(); ++d) pca += "," + format_double(labels.pca.components(d, c));
    pca += "\n";
  }
  ctx.write("emg_pca.csv", prov, pca);

  const CorpusCorrelations cc = corpus_correlations(ds);
  ctx.write("correlations.csv", prov,
            "pair,pearson\ntotal_time~rpe," + format_double(cc.total_time_vs_rpe) + "\nemg_pc1~rpe," +
                format_double(cc.emg_pc1_vs_rpe) + "\nimu_pc1~emg_pc1," + format_double(cc.imu_pc1_vs_emg_pc1) + "\n");

  const EstimatorSpec es = EstimatorSpec::from_config(ctx.cfg);
  const EmgBenchmark b = emg_estimator_benchmark(ds, plan_for(ds, ctx.cfg, ctx.seed), es, lp, ctx.seed);
  ctx.write("emg_estimators.csv", prov,
            "target,model,cv_rmse,cv_r2,cv_accuracy\npc1," + es.pc_family + "," + format_double(b.pc1_rmse) + "," +
                format_double(b.pc1_r2) + ",\npc2," + es.pc_family + "," + format_double(b.pc2_rmse) + "," +
                format_double(b.pc2_r2) + ",\ncluster," + es.cluster_family + ",,," +
                format_double(b.cluster_accuracy) + "\n");
  *ctx.log << "label: k=" << labels.k << " pc1_rmse=" << format_double(b.pc1_rmse)
           << " cluster_acc=" << format_double(b.cluster_accuracy) << "\n";
  return kOk;
}

inline void save_model_file(const RunContext& ctx, const std::string& file, const std::string& prov,
                            const Estimator& m, const std::vector<std::string>& names) {
  std::ostringstream os;
  os.precision(17);
  os << "# " << prov << "\n";
  save_model(os, m, names);
  write_text_file_atomic(ctx.path(file), os.str());
}

/// Fits every configured model on all repetitions. In estimated mode the EMG
/// label estimators are saved next to the RPE models.
inline int cmd_train(const RunContext& ctx, EmgMode mode) {
  const RepDataset ds = load_dataset(ctx);
  const std::string prov = ctx.provenance(hash_files({reps_path(ctx)}));
  const auto models = model_choices(ctx.cfg);
  const std::string marker = "model_" + models.front().name() + "_" + to_string(mode) + ".model";
  if (ctx.fresh(marker, prov)) return kOk;
  const IndexList all = ds.all_rows();
  Matrix X = ds.imu;
  std::vector<std::string> names = ds.imu_names;
  if (mode == EmgMode::estimated) {
    const EmgLabels labels = build_emg_labels(ds.emg_all_rows(), all, derive_seed(ctx.seed, "labels"),
                                              LabelParams::from_config(ctx.cfg));
    const EmgEstimators est = fit_emg_estimators(ds.imu, labels, all, EstimatorSpec::from_config(ctx.cfg),
                                                 derive_seed(ctx.seed, "estimators"));
    save_model_file(ctx, "emg_pc1.model", prov, *est.pc1, ds.imu_names);
    save_model_file(ctx, "emg_pc2.model", prov, *est.pc2, ds.imu_names);
    save_model_file(ctx, "emg_cluster.model", prov, *est.cluster, ds.imu_names);
    X = augment(ds.imu, &est);
    names = augmented_names(ds.imu_names, est.k);
  } else if (mode == EmgMode::ground_truth) {
    const auto stats = StandardizationStats::fit(ds.emg_all_rows(), all);
    X = detail::hcat(X, stats.transform(ds.emg_all_rows()));
    for (const auto& n : ds.emg_names) names.push_back("gt_" + n);
  }
  for (const auto& m : models) {
    auto est = make_estimator(m.family, m.task, model_params(ctx.cfg, m.family));
    est->fit(X, ds.rpe_vector(all), derive_seed(ctx.seed, "train/" + m.name()));
    const std::string file = "model_" + m.name() + "_" + to_string(mode) + ".model";
    save_model_file(ctx, file, prov, *est, names);
    *ctx.log << "train: " << file << "\n";
  }
  return kOk;
}

inline std::vector<std::string> evaluation_header() {
  std::vector<std::string> h = {"family", "task", "emg_mode", "fold", "n", "n_clusters"};
  for (const auto& m : metric_names()) h.push_back(m);
  for (const char* c : {"pm1_ci_lo", "pm1_ci_hi", "pm1_boot_lo", "pm1_boot_hi", "spec_hash"}) h.push_back(c);
  return h;
}

inline std::vector<std::string> evaluation_cells(const EvalReport& r, const std::string& fold, const MetricBundle& m,
                                                 int n_clusters, bool with_ci) {
  std::vector<std::string> c = {r.family, r.task, r.emg_mode, fold, std::to_string(m.n), std::to_string(n_clusters)};
  for (const auto& name : metric_names()) c.push_back(format_double(metric_value(m, name)));
  if (with_ci) {
    for (double v : {r.pm1_normal_ci.lo, r.pm1_normal_ci.hi, r.pm1_bootstrap_ci.lo, r.pm1_bootstrap_ci.hi}) {
      c.push_back(format_double(v));
    }
  } else {
    c.insert(c.end(), 4, "");
  }
  c.push_back(r.spec_hash);
  return c;
}

/// Random search over `search.<family>.<param>` ranges, scored by the mean
/// +/-1 accuracy of an IMU-only cross-validation on a separate fold plan.
inline Params tuned_params(const RunContext& ctx, const RepDataset& ds, const ModelChoice& m, std::string& log) {
  Params base = model_params(ctx.cfg, m.family);
  const int budget = static_cast<int>(ctx.cfg.get_int("search.budget", 0));
  const auto section = ctx.cfg.section("search." + m.family);
  if (budget <= 0 || section.empty()) return base;
  std::vector<ParamRange> ranges;
  for (const auto& [k, v] : section) ranges.push_back(ParamRange::parse(k, v));
  const std::uint64_t s = derive_seed(ctx.seed, "search/" + m.name());
  const FoldPlan plan = make_fold_plan(ds.set_ids, static_cast<int>(ctx.cfg.get_int("cv.folds", 4)),
                                       parse_fold_mode(ctx.cfg.get("cv.mode", "rep-shuffle")), derive_seed(s, "folds"));
  const auto res = random_search(
      ranges, budget,
      [&](const std::map<std::string, std::string>& p, std::uint64_t trial_seed) {
        ExperimentSpec spec;
        spec.family = m.family;
        spec.task = m.task;
        spec.params = base;
        for (const auto& [k, v] : p) spec.params[k] = v;
        spec.mode = EmgMode::off;
        return run_rpe_experiment(ds, spec, plan, trial_seed).fold_mean.pm1_accuracy;
      },
      s);
  for (const auto& t : res.trials) {
    std::string row = m.name() + "," + std::to_string(t.index) + "," + format_double(t.score) + ",";
    for (const auto& [k, v] : t.params) row += k + "=" + v + ";";
    log += row + "\n";
  }
  for (const auto& [k, v] : res.best) base[k] = v;
  return base;
}

inline int cmd_evaluate(const RunContext& ctx, EmgMode mode) {
  const RepDataset ds = load_dataset(ctx);
  const std::string prov = ctx.provenance(hash_files({reps_path(ctx)}));
  const std::string tag = to_string(mode);
  if (ctx.fresh("evaluation_" + tag + ".csv", prov)) return kOk;
  const FoldPlan plan = plan_for(ds, ctx.cfg, ctx.seed);
  FoldCache cache;
  std::string eval = csv_row(evaluation_header());
  std::string details = "family,task,kind,row,col,value\n";
  std::string preds = "rep_id,family,task,fold,rpe,prediction\n";
  std::string search_log = "model,trial,score,params\n";
  for (const auto& m : model_choices(ctx.cfg)) {
    ExperimentSpec spec;
    spec.family = m.family;
    spec.task = m.task;
    spec.mode = mode;
    spec.labels = LabelParams::from_config(ctx.cfg);
    spec.estimators = EstimatorSpec::from_config(ctx.cfg);
    spec.inner_folds = static_cast<int>(ctx.cfg.get_int("estimators.inner_folds", spec.inner_folds));
    spec.params = tuned_params(ctx, ds, m, search_log);
    const EvalReport r = run_rpe_experiment(ds, spec, plan, derive_seed(ctx.seed, "evaluate"), {}, &cache);
    for (const auto& f : r.folds) {
      eval += csv_row(evaluation_cells(r, std::to_string(f.fold), f.metrics, f.n_clusters, false));
      for (std::size_t i = 0; i < f.test_rows.size(); ++i) {
        preds += csv_row({ds.rep_ids[f.test_rows[i]], r.family, r.task, std::to_string(f.fold),
                          std::to_string(ds.rpe[f.test_rows[i]]), format_double(f.predictions[i])});
      }
    }
    eval += csv_row(evaluation_cells(r, "aggregate", r.fold_mean, 0, true));
    eval += csv_row(evaluation_cells(r, "pooled", r.pooled, 0, true));
    for (int i = 0; i < kNumClasses; ++i) {
      for (int j = 0; j < kNumClasses; ++j) {
        const long v = r.pooled.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        if (v != 0) {
          details += csv_row({r.family, r.task, "confusion", std::to_string(i + 1), std::to_string(j + 1),
                              std::to_string(v)});
        }
      }
    }
    for (const auto& [name, v] : r.importance) {
      details += csv_row({r.family, r.task, "importance", name, "", format_double(v)});
    }
    *ctx.log << "evaluate: " << m.name() << " " << tag << " pm1=" << format_double(r.pooled.pm1_accuracy)
             << " exact=" << format_double(r.pooled.exact_accuracy) << "\n";
  }
  ctx.write("evaluation_" + tag + ".csv", prov, eval);
  ctx.write("details_" + tag + ".csv", prov, details);
  ctx.write("predictions_" + tag + ".csv", prov, preds);
  if (ctx.cfg.get_int("search.budget", 0) > 0) ctx.write("search_" + tag + ".csv", prov, search_log);
  return kOk;
}

/// Merges evaluation_<mode>.csv files into report.csv (per-fold rows plus one
/// fold-mean aggregate per model and mode) and pooled.csv, and derives
/// confusion, importance and EMG-impact tables.
inline int cmd_report(const RunContext& ctx) {
  std::vector<std::string> evals;
  for (const char* mode : {"off", "estimated", "ground-truth"}) {
    if (fs::exists(ctx.path(std::string("evaluation_") + mode + ".csv"))) evals.push_back(mode);
  }
  if (evals.empty()) throw ValidationError("no evaluation_<mode>.csv in '" + ctx.out + "' (run evaluate first)");
  std::vector<std::string> inputs;
  for (const auto& m : evals) {
    inputs.push_back(ctx.path("evaluation_" + m + ".csv"));
    inputs.push_back(ctx.path("details_" + m + ".csv"));
  }
  const std::string prov = ctx.provenance(hash_files(inputs));
  if (ctx.fresh("report.csv", prov)) return kOk;

  std::string report = csv_row(evaluation_header());
  std::string pooled = report;
  std::map<std::string, std::vector<LabeledMetrics>> mean_rows;  // mode -> aggregate rows
  for (const auto& mode : evals) {
    const CsvTable t = read_csv(ctx.path("evaluation_" + mode + ".csv"));
    if (t.header != evaluation_header()) throw ParseError("evaluation_" + mode + ".csv: unexpected columns");
    for (const auto& row : t.rows) {
      if (row.size() != t.header.size()) throw ParseError("evaluation_" + mode + ".csv: short row");
      (row[3] == "pooled" ? pooled : report) += csv_row(row);
      if (row[3] != "aggregate") continue;
      LabeledMetrics lm;
      lm.key = row[0] + "-" + row[1];
      for (std::size_t c = 0; c < metric_names().size(); ++c) {
        const auto v = parse_double(row[6 + c]);
        if (!v) throw ParseError("evaluation_" + mode + ".csv: bad metric value");
        set_metric(lm.metrics, metric_names()[c], *v);
      }
      mean_rows[mode].push_back(lm);
    }

    const CsvTable d = read_csv(ctx.path("details_" + mode + ".csv"));
    std::map<std::string, Confusion> conf;
    std::map<std::string, std::vector<std::pair<double, std::string>>> imp;
    for (const auto& row : d.rows) {
      if (row.size() != 6) throw ParseError("details_" + mode + ".csv: short row");
      const std::string model = row[0] + "-" + row[1];
      if (row[2] == "confusion") {
        conf[model][static_cast<std::size_t>(*parse_int(row[3]) - 1)][static_cast<std::size_t>(*parse_int(row[4]) - 1)] =
            *parse_int(row[5]);
      } else if (row[2] == "importance") {
        imp[model].push_back({*parse_double(row[5]), row[3]});
      }
    }
    for (const auto& [model, c] : conf) {
      std::string s = "true\\pred";
      for (int j = 1; j <= kNumClasses; ++j) s += "," + std::to_string(j);
      s += "\n";
      for (int i = 0; i < kNumClasses; ++i) {
        s += std::to_string(i + 1);
        for (int j = 0; j < kNumClasses; ++j) s += "," + std::to_string(c[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
        s += "\n";
      }
      ctx.write("confusion_" + model + "_" + mode + ".csv", prov, s);
    }
    for (auto& [model, items] : imp) {
      std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      std::string s = "rank,feature,importance\n";
      for (std::size_t i = 0; i < items.size(); ++i) {
        s += csv_row({std::to_string(i + 1), items[i].second, format_double(items[i].first)});
      }
      ctx.write("importance_" + model + "_" + mode + ".csv", prov, s);
    }
  }
  ctx.write("report.csv", prov, report);
  ctx.write("pooled.csv", prov, pooled);

  if (mean_rows.count("off")) {
    std::string s = "emg_mode,metric,mean,median,std,max,min\n";
    for (const auto& [mode, rows] : mean_rows) {
      if (mode == "off") continue;
      for (const auto& r : emg_impact_table(rows, mean_rows["off"])) {
        s += csv_row({mode, r.metric, format_double(r.mean), format_double(r.median), format_double(r.std),
                      format_double(r.max), format_double(r.min)});
      }
    }
    ctx.write("impact.csv", prov, s);
  }
  *ctx.log << "report: " << evals.size() << " evaluation file(s) merged\n";
  return kOk;
}

inline int cmd_model_inspect(const std::string& file, std::ostream& out) {
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot open model '" + file + "'");
  const ModelFile mf = load_model(in);
  out << "family " << mf.model->family() << "\n";
  out << "task " << to_string(mf.model->task()) << "\n";
  out << "schema " << hex64(mf.schema) << "\n";
  out << "features " << mf.feature_names.size() << "\n";
  out << "hyperparameters\n";
  for (const auto& [k, v] : mf.model->params()) out << "  " << k << " = " << v << "\n";
  const auto imp = mf.model->importance();
  if (!imp.empty()) {
    std::vector<std::size_t> order(imp.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return imp[a] > imp[b]; });
    out << "importance\n";
    for (std::size_t r = 0; r < order.size(); ++r) {
      out << "  " << (r + 1) << " " << mf.feature_names[order[r]] << " " << format_double(imp[order[r]]) << "\n";
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '"' || c == '\\') o += '\\';
    if (c == '\n') {
      o += "\\n";
      continue;
    }
    o += c;
  }
  return o;
}

inline void error_line(std::ostream& err, const std::string& stage, const std::string& kind, const std::string& msg) {
  err << "repforge-error stage=" << (stage.empty() ? "-" : stage) << " kind=" << kind << " message=\"" << escape(msg)
      << "\"\n";
}

/// Parses arguments and runs one stage. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"repforge: rep segmentation, features and RPE estimation"};
  app.require_subcommand(1);
  std::string config_path;
  std::uint64_t seed = kDefaultSeed;
  bool seed_given = false;
  std::string out_dir = "out";
  bool strict = false;
  bool skip_fresh = false;
  std::string emg_mode_text;
  double min_gap_s = -1.0;
  std::string palm_axis;
  std::string model_path;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", config_path, "flat key = value config file");
    c->add_option("--seed", seed, "root seed")->each([&](const std::string&) { seed_given = true; });
    c->add_option("--out", out_dir, "output directory");
    c->add_flag("--strict", strict, "exit nonzero when sets are quarantined");
    c->add_flag("--skip-fresh", skip_fresh, "do nothing when outputs match config, seed and inputs");
  };
  auto add_mode = [&](CLI::App* c) {
    c->add_option("--emg-mode", emg_mode_text, "off | estimated | ground-truth");
  };
  auto add_seg = [&](CLI::App* c) {
    c->add_option("--min-gap-s", min_gap_s, "minimum spacing of boundary crossings (s)");
    c->add_option("--palm-axis", palm_axis, "palm accelerometer axis: x, y, z with optional sign");
  };

  std::map<std::string, CLI::App*> cmds;
  for (const char* name : {"synth", "ingest", "segment", "features", "label", "train", "evaluate", "report"}) {
    cmds[name] = app.add_subcommand(name);
    add_common(cmds[name]);
  }
  cmds["synth"]->description("generate a synthetic corpus with ground truth");
  cmds["ingest"]->description("load and validate the raw corpus");
  cmds["segment"]->description("detect repetitions; quarantined sets go to rejects.csv");
  cmds["features"]->description("segment and extract per-rep IMU and EMG features");
  cmds["label"]->description("EMG labels, correlations and estimator benchmark on the whole corpus");
  cmds["train"]->description("fit the configured models on all repetitions");
  cmds["evaluate"]->description("cross-validated RPE experiments");
  cmds["report"]->description("merge evaluations into report, confusion, importance and impact tables");
  for (const char* n : {"segment", "features"}) add_seg(cmds[n]);
  for (const char* n : {"train", "evaluate"}) add_mode(cmds[n]);
  auto* model = app.add_subcommand("model", "model file utilities");
  model->require_subcommand(1);
  auto* inspect = model->add_subcommand("inspect", "print hyperparameters and importance");
  inspect->add_option("file", model_path, "model file")->required();

  std::string stage;
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    error_line(err, "", "usage", e.what());
    return kBadInput;
  }

  try {
    if (inspect->parsed()) {
      stage = "model-inspect";
      return cmd_model_inspect(model_path, out);
    }
    for (const auto& [name, c] : cmds) {
      if (c->parsed()) stage = name;
    }
    RunContext ctx;
    ctx.log = &err;
    if (!config_path.empty()) ctx.cfg = Config::load(config_path);
    if (!seed_given && ctx.cfg.has("seed")) seed = static_cast<std::uint64_t>(ctx.cfg.get_int("seed", 0));
    ctx.cfg.set("seed", std::to_string(seed));
    if (min_gap_s >= 0) ctx.cfg.set("segment.min_gap_s", format_double(min_gap_s));
    if (!palm_axis.empty()) apply_palm_axis(ctx.cfg, palm_axis);
    EmgMode mode = parse_emg_mode(ctx.cfg.get("experiment.emg_mode", "estimated"));
    if (!emg_mode_text.empty()) mode = parse_emg_mode(emg_mode_text);
    ctx.seed = seed;
    ctx.out = out_dir;
    ctx.strict = strict;
    ctx.skip_fresh = skip_fresh;
    fs::create_directories(ctx.out);

    if (stage == "synth") return cmd_synth(ctx);
    if (stage == "ingest") return cmd_ingest(ctx);
    if (stage == "segment") return cmd_segment_or_features(ctx, false);
    if (stage == "features") return cmd_segment_or_features(ctx, true);
    if (stage == "label") return cmd_label(ctx);
    if (stage == "train") return cmd_train(ctx, mode);
    if (stage == "evaluate") return cmd_evaluate(ctx, mode);
    if (stage == "report") return cmd_report(ctx);
    error_line(err, stage, "usage", "no command given");
    return kBadInput;
  } catch (const LeakageError& e) {
    error_line(err, stage, "leakage", e.what());
    return kLeakage;
  } catch (const ParseError& e) {
    error_line(err, stage, "parse", e.what());
    return kBadInput;
  } catch (const ValidationError& e) {
    error_line(err, stage, "validation", e.what());
    return kBadInput;
  } catch (const std::exception& e) {
    error_line(err, stage, "error", e.what());
    return kFailure;
  }
}

}  // namespace repforge::cli

#endif  // REPFORGE_CLI_HPP
