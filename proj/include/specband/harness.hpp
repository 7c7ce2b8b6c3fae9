#pragma once

#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "specband/heatmap.hpp"
#include "specband/hsi.hpp"
#include "specband/kv.hpp"
#include "specband/mcd.hpp"
#include "specband/metrics.hpp"
#include "specband/model.hpp"
#include "specband/train.hpp"

namespace specband {

struct ArchSpec {
  int blocks = 2;
  bool attention = true;

  std::string name() const {
    return "cnn" + std::to_string(blocks) + (attention ? "a" : "");
  }
};

inline ArchSpec parse_arch(const std::string& token) {
  std::string t;
  for (char ch : token) {
    if (ch == '-' || ch == '_') continue;
    t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  if (t.rfind("cnn", 0) == 0) t = t.substr(3);
  ArchSpec arch;
  if (t.size() == 2 && t.back() == 'a') {
    arch.attention = true;
    t.pop_back();
  } else if (t.size() == 1) {
    arch.attention = false;
  } else {
    throw ConfigError("unrecognized architecture '" + token + "' (expected cnn2..cnn4, cnn2a..cnn4a)");
  }
  if (t != "2" && t != "3" && t != "4") {
    throw ConfigError("unsupported depth in architecture '" + token + "'");
  }
  arch.blocks = t[0] - '0';
  return arch;
}

struct ExperimentConfig {
  int runs = 30;
  uint64_t base_seed = 0;
  std::vector<ArchSpec> architectures = {{2, true}, {3, true}, {4, true}};
  std::vector<double> lambdas = {0.01, 0.02, 0.03, 0.04, 0.05};
  TrainConfig train;
  int channels4 = 24;  // kernel count of the optional fourth block
  std::string cube_path;
  std::string header_path;
  std::string gt_path;
  std::string out_dir = ".";
  int jobs = 1;

  void validate() const {
    if (runs < 1) throw ConfigError("runs must be >= 1");
    if (architectures.empty()) throw ConfigError("at least one architecture required");
    for (double l : lambdas) {
      if (!(l > 0.0 && l < 0.5)) throw ConfigError("lambdas must lie in (0, 0.5)");
    }
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
  }
};

struct RunRecord {
  int run = 0;
  std::string arch;
  bool attention = false;
  double aa = 0.0;
  double kappa = 0.0;
  int epochs = 0;
  double seconds = 0.0;
  bool failed = false;
  std::string error;
};

struct AggregateStats {
  double mean_aa = 0.0;
  double std_aa = 0.0;
  double mean_kappa = 0.0;
  double std_kappa = 0.0;
  int completed = 0;
  int failed = 0;
};

// Sample standard deviation; a single run reports 0. NaN kappas (degenerate
// confusion matrices) are skipped in the kappa aggregate.
inline AggregateStats aggregate_records(const std::vector<RunRecord>& records) {
  AggregateStats agg;
  std::vector<double> aas, kappas;
  for (const RunRecord& r : records) {
    if (r.failed) {
      ++agg.failed;
      continue;
    }
    ++agg.completed;
    aas.push_back(r.aa);
    if (std::isfinite(r.kappa)) kappas.push_back(r.kappa);
  }
  const auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
    if (v.empty()) {
      mean = sd = 0.0;
      return;
    }
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    sd = 0.0;
    if (v.size() > 1) {
      for (double x : v) sd += (x - mean) * (x - mean);
      sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
    }
  };
  mean_std(aas, agg.mean_aa, agg.std_aa);
  mean_std(kappas, agg.mean_kappa, agg.std_kappa);
  return agg;
}

namespace detail {

struct PreparedRun {
  TensorT<float> train_x, val_x, test_x;
  std::vector<int> train_y, val_y, test_y;
  int num_classes = 0;
  int bands = 0;
};

inline PreparedRun prepare_run(const std::vector<LabeledPixel>& pixels, uint64_t seed,
                               const std::vector<int>* selection) {
  DatasetSplits splits = balanced_split(pixels, seed);
  if (selection) {
    splits.train = reduce_pixels(splits.train, *selection);
    splits.validation = reduce_pixels(splits.validation, *selection);
    splits.test = reduce_pixels(splits.test, *selection);
  }
  const BandScaler scaler = BandScaler::fit(splits.train);
  scaler.apply(splits.train);
  scaler.apply(splits.validation);
  scaler.apply(splits.test);

  PreparedRun prep;
  prep.num_classes = static_cast<int>(splits.class_counts.size());
  std::tie(prep.train_x, prep.train_y) = to_tensor(splits.train);
  std::tie(prep.val_x, prep.val_y) = to_tensor(splits.validation);
  std::tie(prep.test_x, prep.test_y) = to_tensor(splits.test);
  prep.bands = prep.train_x.dim(1);
  return prep;
}

inline AttentionCnnConfig model_config(const ArchSpec& arch, const ExperimentConfig& cfg,
                                       int num_classes, uint64_t seed) {
  AttentionCnnConfig mc;
  mc.num_blocks = arch.blocks;
  mc.channels = {96, 54, 36, cfg.channels4};
  mc.num_classes = num_classes;
  mc.use_attention = arch.attention;
  mc.seed = seed;
  return mc;
}

// Trains one architecture on one prepared split and evaluates on the test
// fold. Optionally extracts the training-set heatmap.
inline RunRecord execute_run(const ExperimentConfig& cfg, const ArchSpec& arch, int run,
                             const PreparedRun& prep, Heatmap* heatmap_out) {
  RunRecord rec;
  rec.run = run;
  rec.arch = arch.name();
  rec.attention = arch.attention;
  const auto start = std::chrono::steady_clock::now();
  try {
    const uint64_t seed = cfg.base_seed + static_cast<uint64_t>(run);
    AttentionCnnModelT<float> model =
        build_model<float>(model_config(arch, cfg, prep.num_classes, seed), prep.bands);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    TrainHistory history = train_model(model, prep.train_x, prep.train_y, prep.val_x, prep.val_y, tc);
    rec.epochs = static_cast<int>(history.epochs.size());

    const std::vector<int> preds = predict(model, prep.test_x);
    const MetricsReport m = metrics_report(confusion(preds, prep.test_y, prep.num_classes));
    rec.aa = m.average_accuracy;
    rec.kappa = m.kappa_value;

    if (heatmap_out && arch.attention) {
      *heatmap_out = extract_heatmap(model, prep.train_x);
      heatmap_out->provenance = {"run" + std::to_string(run) + "/" + arch.name()};
    }
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.error = e.what();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

// Runs fn(run_index) for every run, optionally across threads. Results land
// in slots indexed by run, so aggregation order never depends on scheduling.
template <typename Fn>
void for_each_run(int runs, int jobs, Fn&& fn) {
  if (jobs <= 1 || runs == 1) {
    for (int r = 0; r < runs; ++r) fn(r);
    return;
  }
  std::atomic<int> next{0};
  const int workers = std::min(jobs, runs);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int r = next.fetch_add(1); r < runs; r = next.fetch_add(1)) fn(r);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

struct MonteCarloResult {
  std::vector<RunRecord> records;  // runs x architectures, run-major
  std::map<std::string, AggregateStats> per_arch;
};

// Monte-Carlo protocol: run r reseeds everything with base_seed + r, splits,
// trains every requested architecture and evaluates on the test fold.
inline MonteCarloResult monte_carlo(const ExperimentConfig& config,
                                    const std::vector<LabeledPixel>& pixels) {
  config.validate();
  MonteCarloResult result;
  const std::size_t per_run = config.architectures.size();
  result.records.assign(static_cast<std::size_t>(config.runs) * per_run, RunRecord{});

  detail::for_each_run(config.runs, config.jobs, [&](int r) {
    detail::PreparedRun prep;
    try {
      prep = detail::prepare_run(pixels, config.base_seed + static_cast<uint64_t>(r), nullptr);
    } catch (const std::exception& e) {
      for (std::size_t a = 0; a < per_run; ++a) {
        RunRecord& rec = result.records[static_cast<std::size_t>(r) * per_run + a];
        rec.run = r;
        rec.arch = config.architectures[a].name();
        rec.attention = config.architectures[a].attention;
        rec.failed = true;
        rec.error = e.what();
      }
      return;
    }
    for (std::size_t a = 0; a < per_run; ++a) {
      result.records[static_cast<std::size_t>(r) * per_run + a] =
          detail::execute_run(config, config.architectures[a], r, prep, nullptr);
    }
  });

  for (const ArchSpec& arch : config.architectures) {
    std::vector<RunRecord> of_arch;
    for (const RunRecord& rec : result.records)
      if (rec.arch == arch.name()) of_arch.push_back(rec);
    result.per_arch[arch.name()] = aggregate_records(of_arch);
  }
  return result;
}

struct LambdaResult {
  double lambda = 0.0;
  BandSelection selection;
  std::vector<RunRecord> records;  // reduced-data retraining, empty if skipped
  std::map<std::string, AggregateStats> per_arch;
  std::string skipped_reason;
};

struct PipelineResult {
  Heatmap heatmap;
  std::vector<RunRecord> full_records;
  std::map<std::string, AggregateStats> full_per_arch;
  std::vector<LambdaResult> lambdas;
};

// The paper's end-to-end protocol: train attention CNNs across Monte-Carlo
// runs, average the training-set heatmaps across runs and architectures,
// flag bands per contamination rate, then retrain from scratch on the reduced
// bands with the same split seeds for paired before/after reports.
inline PipelineResult band_selection_pipeline(const ExperimentConfig& config,
                                              const std::vector<LabeledPixel>& pixels) {
  config.validate();
  bool any_attention = false;
  for (const ArchSpec& a : config.architectures) any_attention |= a.attention;
  if (!any_attention) {
    throw ConfigError("band selection pipeline requires at least one attention architecture");
  }

  PipelineResult result;
  const std::size_t per_run = config.architectures.size();
  result.full_records.assign(static_cast<std::size_t>(config.runs) * per_run, RunRecord{});
  std::vector<Heatmap> heatmaps(static_cast<std::size_t>(config.runs) * per_run);

  detail::for_each_run(config.runs, config.jobs, [&](int r) {
    detail::PreparedRun prep;
    try {
      prep = detail::prepare_run(pixels, config.base_seed + static_cast<uint64_t>(r), nullptr);
    } catch (const std::exception& e) {
      for (std::size_t a = 0; a < per_run; ++a) {
        RunRecord& rec = result.full_records[static_cast<std::size_t>(r) * per_run + a];
        rec.run = r;
        rec.arch = config.architectures[a].name();
        rec.failed = true;
        rec.error = e.what();
      }
      return;
    }
    for (std::size_t a = 0; a < per_run; ++a) {
      const std::size_t slot = static_cast<std::size_t>(r) * per_run + a;
      result.full_records[slot] = detail::execute_run(
          config, config.architectures[a], r, prep,
          config.architectures[a].attention ? &heatmaps[slot] : nullptr);
    }
  });

  std::vector<Heatmap> collected;
  for (const Heatmap& h : heatmaps)
    if (!h.scores.empty()) collected.push_back(h);
  if (collected.empty()) throw DataError("pipeline produced no heatmaps (all runs failed)");
  result.heatmap = aggregate_heatmaps(collected);

  for (const ArchSpec& arch : config.architectures) {
    std::vector<RunRecord> of_arch;
    for (const RunRecord& rec : result.full_records)
      if (rec.arch == arch.name()) of_arch.push_back(rec);
    result.full_per_arch[arch.name()] = aggregate_records(of_arch);
  }

  for (double lambda : config.lambdas) {
    LambdaResult lr;
    lr.lambda = lambda;
    lr.selection = select_bands(result.heatmap, lambda);
    if (lr.selection.selected.empty()) {
      lr.skipped_reason = lr.selection.degenerate ? "degenerate heatmap" : "empty selection";
      result.lambdas.push_back(std::move(lr));
      continue;
    }

    lr.records.assign(static_cast<std::size_t>(config.runs) * per_run, RunRecord{});
    const std::vector<int>& selected = lr.selection.selected;
    detail::for_each_run(config.runs, config.jobs, [&](int r) {
      detail::PreparedRun prep;
      try {
        prep = detail::prepare_run(pixels, config.base_seed + static_cast<uint64_t>(r), &selected);
      } catch (const std::exception& e) {
        for (std::size_t a = 0; a < per_run; ++a) {
          RunRecord& rec = lr.records[static_cast<std::size_t>(r) * per_run + a];
          rec.run = r;
          rec.arch = config.architectures[a].name();
          rec.failed = true;
          rec.error = e.what();
        }
        return;
      }
      for (std::size_t a = 0; a < per_run; ++a) {
        lr.records[static_cast<std::size_t>(r) * per_run + a] =
            detail::execute_run(config, config.architectures[a], r, prep, nullptr);
      }
    });
    for (const ArchSpec& arch : config.architectures) {
      std::vector<RunRecord> of_arch;
      for (const RunRecord& rec : lr.records)
        if (rec.arch == arch.name()) of_arch.push_back(rec);
      lr.per_arch[arch.name()] = aggregate_records(of_arch);
    }
    result.lambdas.push_back(std::move(lr));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization: per-run CSV, aggregate report, experiment config, manifest

inline void write_runs_csv(const std::string& path, const std::vector<RunRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out.precision(17);
  out << "run,arch,attention,aa,kappa,epochs,seconds\n";
  for (const RunRecord& r : records) {
    if (r.failed) continue;
    out << r.run << ',' << r.arch << ',' << (r.attention ? 1 : 0) << ',' << r.aa << ',' << r.kappa
        << ',' << r.epochs << ',' << r.seconds << "\n";
  }
}

inline std::vector<RunRecord> read_runs_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "run,arch,attention,aa,kappa,epochs,seconds") {
    throw DataError(path + ": missing runs CSV header");
  }
  std::vector<RunRecord> records;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split_list(line, ',');
    if (fields.size() != 7) throw DataError(path + ": malformed row '" + line + "'");
    RunRecord r;
    r.run = std::stoi(fields[0]);
    r.arch = fields[1];
    r.attention = std::stoi(fields[2]) != 0;
    r.aa = std::stod(fields[3]);
    r.kappa = std::stod(fields[4]);
    r.epochs = std::stoi(fields[5]);
    r.seconds = std::stod(fields[6]);
    records.push_back(std::move(r));
  }
  return records;
}

inline void write_aggregate_report(const std::string& path, const PipelineResult& result) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out.precision(10);
  out << "# classification on full vs reduced bands (mean +/- std over completed runs)\n";
  for (const auto& [arch, agg] : result.full_per_arch) {
    out << "full." << arch << ".aa = " << agg.mean_aa << "\n";
    out << "full." << arch << ".aa_std = " << agg.std_aa << "\n";
    out << "full." << arch << ".kappa = " << agg.mean_kappa << "\n";
    out << "full." << arch << ".kappa_std = " << agg.std_kappa << "\n";
    out << "full." << arch << ".completed = " << agg.completed << "\n";
    out << "full." << arch << ".failed = " << agg.failed << "\n";
  }
  for (const LambdaResult& lr : result.lambdas) {
    std::ostringstream tag;
    tag << "lambda_" << lr.lambda;
    out << tag.str() << ".selected_count = " << lr.selection.selected.size() << "\n";
    out << tag.str() << ".selected =";
    for (int b : lr.selection.selected) out << ' ' << b;
    out << "\n";
    if (!lr.skipped_reason.empty()) {
      out << tag.str() << ".skipped = " << lr.skipped_reason << "\n";
      continue;
    }
    for (const auto& [arch, agg] : lr.per_arch) {
      out << tag.str() << '.' << arch << ".aa = " << agg.mean_aa << "\n";
      out << tag.str() << '.' << arch << ".aa_std = " << agg.std_aa << "\n";
      out << tag.str() << '.' << arch << ".kappa = " << agg.mean_kappa << "\n";
      out << tag.str() << '.' << arch << ".kappa_std = " << agg.std_kappa << "\n";
      out << tag.str() << '.' << arch << ".completed = " << agg.completed << "\n";
      out << tag.str() << '.' << arch << ".failed = " << agg.failed << "\n";
    }
  }
}

inline std::vector<std::pair<std::string, std::string>> experiment_config_kv(
    const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kv;
  const auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  kv.emplace_back("runs", std::to_string(cfg.runs));
  kv.emplace_back("base_seed", std::to_string(cfg.base_seed));
  {
    std::ostringstream os;
    for (std::size_t i = 0; i < cfg.architectures.size(); ++i) {
      if (i) os << ',';
      os << cfg.architectures[i].name();
    }
    kv.emplace_back("architectures", os.str());
  }
  {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < cfg.lambdas.size(); ++i) {
      if (i) os << ',';
      os << cfg.lambdas[i];
    }
    kv.emplace_back("lambdas", os.str());
  }
  kv.emplace_back("batch_size", std::to_string(cfg.train.batch_size));
  kv.emplace_back("patience", std::to_string(cfg.train.patience));
  kv.emplace_back("max_epochs", std::to_string(cfg.train.max_epochs));
  kv.emplace_back("learning_rate", num(cfg.train.adam.lr));
  kv.emplace_back("beta1", num(cfg.train.adam.beta1));
  kv.emplace_back("beta2", num(cfg.train.adam.beta2));
  kv.emplace_back("channels4", std::to_string(cfg.channels4));
  kv.emplace_back("cube", cfg.cube_path);
  kv.emplace_back("header", cfg.header_path);
  kv.emplace_back("gt", cfg.gt_path);
  kv.emplace_back("out_dir", cfg.out_dir);
  kv.emplace_back("jobs", std::to_string(cfg.jobs));
  return kv;
}

inline ExperimentConfig experiment_config_from_kv(const std::map<std::string, std::string>& kv,
                                                  const std::string& origin) {
  ExperimentConfig cfg;
  const auto has = [&](const std::string& key) { return kv.count(key) > 0; };
  if (has("runs")) cfg.runs = static_cast<int>(kv_long(kv, "runs", origin));
  if (has("base_seed")) cfg.base_seed = static_cast<uint64_t>(kv_long(kv, "base_seed", origin));
  if (has("architectures")) {
    cfg.architectures.clear();
    for (const std::string& token : split_list(kv.at("architectures")))
      cfg.architectures.push_back(parse_arch(token));
  }
  if (has("lambdas")) {
    cfg.lambdas.clear();
    for (const std::string& token : split_list(kv.at("lambdas")))
      cfg.lambdas.push_back(std::stod(token));
  }
  if (has("batch_size")) cfg.train.batch_size = static_cast<int>(kv_long(kv, "batch_size", origin));
  if (has("patience")) cfg.train.patience = static_cast<int>(kv_long(kv, "patience", origin));
  if (has("max_epochs")) cfg.train.max_epochs = static_cast<int>(kv_long(kv, "max_epochs", origin));
  if (has("learning_rate")) cfg.train.adam.lr = kv_double(kv, "learning_rate", origin);
  if (has("beta1")) cfg.train.adam.beta1 = kv_double(kv, "beta1", origin);
  if (has("beta2")) cfg.train.adam.beta2 = kv_double(kv, "beta2", origin);
  if (has("channels4")) cfg.channels4 = static_cast<int>(kv_long(kv, "channels4", origin));
  if (has("cube")) cfg.cube_path = kv.at("cube");
  if (has("header")) cfg.header_path = kv.at("header");
  if (has("gt")) cfg.gt_path = kv.at("gt");
  if (has("out_dir")) cfg.out_dir = kv.at("out_dir");
  if (has("jobs")) cfg.jobs = static_cast<int>(kv_long(kv, "jobs", origin));
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_config_from_kv(parse_kv_file(path), path);
}

// Run manifest: invocation snapshot plus every artifact path, key = value.
inline void write_manifest(const std::string& path,
                           const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path);
  out << "# specband run manifest\n";
  for (const auto& [k, v] : entries) out << k << " = " << v << "\n";
  if (!out) throw DataError("failed writing manifest " + path);
}

}  // namespace specband
