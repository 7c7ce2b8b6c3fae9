// specband: embedded hyperspectral band selection with attention CNNs.
//
// Subcommands: synth, train, select, pipeline, reduce, eval.
// Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 training divergence, 1 anything else.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "specband/specband.hpp"

namespace fs = std::filesystem;
using namespace specband;

namespace {

std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::string ensure_out_dir(const std::string& out_dir) {
  fs::create_directories(out_dir);
  return out_dir;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::fprintf(stderr, "[specband] %s\n", msg.c_str());
}

struct LoadedData {
  HsiCube cube;
  GroundTruth gt;
  std::vector<LabeledPixel> pixels;
};

LoadedData load_dataset(const std::string& data_path, const std::string& header_path,
                        const std::string& gt_path) {
  LoadedData d;
  d.cube = load_cube(data_path, header_path);
  d.gt = load_gt(gt_path, d.cube.rows, d.cube.cols);
  d.pixels = to_pixels(d.cube, d.gt);
  if (d.pixels.empty()) throw DataError("ground truth labels no pixels (all background)");
  info("loaded " + std::to_string(d.cube.rows) + "x" + std::to_string(d.cube.cols) + "x" +
       std::to_string(d.cube.bands) + " cube, " + std::to_string(d.pixels.size()) +
       " labeled pixels");
  return d;
}

std::string default_header_for(const std::string& data_path) {
  fs::path p(data_path);
  p.replace_extension(".hdr");
  return p.string();
}

void write_history_csv(const std::string& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out.precision(17);
  out << "epoch,train_loss,train_accuracy,validation_accuracy\n";
  for (std::size_t i = 0; i < history.epochs.size(); ++i) {
    const EpochStats& e = history.epochs[i];
    out << (i + 1) << ',' << e.train_loss << ',' << e.train_accuracy << ','
        << e.validation_accuracy << "\n";
  }
}

std::string lambda_tag(double lambda) {
  std::ostringstream os;
  os << lambda;
  std::string s = os.str();
  for (char& c : s)
    if (c == '.') c = 'p';
  return s;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, header, gt, out_dir = ".";
  int blocks = 3;
  bool attention = false;
  uint64_t seed = 0;
  int batch_size = 64;
  int max_epochs = 200;
  int patience = 25;
  double lr = 1e-3;
  int channels4 = 24;
};

int cmd_train(const TrainArgs& args) {
  const std::string header = args.header.empty() ? default_header_for(args.data) : args.header;
  const LoadedData data = load_dataset(args.data, header, args.gt);

  DatasetSplits splits = balanced_split(data.pixels, args.seed);
  const BandScaler scaler = BandScaler::fit(splits.train);
  scaler.apply(splits.train);
  scaler.apply(splits.validation);
  scaler.apply(splits.test);
  const int num_classes = static_cast<int>(splits.class_counts.size());

  AttentionCnnConfig mc;
  mc.num_blocks = args.blocks;
  mc.channels = {96, 54, 36, args.channels4};
  mc.num_classes = num_classes;
  mc.use_attention = args.attention;
  mc.seed = args.seed;
  auto model = build_model<float>(mc, data.cube.bands);

  TrainConfig tc;
  tc.batch_size = args.batch_size;
  tc.max_epochs = args.max_epochs;
  tc.patience = args.patience;
  tc.adam.lr = args.lr;
  tc.seed = args.seed;

  auto [train_x, train_y] = to_tensor(splits.train);
  auto [val_x, val_y] = to_tensor(splits.validation);
  auto [test_x, test_y] = to_tensor(splits.test);
  info("training cnn" + std::to_string(args.blocks) + (args.attention ? "a" : "") + " on " +
       std::to_string(train_x.dim(0)) + " pixels");
  const TrainHistory history = train_model(model, train_x, train_y, val_x, val_y, tc);

  const std::vector<int> preds = predict(model, test_x);
  const MetricsReport metrics = metrics_report(confusion(preds, test_y, num_classes));

  const std::string out = ensure_out_dir(args.out_dir);
  Checkpoint ckpt;
  ckpt.model = std::move(model);
  ckpt.split_seed = args.seed;
  ckpt.has_scaler = true;
  ckpt.scaler = scaler;
  const std::string ckpt_path = join_path(out, "checkpoint.ckpt");
  const std::string history_path = join_path(out, "history.csv");
  save_checkpoint(ckpt_path, ckpt);
  write_history_csv(history_path, history);

  std::vector<std::pair<std::string, std::string>> manifest = {
      {"command", "train"},
      {"created", timestamp_utc()},
      {"data", args.data},
      {"header", header},
      {"gt", args.gt},
      {"seed", std::to_string(args.seed)},
      {"blocks", std::to_string(args.blocks)},
      {"attention", args.attention ? "1" : "0"},
      {"batch_size", std::to_string(args.batch_size)},
      {"max_epochs", std::to_string(args.max_epochs)},
      {"patience", std::to_string(args.patience)},
      {"epochs_run", std::to_string(history.epochs.size())},
      {"best_epoch", std::to_string(history.best_epoch)},
      {"best_validation_accuracy", std::to_string(history.best_validation_accuracy)},
      {"test_average_accuracy", std::to_string(metrics.average_accuracy)},
      {"test_kappa", std::to_string(metrics.kappa_value)},
      {"artifact.checkpoint", ckpt_path},
      {"artifact.history", history_path},
  };
  write_manifest(join_path(out, "train_manifest.txt"), manifest);

  std::printf("trained %s: %zu epochs (best %d), validation accuracy %.4f\n",
              ("cnn" + std::to_string(args.blocks) + (args.attention ? "a" : "")).c_str(),
              history.epochs.size(), history.best_epoch, history.best_validation_accuracy);
  std::printf("test AA %.4f kappa %.4f\n", metrics.average_accuracy, metrics.kappa_value);
  std::printf("checkpoint: %s\n", ckpt_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct SelectArgs {
  std::vector<std::string> heatmaps;
  std::string checkpoint, data, header, gt;
  std::vector<double> lambdas = {0.01, 0.02, 0.03, 0.04, 0.05};
  std::string out_dir = ".";
};

int cmd_select(const SelectArgs& args) {
  std::vector<Heatmap> heatmaps;
  if (!args.heatmaps.empty()) {
    for (const std::string& path : args.heatmaps) {
      Heatmap hm = read_heatmap_csv(path);
      if (hm.provenance.empty()) hm.provenance = {path};
      heatmaps.push_back(std::move(hm));
    }
  } else if (!args.checkpoint.empty()) {
    if (args.data.empty() || args.gt.empty()) {
      throw ConfigError("select from a checkpoint needs --data and --gt");
    }
    Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const std::string header = args.header.empty() ? default_header_for(args.data) : args.header;
    const LoadedData data = load_dataset(args.data, header, args.gt);
    DatasetSplits splits = balanced_split(data.pixels, ckpt.split_seed);
    if (ckpt.has_scaler) {
      ckpt.scaler.apply(splits.train);
    } else {
      BandScaler::fit(splits.train).apply(splits.train);
    }
    auto [train_x, train_y] = to_tensor(splits.train);
    (void)train_y;
    Heatmap hm = extract_heatmap(ckpt.model, train_x);
    hm.provenance = {args.checkpoint};
    heatmaps.push_back(std::move(hm));
  } else {
    throw ConfigError("select needs --heatmaps or --checkpoint");
  }
  for (double l : args.lambdas) {
    if (!(l > 0.0 && l < 0.5)) throw ConfigError("lambda must lie in (0, 0.5)");
  }

  const Heatmap aggregated = aggregate_heatmaps(heatmaps);
  const std::string out = ensure_out_dir(args.out_dir);
  const std::string heatmap_path = join_path(out, "heatmap.csv");
  write_heatmap_csv(heatmap_path, aggregated);

  std::vector<std::pair<std::string, std::string>> manifest = {
      {"command", "select"},
      {"created", timestamp_utc()},
      {"artifact.heatmap", heatmap_path},
  };
  for (double lambda : args.lambdas) {
    const BandSelection sel = select_bands(aggregated, lambda);
    const std::string path = join_path(out, "selection_l" + lambda_tag(lambda) + ".txt");
    write_selection_report(path, sel);
    manifest.emplace_back("artifact.selection." + lambda_tag(lambda), path);
    std::printf("lambda %.3f: %zu bands selected%s\n", lambda, sel.selected.size(),
                sel.degenerate ? " (degenerate heatmap)" : "");
  }
  write_manifest(join_path(out, "select_manifest.txt"), manifest);
  std::printf("heatmap: %s\n", heatmap_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct PipelineArgs {
  std::string config;
  std::optional<int> runs;
  std::optional<uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> out_dir;
  std::optional<std::string> data, header, gt;
};

int cmd_pipeline(const PipelineArgs& args) {
  ExperimentConfig cfg;
  if (!args.config.empty()) cfg = load_experiment_config(args.config);
  if (args.runs) cfg.runs = *args.runs;
  if (args.seed) cfg.base_seed = *args.seed;
  if (args.jobs) cfg.jobs = *args.jobs;
  if (args.out_dir) cfg.out_dir = *args.out_dir;
  if (args.data) cfg.cube_path = *args.data;
  if (args.header) cfg.header_path = *args.header;
  if (args.gt) cfg.gt_path = *args.gt;
  cfg.validate();
  if (cfg.cube_path.empty() || cfg.gt_path.empty()) {
    throw ConfigError("pipeline needs cube and ground-truth paths (config file or flags)");
  }
  if (cfg.header_path.empty()) cfg.header_path = default_header_for(cfg.cube_path);

  const LoadedData data = load_dataset(cfg.cube_path, cfg.header_path, cfg.gt_path);
  const PipelineResult result = band_selection_pipeline(cfg, data.pixels);

  const std::string out = ensure_out_dir(cfg.out_dir);
  const std::string heatmap_path = join_path(out, "heatmap.csv");
  write_heatmap_csv(heatmap_path, result.heatmap);
  const std::string full_csv = join_path(out, "runs_full.csv");
  write_runs_csv(full_csv, result.full_records);
  const std::string report_path = join_path(out, "report.txt");
  write_aggregate_report(report_path, result);

  std::vector<std::pair<std::string, std::string>> manifest = {
      {"command", "pipeline"},
      {"created", timestamp_utc()},
  };
  for (const auto& [k, v] : experiment_config_kv(cfg)) manifest.emplace_back("config." + k, v);
  manifest.emplace_back("artifact.heatmap", heatmap_path);
  manifest.emplace_back("artifact.runs_full", full_csv);
  manifest.emplace_back("artifact.report", report_path);

  for (const LambdaResult& lr : result.lambdas) {
    const std::string tag = lambda_tag(lr.lambda);
    const std::string sel_path = join_path(out, "selection_l" + tag + ".txt");
    write_selection_report(sel_path, lr.selection);
    manifest.emplace_back("artifact.selection." + tag, sel_path);
    if (!lr.records.empty()) {
      const std::string csv = join_path(out, "runs_l" + tag + ".csv");
      write_runs_csv(csv, lr.records);
      manifest.emplace_back("artifact.runs." + tag, csv);
    }
    const std::string note = lr.skipped_reason.empty() ? "" : " [" + lr.skipped_reason + "]";
    std::printf("lambda %.3f: %zu bands%s\n", lr.lambda, lr.selection.selected.size(),
                note.c_str());
  }
  write_manifest(join_path(out, "manifest.txt"), manifest);

  for (const auto& [arch, agg] : result.full_per_arch) {
    std::printf("full %s: AA %.4f +/- %.4f, kappa %.4f (%d runs, %d failed)\n", arch.c_str(),
                agg.mean_aa, agg.std_aa, agg.mean_kappa, agg.completed, agg.failed);
  }
  std::printf("report: %s\n", report_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  int bands = 32;
  int classes = 3;
  std::vector<int> planted;
  double sigma = 0.05;
  int pixels_per_class = 600;
  uint64_t seed = 0;
  std::string out_dir = ".";
};

int cmd_synth(const SynthArgs& args) {
  HsiCube cube;
  GroundTruth gt;
  synth_cube(args.bands, args.classes, args.planted, args.sigma, args.pixels_per_class, args.seed,
             cube, gt);
  const std::string out = ensure_out_dir(args.out_dir);
  const std::string cube_path = join_path(out, "cube.bin");
  const std::string header_path = join_path(out, "cube.hdr");
  const std::string gt_path = join_path(out, "gt.bin");
  write_cube_raw(cube_path, cube);
  write_cube_header(header_path, cube.rows, cube.cols, cube.bands);
  write_gt_raw(gt_path, gt);

  std::ostringstream planted;
  for (std::size_t i = 0; i < args.planted.size(); ++i) {
    if (i) planted << ',';
    planted << args.planted[i];
  }
  write_manifest(join_path(out, "synth_manifest.txt"),
                 {{"command", "synth"},
                  {"created", timestamp_utc()},
                  {"bands", std::to_string(args.bands)},
                  {"classes", std::to_string(args.classes)},
                  {"planted", planted.str()},
                  {"sigma", std::to_string(args.sigma)},
                  {"pixels_per_class", std::to_string(args.pixels_per_class)},
                  {"seed", std::to_string(args.seed)},
                  {"artifact.cube", cube_path},
                  {"artifact.header", header_path},
                  {"artifact.gt", gt_path}});
  std::printf("wrote %s (%dx%dx%d), %s\n", cube_path.c_str(), cube.rows, cube.cols, cube.bands,
              gt_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct ReduceArgs {
  std::string cube, header, selection;
  std::string out_dir = ".";
};

int cmd_reduce(const ReduceArgs& args) {
  const std::string header = args.header.empty() ? default_header_for(args.cube) : args.header;
  const HsiCube cube = load_cube(args.cube, header);
  const BandSelection sel = read_selection_report(args.selection);
  const HsiCube reduced = reduce_bands(cube, sel.selected);

  const std::string out = ensure_out_dir(args.out_dir);
  const std::string cube_path = join_path(out, "reduced.bin");
  const std::string header_path = join_path(out, "reduced.hdr");
  const std::string bands_path = join_path(out, "reduced.bands.txt");
  write_cube_raw(cube_path, reduced);
  write_cube_header(header_path, reduced.rows, reduced.cols, reduced.bands);
  {
    // sidecar: retained original band indices, one per line
    std::ofstream bands(bands_path);
    if (!bands) throw DataError("cannot write " + bands_path);
    for (int b : sel.selected) bands << b << "\n";
  }
  write_manifest(join_path(out, "reduce_manifest.txt"),
                 {{"command", "reduce"},
                  {"created", timestamp_utc()},
                  {"cube", args.cube},
                  {"selection", args.selection},
                  {"bands_kept", std::to_string(reduced.bands)},
                  {"artifact.cube", cube_path},
                  {"artifact.header", header_path},
                  {"artifact.bands", bands_path}});
  std::printf("reduced %d -> %d bands: %s\n", cube.bands, reduced.bands, cube_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, header, gt;
  std::string split = "test";
  std::string out_dir = ".";
};

int cmd_eval(const EvalArgs& args) {
  Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const std::string header = args.header.empty() ? default_header_for(args.data) : args.header;
  const LoadedData data = load_dataset(args.data, header, args.gt);
  DatasetSplits splits = balanced_split(data.pixels, ckpt.split_seed);
  if (ckpt.has_scaler) {
    ckpt.scaler.apply(splits.train);
    ckpt.scaler.apply(splits.validation);
    ckpt.scaler.apply(splits.test);
  }
  const std::vector<LabeledPixel>* subset = &splits.test;
  if (args.split == "train") subset = &splits.train;
  else if (args.split == "validation") subset = &splits.validation;
  else if (args.split != "test") throw ConfigError("split must be train, validation or test");

  auto [x, y] = to_tensor(*subset);
  const std::vector<int> preds = predict(ckpt.model, x);
  const int num_classes = static_cast<int>(splits.class_counts.size());
  const MetricsReport metrics = metrics_report(confusion(preds, y, num_classes));

  const std::string out = ensure_out_dir(args.out_dir);
  const std::string report_path = join_path(out, "eval_report.txt");
  {
    std::ofstream report(report_path);
    report.precision(10);
    report << "split = " << args.split << "\n";
    report << "samples = " << x.dim(0) << "\n";
    report << "average_accuracy = " << metrics.average_accuracy << "\n";
    report << "kappa = " << metrics.kappa_value << "\n";
    for (std::size_t c = 0; c < metrics.per_class_accuracy.size(); ++c) {
      report << "class_" << (c + 1) << "_accuracy = " << metrics.per_class_accuracy[c] << "\n";
    }
  }
  std::printf("%s: %d samples, AA %.4f, kappa %.4f\n", args.split.c_str(), x.dim(0),
              metrics.average_accuracy, metrics.kappa_value);
  std::printf("report: %s\n", report_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"embedded hyperspectral band selection with attention-based CNNs"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train one CNN on a balanced split");
  train->add_option("--data", train_args.data, "cube payload (.bin or .csv)")->required();
  train->add_option("--header", train_args.header, "cube header (default: data with .hdr)");
  train->add_option("--gt", train_args.gt, "ground truth (.bin or .csv)")->required();
  train->add_option("--blocks", train_args.blocks, "building blocks (2..4)");
  train->add_flag("--attention", train_args.attention, "attach attention modules");
  train->add_option("--seed", train_args.seed, "run seed");
  train->add_option("--batch-size", train_args.batch_size, "mini-batch size");
  train->add_option("--max-epochs", train_args.max_epochs, "epoch cap");
  train->add_option("--patience", train_args.patience, "early-stopping patience");
  train->add_option("--lr", train_args.lr, "ADAM learning rate");
  train->add_option("--channels4", train_args.channels4, "kernel count of block 4");
  train->add_option("--out-dir", train_args.out_dir, "artifact directory");

  SelectArgs select_args;
  auto* select = app.add_subcommand("select", "aggregate heatmaps and select bands");
  select->add_option("--heatmaps", select_args.heatmaps, "heatmap CSV files");
  select->add_option("--checkpoint", select_args.checkpoint, "extract from a trained model");
  select->add_option("--data", select_args.data, "cube payload (checkpoint mode)");
  select->add_option("--header", select_args.header, "cube header (checkpoint mode)");
  select->add_option("--gt", select_args.gt, "ground truth (checkpoint mode)");
  select->add_option("--lambdas", select_args.lambdas, "contamination rates");
  select->add_option("--out-dir", select_args.out_dir, "artifact directory");

  PipelineArgs pipeline_args;
  std::string pipeline_config;
  int pipeline_runs = -1;
  uint64_t pipeline_seed = 0;
  bool pipeline_seed_set = false;
  int pipeline_jobs = -1;
  std::string pipeline_out, pipeline_data, pipeline_header, pipeline_gt;
  auto* pipeline = app.add_subcommand("pipeline", "full Monte-Carlo band-selection pipeline");
  pipeline->add_option("--config", pipeline_config, "experiment config file");
  pipeline->add_option("--runs", pipeline_runs, "Monte-Carlo run count");
  pipeline->add_option("--seed", pipeline_seed, "base seed")->each([&](const std::string&) {
    pipeline_seed_set = true;
  });
  pipeline->add_option("--jobs", pipeline_jobs, "parallel runs");
  pipeline->add_option("--out-dir", pipeline_out, "artifact directory");
  pipeline->add_option("--data", pipeline_data, "cube payload");
  pipeline->add_option("--header", pipeline_header, "cube header");
  pipeline->add_option("--gt", pipeline_gt, "ground truth");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic cube with planted bands");
  synth->add_option("--bands", synth_args.bands, "band count");
  synth->add_option("--classes", synth_args.classes, "class count");
  synth->add_option("--planted", synth_args.planted, "informative band indices")->delimiter(',');
  synth->add_option("--sigma", synth_args.sigma, "noise level");
  synth->add_option("--pixels-per-class", synth_args.pixels_per_class, "pixels per class");
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->add_option("--out-dir", synth_args.out_dir, "artifact directory");

  ReduceArgs reduce_args;
  auto* reduce = app.add_subcommand("reduce", "write a band-reduced cube");
  reduce->add_option("--cube", reduce_args.cube, "cube payload")->required();
  reduce->add_option("--header", reduce_args.header, "cube header");
  reduce->add_option("--selection", reduce_args.selection, "selection report")->required();
  reduce->add_option("--out-dir", reduce_args.out_dir, "artifact directory");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on its split");
  eval->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
  eval->add_option("--data", eval_args.data, "cube payload")->required();
  eval->add_option("--header", eval_args.header, "cube header");
  eval->add_option("--gt", eval_args.gt, "ground truth")->required();
  eval->add_option("--split", eval_args.split, "train | validation | test");
  eval->add_option("--out-dir", eval_args.out_dir, "artifact directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      if (train_args.blocks < 2 || train_args.blocks > 4) {
        throw ConfigError("unsupported depth: --blocks must be 2, 3 or 4");
      }
      return cmd_train(train_args);
    }
    if (*select) return cmd_select(select_args);
    if (*pipeline) {
      if (!pipeline_config.empty()) pipeline_args.config = pipeline_config;
      if (pipeline_runs >= 0) pipeline_args.runs = pipeline_runs;
      if (pipeline_seed_set) pipeline_args.seed = pipeline_seed;
      if (pipeline_jobs >= 0) pipeline_args.jobs = pipeline_jobs;
      if (!pipeline_out.empty()) pipeline_args.out_dir = pipeline_out;
      if (!pipeline_data.empty()) pipeline_args.data = pipeline_data;
      if (!pipeline_header.empty()) pipeline_args.header = pipeline_header;
      if (!pipeline_gt.empty()) pipeline_args.gt = pipeline_gt;
      return cmd_pipeline(pipeline_args);
    }
    if (*synth) return cmd_synth(synth_args);
    if (*reduce) return cmd_reduce(reduce_args);
    if (*eval) return cmd_eval(eval_args);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "specband: configuration error: %s\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "specband: configuration error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "specband: data error: %s\n", e.what());
    return 3;
  } catch (const TrainingDivergence& e) {
    std::fprintf(stderr, "specband: training diverged: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "specband: %s\n", e.what());
    return 1;
  }
  return 2;
}
