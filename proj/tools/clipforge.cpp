// clipforge: adaptive clip-aware video compression and frame selection.
//
// Subcommands: gen, train, select, eval, detect-eval, flops-report.
// Exit codes: 0 success, 1 usage/config error, 2 runtime/numeric error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clipforge/config.hpp"
#include "clipforge/detection.hpp"
#include "clipforge/selection.hpp"
#include "clipforge/training.hpp"

namespace fs = std::filesystem;
using namespace clipforge;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  std::string out_dir = ".";
};

RunConfig load_run_config(const GlobalArgs& g) {
  RunConfig cfg;
  if (!g.config_path.empty()) cfg = parse_config_file(g.config_path);
  if (g.seed_set) cfg.seed = g.seed;
  cfg.validate();
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw RuntimeError(strformat("cannot create directory '%s': %s", dir.c_str(),
                                       ec.message().c_str()));
}

std::vector<VideoSample> load_corpus_manifest(const std::string& manifest) {
  const std::vector<ManifestEntry> entries = read_manifest(manifest);
  require(!entries.empty(), strformat("manifest '%s' lists no videos", manifest.c_str()));
  const std::string base = dir_of(manifest);
  std::vector<VideoSample> corpus;
  corpus.reserve(entries.size());
  for (const ManifestEntry& e : entries) {
    VideoSample video = load_frames(join_path(base, e.path));
    video.source_id = e.video_id;
    video.label = e.label;  // manifest label is authoritative
    corpus.push_back(std::move(video));
  }
  return corpus;
}

std::vector<VideoSample> obtain_corpus(const RunConfig& cfg, const std::string& manifest) {
  if (!manifest.empty()) return load_corpus_manifest(manifest);
  return generate_corpus(cfg.corpus_spec());
}

Model fresh_model(const RunConfig& cfg) {
  Rng rng = Rng::derive(cfg.seed, {0x0DE1u});
  return make_model(cfg.model_config(), rng);
}

Model restored_model(const RunConfig& cfg, const std::string& checkpoint) {
  Model model = fresh_model(cfg);
  load_model(checkpoint, model);
  return model;
}

std::vector<VideoSample> pick_split(std::vector<VideoSample> corpus, double fraction,
                                    const std::string& split) {
  if (split == "all") return corpus;
  auto [train, test] = split_corpus(corpus, fraction);
  if (split == "train") return train;
  if (split == "test") return test;
  throw ConfigError(strformat("unknown split '%s' (want train|test|all)", split.c_str()));
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------
int cmd_gen(const GlobalArgs& g) {
  const RunConfig cfg = load_run_config(g);
  const std::vector<VideoSample> corpus = generate_corpus(cfg.corpus_spec());
  ensure_dir(g.out_dir);
  ensure_dir(g.out_dir + "/videos");
  std::vector<ManifestEntry> entries;
  entries.reserve(corpus.size());
  for (const VideoSample& video : corpus) {
    const std::string rel = "videos/" + video.source_id + ".clpv";
    store_frames(g.out_dir + "/" + rel, video);
    entries.push_back({video.source_id, rel, video.label});
  }
  write_manifest(g.out_dir + "/manifest.csv", entries);
  log_info(strformat("wrote %zu videos and manifest under %s", corpus.size(),
                     g.out_dir.c_str()));
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------
int cmd_train(const GlobalArgs& g, const std::string& manifest, const std::string& resume_from) {
  const RunConfig cfg = load_run_config(g);
  const std::vector<VideoSample> corpus = obtain_corpus(cfg, manifest);
  auto [train_split, test_split] = split_corpus(corpus, cfg.test_fraction);
  require(!train_split.empty(), "training split is empty");
  require(!test_split.empty(), "test split is empty; lower test_fraction or add videos");
  ensure_dir(g.out_dir);

  Model model = fresh_model(cfg);
  int start_phase = 1;
  if (!resume_from.empty()) {
    load_model(resume_from, model);
    start_phase = 3;
  }

  TrainCallbacks callbacks;
  callbacks.on_phase_end = [&](int phase, Model& m) {
    save_model(strformat("%s/phase%d.clpf", g.out_dir.c_str(), phase), m);
  };
  const TrainResult result =
      train(model, train_split, test_split, cfg.train_config(g.threads), callbacks, start_phase);
  write_history_csv(g.out_dir + "/history.csv", result.history);
  log_info(strformat("training done; %zu history rows under %s", result.history.size(),
                     g.out_dir.c_str()));
  return 0;
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------
int cmd_select(const GlobalArgs& g, const std::string& manifest, const std::string& checkpoint,
               int budget, const std::string& variant_name, const std::string& split) {
  const RunConfig cfg = load_run_config(g);
  const ScoreVariant variant = parse_score_variant(variant_name);
  const Model model = restored_model(cfg, checkpoint);
  const std::vector<VideoSample> videos =
      pick_split(obtain_corpus(cfg, manifest), cfg.test_fraction, split);
  require(!videos.empty(), "selected split is empty");
  ensure_dir(g.out_dir);
  ensure_dir(g.out_dir + "/scores");
  ensure_dir(g.out_dir + "/distilled");

  const ActionSpace& actions = model.config.actions;
  std::vector<ManifestEntry> entries;
  for (const VideoSample& video : videos) {
    const StationPointSet stations = extract_station_points(
        video, model.config.stations, model.cnn, actions.full_resolution());
    const std::vector<double> scores =
        score_video(video, actions, model.cnn, model.gru, model.policy, stations, variant);
    write_scores_csv(g.out_dir + "/scores/" + video.source_id + ".csv", scores, variant);

    const int n = budget > 0 ? budget : std::max(1, video.length() / 8);
    require(n <= video.length(),
            strformat("budget %d exceeds video length %d for %s", n, video.length(),
                      video.source_id.c_str()));
    VideoSample distilled = select_frames(video, scores, n);
    const std::string rel = distilled.source_id + ".clpv";
    store_frames(g.out_dir + "/distilled/" + rel, distilled);
    entries.push_back({distilled.source_id, rel, distilled.label});
  }
  write_manifest(g.out_dir + "/distilled/manifest.csv", entries);
  log_info(strformat("scored and distilled %zu videos under %s", videos.size(),
                     g.out_dir.c_str()));
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------
void write_eval_csv(const std::string& path, const EvalReport& report,
                    const ActionSpace& actions) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), strformat("cannot open metrics file '%s'", path.c_str()));
  out << "metric,value\n";
  out << "accuracy," << format_double(report.accuracy) << '\n';
  out << "flops_per_video," << format_double(report.flops_per_video) << '\n';
  out << "flops_per_frame," << format_double(report.flops_per_frame) << '\n';
  for (std::size_t k = 0; k < report.action_usage.size(); ++k) {
    out << "usage_k" << actions.frame_counts[k] << ',' << format_double(report.action_usage[k])
        << '\n';
  }
  require(out.good(), strformat("failed writing metrics file '%s'", path.c_str()));
}

int cmd_eval(const GlobalArgs& g, const std::string& manifest, const std::string& checkpoint,
             bool baseline, const std::string& traces_dir, const std::string& split) {
  const RunConfig cfg = load_run_config(g);
  const Model model = restored_model(cfg, checkpoint);
  const std::vector<VideoSample> videos =
      pick_split(obtain_corpus(cfg, manifest), cfg.test_fraction, split);
  require(!videos.empty(), "selected split is empty");
  ensure_dir(g.out_dir);

  const EvalReport report = evaluate(model, videos, /*use_policy=*/!baseline, g.threads);
  write_eval_csv(g.out_dir + "/metrics.csv", report, model.config.actions);

  if (!traces_dir.empty()) {
    ensure_dir(traces_dir);
    for (const VideoSample& video : videos) {
      StationPointSet stations;
      stations.feature_dim = model.cnn.feature_dim();
      if (!baseline) {
        stations = extract_station_points(video, model.config.stations, model.cnn,
                                          model.config.actions.full_resolution());
      }
      EpisodeOptions opts;
      opts.mode = EpisodeMode::Argmax;
      if (baseline) opts.forced_action = 0;
      const EpisodeResult ep = run_episode(video, model.config.actions, model.cnn, model.gru,
                                           baseline ? nullptr : &model.policy, stations, opts);
      write_trace_csv(traces_dir + "/" + video.source_id + "_trace.csv", ep.steps);
    }
  }
  log_info(strformat("accuracy %.4f flops/video %.0f", report.accuracy,
                     report.flops_per_video));
  return 0;
}

// ---------------------------------------------------------------------------
// detect-eval
// ---------------------------------------------------------------------------
int cmd_detect_eval(const GlobalArgs& g, const std::string& gt_path,
                    const std::string& pred_path) {
  const std::vector<DetectionSet> gt_sets = read_detections(gt_path);
  const std::vector<DetectionSet> pred_sets = read_detections(pred_path);
  for (const DetectionSet& set : gt_sets) {
    require(set.predictions.empty(),
            strformat("ground-truth file contains prediction rows for image '%s'",
                      set.image_id.c_str()));
  }
  for (const DetectionSet& set : pred_sets) {
    require(set.ground_truth.empty(),
            strformat("prediction file contains ground-truth rows for image '%s'",
                      set.image_id.c_str()));
  }

  std::vector<DetectionSet> merged = gt_sets;
  for (const DetectionSet& preds : pred_sets) {
    bool found = false;
    for (DetectionSet& set : merged) {
      if (set.image_id == preds.image_id) {
        set.predictions = preds.predictions;
        found = true;
        break;
      }
    }
    if (!found) merged.push_back(preds);
  }

  const MapReport report = map50(merged);
  const MatchCounts counts = detection_counts(merged, 0.5, 0.5);
  ensure_dir(g.out_dir);
  {
    std::ofstream out(g.out_dir + "/detect_metrics.csv", std::ios::binary);
    require(out.good(), "cannot open detect_metrics.csv");
    write_detect_metrics_csv(out, report, counts);
  }
  {
    std::ofstream out(g.out_dir + "/pr_curve.csv", std::ios::binary);
    require(out.good(), "cannot open pr_curve.csv");
    write_pr_csv(out, report);
  }
  log_info(strformat("map50 %.4f over %zu classes", report.map50, report.per_class.size()));
  return 0;
}

// ---------------------------------------------------------------------------
// flops-report
// ---------------------------------------------------------------------------
int cmd_flops_report(const GlobalArgs& g, const std::string& manifest,
                     const std::string& checkpoint) {
  const RunConfig cfg = load_run_config(g);
  Model model = checkpoint.empty() ? fresh_model(cfg) : restored_model(cfg, checkpoint);
  const ActionSpace& actions = model.config.actions;
  ensure_dir(g.out_dir);

  {
    std::ofstream out(g.out_dir + "/step_costs.csv", std::ios::binary);
    require(out.good(), "cannot open step_costs.csv");
    out << "action,frame_count,resolution,step_flops\n";
    for (int j = 0; j < actions.size(); ++j) {
      const std::int64_t step =
          model.cnn.flops(actions.resolutions[j]) + model.gru.step_flops();
      out << j << ',' << actions.frame_counts[j] << ',' << actions.resolutions[j] << ',' << step
          << '\n';
    }
  }

  const std::vector<VideoSample> videos =
      pick_split(obtain_corpus(cfg, manifest), cfg.test_fraction, "test");
  require(!videos.empty(), "test split is empty");
  const EvalReport baseline = evaluate(model, videos, /*use_policy=*/false, g.threads);
  std::ofstream out(g.out_dir + "/flops_report.csv", std::ios::binary);
  require(out.good(), "cannot open flops_report.csv");
  out << "mode,accuracy,flops_per_video,flops_per_frame\n";
  out << "baseline_k1_full," << format_double(baseline.accuracy) << ','
      << format_double(baseline.flops_per_video) << ','
      << format_double(baseline.flops_per_frame) << '\n';
  if (!checkpoint.empty()) {
    const EvalReport policy = evaluate(model, videos, /*use_policy=*/true, g.threads);
    out << "policy," << format_double(policy.accuracy) << ','
        << format_double(policy.flops_per_video) << ',' << format_double(policy.flops_per_frame)
        << '\n';
  }
  require(out.good(), "failed writing flops_report.csv");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptive clip-aware video compression and frame selection"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs g;
  app.add_option("--config", g.config_path, "run configuration file (key=value)");
  CLI::Option* seed_opt = app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--threads", g.threads, "worker threads (default 1, deterministic)")
      ->check(CLI::Range(1, 256));
  app.add_option("--out", g.out_dir, "output directory (default .)");

  std::string manifest, resume_from, checkpoint, traces_dir;
  std::string variant = "s1", split = "test", gt_path, pred_path;
  int budget = 0;
  bool baseline = false;

  CLI::App* gen = app.add_subcommand("gen", "generate the synthetic corpus");
  CLI::App* train_cmd = app.add_subcommand("train", "run the three-phase schedule");
  train_cmd->add_option("--corpus", manifest, "corpus manifest (default: in-memory synthetic)");
  train_cmd->add_option("--resume-from", resume_from,
                        "phase-2 checkpoint to resume phase 3 from");
  CLI::App* select = app.add_subcommand("select", "score frames and emit distilled videos");
  select->add_option("--checkpoint", checkpoint, "trained model checkpoint")->required();
  select->add_option("--corpus", manifest, "corpus manifest (default: in-memory synthetic)");
  select->add_option("--budget", budget, "frames to keep per video (default: length/8)");
  select->add_option("--variant", variant, "score variant: s1|s2|s3");
  select->add_option("--split", split, "videos to process: train|test|all");
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate accuracy and compute cost");
  eval_cmd->add_option("--checkpoint", checkpoint, "trained model checkpoint")->required();
  eval_cmd->add_option("--corpus", manifest, "corpus manifest (default: in-memory synthetic)");
  eval_cmd->add_flag("--baseline", baseline, "always-k=1 full-resolution baseline, no policy");
  eval_cmd->add_option("--traces", traces_dir, "directory for per-video episode traces");
  eval_cmd->add_option("--split", split, "videos to evaluate: train|test|all");
  CLI::App* detect = app.add_subcommand("detect-eval", "detection metrics from interchange CSVs");
  detect->add_option("--gt", gt_path, "ground-truth boxes CSV")->required();
  detect->add_option("--pred", pred_path, "predicted boxes CSV")->required();
  CLI::App* flops = app.add_subcommand("flops-report", "step costs and baseline/policy means");
  flops->add_option("--corpus", manifest, "corpus manifest (default: in-memory synthetic)");
  flops->add_option("--checkpoint", checkpoint, "trained model checkpoint (adds policy row)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  g.seed_set = seed_opt->count() > 0;

  try {
    if (gen->parsed()) return cmd_gen(g);
    if (train_cmd->parsed()) return cmd_train(g, manifest, resume_from);
    if (select->parsed()) return cmd_select(g, manifest, checkpoint, budget, variant, split);
    if (eval_cmd->parsed()) return cmd_eval(g, manifest, checkpoint, baseline, traces_dir, split);
    if (detect->parsed()) return cmd_detect_eval(g, gt_path, pred_path);
    if (flops->parsed()) return cmd_flops_report(g, manifest, checkpoint);
    std::cerr << "no subcommand selected\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
