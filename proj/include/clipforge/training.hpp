#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "clipforge/checkpoint.hpp"
#include "clipforge/engine.hpp"
#include "clipforge/selection.hpp"

namespace clipforge {

// ---------------------------------------------------------------------------
// SGD with momentum and weight decay: v = mu*v + (g + wd*p); p -= lr*v.
// ---------------------------------------------------------------------------
struct Sgd {
  double lr = 0.01;
  double momentum = 0.937;
  double weight_decay = 5e-4;
  std::map<const Tensor*, Tensor> velocity;

  Sgd(double lr_, double momentum_, double weight_decay_)
      : lr(lr_), momentum(momentum_), weight_decay(weight_decay_) {}

  void step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads) {
    require(params.size() == grads.size(), "sgd step: param/grad count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i].tensor;
      const Tensor& g = grads[i];
      require(p.shape == g.shape,
              strformat("sgd step: shape mismatch on '%s'", params[i].name.c_str()));
      auto [it, fresh] = velocity.try_emplace(&p, Tensor(p.shape));
      Tensor& v = it->second;
      for (std::int64_t j = 0; j < p.numel(); ++j) {
        v.data[j] = momentum * v.data[j] + (g.data[j] + weight_decay * p.data[j]);
      }
      // lr 0 must leave parameters bit-identical (0*v can be -0.0), so the
      // subtraction is skipped outright.
      if (lr == 0.0) continue;
      for (std::int64_t j = 0; j < p.numel(); ++j) p.data[j] -= lr * v.data[j];
    }
  }
};

// ---------------------------------------------------------------------------
// Loss components.
// ---------------------------------------------------------------------------
enum class BalanceForm { Abs, Square };

inline BalanceForm parse_balance_form(const std::string& s) {
  if (s == "abs") return BalanceForm::Abs;
  if (s == "square") return BalanceForm::Square;
  throw ConfigError(strformat("unknown balance form '%s' (want abs|square)", s.c_str()));
}

inline double balance_loss_from_usage(const std::vector<double>& usage, BalanceForm form) {
  require(!usage.empty(), "balance loss needs a nonempty usage vector");
  const double target = 1.0 / static_cast<double>(usage.size());
  double loss = 0.0;
  for (double u : usage) {
    const double d = u - target;
    loss += form == BalanceForm::Abs ? std::fabs(d) : d * d;
  }
  return loss;
}

inline std::vector<double> action_usage(const std::vector<StepRecord>& steps, int num_actions) {
  require(!steps.empty(), "action usage needs a nonempty trace");
  std::vector<double> usage(static_cast<std::size_t>(num_actions), 0.0);
  for (const StepRecord& rec : steps) usage[static_cast<std::size_t>(rec.action)] += 1.0;
  for (double& u : usage) u /= static_cast<double>(steps.size());
  return usage;
}

inline double balance_loss(const std::vector<StepRecord>& steps, int num_actions,
                           BalanceForm form) {
  return balance_loss_from_usage(action_usage(steps, num_actions), form);
}

// Mean per-step feature-extraction cost, normalized by one full-resolution
// step so the weight gamma is scale-free.
inline double flops_loss(const FlopsLedger& ledger, std::int64_t normalizer) {
  require(normalizer > 0, "flops loss needs a positive normalizer");
  return ledger.mean_per_step() / static_cast<double>(normalizer);
}

inline double total_loss(double l_c, double l_b, double l_g, double beta, double gamma) {
  return l_c + beta * l_b + gamma * l_g;
}

// Cross-entropy of a softmax distribution against an integer label.
inline double cross_entropy(const Tensor& probs, int label) {
  require(label >= 0 && label < probs.numel(), "cross_entropy: label out of range");
  return -std::log(std::max(probs.data[label], 1e-300));
}

// ---------------------------------------------------------------------------
// Model aggregate: feature CNN (+ per-frame head), GRU, classifier, policy.
// ---------------------------------------------------------------------------
struct ModelConfig {
  ActionSpace actions;
  FeatureCnnConfig cnn;
  int hidden_dim = 64;
  int policy_groups = 8;
  int stations = 2;
  int classes = 2;
};

struct Model {
  ModelConfig config;
  FeatureCnn cnn;
  Dense frame_head;  // per-frame classifier, used to train the CNN
  GruCell gru;
  Dense classifier;  // f_c on the final hidden state
  PolicyNet policy;

  std::int64_t full_step_flops() const {
    return cnn.flops(config.actions.full_resolution()) + gru.step_flops();
  }

  Tensor classify(const Tensor& h_final) const {
    Softmax softmax;
    return softmax.forward(classifier.forward(h_final));
  }
};

inline Model make_model(const ModelConfig& config, Rng& rng) {
  Model m;
  m.config = config;
  m.cnn = make_feature_cnn(config.cnn, rng);
  m.frame_head = Dense::init(m.cnn.feature_dim(), config.classes, rng);
  m.gru = GruCell::init(m.cnn.feature_dim(), config.hidden_dim, rng);
  m.classifier = Dense::init(config.hidden_dim, config.classes, rng);
  const int policy_in = config.hidden_dim + m.cnn.feature_dim();
  require(policy_in % config.policy_groups == 0,
          strformat("policy input dim %d not divisible by %d groups", policy_in,
                    config.policy_groups));
  m.policy = PolicyNet::init(policy_in, config.actions.size(), config.policy_groups, rng);
  return m;
}

namespace detail {

inline void prefix_params(std::vector<ParamRef>& out, const std::string& prefix,
                          std::vector<ParamRef> params) {
  for (ParamRef& p : params) out.push_back({prefix + "." + p.name, p.tensor});
}

}  // namespace detail

inline std::vector<ParamRef> model_params(Model& m) {
  std::vector<ParamRef> out;
  detail::prefix_params(out, "cnn", m.cnn.params());
  detail::prefix_params(out, "frame_head", m.frame_head.params());
  detail::prefix_params(out, "gru", m.gru.params());
  detail::prefix_params(out, "classifier", m.classifier.params());
  detail::prefix_params(out, "policy", m.policy.params());
  return out;
}

inline void save_model(const std::string& path, Model& m) {
  TensorMap map;
  for (const ParamRef& p : model_params(m)) map.emplace(p.name, *p.tensor);
  save_checkpoint(path, map);
}

inline void load_model(const std::string& path, Model& m) {
  TensorMap map = load_checkpoint(path);
  restore_params(map, model_params(m), path);
}

// ---------------------------------------------------------------------------
// Corpus split: every ceil(1/fraction)-ish video goes to test, assigned
// proportionally so interleaved labels stay balanced in both splits.
// ---------------------------------------------------------------------------
inline std::pair<std::vector<VideoSample>, std::vector<VideoSample>> split_corpus(
    const std::vector<VideoSample>& corpus, double test_fraction) {
  require(test_fraction >= 0.0 && test_fraction < 1.0, "test fraction must lie in [0,1)");
  std::vector<VideoSample> train, test;
  long assigned = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const long target = static_cast<long>(std::floor(test_fraction * static_cast<double>(i + 1)));
    if (assigned < target) {
      test.push_back(corpus[i]);
      ++assigned;
    } else {
      train.push_back(corpus[i]);
    }
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Deterministic parallel map: results land in input order; thread count
// never changes values, only wall time.
// ---------------------------------------------------------------------------
template <typename Result, typename Fn>
inline std::vector<Result> parallel_map(std::size_t n, int threads, const Fn& fn) {
  std::vector<Result> results(n);
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) results[i] = fn(i);
    return results;
  }
  const int workers = std::min<int>(threads, static_cast<int>(n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = static_cast<std::size_t>(w); i < n;
           i += static_cast<std::size_t>(workers)) {
        results[i] = fn(i);
      }
    });
  }
  for (std::thread& t : pool) t.join();
  return results;
}

// ---------------------------------------------------------------------------
// Training configuration and history.
// ---------------------------------------------------------------------------
struct PhaseSchedule {
  int epochs = 10;
  double lr = 0.01;
};

struct TrainConfig {
  PhaseSchedule phase1{20, 0.01};
  PhaseSchedule phase2{10, 0.01};
  PhaseSchedule phase3{10, 0.01};
  std::vector<double> lr_milestones = {0.5, 0.7, 0.9};  // fractions of a phase
  double momentum = 0.937;
  double weight_decay = 5e-4;
  double beta = 0.3;
  double gamma = 0.1;
  double alpha = 0.3;
  double tau_init = 5.0;
  double tau_floor = 0.01;
  BalanceForm balance_form = BalanceForm::Abs;
  double policy_grad_clip = 5.0;  // global L2 cap on the phase-3 update; 0 disables
  int batch_frames = 32;
  int batch_videos = 4;
  std::uint64_t seed = 1;
  int threads = 1;
};

// Base learning rate decayed x0.1 at each milestone fraction of the phase.
inline double milestone_lr(double base, const std::vector<double>& milestones, int epoch,
                           int phase_epochs) {
  double lr = base;
  for (double frac : milestones) {
    if (epoch >= static_cast<int>(std::floor(frac * phase_epochs))) lr *= 0.1;
  }
  return lr;
}

struct HistoryRow {
  int epoch = 0;  // global epoch, continuous across phases
  int phase = 0;
  double l_c = 0.0, l_b = 0.0, l_g = 0.0, total = 0.0;
  double accuracy = 0.0;
  double flops_per_video = 0.0;
};

inline void write_history_csv(std::ostream& out, const std::vector<HistoryRow>& rows) {
  out << "epoch,phase,L_c,L_b,L_g,L,accuracy,flops_per_video\n";
  for (const HistoryRow& r : rows) {
    out << r.epoch << ',' << r.phase << ',' << format_double(r.l_c) << ','
        << format_double(r.l_b) << ',' << format_double(r.l_g) << ',' << format_double(r.total)
        << ',' << format_double(r.accuracy) << ',' << format_double(r.flops_per_video) << '\n';
  }
}

inline void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), strformat("cannot open history file '%s'", path.c_str()));
  write_history_csv(out, rows);
  require(out.good(), strformat("failed writing history file '%s'", path.c_str()));
}

// ---------------------------------------------------------------------------
// Evaluation (argmax mode).
// ---------------------------------------------------------------------------
struct EvalReport {
  double accuracy = 0.0;
  double flops_per_video = 0.0;  // mean, station extraction included
  double flops_per_frame = 0.0;
  std::vector<double> action_usage;  // fractions, sum 1
};

// use_policy=false runs the always-k=1 full-resolution baseline without
// station extraction (the recurrent classifier alone).
inline EvalReport evaluate(const Model& model, const std::vector<VideoSample>& split,
                           bool use_policy, int threads = 1) {
  require(!split.empty(), "evaluate needs a nonempty split");
  const ActionSpace& actions = model.config.actions;
  struct VideoOutcome {
    bool correct = false;
    std::int64_t flops = 0;
    long frames = 0;
    std::vector<long> action_counts;
  };
  std::vector<VideoOutcome> outcomes = parallel_map<VideoOutcome>(
      split.size(), threads, [&](std::size_t i) {
        const VideoSample& video = split[i];
        StationPointSet stations;
        stations.feature_dim = model.cnn.feature_dim();
        std::int64_t station_flops = 0;
        if (use_policy) {
          stations = extract_station_points(video, model.config.stations, model.cnn,
                                            actions.full_resolution());
          station_flops =
              static_cast<std::int64_t>(stations.count()) * model.cnn.flops(actions.full_resolution());
        }
        EpisodeOptions opts;
        opts.mode = EpisodeMode::Argmax;
        if (!use_policy) opts.forced_action = 0;
        EpisodeResult ep = run_episode(video, actions, model.cnn, model.gru,
                                       use_policy ? &model.policy : nullptr, stations, opts);
        const Tensor probs = model.classify(ep.h_final);
        VideoOutcome out;
        out.correct = argmax_index(probs) == video.label;
        out.flops = ep.ledger.total_video + station_flops;
        out.frames = video.length();
        out.action_counts.assign(static_cast<std::size_t>(actions.size()), 0);
        for (const StepRecord& rec : ep.steps) {
          ++out.action_counts[static_cast<std::size_t>(rec.action)];
        }
        return out;
      });

  EvalReport report;
  long correct = 0, total_frames = 0, total_steps = 0;
  double total_flops = 0.0;
  std::vector<long> counts(static_cast<std::size_t>(actions.size()), 0);
  for (const VideoOutcome& out : outcomes) {
    correct += out.correct ? 1 : 0;
    total_flops += static_cast<double>(out.flops);
    total_frames += out.frames;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      counts[k] += out.action_counts[k];
      total_steps += out.action_counts[k];
    }
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
  report.flops_per_video = total_flops / static_cast<double>(split.size());
  report.flops_per_frame = total_flops / static_cast<double>(total_frames);
  report.action_usage.resize(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) {
    report.action_usage[k] = static_cast<double>(counts[k]) / static_cast<double>(total_steps);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Phase internals.
// ---------------------------------------------------------------------------
namespace detail {

inline std::vector<Tensor> zero_grads(const std::vector<ParamRef>& refs) {
  std::vector<Tensor> grads;
  grads.reserve(refs.size());
  for (const ParamRef& r : refs) grads.emplace_back(r.tensor->shape);
  return grads;
}

inline void add_grads(std::vector<Tensor>& acc, const std::vector<Tensor>& g) {
  require(acc.size() == g.size(), "gradient accumulation size mismatch");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

inline void scale_grads(std::vector<Tensor>& acc, double s) {
  for (Tensor& t : acc) t *= s;
}

// Flattens Sequential::backward per-layer grads into params() order.
inline void flatten_seq_grads(const std::vector<std::vector<Tensor>>& per_layer,
                              std::vector<Tensor>& out) {
  out.clear();
  for (const std::vector<Tensor>& layer : per_layer) {
    for (const Tensor& t : layer) out.push_back(t);
  }
}

inline void check_finite(double loss, int phase, int epoch) {
  if (!std::isfinite(loss)) {
    throw RuntimeError(
        strformat("training diverged: non-finite loss in phase %d at epoch %d", phase, epoch));
  }
}

template <typename T>
inline void shuffle_indices(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

// Per-frame dataset view for phase 1.
struct FrameRef {
  int video = 0;
  int frame = 0;
};

// Frozen per-frame CNN features at full resolution, shared by phases 2-3.
inline std::vector<std::vector<Tensor>> frozen_features(const Model& model,
                                                        const std::vector<VideoSample>& videos,
                                                        int threads) {
  return parallel_map<std::vector<Tensor>>(videos.size(), threads, [&](std::size_t i) {
    const VideoSample& video = videos[i];
    std::vector<Tensor> feats;
    feats.reserve(static_cast<std::size_t>(video.length()));
    for (const Frame& f : video.frames) {
      Tensor resized = resize_bilinear(f.pixels, model.config.actions.full_resolution());
      feats.push_back(model.cnn.forward(resized));
    }
    return feats;
  });
}

// Frame-level accuracy of cnn+frame_head over whole videos.
inline double frame_accuracy(const Model& model, const std::vector<VideoSample>& videos,
                             int threads) {
  std::vector<std::pair<long, long>> counts = parallel_map<std::pair<long, long>>(
      videos.size(), threads, [&](std::size_t i) {
        long correct = 0, total = 0;
        Softmax softmax;
        for (const Frame& f : videos[i].frames) {
          Tensor resized = resize_bilinear(f.pixels, model.config.actions.full_resolution());
          Tensor probs = softmax.forward(model.frame_head.forward(model.cnn.forward(resized)));
          if (argmax_index(probs) == f.label) ++correct;
          ++total;
        }
        return std::make_pair(correct, total);
      });
  long correct = 0, total = 0;
  for (auto [c, t] : counts) {
    correct += c;
    total += t;
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace detail

struct TrainCallbacks {
  // Called after each phase completes, before the next begins.
  std::function<void(int phase, Model& model)> on_phase_end;
};

// ---------------------------------------------------------------------------
// Phase 1: train CNN + frame head on frame labels.
// ---------------------------------------------------------------------------
inline void train_phase1(Model& model, const std::vector<VideoSample>& train_split,
                         const std::vector<VideoSample>& test_split, const TrainConfig& cfg,
                         std::vector<HistoryRow>& history, int& global_epoch) {
  std::vector<detail::FrameRef> all_frames;
  for (std::size_t v = 0; v < train_split.size(); ++v) {
    for (int f = 0; f < train_split[v].length(); ++f) {
      all_frames.push_back({static_cast<int>(v), f});
    }
  }
  require(!all_frames.empty(), "phase 1 needs at least one training frame");

  std::vector<ParamRef> cnn_refs = model.cnn.params();
  std::vector<ParamRef> head_refs = model.frame_head.params();
  Sgd opt{cfg.phase1.lr, cfg.momentum, cfg.weight_decay};
  const int full_res = model.config.actions.full_resolution();
  Softmax softmax;

  for (int epoch = 0; epoch < cfg.phase1.epochs; ++epoch) {
    Rng order_rng = Rng::derive(cfg.seed, {1, static_cast<std::uint64_t>(epoch), 0xF00D});
    detail::shuffle_indices(all_frames, order_rng);
    opt.lr = milestone_lr(cfg.phase1.lr, cfg.lr_milestones, epoch, cfg.phase1.epochs);

    double epoch_loss = 0.0;
    long seen = 0;
    for (std::size_t start = 0; start < all_frames.size();
         start += static_cast<std::size_t>(cfg.batch_frames)) {
      const std::size_t end =
          std::min(all_frames.size(), start + static_cast<std::size_t>(cfg.batch_frames));
      const std::size_t batch = end - start;

      struct FrameGrad {
        double loss = 0.0;
        std::vector<Tensor> cnn;
        std::vector<Tensor> head;
      };
      std::vector<FrameGrad> grads = parallel_map<FrameGrad>(
          batch, cfg.threads, [&](std::size_t bi) {
            const detail::FrameRef ref = all_frames[start + bi];
            const Frame& frame = train_split[static_cast<std::size_t>(ref.video)]
                                     .frames[static_cast<std::size_t>(ref.frame)];
            Tensor resized = resize_bilinear(frame.pixels, full_res);
            std::vector<Tensor> acts = model.cnn.seq.forward_all(resized);
            Tensor logits = model.frame_head.forward(acts.back());
            Tensor probs = softmax.forward(logits);
            FrameGrad out;
            out.loss = cross_entropy(probs, frame.label);
            Tensor dlogits = probs;
            dlogits.data[frame.label] -= 1.0;
            LayerGrads head_grads = model.frame_head.backward(acts.back(), dlogits);
            std::vector<std::vector<Tensor>> per_layer;
            model.cnn.seq.backward(acts, head_grads.input, &per_layer);
            detail::flatten_seq_grads(per_layer, out.cnn);
            out.head = std::move(head_grads.params);
            return out;
          });

      std::vector<Tensor> cnn_acc = detail::zero_grads(cnn_refs);
      std::vector<Tensor> head_acc = detail::zero_grads(head_refs);
      double batch_loss = 0.0;
      for (const FrameGrad& g : grads) {
        batch_loss += g.loss;
        detail::add_grads(cnn_acc, g.cnn);
        detail::add_grads(head_acc, g.head);
      }
      const double inv = 1.0 / static_cast<double>(batch);
      detail::scale_grads(cnn_acc, inv);
      detail::scale_grads(head_acc, inv);
      opt.step(cnn_refs, cnn_acc);
      opt.step(head_refs, head_acc);

      epoch_loss += batch_loss;
      seen += static_cast<long>(batch);
    }

    HistoryRow row;
    row.epoch = ++global_epoch;
    row.phase = 1;
    row.l_c = epoch_loss / static_cast<double>(seen);
    detail::check_finite(row.l_c, 1, epoch);
    row.total = row.l_c;
    row.accuracy = detail::frame_accuracy(model, test_split, cfg.threads);
    row.flops_per_video = 0.0;
    history.push_back(row);
    log_info(strformat("phase 1 epoch %d/%d loss %.4f test frame acc %.4f", epoch + 1,
                       cfg.phase1.epochs, row.l_c, row.accuracy));
  }
}

// ---------------------------------------------------------------------------
// Phase 2: freeze the CNN, train GRU + classifier on sample labels with
// always-k=1 full-resolution episodes over frozen features. The processed
// feature sequence trails the frame cursor by one step: feat[0], feat[0],
// feat[1], ..., feat[L-2].
// ---------------------------------------------------------------------------
inline void train_phase2(Model& model, const std::vector<VideoSample>& train_split,
                         const std::vector<VideoSample>& test_split, const TrainConfig& cfg,
                         std::vector<HistoryRow>& history, int& global_epoch) {
  require(!train_split.empty(), "phase 2 needs training videos");
  const std::vector<std::vector<Tensor>> features =
      detail::frozen_features(model, train_split, cfg.threads);

  std::vector<ParamRef> gru_refs = model.gru.params();
  std::vector<ParamRef> cls_refs = model.classifier.params();
  Sgd opt{cfg.phase2.lr, cfg.momentum, cfg.weight_decay};
  Softmax softmax;

  std::vector<std::size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), 0);

  // Loss values of the implicit always-k=1 policy, recorded for context.
  std::vector<double> onehot_usage(static_cast<std::size_t>(model.config.actions.size()), 0.0);
  onehot_usage[0] = 1.0;
  const double fixed_l_b = balance_loss_from_usage(onehot_usage, cfg.balance_form);
  const double fixed_l_g = 1.0;

  for (int epoch = 0; epoch < cfg.phase2.epochs; ++epoch) {
    Rng order_rng = Rng::derive(cfg.seed, {2, static_cast<std::uint64_t>(epoch), 0xF00D});
    detail::shuffle_indices(order, order_rng);
    opt.lr = milestone_lr(cfg.phase2.lr, cfg.lr_milestones, epoch, cfg.phase2.epochs);

    double epoch_loss = 0.0;
    long seen = 0;
    // Plain per-video SGD: supervised sequence learning converges fastest with
    // single-sample updates at desk scale; batch_videos batches phase 3 only.
    for (std::size_t start = 0; start < order.size(); start += 1) {
      const std::size_t end = std::min(order.size(), start + 1);
      const std::size_t batch = end - start;

      struct VideoGrad {
        double loss = 0.0;
        std::vector<Tensor> gru;
        std::vector<Tensor> cls;
      };
      std::vector<VideoGrad> grads = parallel_map<VideoGrad>(
          batch, cfg.threads, [&](std::size_t bi) {
            const std::size_t vi = order[start + bi];
            const VideoSample& video = train_split[vi];
            const std::vector<Tensor>& feats = features[vi];
            const int L = video.length();

            // Lag sequence: x_0 = feat[0]; x_t = feat[t-1] for t >= 1.
            std::vector<const Tensor*> xs(static_cast<std::size_t>(L));
            xs[0] = &feats[0];
            for (int t = 1; t < L; ++t) xs[static_cast<std::size_t>(t)] = &feats[t - 1];

            std::vector<Tensor> hs(static_cast<std::size_t>(L) + 1);
            hs[0] = Tensor::zeros({model.gru.h_dim});
            for (int t = 0; t < L; ++t) {
              hs[static_cast<std::size_t>(t) + 1] =
                  model.gru.step(*xs[static_cast<std::size_t>(t)], hs[static_cast<std::size_t>(t)]);
            }
            Tensor logits = model.classifier.forward(hs.back());
            Tensor probs = softmax.forward(logits);

            VideoGrad out;
            out.loss = cross_entropy(probs, video.label);
            Tensor dlogits = probs;
            dlogits.data[video.label] -= 1.0;
            LayerGrads cls_grads = model.classifier.backward(hs.back(), dlogits);
            out.cls = std::move(cls_grads.params);

            out.gru = detail::zero_grads(gru_refs);
            Tensor dh = std::move(cls_grads.input);
            for (int t = L - 1; t >= 0; --t) {
              GruCell::StepGrads sg = model.gru.step_backward(
                  *xs[static_cast<std::size_t>(t)], hs[static_cast<std::size_t>(t)], dh);
              for (std::size_t p = 0; p < out.gru.size(); ++p) out.gru[p] += sg.params[p];
              dh = std::move(sg.dh_prev);
            }
            return out;
          });

      std::vector<Tensor> gru_acc = detail::zero_grads(gru_refs);
      std::vector<Tensor> cls_acc = detail::zero_grads(cls_refs);
      double batch_loss = 0.0;
      for (const VideoGrad& g : grads) {
        batch_loss += g.loss;
        detail::add_grads(gru_acc, g.gru);
        detail::add_grads(cls_acc, g.cls);
      }
      const double inv = 1.0 / static_cast<double>(batch);
      detail::scale_grads(gru_acc, inv);
      detail::scale_grads(cls_acc, inv);
      opt.step(gru_refs, gru_acc);
      opt.step(cls_refs, cls_acc);

      epoch_loss += batch_loss;
      seen += static_cast<long>(batch);
    }

    HistoryRow row;
    row.epoch = ++global_epoch;
    row.phase = 2;
    row.l_c = epoch_loss / static_cast<double>(seen);
    detail::check_finite(row.l_c, 2, epoch);
    row.l_b = fixed_l_b;
    row.l_g = fixed_l_g;
    row.total = total_loss(row.l_c, row.l_b, row.l_g, cfg.beta, cfg.gamma);
    EvalReport eval = evaluate(model, test_split, /*use_policy=*/false, cfg.threads);
    row.accuracy = eval.accuracy;
    row.flops_per_video = eval.flops_per_video;
    history.push_back(row);
    log_info(strformat("phase 2 epoch %d/%d loss %.4f test acc %.4f", epoch + 1,
                       cfg.phase2.epochs, row.l_c, row.accuracy));
  }
}

// ---------------------------------------------------------------------------
// Phase 3: freeze CNN/GRU/classifier, train the policy with the total loss.
// Forward control flow is hard (Gumbel-Max); gradients reach the policy
// through the relaxed samples (straight-through): the classification path
// gates each step's GRU input by its deciding step's chosen component, the
// balance path uses soft usage at the hard point, and the cost path weights
// each action by its realized per-step cost.
// ---------------------------------------------------------------------------
inline void train_phase3(Model& model, const std::vector<VideoSample>& train_split,
                         const std::vector<VideoSample>& test_split, const TrainConfig& cfg,
                         std::vector<HistoryRow>& history, int& global_epoch) {
  require(!train_split.empty(), "phase 3 needs training videos");
  const ActionSpace& actions = model.config.actions;
  const int K = actions.size();
  const std::int64_t norm = model.full_step_flops();
  const std::int64_t gru_flops = model.gru.step_flops();
  std::vector<double> action_cost(static_cast<std::size_t>(K));
  for (int j = 0; j < K; ++j) {
    action_cost[static_cast<std::size_t>(j)] =
        static_cast<double>(model.cnn.flops(actions.resolutions[j]) + gru_flops);
  }

  // Station features are frozen with the CNN; extract once per video.
  std::vector<StationPointSet> stations = parallel_map<StationPointSet>(
      train_split.size(), cfg.threads, [&](std::size_t i) {
        return extract_station_points(train_split[i], model.config.stations, model.cnn,
                                      actions.full_resolution());
      });

  std::vector<ParamRef> policy_refs = model.policy.params();
  Sgd opt{cfg.phase3.lr, cfg.momentum, cfg.weight_decay};

  std::vector<std::size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), 0);
  const long batches_per_epoch =
      static_cast<long>((order.size() + static_cast<std::size_t>(cfg.batch_videos) - 1) /
                        static_cast<std::size_t>(cfg.batch_videos));
  TemperatureSchedule schedule{cfg.tau_init, cfg.tau_floor,
                               static_cast<long>(cfg.phase3.epochs) * batches_per_epoch};
  long anneal_step = 0;

  for (int epoch = 0; epoch < cfg.phase3.epochs; ++epoch) {
    Rng order_rng = Rng::derive(cfg.seed, {3, static_cast<std::uint64_t>(epoch), 0xF00D});
    detail::shuffle_indices(order, order_rng);
    opt.lr = milestone_lr(cfg.phase3.lr, cfg.lr_milestones, epoch, cfg.phase3.epochs);

    double sum_lc = 0.0, sum_lb = 0.0, sum_lg = 0.0;
    long seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_videos)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_videos));
      const std::size_t batch = end - start;
      const double tau = schedule.at(anneal_step);

      struct PolicyGrad {
        double l_c = 0.0, l_b = 0.0, l_g = 0.0;
        PolicyNet::Grads grads;
      };
      std::vector<PolicyGrad> grads = parallel_map<PolicyGrad>(
          batch, cfg.threads, [&](std::size_t bi) {
            const std::size_t vi = order[start + bi];
            const VideoSample& video = train_split[vi];
            Rng rng = Rng::derive(cfg.seed, {3, static_cast<std::uint64_t>(epoch),
                                             static_cast<std::uint64_t>(vi), 0xE9150DE5ull});
            EpisodeOptions opts;
            opts.mode = EpisodeMode::Sample;
            opts.tau = tau;
            opts.alpha = cfg.alpha;
            opts.rng = &rng;
            EpisodeResult ep = run_episode(video, actions, model.cnn, model.gru, &model.policy,
                                           stations[vi], opts);
            const int T = static_cast<int>(ep.steps.size());

            PolicyGrad out;
            out.grads.init(model.policy);

            // Hard losses.
            Softmax softmax;
            Tensor logits = model.classifier.forward(ep.h_final);
            Tensor probs = softmax.forward(logits);
            out.l_c = cross_entropy(probs, video.label);
            std::vector<double> usage = action_usage(ep.steps, K);
            out.l_b = balance_loss_from_usage(usage, cfg.balance_form);
            out.l_g = flops_loss(ep.ledger, norm);

            // Classification backward through frozen classifier and GRU,
            // collecting per-step input gradients.
            Tensor dlogits = probs;
            dlogits.data[video.label] -= 1.0;
            LayerGrads cls_grads = model.classifier.backward(ep.h_final, dlogits);
            Tensor dh = std::move(cls_grads.input);
            std::vector<double> gate_grad(static_cast<std::size_t>(T), 0.0);
            for (int t = T - 1; t >= 0; --t) {
              const StepRecord& rec = ep.steps[static_cast<std::size_t>(t)];
              GruCell::StepGrads sg = model.gru.step_backward(rec.x_t, rec.h_prev, dh);
              if (t >= 1) {
                // Step t's input was shaped by decision t-1; its gate grad is
                // <dL/dx_t, x_t>.
                double dot = 0.0;
                for (std::int64_t j = 0; j < rec.x_t.numel(); ++j) {
                  dot += sg.dx.data[j] * rec.x_t.data[j];
                }
                gate_grad[static_cast<std::size_t>(t - 1)] = dot;
              }
              dh = std::move(sg.dh_prev);
            }

            // Balance slope at the hard usage point.
            std::vector<double> bal_slope(static_cast<std::size_t>(K), 0.0);
            const double target = 1.0 / static_cast<double>(K);
            for (int k = 0; k < K; ++k) {
              const double d = usage[static_cast<std::size_t>(k)] - target;
              bal_slope[static_cast<std::size_t>(k)] =
                  cfg.balance_form == BalanceForm::Abs ? (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0))
                                                       : 2.0 * d;
            }

            // Per-decision relaxed-sample gradients -> policy parameters.
            for (int t = 0; t < T; ++t) {
              const StepRecord& rec = ep.steps[static_cast<std::size_t>(t)];
              Tensor dgs({K});
              for (int k = 0; k < K; ++k) {
                dgs.data[k] = cfg.beta * bal_slope[static_cast<std::size_t>(k)] /
                              static_cast<double>(T);
              }
              if (t < T - 1) {
                dgs.data[rec.action] += gate_grad[static_cast<std::size_t>(t)];
                for (int k = 0; k < K; ++k) {
                  dgs.data[k] += cfg.gamma * action_cost[static_cast<std::size_t>(k)] /
                                 (static_cast<double>(T) * static_cast<double>(norm));
                }
              }
              PolicyNet::Grads g = model.policy.backward_from_relaxed(
                  rec.policy_eval, rec.gumbel_soft, dgs, tau);
              out.grads.accumulate(g);
            }
            return out;
          });

      PolicyNet::Grads acc;
      acc.init(model.policy);
      double batch_lc = 0.0, batch_lb = 0.0, batch_lg = 0.0;
      for (const PolicyGrad& g : grads) {
        batch_lc += g.l_c;
        batch_lb += g.l_b;
        batch_lg += g.l_g;
        acc.accumulate(g.grads);
      }
      acc.scale(1.0 / static_cast<double>(batch));
      std::vector<Tensor> flat = {acc.gamma, acc.beta, acc.weight, acc.bias};
      if (cfg.policy_grad_clip > 0.0) {
        double sq = 0.0;
        for (const Tensor& t : flat) {
          for (double v : t.data) sq += v * v;
        }
        const double nrm = std::sqrt(sq);
        if (nrm > cfg.policy_grad_clip) {
          const double scale = cfg.policy_grad_clip / nrm;
          for (Tensor& t : flat) {
            for (double& v : t.data) v *= scale;
          }
        }
      }
      opt.step(policy_refs, flat);
      ++anneal_step;

      sum_lc += batch_lc;
      sum_lb += batch_lb;
      sum_lg += batch_lg;
      seen += static_cast<long>(batch);
    }

    HistoryRow row;
    row.epoch = ++global_epoch;
    row.phase = 3;
    row.l_c = sum_lc / static_cast<double>(seen);
    row.l_b = sum_lb / static_cast<double>(seen);
    row.l_g = sum_lg / static_cast<double>(seen);
    row.total = total_loss(row.l_c, row.l_b, row.l_g, cfg.beta, cfg.gamma);
    detail::check_finite(row.total, 3, epoch);
    EvalReport eval = evaluate(model, test_split, /*use_policy=*/true, cfg.threads);
    row.accuracy = eval.accuracy;
    row.flops_per_video = eval.flops_per_video;
    history.push_back(row);
    log_info(strformat("phase 3 epoch %d/%d L %.4f (c %.3f b %.3f g %.3f) test acc %.4f", epoch + 1,
                       cfg.phase3.epochs, row.total, row.l_c, row.l_b, row.l_g, row.accuracy));
  }
}

// ---------------------------------------------------------------------------
// Full schedule. start_phase > 1 resumes from a model already trained through
// the earlier phases (e.g. restored from a checkpoint).
// ---------------------------------------------------------------------------
struct TrainResult {
  std::vector<HistoryRow> history;
};

inline TrainResult train(Model& model, const std::vector<VideoSample>& train_split,
                         const std::vector<VideoSample>& test_split, const TrainConfig& cfg,
                         const TrainCallbacks& callbacks = {}, int start_phase = 1,
                         int end_phase = 3) {
  require(start_phase >= 1 && start_phase <= 3 && end_phase >= start_phase && end_phase <= 3,
          "train: phases must satisfy 1 <= start <= end <= 3");
  TrainResult result;
  int global_epoch = 0;
  if (start_phase > 1) global_epoch += cfg.phase1.epochs;
  if (start_phase > 2) global_epoch += cfg.phase2.epochs;

  for (int phase = start_phase; phase <= end_phase; ++phase) {
    if (phase == 1) {
      train_phase1(model, train_split, test_split, cfg, result.history, global_epoch);
    } else if (phase == 2) {
      train_phase2(model, train_split, test_split, cfg, result.history, global_epoch);
    } else {
      train_phase3(model, train_split, test_split, cfg, result.history, global_epoch);
    }
    if (callbacks.on_phase_end) callbacks.on_phase_end(phase, model);
  }
  return result;
}

}  // namespace clipforge
