#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <utility>
#include <vector>

#include "clipforge/any_layer.hpp"
#include "clipforge/attention.hpp"
#include "clipforge/policy.hpp"
#include "clipforge/video.hpp"

namespace clipforge {

// ---------------------------------------------------------------------------
// Feature extractor: stacked stride-2 conv blocks with optional attention
// inserts, closed by global average pooling.
// ---------------------------------------------------------------------------
enum class AttentionKind { None, Cbam, Eca, Shuffle };

inline const char* attention_kind_name(AttentionKind k) {
  switch (k) {
    case AttentionKind::None: return "none";
    case AttentionKind::Cbam: return "cbam";
    case AttentionKind::Eca: return "eca";
    case AttentionKind::Shuffle: return "shuffle";
  }
  return "?";
}

inline AttentionKind parse_attention_kind(const std::string& s) {
  if (s == "none") return AttentionKind::None;
  if (s == "cbam") return AttentionKind::Cbam;
  if (s == "eca") return AttentionKind::Eca;
  if (s == "shuffle") return AttentionKind::Shuffle;
  throw ConfigError(strformat("unknown attention kind '%s'", s.c_str()));
}

struct FeatureCnnConfig {
  int in_channels = 1;
  std::vector<int> widths = {8, 16, 32};
  int norm_groups = 8;
  AttentionKind attention = AttentionKind::None;
  int attention_reduction = 16;
  int attention_kernel = 7;
  int eca_kernel = 3;
  int sa_groups = 4;
};

struct FeatureCnn {
  FeatureCnnConfig config;
  Sequential seq;

  int feature_dim() const { return config.widths.back(); }
  int in_channels() const { return config.in_channels; }

  // Feature vector for a [C,H,W] pixel tensor.
  Tensor forward(const Tensor& pixels) const { return seq.forward(pixels); }

  std::int64_t flops(int resolution) const {
    return seq.flops({config.in_channels, resolution, resolution});
  }

  std::vector<ParamRef> params() { return seq.params(); }
};

inline FeatureCnn make_feature_cnn(const FeatureCnnConfig& config, Rng& rng) {
  require(!config.widths.empty(), "feature cnn needs at least one conv block");
  require(config.in_channels >= 1, "feature cnn input channels must be >= 1");
  FeatureCnn cnn;
  cnn.config = config;
  int c = config.in_channels;
  for (int w : config.widths) {
    require(w >= 1, "conv widths must be >= 1");
    require(w % config.norm_groups == 0,
            strformat("conv width %d not divisible by %d norm groups", w, config.norm_groups));
    cnn.seq.layers.emplace_back(Conv2d::init(c, w, 3, 2, 1, rng));
    cnn.seq.layers.emplace_back(GroupNorm(w, config.norm_groups));
    cnn.seq.layers.emplace_back(Relu{});
    switch (config.attention) {
      case AttentionKind::None:
        break;
      case AttentionKind::Cbam:
        cnn.seq.layers.emplace_back(ChannelAttention::init(w, config.attention_reduction, rng));
        cnn.seq.layers.emplace_back(SpatialAttention::init(config.attention_kernel, rng));
        break;
      case AttentionKind::Eca:
        cnn.seq.layers.emplace_back(Eca::init(w, config.eca_kernel, rng));
        break;
      case AttentionKind::Shuffle:
        cnn.seq.layers.emplace_back(ShuffleAttention(w, config.sa_groups));
        break;
    }
    c = w;
  }
  cnn.seq.layers.emplace_back(GlobalAvgPool{});
  return cnn;
}

// ---------------------------------------------------------------------------
// Clip mixup (convex combination of a clip's endpoint frames).
// ---------------------------------------------------------------------------
inline Frame clip_mixup(const std::vector<Frame>& frames, std::size_t begin, std::size_t end,
                        double lambda) {
  require(begin < end && end <= frames.size(), "clip_mixup: empty or out-of-range clip");
  require(lambda >= 0.0 && lambda <= 1.0,
          strformat("clip_mixup: lambda %g outside [0,1]", lambda));
  int label = 0;
  for (std::size_t i = begin; i < end; ++i) label |= frames[i].label != 0 ? 1 : 0;
  if (end - begin == 1) {
    Frame out = frames[begin];
    out.label = label;
    return out;
  }
  const Frame& first = frames[begin];
  const Frame& last = frames[end - 1];
  require(first.pixels.shape == last.pixels.shape, "clip_mixup: frame shape mismatch");
  Frame out{Tensor(first.pixels.shape), label};
  for (std::int64_t i = 0; i < out.pixels.numel(); ++i) {
    out.pixels.data[i] = lambda * first.pixels.data[i] + (1.0 - lambda) * last.pixels.data[i];
  }
  return out;
}

inline double sample_lambda(double alpha, Rng& rng) {
  require(alpha > 0.0, strformat("sample_lambda: alpha must be positive, got %g", alpha));
  return rng.beta_symmetric(alpha);
}

// ---------------------------------------------------------------------------
// Station points: full-resolution CNN features at uniformly placed interior
// frames, giving the policy a preview of upcoming content.
// ---------------------------------------------------------------------------
struct StationPointSet {
  std::vector<int> indices;
  std::vector<Tensor> features;
  int feature_dim = 0;

  int count() const { return static_cast<int>(indices.size()); }

  void validate(int video_length) const {
    require(indices.size() == features.size(), "station set: index/feature count mismatch");
    for (std::size_t i = 0; i < indices.size(); ++i) {
      require(indices[i] >= 0 && indices[i] < video_length, "station index out of range");
      if (i > 0) require(indices[i] > indices[i - 1], "station indices must strictly increase");
      require(features[i].numel() == feature_dim, "station feature dimension mismatch");
    }
  }
};

// Uniform interior placement: index_j = round((j+1)*L/(count+1)). Rounding can
// collide on tiny videos, so collisions are pushed forward (then pulled back
// from the upper bound) to keep indices strictly increasing.
inline std::vector<int> station_indices(int video_length, int count) {
  require(video_length >= 1, "station placement needs a nonempty video");
  require(count >= 0 && count <= video_length, "station count must lie in [0, video length]");
  std::vector<int> idx(count);
  for (int j = 0; j < count; ++j) {
    const double pos = static_cast<double>(j + 1) * video_length / (count + 1);
    idx[j] = static_cast<int>(std::lround(pos));
    idx[j] = std::clamp(idx[j], 0, video_length - 1);
  }
  for (int j = 1; j < count; ++j) idx[j] = std::max(idx[j], idx[j - 1] + 1);
  for (int j = count - 1; j >= 0; --j) {
    const int cap = (j == count - 1) ? video_length - 1 : idx[j + 1] - 1;
    idx[j] = std::min(idx[j], cap);
  }
  return idx;
}

inline StationPointSet extract_station_points(const VideoSample& video, int count,
                                              const FeatureCnn& cnn, int full_resolution) {
  StationPointSet set;
  set.feature_dim = cnn.feature_dim();
  set.indices = station_indices(video.length(), count);
  set.features.reserve(set.indices.size());
  for (int idx : set.indices) {
    Tensor resized = resize_bilinear(video.frames[idx].pixels, full_resolution);
    set.features.push_back(cnn.forward(resized));
  }
  set.validate(video.length());
  return set;
}

// Feature of the smallest station index strictly greater than the cursor;
// past the last station the last feature is reused; an empty set substitutes
// a zero vector so the policy input dimension never changes.
inline Tensor nearest_future_station(int cursor, const StationPointSet& stations) {
  if (stations.indices.empty()) return Tensor::zeros({std::max(stations.feature_dim, 1)});
  for (std::size_t i = 0; i < stations.indices.size(); ++i) {
    if (stations.indices[i] > cursor) return stations.features[i];
  }
  return stations.features.back();
}

// ---------------------------------------------------------------------------
// FLOPs ledger.
// ---------------------------------------------------------------------------
struct FlopsLedger {
  std::vector<std::pair<int, std::int64_t>> per_step;
  std::int64_t total_video = 0;

  void add(int step, std::int64_t flops) {
    per_step.emplace_back(step, flops);
    total_video += flops;
  }

  double per_frame(int frame_count) const {
    require(frame_count >= 1, "per_frame needs a positive frame count");
    return static_cast<double>(total_video) / frame_count;
  }

  double mean_per_step() const {
    require(!per_step.empty(), "mean_per_step on an empty ledger");
    return static_cast<double>(total_video) / static_cast<double>(per_step.size());
  }
};

// ---------------------------------------------------------------------------
// Episode runner.
// ---------------------------------------------------------------------------
enum class EpisodeMode { Sample, Argmax };

struct EpisodeOptions {
  EpisodeMode mode = EpisodeMode::Argmax;
  double tau = 1.0;          // gumbel-softmax temperature (sample mode)
  double alpha = 0.3;        // mixup Beta parameter (sample mode)
  double eval_lambda = 0.5;  // fixed mixup weight (argmax mode)
  Rng* rng = nullptr;        // required in sample mode
  int forced_action = -1;    // >= 0 bypasses the policy (fixed-action baseline)
};

struct StepRecord {
  int step = 0;        // 0-based step counter
  int cursor = 0;      // frame cursor before this step consumed its clip
  int action = 0;      // chosen action index
  int consumed = 0;    // frames consumed: min(remaining, frame_counts[action])
  int resolution = 0;  // resolution of the frame processed this step
  std::int64_t flops = 0;
  double lambda = 0.0;  // mixup weight applied to this step's consumed clip
  Tensor probs;         // a^p
  Tensor gumbel_soft;   // a^gs (argmax mode: equals probs)
  Tensor noise;         // gumbel noise realization (zeros outside sample mode)
  PolicyNet::Eval policy_eval;
  Tensor x_t;     // CNN feature fed to the GRU this step
  Tensor h_prev;  // hidden state before this step's GRU update
};

struct EpisodeResult {
  Tensor h_final;
  std::vector<StepRecord> steps;
  FlopsLedger ledger;
};

// Walks a video under policy control. The frame processed at step i is the
// mixup of the clip consumed at step i-1 (step 0 processes frame 0 at full
// resolution), so processing trails consumption by one decision and the final
// clip's mixup is never processed.
inline EpisodeResult run_episode(const VideoSample& video, const ActionSpace& actions,
                                 const FeatureCnn& cnn, const GruCell& gru,
                                 const PolicyNet* policy, const StationPointSet& stations,
                                 const EpisodeOptions& opts) {
  require(video.length() >= 1, "run_episode needs a nonempty video");
  const int num_actions = actions.size();
  if (opts.forced_action >= 0) {
    require(opts.forced_action < num_actions, "forced action out of range");
  } else {
    require(policy != nullptr, "run_episode needs a policy unless an action is forced");
  }
  if (opts.mode == EpisodeMode::Sample) {
    require(opts.rng != nullptr, "sample mode needs an rng");
    require(opts.tau > 0.0, "sample mode needs a positive temperature");
  }

  const int L = video.length();
  const std::int64_t gru_flops = gru.step_flops();

  EpisodeResult result;
  result.steps.reserve(static_cast<std::size_t>(L));

  Frame mixed = video.frames[0];
  int resolution = actions.full_resolution();
  Tensor h = Tensor::zeros({gru.h_dim});
  int cursor = 0;
  int step = 0;

  while (cursor < L) {
    StepRecord rec;
    rec.step = step;
    rec.cursor = cursor;
    rec.resolution = resolution;

    Tensor resized = resize_bilinear(mixed.pixels, resolution);
    rec.x_t = cnn.forward(resized);
    rec.h_prev = h;
    h = gru.step(rec.x_t, h);
    rec.flops = cnn.flops(resolution) + gru_flops;
    result.ledger.add(step, rec.flops);

    if (opts.forced_action >= 0) {
      rec.action = opts.forced_action;
      rec.probs = Tensor::zeros({num_actions});
      rec.probs.data[rec.action] = 1.0;
      rec.gumbel_soft = rec.probs;
      rec.noise = Tensor::zeros({num_actions});
    } else {
      Tensor station = nearest_future_station(cursor, stations);
      rec.policy_eval = policy->eval(h, station);
      rec.probs = rec.policy_eval.probs;
      if (opts.mode == EpisodeMode::Sample) {
        rec.action = gumbel_max(rec.probs, *opts.rng, &rec.noise);
        rec.gumbel_soft = gumbel_softmax(rec.probs, rec.noise, opts.tau);
      } else {
        rec.action = argmax_index(rec.probs);
        rec.gumbel_soft = rec.probs;
        rec.noise = Tensor::zeros({num_actions});
      }
    }

    rec.consumed = std::min(L - cursor, actions.frame_counts[rec.action]);
    rec.lambda = (opts.mode == EpisodeMode::Sample) ? sample_lambda(opts.alpha, *opts.rng)
                                                    : opts.eval_lambda;
    mixed = clip_mixup(video.frames, static_cast<std::size_t>(cursor),
                       static_cast<std::size_t>(cursor + rec.consumed), rec.lambda);
    resolution = actions.resolutions[rec.action];
    cursor += rec.consumed;
    result.steps.push_back(std::move(rec));
    ++step;
  }

  result.h_final = std::move(h);
  return result;
}

// Closed-form ledger total for a fixed-action episode at a fixed resolution
// (the always-k=1 full-resolution baseline when action=0).
inline std::int64_t fixed_action_flops(const ActionSpace& actions, const FeatureCnn& cnn,
                                       const GruCell& gru, int video_length, int action) {
  require(action >= 0 && action < actions.size(), "fixed_action_flops: action out of range");
  const int k = actions.frame_counts[action];
  const std::int64_t full_step = cnn.flops(actions.full_resolution()) + gru.step_flops();
  const std::int64_t res_step = cnn.flops(actions.resolutions[action]) + gru.step_flops();
  const int steps = (video_length + k - 1) / k;
  // Step 0 always processes frame 0 at full resolution; later steps run at
  // the forced action's resolution.
  return full_step + static_cast<std::int64_t>(steps - 1) * res_step;
}

inline void write_trace_csv(std::ostream& out, const std::vector<StepRecord>& steps) {
  out << "step,cursor,action,resolution,flops\n";
  for (const StepRecord& rec : steps) {
    out << rec.step << ',' << rec.cursor << ',' << rec.action << ',' << rec.resolution << ','
        << rec.flops << '\n';
  }
}

inline void write_trace_csv(const std::string& path, const std::vector<StepRecord>& steps) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), strformat("cannot open trace file '%s'", path.c_str()));
  write_trace_csv(out, steps);
  require(out.good(), strformat("failed writing trace file '%s'", path.c_str()));
}

}  // namespace clipforge
