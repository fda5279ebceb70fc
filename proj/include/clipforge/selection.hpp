#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "clipforge/engine.hpp"

namespace clipforge {

// Score variants: which per-step vector feeds the preference score.
//   S1: one-hot at the hard-chosen action. S2: the probabilities a^p.
//   S3: the relaxed sample a^gs.
enum class ScoreVariant { S1, S2, S3 };

inline const char* score_variant_name(ScoreVariant v) {
  switch (v) {
    case ScoreVariant::S1: return "s1";
    case ScoreVariant::S2: return "s2";
    case ScoreVariant::S3: return "s3";
  }
  return "?";
}

inline ScoreVariant parse_score_variant(const std::string& s) {
  if (s == "s1" || s == "S1") return ScoreVariant::S1;
  if (s == "s2" || s == "S2") return ScoreVariant::S2;
  if (s == "s3" || s == "S3") return ScoreVariant::S3;
  throw ConfigError(strformat("unknown score variant '%s'", s.c_str()));
}

// Preference score of one decision: S = sum_j c_j / A_j. Merging more frames
// makes each of them matter less, so larger actions earn smaller scores.
inline double clip_score(const StepRecord& rec, ScoreVariant variant,
                         const ActionSpace& actions) {
  const int n = actions.size();
  require(rec.probs.numel() == n && rec.gumbel_soft.numel() == n,
          "clip_score: distribution/action-space size mismatch");
  double s = 0.0;
  switch (variant) {
    case ScoreVariant::S1:
      require(rec.action >= 0 && rec.action < n, "clip_score: chosen action out of range");
      s = 1.0 / actions.frame_counts[rec.action];
      break;
    case ScoreVariant::S2:
      for (int j = 0; j < n; ++j) s += rec.probs.data[j] / actions.frame_counts[j];
      break;
    case ScoreVariant::S3:
      for (int j = 0; j < n; ++j) s += rec.gumbel_soft.data[j] / actions.frame_counts[j];
      break;
  }
  return s;
}

// Per-frame scores inside one clip: the central frame (index floor(len/2))
// carries the clip score; each frame step away multiplies by 0.9.
inline std::vector<double> frame_scores(int clip_length, double score) {
  require(clip_length >= 1, "frame_scores: empty clip");
  std::vector<double> out(static_cast<std::size_t>(clip_length));
  const int center = clip_length / 2;
  for (int i = 0; i < clip_length; ++i) {
    out[static_cast<std::size_t>(i)] = score * std::pow(0.9, std::abs(i - center));
  }
  return out;
}

struct PreferenceRecord {
  int start = 0;  // clip range [start, end)
  int end = 0;
  double score = 0.0;
  ScoreVariant variant = ScoreVariant::S1;
  std::vector<double> per_frame;
};

// One score per video frame: each step's distribution scores the clip that
// step consumed (the clips partition the video), decayed around the clip
// center. Frame 0 doubles as the episode's initialization frame, so its
// decayed value is replaced by the first clip's peak score.
inline std::vector<double> score_episode_frames(const std::vector<StepRecord>& steps,
                                                int video_length, ScoreVariant variant,
                                                const ActionSpace& actions) {
  require(!steps.empty(), "score_episode_frames: empty episode");
  std::vector<double> scores(static_cast<std::size_t>(video_length), 0.0);
  for (const StepRecord& rec : steps) {
    const double s = clip_score(rec, variant, actions);
    const std::vector<double> decayed = frame_scores(rec.consumed, s);
    for (int i = 0; i < rec.consumed; ++i) {
      const int frame = rec.cursor + i;
      require(frame >= 0 && frame < video_length, "score_episode_frames: clip out of range");
      scores[static_cast<std::size_t>(frame)] = decayed[static_cast<std::size_t>(i)];
    }
  }
  scores[0] = clip_score(steps.front(), variant, actions);
  return scores;
}

inline std::vector<double> score_video(const VideoSample& video, const ActionSpace& actions,
                                       const FeatureCnn& cnn, const GruCell& gru,
                                       const PolicyNet& policy, const StationPointSet& stations,
                                       ScoreVariant variant) {
  EpisodeOptions opts;
  opts.mode = EpisodeMode::Argmax;
  EpisodeResult ep = run_episode(video, actions, cnn, gru, &policy, stations, opts);
  return score_episode_frames(ep.steps, video.length(), variant, actions);
}

// Keeps the n highest-scoring frames (ties to the earlier frame index) in
// their original temporal order, labels carried over.
inline VideoSample select_frames(const VideoSample& video, const std::vector<double>& scores,
                                 int budget) {
  const int L = video.length();
  require(static_cast<int>(scores.size()) == L, "select_frames: score/frame count mismatch");
  require(budget >= 1 && budget <= L,
          strformat("select_frames: budget %d outside [1, %d]", budget, L));
  std::vector<int> order(static_cast<std::size_t>(L));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)]) {
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  order.resize(static_cast<std::size_t>(budget));
  std::sort(order.begin(), order.end());
  VideoSample out;
  out.label = video.label;
  out.source_id = video.source_id;
  out.frames.reserve(order.size());
  for (int idx : order) out.frames.push_back(video.frames[static_cast<std::size_t>(idx)]);
  return out;
}

inline void write_scores_csv(std::ostream& out, const std::vector<double>& scores,
                             ScoreVariant variant) {
  out << "frame_index,score,variant\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out << i << ',' << format_double(scores[i]) << ',' << score_variant_name(variant) << '\n';
  }
}

inline void write_scores_csv(const std::string& path, const std::vector<double>& scores,
                             ScoreVariant variant) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), strformat("cannot open score file '%s'", path.c_str()));
  write_scores_csv(out, scores, variant);
  require(out.good(), strformat("failed writing score file '%s'", path.c_str()));
}

}  // namespace clipforge
