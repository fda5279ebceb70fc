#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "clipforge/rng.hpp"
#include "clipforge/video.hpp"

namespace clipforge {

// Parameters of the synthetic corpus: positive videos carry a bright
// flickering blob over a contiguous mid-video run; negatives are drifting
// background texture with camera jitter only. Everything derives from
// rng_seed, so a spec value generates the same corpus bytes every time.
struct SyntheticCorpusSpec {
  int num_videos = 30;
  int frames_per_video = 64;
  int frame_size = 32;
  int channels = 1;
  int positive_parts = 2;  // positive:negative ratio, e.g. 2:1
  int negative_parts = 1;
  std::uint64_t rng_seed = 1;

  double background_level = 0.25;  // mean background intensity
  double jitter = 1.5;             // camera jitter amplitude (pixels)
  double noise = 0.02;             // per-pixel noise amplitude
  double blob_intensity = 0.9;     // blob peak brightness
  double blob_radius = 5.0;        // blob Gaussian radius (pixels)
  double blob_flicker = 0.25;      // relative flicker amplitude
  int run_min = 10;                // positive run length bounds (frames)
  int run_max = 20;

  void validate() const {
    require(num_videos >= 1, "corpus needs at least one video");
    require(frames_per_video >= 1, "corpus needs at least one frame per video");
    require(frame_size >= 4, strformat("frame size must be >= 4, got %d", frame_size));
    require(channels == 1 || channels == 3, "corpus channels must be 1 or 3");
    require(positive_parts >= 1 && negative_parts >= 1, "ratio parts must be positive");
    require(run_min >= 1 && run_max >= run_min, "invalid positive run bounds");
  }

  // Videos interleave as P,...,P,N per ratio block so every prefix stays
  // close to the requested balance (30 videos at 2:1 -> 20 positive).
  bool positive_at(int index) const {
    return index % (positive_parts + negative_parts) < positive_parts;
  }
};

namespace detail {

// Smooth drifting background: a few low-frequency sinusoids sampled at
// jittered coordinates, plus fine noise.
inline double background_value(const SyntheticCorpusSpec& spec, double x, double y, double t,
                               const double phase[6]) {
  const double s = spec.frame_size;
  const double v = std::sin(2.0 * 3.14159265358979323846 * (x / s + phase[0]) + 0.3 * t) +
                   std::sin(2.0 * 3.14159265358979323846 * (y / s * 1.7 + phase[1]) + 0.2 * t) +
                   std::sin(2.0 * 3.14159265358979323846 * ((x + y) / s * 0.9 + phase[2]) + 0.15 * t);
  return spec.background_level * (1.0 + 0.45 * v / 3.0);
}

}  // namespace detail

// Generates one video deterministically from (seed, index).
inline VideoSample generate_video(const SyntheticCorpusSpec& spec, int index) {
  spec.validate();
  require(index >= 0 && index < spec.num_videos, "video index out of range");
  Rng rng = Rng::derive(spec.rng_seed, {0xC0F5ull, static_cast<std::uint64_t>(index)});
  const bool positive = spec.positive_at(index);
  const int size = spec.frame_size;
  const int frames = spec.frames_per_video;

  double phase[6];
  for (double& p : phase) p = rng.uniform();

  // Positive run placement: starts in the middle half of the video.
  int run_start = 0, run_len = 0;
  double cx = 0.0, cy = 0.0;
  if (positive) {
    run_len = spec.run_min + static_cast<int>(rng.below(
                  static_cast<std::uint64_t>(spec.run_max - spec.run_min + 1)));
    run_len = std::min(run_len, frames);
    const int lo = frames / 4;
    const int hi = std::max(lo, frames / 2);
    run_start = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    run_start = std::min(run_start, frames - run_len);
    run_start = std::max(run_start, 0);
    cx = rng.uniform(size * 0.3, size * 0.7);
    cy = rng.uniform(size * 0.3, size * 0.7);
  }

  VideoSample video;
  video.source_id = strformat("v%03d", index);
  video.label = positive ? 1 : 0;
  for (int t = 0; t < frames; ++t) {
    const double jx = rng.uniform(-spec.jitter, spec.jitter);
    const double jy = rng.uniform(-spec.jitter, spec.jitter);
    const bool blob_now = positive && t >= run_start && t < run_start + run_len;
    double blob_gain = 0.0;
    double bx = 0.0, by = 0.0;
    if (blob_now) {
      blob_gain = spec.blob_intensity * (1.0 - spec.blob_flicker * rng.uniform());
      bx = cx + rng.uniform(-1.0, 1.0);
      by = cy + rng.uniform(-1.0, 1.0);
    }
    Tensor px({spec.channels, size, size});
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        double v = detail::background_value(spec, x + jx, y + jy, t * 0.5, phase);
        v += spec.noise * (rng.uniform() - 0.5);
        if (blob_now) {
          const double dx = x - bx;
          const double dy = y - by;
          const double r2 = (dx * dx + dy * dy) / (spec.blob_radius * spec.blob_radius);
          v += blob_gain * std::exp(-r2);
        }
        v = std::min(std::max(v, 0.0), 1.0);
        for (int c = 0; c < spec.channels; ++c) px.at3(c, y, x) = v;
      }
    }
    video.frames.emplace_back(std::move(px), blob_now ? 1 : 0);
  }
  video.validate();
  return video;
}

inline std::vector<VideoSample> generate_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  std::vector<VideoSample> videos;
  videos.reserve(static_cast<std::size_t>(spec.num_videos));
  for (int i = 0; i < spec.num_videos; ++i) videos.push_back(generate_video(spec, i));
  return videos;
}

}  // namespace clipforge
