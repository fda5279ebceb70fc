#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clipforge/common.hpp"
#include "clipforge/tensor.hpp"

namespace clipforge {

// One video frame: [C,H,W] pixels in [0,1], 1 (grayscale) or 3 (RGB)
// channels, plus a binary content label.
struct Frame {
  Tensor pixels;  // [C,H,W]
  int label = 0;

  Frame() = default;
  Frame(Tensor px, int label_) : pixels(std::move(px)), label(label_) { validate(); }

  int channels() const { return pixels.shape[0]; }
  int height() const { return pixels.shape[1]; }
  int width() const { return pixels.shape[2]; }

  void validate() const {
    require(pixels.rank() == 3, strformat("frame pixels must be [C,H,W], got %s",
                                          shape_str(pixels.shape).c_str()));
    require(pixels.shape[0] == 1 || pixels.shape[0] == 3,
            strformat("frame must have 1 or 3 channels, got %d", pixels.shape[0]));
    require(pixels.shape[1] >= 4, strformat("frame height must be >= 4, got %d", pixels.shape[1]));
    require(pixels.shape[2] >= 4, strformat("frame width must be >= 4, got %d", pixels.shape[2]));
  }
};

// A fixed-shape frame sequence with a sample-level binary label.
struct VideoSample {
  std::vector<Frame> frames;
  int label = 0;
  std::string source_id;

  int length() const { return static_cast<int>(frames.size()); }

  void validate() const {
    require(!frames.empty(), strformat("video %s has no frames", source_id.c_str()));
    const Shape& shape = frames.front().pixels.shape;
    for (const Frame& f : frames) {
      f.validate();
      require(f.pixels.shape == shape,
              strformat("video %s frames disagree on shape: %s vs %s", source_id.c_str(),
                        shape_str(shape).c_str(), shape_str(f.pixels.shape).c_str()));
    }
  }
};

// Bilinear resize to a square target using half-pixel centers: output pixel
// center i maps to source coordinate (i + 0.5) * scale - 0.5, clamped at the
// borders. A 4x4 checkerboard downsampled to 2x2 lands exactly between
// opposite-valued pixels and averages to 0.5 everywhere.
inline Tensor resize_bilinear(const Tensor& pixels, int target) {
  require(pixels.rank() == 3, "resize expects [C,H,W]");
  require(target >= 1, strformat("resize target must be >= 1, got %d", target));
  const int c = pixels.shape[0], h = pixels.shape[1], w = pixels.shape[2];
  if (h == target && w == target) return pixels;
  Tensor out({c, target, target});
  const double sy = static_cast<double>(h) / target;
  const double sx = static_cast<double>(w) / target;
  for (int oy = 0; oy < target; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < target; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double top = pixels.at3(ch, y0, x0) * (1.0 - wx) + pixels.at3(ch, y0, x1) * wx;
        const double bot = pixels.at3(ch, y1, x0) * (1.0 - wx) + pixels.at3(ch, y1, x1) * wx;
        out.at3(ch, oy, ox) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

inline Frame resize_frame(const Frame& f, int target) {
  return Frame(resize_bilinear(f.pixels, target), f.label);
}

// Groups a labeled frame stream into non-overlapping fixed-length windows.
// A window is positive when any member frame is positive; a trailing
// remainder shorter than the window is dropped.
inline std::vector<VideoSample> build_samples(const std::vector<Frame>& frames, int window,
                                              const std::string& source_prefix) {
  require(!frames.empty(), "build_samples: empty frame stream");
  require(window >= 1, strformat("build_samples: window must be >= 1, got %d", window));
  std::vector<VideoSample> samples;
  const int n = static_cast<int>(frames.size());
  for (int start = 0; start + window <= n; start += window) {
    VideoSample sample;
    sample.frames.assign(frames.begin() + start, frames.begin() + start + window);
    sample.label = 0;
    for (const Frame& f : sample.frames) sample.label |= f.label;
    sample.source_id = strformat("%s_w%03d", source_prefix.c_str(), start / window);
    sample.validate();
    samples.push_back(std::move(sample));
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Raw video container: magic "CLPV", u32 version, u32 frame count, u32 H,
// u32 W, u32 C, then per frame one label byte followed by C*H*W f32
// little-endian pixels in [C,H,W] order.
// ---------------------------------------------------------------------------
inline constexpr char kVideoMagic[4] = {'C', 'L', 'P', 'V'};
inline constexpr std::uint32_t kVideoVersion = 1;

inline void store_frames(const std::string& path, const VideoSample& video) {
  video.validate();
  std::ofstream os(path, std::ios::binary);
  require(os.good(), strformat("cannot open video for writing: %s", path.c_str()));
  os.write(kVideoMagic, 4);
  write_u32(os, kVideoVersion);
  write_u32(os, static_cast<std::uint32_t>(video.frames.size()));
  write_u32(os, static_cast<std::uint32_t>(video.frames.front().height()));
  write_u32(os, static_cast<std::uint32_t>(video.frames.front().width()));
  write_u32(os, static_cast<std::uint32_t>(video.frames.front().channels()));
  for (const Frame& f : video.frames) {
    const char label = static_cast<char>(f.label != 0 ? 1 : 0);
    os.write(&label, 1);
    for (double v : f.pixels.data) write_f32(os, static_cast<float>(v));
  }
  require(os.good(), strformat("write failure on video: %s", path.c_str()));
}

// Loads a raw video. The sample label is the OR of the stored frame labels
// (the same rule build_samples uses); corpus manifests carry it redundantly.
inline VideoSample load_frames(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) throw RuntimeError(strformat("cannot open video: %s", path.c_str()));
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kVideoMagic, 4) != 0) {
    throw RuntimeError(strformat("%s is not a raw video file (bad magic)", path.c_str()));
  }
  const std::uint32_t version = read_u32(is, "video version");
  if (version != kVideoVersion) {
    throw RuntimeError(strformat("unsupported video version %u in %s", version, path.c_str()));
  }
  const std::uint32_t count = read_u32(is, "frame count");
  const int h = static_cast<int>(read_u32(is, "height"));
  const int w = static_cast<int>(read_u32(is, "width"));
  const int c = static_cast<int>(read_u32(is, "channels"));
  if (count == 0) throw RuntimeError(strformat("video %s has no frames", path.c_str()));
  VideoSample video;
  video.source_id = path;
  for (std::uint32_t fidx = 0; fidx < count; ++fidx) {
    char label_byte = 0;
    is.read(&label_byte, 1);
    if (!is) throw RuntimeError(strformat("truncated frame header in %s", path.c_str()));
    Tensor px({c, h, w});
    for (double& v : px.data) v = read_f32(is, "pixel data");
    video.frames.emplace_back(std::move(px), label_byte != 0 ? 1 : 0);
    video.label |= video.frames.back().label;
  }
  video.validate();
  return video;
}

// ---------------------------------------------------------------------------
// PGM (P5) / PPM (P6) import, 8-bit maxval only, values scaled by 1/255.
// ---------------------------------------------------------------------------
namespace detail {
inline int next_pnm_int(std::istream& is, const std::string& path) {
  // Skips whitespace and '#' comment lines between header tokens.
  int ch = is.peek();
  while (ch == '#' || std::isspace(ch)) {
    if (ch == '#') {
      std::string line;
      std::getline(is, line);
    } else {
      is.get();
    }
    ch = is.peek();
  }
  int value = 0;
  if (!(is >> value)) throw RuntimeError(strformat("malformed header in %s", path.c_str()));
  return value;
}
}  // namespace detail

inline Frame load_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) throw RuntimeError(strformat("cannot open image: %s", path.c_str()));
  char magic[2];
  is.read(magic, 2);
  if (!is || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw RuntimeError(strformat("%s is not a binary PGM/PPM file", path.c_str()));
  }
  const int channels = magic[1] == '5' ? 1 : 3;
  const int w = detail::next_pnm_int(is, path);
  const int h = detail::next_pnm_int(is, path);
  const int maxval = detail::next_pnm_int(is, path);
  if (maxval != 255) {
    throw RuntimeError(strformat("%s: only 8-bit maxval 255 is supported, got %d", path.c_str(),
                                 maxval));
  }
  is.get();  // single whitespace after the header
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw RuntimeError(strformat("truncated pixel data in %s", path.c_str()));
  Tensor px({channels, h, w});
  // PNM stores interleaved rows; tensors are planar.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        px.at3(c, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0;
      }
    }
  }
  return Frame(std::move(px), 0);
}

// ---------------------------------------------------------------------------
// Corpus manifest: CSV with header video_id,path,label. Paths are stored
// relative to the manifest's directory.
// ---------------------------------------------------------------------------
struct ManifestEntry {
  std::string video_id;
  std::string path;
  int label = 0;
};

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  require(os.good(), strformat("cannot open manifest for writing: %s", path.c_str()));
  os << "video_id,path,label\n";
  for (const ManifestEntry& e : entries) {
    os << e.video_id << "," << e.path << "," << e.label << "\n";
  }
  require(os.good(), strformat("write failure on manifest: %s", path.c_str()));
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is.good()) throw RuntimeError(strformat("cannot open manifest: %s", path.c_str()));
  std::string line;
  if (!std::getline(is, line)) throw RuntimeError(strformat("empty manifest: %s", path.c_str()));
  if (line != "video_id,path,label") {
    throw RuntimeError(strformat("unexpected manifest header in %s: %s", path.c_str(),
                                 line.c_str()));
  }
  std::vector<ManifestEntry> entries;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    ManifestEntry e;
    std::string label_str;
    if (!std::getline(ss, e.video_id, ',') || !std::getline(ss, e.path, ',') ||
        !std::getline(ss, label_str)) {
      throw RuntimeError(strformat("malformed manifest row at %s:%d", path.c_str(), line_no));
    }
    e.label = std::stoi(label_str);
    entries.push_back(std::move(e));
  }
  return entries;
}

// Directory part of a path ("" when there is none), for resolving manifest-
// relative video paths.
inline std::string dir_of(const std::string& path) {
  const std::size_t pos = path.find_last_of('/');
  return pos == std::string::npos ? std::string() : path.substr(0, pos);
}

inline std::string join_path(const std::string& dir, const std::string& rel) {
  if (dir.empty() || rel.front() == '/') return rel;
  return dir + "/" + rel;
}

}  // namespace clipforge
