#pragma once

// Synthetic sprite-world benchmark.
//
// Normal videos: 2-4 discs on straight, mutually non-touching trajectories.
// Visual anomalies: a square (a shape absent from training) is visible for a
// contiguous range of frames. Contextual anomalies: two familiar discs
// collide, interpenetrate and rebound; the anomalous range is exactly the set
// of frames in which their pixel masks overlap.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "vadkit/dataset.hpp"
#include "vadkit/image_io.hpp"

namespace vadkit {

struct SynthSpec {
  std::size_t n_normal_videos = 8;       // train split
  std::size_t n_test_normal_videos = 0;  // test split, no anomalies
  std::size_t n_visual_anomaly_videos = 4;
  std::size_t n_contextual_anomaly_videos = 4;
  std::size_t frame_size = 64;
  std::size_t video_length = 64;
  std::size_t clip_length = 16;
  double radius_min = 5.0, radius_max = 8.0;
  double speed_min = 0.3, speed_max = 0.8;
  std::size_t sprites_min = 2, sprites_max = 4;
  /// Fraction of the summed radii by which colliding discs interpenetrate.
  double collision_depth = 0.6;
  std::size_t fps = 25;
  std::uint64_t seed = 0;

  void validate() const {
    if (video_length < clip_length)
      throw Error("synthetic video_length " + std::to_string(video_length) +
                  " is shorter than the clip length " + std::to_string(clip_length));
    if (frame_size < 8) throw Error("synthetic frame_size must be >= 8");
    if (!(radius_min > 0 && radius_min <= radius_max)) throw Error("invalid sprite radius range");
    if (!(speed_min >= 0 && speed_min <= speed_max)) throw Error("invalid sprite speed range");
    if (sprites_min < 2 || sprites_min > sprites_max)
      throw Error("sprite count range must satisfy 2 <= sprites_min <= sprites_max");
    if (!(collision_depth > 0 && collision_depth < 1)) throw Error("collision_depth must be in (0, 1)");
    if (2 * radius_max >= static_cast<double>(frame_size))
      throw Error("sprites do not fit into the frame");
  }
};

inline nlohmann::json synth_to_json(const SynthSpec& s) {
  return {{"n_normal_videos", s.n_normal_videos},
          {"n_test_normal_videos", s.n_test_normal_videos},
          {"n_visual_anomaly_videos", s.n_visual_anomaly_videos},
          {"n_contextual_anomaly_videos", s.n_contextual_anomaly_videos},
          {"frame_size", s.frame_size},
          {"video_length", s.video_length},
          {"clip_length", s.clip_length},
          {"radius_min", s.radius_min},
          {"radius_max", s.radius_max},
          {"speed_min", s.speed_min},
          {"speed_max", s.speed_max},
          {"sprites_min", s.sprites_min},
          {"sprites_max", s.sprites_max},
          {"collision_depth", s.collision_depth},
          {"fps", s.fps},
          {"seed", s.seed}};
}

inline SynthSpec synth_from_json(const nlohmann::json& j) {
  SynthSpec s;
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
  };
  get("n_normal_videos", s.n_normal_videos);
  get("n_test_normal_videos", s.n_test_normal_videos);
  get("n_visual_anomaly_videos", s.n_visual_anomaly_videos);
  get("n_contextual_anomaly_videos", s.n_contextual_anomaly_videos);
  get("frame_size", s.frame_size);
  get("video_length", s.video_length);
  get("clip_length", s.clip_length);
  get("radius_min", s.radius_min);
  get("radius_max", s.radius_max);
  get("speed_min", s.speed_min);
  get("speed_max", s.speed_max);
  get("sprites_min", s.sprites_min);
  get("sprites_max", s.sprites_max);
  get("collision_depth", s.collision_depth);
  get("fps", s.fps);
  get("seed", s.seed);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!synth_to_json(SynthSpec{}).contains(it.key()))
      throw Error("unknown synth spec field '" + it.key() + "'");
  s.validate();
  return s;
}

enum class SynthKind { Normal, TestNormal, Visual, Contextual };

enum class SpriteShape { Disc, Square };

/// A sprite's position at every frame (NaN centre = not visible).
struct SpriteTrack {
  int id = 0;
  SpriteShape shape = SpriteShape::Disc;
  /// Disc radius, or half the square's side.
  double radius = 0;
  std::array<std::uint8_t, 3> color{};
  std::vector<std::array<double, 2>> centre;

  bool visible(std::size_t t) const { return !std::isnan(centre[t][0]); }
};

struct SynthVideo {
  std::string video_id;
  SynthKind kind = SynthKind::Normal;
  std::vector<SpriteTrack> sprites;
  std::vector<cv::Mat> frames;  // RGB
  FrameObjects objects;
  /// Per frame: number of pixels covered by two or more sprites.
  std::vector<std::size_t> overlap_pixels;
  std::vector<FrameRange> anomalous_ranges;
};

namespace synth_detail {

inline constexpr std::array<std::array<std::uint8_t, 3>, 6> kPalette{{{230, 60, 60},
                                                                       {60, 200, 70},
                                                                       {70, 110, 235},
                                                                       {235, 200, 50},
                                                                       {200, 80, 220},
                                                                       {60, 210, 210}}};
inline constexpr std::uint8_t kBackground = 40;
inline constexpr int kMaxAttempts = 1000;

// Pixel (x, y) is covered when its centre (x + 0.5, y + 0.5) lies inside.
inline bool covers(const SpriteTrack& s, std::size_t t, std::size_t x, std::size_t y) {
  if (!s.visible(t)) return false;
  const double px = static_cast<double>(x) + 0.5 - s.centre[t][0];
  const double py = static_cast<double>(y) + 0.5 - s.centre[t][1];
  if (s.shape == SpriteShape::Disc) return px * px + py * py <= s.radius * s.radius;
  return std::abs(px) <= s.radius && std::abs(py) <= s.radius;
}

// Conservative clearance: the circumscribed radius of a square.
inline double reach(const SpriteTrack& s) {
  return s.shape == SpriteShape::Disc ? s.radius : s.radius * std::numbers::sqrt2;
}

inline bool clear_of(const SpriteTrack& a, const SpriteTrack& b, std::size_t len) {
  for (std::size_t t = 0; t < len; ++t) {
    if (!a.visible(t) || !b.visible(t)) continue;
    const double dx = a.centre[t][0] - b.centre[t][0], dy = a.centre[t][1] - b.centre[t][1];
    const double gap = reach(a) + reach(b) + 1.0;
    if (dx * dx + dy * dy <= gap * gap) return false;
  }
  return true;
}

inline bool inside(const SpriteTrack& s, double size) {
  const double r = reach(s);
  for (std::size_t t = 0; t < s.centre.size(); ++t) {
    if (!s.visible(t)) continue;
    const auto [x, y] = s.centre[t];
    if (x < r || y < r || x > size - r || y > size - r) return false;
  }
  return true;
}

class Builder {
 public:
  Builder(const SynthSpec& spec, std::mt19937_64& rng) : spec_(spec), rng_(rng) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  std::size_t uniform_int(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }

  std::array<std::uint8_t, 3> color() { return kPalette[uniform_int(0, kPalette.size() - 1)]; }

  // Straight-line track over [first, last], invisible elsewhere.
  SpriteTrack linear(int id, SpriteShape shape, std::size_t first, std::size_t last) {
    SpriteTrack s;
    s.id = id;
    s.shape = shape;
    s.radius = uniform(spec_.radius_min, spec_.radius_max);
    s.color = color();
    const double size = static_cast<double>(spec_.frame_size);
    const double r = reach(s);
    const double x0 = uniform(r, size - r), y0 = uniform(r, size - r);
    const double speed = uniform(spec_.speed_min, spec_.speed_max);
    const double angle = uniform(0.0, 2 * std::numbers::pi);
    s.centre.assign(spec_.video_length, {std::nan(""), std::nan("")});
    for (std::size_t t = first; t <= last; ++t) {
      const double dt = static_cast<double>(t - first);
      s.centre[t] = {x0 + speed * std::cos(angle) * dt, y0 + speed * std::sin(angle) * dt};
    }
    return s;
  }

  // Adds a track produced by `make` that stays in frame and clear of every
  // existing sprite, retrying until kMaxAttempts.
  template <typename Make>
  bool place(std::vector<SpriteTrack>& sprites, Make&& make) {
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      SpriteTrack s = make();
      if (!inside(s, static_cast<double>(spec_.frame_size))) continue;
      bool ok = true;
      for (const auto& o : sprites) ok = ok && clear_of(s, o, spec_.video_length);
      if (!ok) continue;
      sprites.push_back(std::move(s));
      return true;
    }
    return false;
  }

  // Two discs approaching head-on, interpenetrating by collision_depth of
  // their summed radii at frame tc, then separating symmetrically.
  std::array<SpriteTrack, 2> collision_pair(int id) {
    SpriteTrack a, b;
    a.id = id;
    b.id = id + 1;
    a.radius = uniform(spec_.radius_min, spec_.radius_max);
    b.radius = uniform(spec_.radius_min, spec_.radius_max);
    a.color = color();
    b.color = color();
    const std::size_t len = spec_.video_length;
    const double size = static_cast<double>(spec_.frame_size);
    const auto tc = static_cast<double>(uniform_int(len / 3, (2 * len) / 3));
    const double angle = uniform(0.0, 2 * std::numbers::pi);
    const double nx = std::cos(angle), ny = std::sin(angle);
    const double rel_speed = 2.0 * uniform(spec_.speed_min, spec_.speed_max);
    const double drift = uniform(0.0, spec_.speed_min);
    const double dangle = uniform(0.0, 2 * std::numbers::pi);
    const double qx = uniform(0.3 * size, 0.7 * size), qy = uniform(0.3 * size, 0.7 * size);
    const double closest = (a.radius + b.radius) * (1.0 - spec_.collision_depth);
    a.centre.resize(len);
    b.centre.resize(len);
    for (std::size_t t = 0; t < len; ++t) {
      const double dt = static_cast<double>(t) - tc;
      const double mx = qx + drift * std::cos(dangle) * dt, my = qy + drift * std::sin(dangle) * dt;
      const double sep = closest + rel_speed * std::abs(dt);
      a.centre[t] = {mx - nx * sep / 2, my - ny * sep / 2};
      b.centre[t] = {mx + nx * sep / 2, my + ny * sep / 2};
    }
    return {a, b};
  }

 private:
  const SynthSpec& spec_;
  std::mt19937_64& rng_;
};

inline void layout_error(const std::string& video_id) {
  throw Error("could not place collision-free sprites for synthetic video '" + video_id +
              "' after 1000 attempts; use fewer or smaller sprites, or a larger frame");
}

inline void render(SynthVideo& v, const SynthSpec& spec) {
  const std::size_t n = spec.frame_size, len = spec.video_length;
  v.frames.clear();
  v.objects.assign(len, {});
  v.overlap_pixels.assign(len, 0);
  for (std::size_t t = 0; t < len; ++t) {
    cv::Mat img(static_cast<int>(n), static_cast<int>(n), CV_8UC3,
                cv::Scalar(kBackground, kBackground, kBackground));
    for (std::size_t y = 0; y < n; ++y) {
      auto* row = img.ptr<std::uint8_t>(static_cast<int>(y));
      for (std::size_t x = 0; x < n; ++x) {
        std::size_t cover = 0;
        for (const auto& s : v.sprites) {
          if (!covers(s, t, x, y)) continue;
          ++cover;
          std::copy(s.color.begin(), s.color.end(), row + 3 * x);
        }
        if (cover >= 2) ++v.overlap_pixels[t];
      }
    }
    for (const auto& s : v.sprites) {
      if (!s.visible(t)) continue;
      const auto [cx, cy] = s.centre[t];
      v.objects[t].push_back({s.id, std::max(0.0, cx - s.radius), std::max(0.0, cy - s.radius),
                              std::min(static_cast<double>(n), cx + s.radius),
                              std::min(static_cast<double>(n), cy + s.radius)});
    }
    v.frames.push_back(std::move(img));
  }
}

// Frames in which sprites a and b share at least one pixel.
inline std::vector<std::size_t> pair_overlap_frames(const SpriteTrack& a, const SpriteTrack& b,
                                                    std::size_t size, std::size_t len) {
  std::vector<std::size_t> frames;
  for (std::size_t t = 0; t < len; ++t) {
    bool hit = false;
    for (std::size_t y = 0; y < size && !hit; ++y)
      for (std::size_t x = 0; x < size && !hit; ++x) hit = covers(a, t, x, y) && covers(b, t, x, y);
    if (hit) frames.push_back(t);
  }
  return frames;
}

}  // namespace synth_detail

/// Generates one synthetic video in memory.
inline SynthVideo synthesize_video(const SynthSpec& spec, SynthKind kind, std::size_t index,
                                   const std::string& video_id) {
  using namespace synth_detail;
  spec.validate();
  std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(index)};
  std::mt19937_64 rng(seq);
  Builder b(spec, rng);
  const std::size_t len = spec.video_length;
  SynthVideo v;
  v.video_id = video_id;
  v.kind = kind;

  for (int layout = 0;; ++layout) {
    if (layout == kMaxAttempts) layout_error(video_id);
    v.sprites.clear();
    bool ok = true;
    int next_id = 0;
    if (kind == SynthKind::Contextual) {
      auto pair = b.collision_pair(next_id);
      next_id += 2;
      if (!inside(pair[0], static_cast<double>(spec.frame_size)) ||
          !inside(pair[1], static_cast<double>(spec.frame_size)))
        continue;
      v.sprites = {pair[0], pair[1]};
      const std::size_t extra = b.uniform_int(spec.sprites_min - 2, spec.sprites_max - 2);
      for (std::size_t i = 0; i < extra && ok; ++i, ++next_id)
        ok = b.place(v.sprites, [&] { return b.linear(next_id, SpriteShape::Disc, 0, len - 1); });
    } else {
      const std::size_t max_discs = kind == SynthKind::Visual ? spec.sprites_max - 1 : spec.sprites_max;
      const std::size_t discs = b.uniform_int(spec.sprites_min, std::max(spec.sprites_min, max_discs));
      for (std::size_t i = 0; i < discs && ok; ++i, ++next_id)
        ok = b.place(v.sprites, [&] { return b.linear(next_id, SpriteShape::Disc, 0, len - 1); });
      if (ok && kind == SynthKind::Visual) {
        const std::size_t dur = b.uniform_int(len / 4, len / 2);
        const std::size_t first = b.uniform_int(0, len - dur);
        ok = b.place(v.sprites, [&] { return b.linear(next_id, SpriteShape::Square, first, first + dur - 1); });
        if (ok) v.anomalous_ranges = {{first, first + dur - 1}};
      }
    }
    if (!ok) continue;
    if (kind == SynthKind::Contextual) {
      const auto frames = pair_overlap_frames(v.sprites[0], v.sprites[1], spec.frame_size, len);
      if (frames.empty()) continue;
      v.anomalous_ranges = {{frames.front(), frames.back()}};
    }
    break;
  }
  render(v, spec);
  return v;
}

inline std::string synth_video_id(SynthKind kind, std::size_t index) {
  const char* prefix = kind == SynthKind::Normal       ? "normal_"
                       : kind == SynthKind::TestNormal ? "test_normal_"
                       : kind == SynthKind::Visual     ? "visual_"
                                                       : "contextual_";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%04zu", prefix, index);
  return buf;
}

inline std::string category_name(SynthKind kind) {
  switch (kind) {
    case SynthKind::Visual: return "visual";
    case SynthKind::Contextual: return "contextual";
    default: return "normal";
  }
}

/// Writes the synthetic dataset under out_dir (see dataset.hpp for the
/// layout) and returns its annotations.
inline AnnotationSet generate_synthetic(const SynthSpec& spec, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);
  AnnotationSet ann;
  const std::array<std::pair<SynthKind, std::size_t>, 4> plan{{
      {SynthKind::Normal, spec.n_normal_videos},
      {SynthKind::TestNormal, spec.n_test_normal_videos},
      {SynthKind::Visual, spec.n_visual_anomaly_videos},
      {SynthKind::Contextual, spec.n_contextual_anomaly_videos},
  }};
  for (const auto& [kind, count] : plan) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::string id = synth_video_id(kind, i);
      const SynthVideo v = synthesize_video(spec, kind, i, id);
      const std::string split = kind == SynthKind::Normal ? "train" : "test";
      const fs::path dir = out_dir / split / id;
      fs::create_directories(dir);
      for (std::size_t t = 0; t < v.frames.size(); ++t) write_rgb(dir / frame_name(t), v.frames[t]);
      std::ofstream(dir / "objects.json") << objects_to_json(v.objects).dump() << "\n";
      TemporalAnnotation a;
      a.video_id = id;
      a.n_frames = spec.video_length;
      a.fps = spec.fps;
      a.split = split;
      a.category = category_name(kind);
      a.anomalous_ranges = v.anomalous_ranges;
      a.validate();
      ann.videos.push_back(std::move(a));
    }
  }
  ann.save(out_dir / "annotations.json");
  return ann;
}

}  // namespace vadkit
