#pragma once

// Dataset layout, annotations and clip loading.
//
//   root/annotations.json
//   root/train/<video_id>/frame_%06d.png      (normal videos only)
//   root/test/<video_id>/frame_%06d.png
//   root/<split>/<video_id>/flow_{u,v}_%06d.png   (optional, see flow.hpp)
//   root/<split>/<video_id>/objects.json          (synthetic ground truth)

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vadkit/flow.hpp"
#include "vadkit/image_io.hpp"
#include "vadkit/interaction.hpp"
#include "vadkit/model.hpp"

namespace vadkit {

using FrameRange = std::pair<std::size_t, std::size_t>;  // inclusive

struct TemporalAnnotation {
  std::string video_id;
  std::size_t n_frames = 0;
  std::size_t fps = 25;
  std::vector<FrameRange> anomalous_ranges;
  /// "train" or "test".
  std::string split = "test";
  /// Free-form tag ("normal", "visual", "contextual" for synthetic data).
  std::string category = "normal";

  void validate() const {
    if (video_id.empty()) throw Error("annotation with empty video_id");
    if (n_frames == 0) throw Error("annotation for '" + video_id + "' has n_frames = 0");
    if (fps == 0) throw Error("annotation for '" + video_id + "' has fps = 0");
    for (std::size_t i = 0; i < anomalous_ranges.size(); ++i) {
      const auto [s, e] = anomalous_ranges[i];
      if (s > e || e >= n_frames)
        throw Error("annotation for '" + video_id + "': range [" + std::to_string(s) + ", " +
                    std::to_string(e) + "] outside 0.." + std::to_string(n_frames - 1));
      if (i > 0 && s <= anomalous_ranges[i - 1].second)
        throw Error("annotation for '" + video_id + "': ranges must be sorted and disjoint");
    }
  }
};

/// label[i] = 1 iff frame i lies inside an anomalous range.
inline std::vector<int> frame_labels(const TemporalAnnotation& a) {
  a.validate();
  std::vector<int> labels(a.n_frames, 0);
  for (const auto& [s, e] : a.anomalous_ranges)
    for (std::size_t i = s; i <= e; ++i) labels[i] = 1;
  return labels;
}

inline nlohmann::json annotation_to_json(const TemporalAnnotation& a) {
  nlohmann::json ranges = nlohmann::json::array();
  for (const auto& [s, e] : a.anomalous_ranges) ranges.push_back({s, e});
  return {{"video_id", a.video_id}, {"split", a.split},       {"category", a.category},
          {"n_frames", a.n_frames}, {"fps", a.fps},           {"anomalous_ranges", ranges}};
}

inline TemporalAnnotation annotation_from_json(const nlohmann::json& j) {
  TemporalAnnotation a;
  a.video_id = j.at("video_id").get<std::string>();
  a.n_frames = j.at("n_frames").get<std::size_t>();
  a.fps = j.value("fps", std::size_t{25});
  a.split = j.value("split", std::string("test"));
  a.category = j.value("category", std::string(""));
  for (const auto& r : j.at("anomalous_ranges"))
    a.anomalous_ranges.emplace_back(r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>());
  a.validate();
  return a;
}

class AnnotationSet {
 public:
  std::vector<TemporalAnnotation> videos;

  static AnnotationSet load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open annotation file " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error("malformed annotation file " + path.string() + ": " + e.what());
    }
    AnnotationSet set;
    for (const auto& v : j.at("videos")) set.videos.push_back(annotation_from_json(v));
    return set;
  }

  void save(const fs::path& path) const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : videos) arr.push_back(annotation_to_json(v));
    std::ofstream out(path);
    out << nlohmann::json{{"videos", arr}}.dump(1) << "\n";
    if (!out) throw Error("cannot write annotation file " + path.string());
  }

  const TemporalAnnotation& find(const std::string& video_id) const {
    for (const auto& v : videos)
      if (v.video_id == video_id) return v;
    throw Error("no annotation for video '" + video_id + "'");
  }
};

inline nlohmann::json objects_to_json(const FrameObjects& objs) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : objs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& b : f) arr.push_back({b.id, b.x0, b.y0, b.x1, b.y1});
    frames.push_back(arr);
  }
  return {{"frames", frames}};
}

inline FrameObjects objects_from_json(const nlohmann::json& j) {
  FrameObjects objs;
  for (const auto& f : j.at("frames")) {
    std::vector<PixelBox> boxes;
    for (const auto& b : f)
      boxes.push_back({b.at(0).get<int>(), b.at(1).get<double>(), b.at(2).get<double>(),
                       b.at(3).get<double>(), b.at(4).get<double>()});
    objs.push_back(std::move(boxes));
  }
  return objs;
}

/// The first frame of the T-frame window centred at `center`
/// ([center - T/2, center + T/2 - 1]), shifted to lie inside the video.
inline std::size_t clip_window_start(std::size_t n_frames, std::size_t clip_length,
                                     std::size_t center) {
  const long start = static_cast<long>(center) - static_cast<long>(clip_length / 2);
  const long last = static_cast<long>(n_frames) - static_cast<long>(clip_length);
  return static_cast<std::size_t>(std::clamp(start, 0L, std::max(last, 0L)));
}

/// One video as a frame directory, decoded fully into memory on open.
class Video {
 public:
  static Video open(const fs::path& dir, bool with_flow = false) {
    if (!fs::is_directory(dir)) throw Error("video directory " + dir.string() + " does not exist");
    Video v;
    v.dir_ = dir;
    v.id_ = dir.filename().string();
    v.split_ = dir.parent_path().filename().string();
    const std::size_t n = count_frames(dir);
    for (std::size_t i = 0; i < n; ++i) {
      cv::Mat img = read_rgb(dir / frame_name(i));
      if (i > 0 && img.size() != v.frames_[0].size())
        throw Error("video " + v.id_ + ": frame " + std::to_string(i) + " has a different size");
      v.frames_.push_back(std::move(img));
    }
    if (with_flow) {
      for (std::size_t t = 0; t + 1 < n; ++t) {
        QuantizedFlowPair q = read_flow_sidecar(dir, t);
        if (q.u.dim(0) != v.height() || q.u.dim(1) != v.width())
          throw Error("video " + v.id_ + ": flow sidecar " + std::to_string(t) +
                      " does not match the frame size");
        v.flow_.push_back(std::move(q));
      }
    }
    const fs::path objects = dir / "objects.json";
    if (fs::exists(objects)) {
      std::ifstream in(objects);
      nlohmann::json j;
      in >> j;
      v.objects_ = objects_from_json(j);
    }
    return v;
  }

  /// In-memory video (tests, generators).
  static Video from_frames(std::string id, std::vector<cv::Mat> frames) {
    Video v;
    v.id_ = std::move(id);
    v.frames_ = std::move(frames);
    return v;
  }

  const std::string& id() const { return id_; }
  const std::string& split() const { return split_; }
  const fs::path& directory() const { return dir_; }
  std::size_t size() const { return frames_.size(); }
  std::size_t height() const { return frames_.empty() ? 0 : frames_[0].rows; }
  std::size_t width() const { return frames_.empty() ? 0 : frames_[0].cols; }
  const cv::Mat& frame(std::size_t i) const { return frames_.at(i); }
  bool has_flow() const { return !flow_.empty() || frames_.size() < 2; }
  const QuantizedFlowPair& flow(std::size_t t) const { return flow_.at(t); }
  const FrameObjects* objects() const { return objects_ ? &*objects_ : nullptr; }
  void set_flow(std::vector<QuantizedFlowPair> flow) { flow_ = std::move(flow); }
  void set_objects(FrameObjects objs) { objects_ = std::move(objs); }

 private:
  fs::path dir_;
  std::string id_;
  std::string split_;
  std::vector<cv::Mat> frames_;
  std::vector<QuantizedFlowPair> flow_;
  std::optional<FrameObjects> objects_;
};

/// A T x H x W x C clip in [-1, 1] plus its provenance.
struct Clip {
  Tensor<float> data;
  std::string video_id;
  std::size_t center_frame = 0;
  std::size_t first_frame = 0;
};

/// Loads the T-frame window centred at `center` (clamped into the video).
/// Pixels map as v / 127.5 - 1; with `flow` two channels (u, v) are appended
/// where frame t carries flow(t -> t+1) and the clip's last frame reuses the
/// previous pair.
inline Clip load_clip(const Video& video, std::size_t center, const Shape& input_shape,
                      bool flow = false) {
  const std::size_t t_len = input_shape.at(0), h = input_shape.at(1), w = input_shape.at(2),
                    c = input_shape.at(3);
  if (video.size() < t_len)
    throw Error("video '" + video.id() + "' has " + std::to_string(video.size()) +
                " frames but clips need at least T=" + std::to_string(t_len));
  if (video.height() != h || video.width() != w)
    throw ShapeError("video '" + video.id() + "' frames are " + std::to_string(video.height()) +
                     "x" + std::to_string(video.width()) + ", model expects " + std::to_string(h) +
                     "x" + std::to_string(w));
  const std::size_t want_c = flow ? 5 : 3;
  if (c != want_c)
    throw ShapeError("clip channel count " + std::to_string(c) + " does not match " +
                     (flow ? "RGB+flow (5)" : "RGB (3)"));
  if (flow && t_len < 2) throw Error("RGB+flow clips need T >= 2");
  if (flow && !video.has_flow())
    throw Error("video '" + video.id() + "' has no flow sidecars (run `vadkit flow` first)");
  Clip clip;
  clip.video_id = video.id();
  clip.center_frame = center;
  clip.first_frame = clip_window_start(video.size(), t_len, center);
  clip.data = Tensor<float>(input_shape);
  float* out = clip.data.data();
  for (std::size_t t = 0; t < t_len; ++t) {
    const cv::Mat& img = video.frame(clip.first_frame + t);
    const QuantizedFlowPair* q =
        flow ? &video.flow(clip.first_frame + std::min(t, t_len - 2)) : nullptr;
    for (std::size_t y = 0; y < h; ++y) {
      const std::uint8_t* row = img.ptr<std::uint8_t>(static_cast<int>(y));
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t k = 0; k < 3; ++k) *out++ = static_cast<float>(row[3 * x + k]) / 127.5f - 1.0f;
        if (q) {
          *out++ = static_cast<float>(decode_flow_value(q->u[y * w + x]));
          *out++ = static_cast<float>(decode_flow_value(q->v[y * w + x]));
        }
      }
    }
  }
  return clip;
}

inline Sample<float> to_sample(Clip clip, const Video& video) {
  Sample<float> s;
  s.context = {video.id(), clip.first_frame, video.objects()};
  s.clip = std::move(clip.data);
  return s;
}

inline std::vector<fs::path> list_videos(const fs::path& split_dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(split_dir)) return out;
  for (const auto& e : fs::directory_iterator(split_dir))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// Endless stream of training clips from root/train. Each epoch visits every
/// video once in a shuffled order, taking one clip with a uniformly random
/// valid centre. Fully determined by the rng seed.
class TrainingClipStream {
 public:
  TrainingClipStream(const fs::path& root, const ModelConfig& cfg, std::uint64_t seed)
      : shape_(cfg.backbone.input_shape), flow_(cfg.flow), rng_(seed) {
    for (const auto& dir : list_videos(root / "train")) {
      Video v = Video::open(dir, flow_);
      if (v.size() < shape_[0])
        throw Error("training video '" + v.id() + "' has " + std::to_string(v.size()) +
                    " frames, fewer than T=" + std::to_string(shape_[0]));
      videos_.push_back(std::make_shared<Video>(std::move(v)));
    }
    if (videos_.empty()) throw Error("training split " + (root / "train").string() + " is empty");
  }

  Sample<float> next() {
    if (cursor_ == order_.size()) {
      order_.resize(videos_.size());
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
      ++epoch_;
    }
    const Video& v = *videos_[order_[cursor_++]];
    std::uniform_int_distribution<std::size_t> centre(shape_[0] / 2, v.size() - shape_[0] + shape_[0] / 2);
    return to_sample(load_clip(v, centre(rng_), shape_, flow_), v);
  }

  /// Clips at stride T through every training video (for SVDD centre init).
  std::vector<Sample<float>> strided_pass() const {
    std::vector<Sample<float>> out;
    const std::size_t t_len = shape_[0];
    for (const auto& v : videos_)
      for (std::size_t start = 0; start + t_len <= v->size(); start += t_len)
        out.push_back(to_sample(load_clip(*v, start + t_len / 2, shape_, flow_), *v));
    return out;
  }

  std::size_t video_count() const { return videos_.size(); }
  std::size_t epoch() const { return epoch_; }
  const std::vector<std::shared_ptr<Video>>& videos() const { return videos_; }

  std::string rng_state() const {
    std::ostringstream os;
    os << rng_ << ' ' << cursor_ << ' ' << epoch_ << ' ' << order_.size();
    for (auto i : order_) os << ' ' << i;
    return os.str();
  }
  void restore_rng_state(const std::string& s) {
    std::istringstream is(s);
    std::size_t n = 0;
    is >> rng_ >> cursor_ >> epoch_ >> n;
    order_.resize(n);
    for (auto& i : order_) is >> i;
    if (!is) throw Error("corrupt clip-stream state in checkpoint");
  }

 private:
  Shape shape_;
  bool flow_;
  std::mt19937_64 rng_;
  std::vector<std::shared_ptr<Video>> videos_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace vadkit
