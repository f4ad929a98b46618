#pragma once

// Optical-flow preprocessing: two-frame flow estimation behind a backend
// interface, the [-20, 20] -> [0, 255] quantisation codec, sidecar storage
// next to the frames, and load-time normalisation to [-1, 1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "vadkit/image_io.hpp"
#include "vadkit/tensor.hpp"

namespace vadkit {

/// Horizontal (u) and vertical (v) displacement in pixels/frame, each H x W.
struct FlowField {
  Tensor<float> u;
  Tensor<float> v;
};

struct QuantizedFlowPair {
  Tensor<std::uint8_t> u;
  Tensor<std::uint8_t> v;
};

inline constexpr double kFlowBound = 20.0;

/// round((clamp(value, -20, 20) + 20) / 40 * 255), rounding half away from zero.
inline std::uint8_t encode_flow_value(double value) {
  const double c = std::clamp(value, -kFlowBound, kFlowBound);
  return static_cast<std::uint8_t>(std::round((c + kFlowBound) / (2 * kFlowBound) * 255.0));
}

/// q / 255 * 2 - 1
inline double decode_flow_value(std::uint8_t q) { return static_cast<double>(q) / 255.0 * 2.0 - 1.0; }

/// Maps a code back to flow units: q / 255 * 40 - 20.
inline double dequantize_to_flow(std::uint8_t q) {
  return static_cast<double>(q) / 255.0 * (2 * kFlowBound) - kFlowBound;
}

inline QuantizedFlowPair encode_flow(const FlowField& f) {
  expect_shape(f.v, f.u.shape(), "flow v component");
  QuantizedFlowPair q{Tensor<std::uint8_t>(f.u.shape()), Tensor<std::uint8_t>(f.v.shape())};
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    q.u[i] = encode_flow_value(f.u[i]);
    q.v[i] = encode_flow_value(f.v[i]);
  }
  return q;
}

/// Normalised flow in [-1, 1], channels (u, v), shape H x W x 2.
inline Tensor<float> decode_flow(const QuantizedFlowPair& q) {
  expect_shape(q.v, q.u.shape(), "quantized flow v component");
  const std::size_t h = q.u.dim(0), w = q.u.dim(1);
  Tensor<float> out({h, w, 2});
  for (std::size_t i = 0; i < h * w; ++i) {
    out[2 * i] = static_cast<float>(decode_flow_value(q.u[i]));
    out[2 * i + 1] = static_cast<float>(decode_flow_value(q.v[i]));
  }
  return out;
}

/// Decodes raw integer codes, rejecting anything outside [0, 255].
inline double decode_flow_code(int code) {
  if (code < 0 || code > 255)
    throw Error("flow code " + std::to_string(code) + " outside [0, 255]");
  return decode_flow_value(static_cast<std::uint8_t>(code));
}

inline cv::Mat to_gray_float(const cv::Mat& rgb) {
  cv::Mat gray, f;
  if (rgb.channels() == 3)
    cv::cvtColor(rgb, gray, cv::COLOR_RGB2GRAY);
  else
    gray = rgb;
  gray.convertTo(f, CV_32F, 1.0 / 255.0);
  return f;
}

/// Identifies the frame pair (t, t+1) of a video for backends that look up
/// precomputed flow instead of estimating it.
struct FlowRequest {
  std::string split;
  std::string video_id;
  std::size_t index = 0;
};

class FlowBackend {
 public:
  virtual ~FlowBackend() = default;
  virtual std::string name() const = 0;
  virtual FlowField estimate(const cv::Mat& frame_a, const cv::Mat& frame_b,
                             const FlowRequest& request) const = 0;
};

/// Coarse-to-fine Horn-Schunck: at each pyramid level the second frame is
/// warped by the current flow and a smoothness-regularised increment is
/// solved by Jacobi iterations. Deterministic for a fixed iteration count.
class ReferenceFlowBackend final : public FlowBackend {
 public:
  struct Options {
    /// Smoothness weight (intensities in [0, 1]).
    float alpha = 0.05f;
    int iterations = 60;
    int warps = 3;
    int max_levels = 3;
    int min_level_size = 16;
  };

  ReferenceFlowBackend() = default;
  explicit ReferenceFlowBackend(Options o) : opt_(o) {}

  std::string name() const override { return "reference"; }

  FlowField estimate(const cv::Mat& frame_a, const cv::Mat& frame_b,
                     const FlowRequest& = {}) const override {
    if (frame_a.size() != frame_b.size() || frame_a.channels() != frame_b.channels())
      throw ShapeError("estimate_flow: frames differ in shape (" + std::to_string(frame_a.rows) +
                       "x" + std::to_string(frame_a.cols) + " vs " + std::to_string(frame_b.rows) +
                       "x" + std::to_string(frame_b.cols) + ")");
    std::vector<cv::Mat> pa{to_gray_float(frame_a)}, pb{to_gray_float(frame_b)};
    while (static_cast<int>(pa.size()) < opt_.max_levels &&
           std::min(pa.back().rows, pa.back().cols) / 2 >= opt_.min_level_size) {
      cv::Mat a2, b2;
      cv::resize(pa.back(), a2, cv::Size(pa.back().cols / 2, pa.back().rows / 2), 0, 0,
                 cv::INTER_AREA);
      cv::resize(pb.back(), b2, cv::Size(pb.back().cols / 2, pb.back().rows / 2), 0, 0,
                 cv::INTER_AREA);
      pa.push_back(a2);
      pb.push_back(b2);
    }
    cv::Mat u = cv::Mat::zeros(pa.back().size(), CV_32F);
    cv::Mat v = cv::Mat::zeros(pa.back().size(), CV_32F);
    for (std::size_t lvl = pa.size(); lvl-- > 0;) {
      if (u.size() != pa[lvl].size()) {
        cv::Mat u2, v2;
        cv::resize(u, u2, pa[lvl].size(), 0, 0, cv::INTER_LINEAR);
        cv::resize(v, v2, pa[lvl].size(), 0, 0, cv::INTER_LINEAR);
        u = u2 * 2.0f;
        v = v2 * 2.0f;
      }
      for (int w = 0; w < opt_.warps; ++w) refine(pa[lvl], pb[lvl], u, v);
    }
    FlowField out{Tensor<float>({static_cast<std::size_t>(u.rows), static_cast<std::size_t>(u.cols)}),
                  Tensor<float>({static_cast<std::size_t>(u.rows), static_cast<std::size_t>(u.cols)})};
    for (int y = 0; y < u.rows; ++y)
      for (int x = 0; x < u.cols; ++x) {
        out.u[y * u.cols + x] = u.at<float>(y, x);
        out.v[y * u.cols + x] = v.at<float>(y, x);
      }
    return out;
  }

 private:
  static float sample(const cv::Mat& img, float x, float y) {
    x = std::clamp(x, 0.0f, static_cast<float>(img.cols - 1));
    y = std::clamp(y, 0.0f, static_cast<float>(img.rows - 1));
    const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, img.cols - 1), y1 = std::min(y0 + 1, img.rows - 1);
    const float a = x - static_cast<float>(x0), b = y - static_cast<float>(y0);
    return (1 - a) * (1 - b) * img.at<float>(y0, x0) + a * (1 - b) * img.at<float>(y0, x1) +
           (1 - a) * b * img.at<float>(y1, x0) + a * b * img.at<float>(y1, x1);
  }

  static float neighbour_mean(const cv::Mat& f, int y, int x) {
    const int ym = std::max(y - 1, 0), yp = std::min(y + 1, f.rows - 1);
    const int xm = std::max(x - 1, 0), xp = std::min(x + 1, f.cols - 1);
    return 0.25f * (f.at<float>(ym, x) + f.at<float>(yp, x) + f.at<float>(y, xm) + f.at<float>(y, xp));
  }

  void refine(const cv::Mat& a, const cv::Mat& b, cv::Mat& u, cv::Mat& v) const {
    const int rows = a.rows, cols = a.cols;
    cv::Mat warped(a.size(), CV_32F);
    for (int y = 0; y < rows; ++y)
      for (int x = 0; x < cols; ++x)
        warped.at<float>(y, x) = sample(b, static_cast<float>(x) + u.at<float>(y, x),
                                        static_cast<float>(y) + v.at<float>(y, x));
    cv::Mat ix(a.size(), CV_32F), iy(a.size(), CV_32F), it(a.size(), CV_32F);
    for (int y = 0; y < rows; ++y)
      for (int x = 0; x < cols; ++x) {
        const int xm = std::max(x - 1, 0), xp = std::min(x + 1, cols - 1);
        const int ym = std::max(y - 1, 0), yp = std::min(y + 1, rows - 1);
        const float sx = static_cast<float>(std::max(xp - xm, 1));
        const float sy = static_cast<float>(std::max(yp - ym, 1));
        ix.at<float>(y, x) = 0.5f * ((a.at<float>(y, xp) - a.at<float>(y, xm)) +
                                     (warped.at<float>(y, xp) - warped.at<float>(y, xm))) / sx;
        iy.at<float>(y, x) = 0.5f * ((a.at<float>(yp, x) - a.at<float>(ym, x)) +
                                     (warped.at<float>(yp, x) - warped.at<float>(ym, x))) / sy;
        it.at<float>(y, x) = warped.at<float>(y, x) - a.at<float>(y, x);
      }
    const cv::Mat u0 = u.clone(), v0 = v.clone();
    const float a2 = opt_.alpha * opt_.alpha;
    cv::Mat un(a.size(), CV_32F), vn(a.size(), CV_32F);
    for (int iter = 0; iter < opt_.iterations; ++iter) {
      for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) {
          const float ub = neighbour_mean(u, y, x), vb = neighbour_mean(v, y, x);
          const float gx = ix.at<float>(y, x), gy = iy.at<float>(y, x);
          const float r = gx * (ub - u0.at<float>(y, x)) + gy * (vb - v0.at<float>(y, x)) +
                          it.at<float>(y, x);
          const float k = r / (a2 + gx * gx + gy * gy);
          un.at<float>(y, x) = ub - gx * k;
          vn.at<float>(y, x) = vb - gy * k;
        }
      std::swap(u, un);
      std::swap(v, vn);
    }
  }

  Options opt_;
};

/// Reads precomputed flow in Middlebury .flo format from
/// <root>/<split>/<video_id>/flow_%06d.flo, where index t holds flow(t -> t+1).
class ExternalFlowBackend final : public FlowBackend {
 public:
  explicit ExternalFlowBackend(fs::path root) : root_(std::move(root)) {}

  std::string name() const override { return "external"; }

  FlowField estimate(const cv::Mat& frame_a, const cv::Mat&,
                     const FlowRequest& req) const override {
    const fs::path p = root_ / req.split / req.video_id / indexed_name("flow_", req.index, ".flo");
    FlowField f = read_flo(p);
    if (f.u.dim(0) != static_cast<std::size_t>(frame_a.rows) ||
        f.u.dim(1) != static_cast<std::size_t>(frame_a.cols))
      throw ShapeError("external flow " + p.string() + " does not match the frame size");
    return f;
  }

  static FlowField read_flo(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open flow file " + p.string());
    float magic = 0;
    std::int32_t w = 0, h = 0;
    in.read(reinterpret_cast<char*>(&magic), 4);
    in.read(reinterpret_cast<char*>(&w), 4);
    in.read(reinterpret_cast<char*>(&h), 4);
    if (!in || magic != 202021.25f || w <= 0 || h <= 0)
      throw Error("not a Middlebury .flo file: " + p.string());
    FlowField f{Tensor<float>({static_cast<std::size_t>(h), static_cast<std::size_t>(w)}),
                Tensor<float>({static_cast<std::size_t>(h), static_cast<std::size_t>(w)})};
    std::vector<float> buf(static_cast<std::size_t>(w) * h * 2);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!in) throw Error("truncated flow file " + p.string());
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      f.u[i] = buf[2 * i];
      f.v[i] = buf[2 * i + 1];
    }
    return f;
  }

  static void write_flo(const fs::path& p, const FlowField& f) {
    std::ofstream out(p, std::ios::binary);
    const float magic = 202021.25f;
    const auto w = static_cast<std::int32_t>(f.u.dim(1)), h = static_cast<std::int32_t>(f.u.dim(0));
    out.write(reinterpret_cast<const char*>(&magic), 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(&h), 4);
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      out.write(reinterpret_cast<const char*>(&f.u[i]), 4);
      out.write(reinterpret_cast<const char*>(&f.v[i]), 4);
    }
    if (!out) throw Error("cannot write flow file " + p.string());
  }

 private:
  fs::path root_;
};

inline FlowField estimate_flow(const cv::Mat& frame_a, const cv::Mat& frame_b,
                               const FlowBackend& backend, const FlowRequest& request = {}) {
  FlowField f = backend.estimate(frame_a, frame_b, request);
  if (!f.u.all_finite() || !f.v.all_finite())
    throw Error("flow backend '" + backend.name() + "' produced non-finite values");
  return f;
}

enum class FlowStorage { Lossless, Jpeg };

inline FlowStorage parse_flow_storage(const std::string& s) {
  if (s == "lossless") return FlowStorage::Lossless;
  if (s == "jpeg") return FlowStorage::Jpeg;
  throw Error("unknown flow storage '" + s + "' (expected lossless or jpeg)");
}

inline const char* flow_extension(FlowStorage s) { return s == FlowStorage::Jpeg ? ".jpg" : ".png"; }

inline cv::Mat to_mat(const Tensor<std::uint8_t>& t) {
  cv::Mat m(static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)), CV_8U);
  std::copy(t.data(), t.data() + t.size(), m.ptr<std::uint8_t>());
  return m;
}

inline Tensor<std::uint8_t> from_mat(const cv::Mat& m) {
  if (m.type() != CV_8U) throw Error("expected an 8-bit single-channel image");
  Tensor<std::uint8_t> t({static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols)});
  for (int y = 0; y < m.rows; ++y)
    std::copy(m.ptr<std::uint8_t>(y), m.ptr<std::uint8_t>(y) + m.cols, t.data() + y * m.cols);
  return t;
}

/// Sidecar path of the u or v image for pair (t, t+1). Looks for an existing
/// .png first, then .jpg.
inline fs::path find_flow_sidecar(const fs::path& video_dir, char component, std::size_t t) {
  const std::string prefix = std::string("flow_") + component + "_";
  for (const char* ext : {".png", ".jpg"}) {
    fs::path p = video_dir / indexed_name(prefix.c_str(), t, ext);
    if (fs::exists(p)) return p;
  }
  throw Error("missing flow sidecar " + (video_dir / indexed_name(prefix.c_str(), t, ".png")).string() +
              " (run `vadkit flow` first)");
}

inline QuantizedFlowPair read_flow_sidecar(const fs::path& video_dir, std::size_t t) {
  return {from_mat(read_gray(find_flow_sidecar(video_dir, 'u', t))),
          from_mat(read_gray(find_flow_sidecar(video_dir, 'v', t)))};
}

/// Frame count of a video directory; frames must be frame_000000.png ...
/// without gaps.
inline std::size_t count_frames(const fs::path& video_dir) {
  std::size_t n = 0, seen = 0;
  for (const auto& e : fs::directory_iterator(video_dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("frame_", 0) == 0 && e.path().extension() == ".png") ++seen;
  }
  while (fs::exists(video_dir / frame_name(n))) ++n;
  if (n != seen)
    throw Error("video " + video_dir.string() + " has missing frames: " + std::to_string(seen) +
                " frame files but only frames 0.." + std::to_string(n) + " are contiguous");
  return n;
}

struct FlowPrecomputeStats {
  std::size_t videos = 0;
  std::size_t pairs = 0;
};

/// Writes flow_u_%06d / flow_v_%06d for every consecutive frame pair of every
/// video under root/train and root/test.
inline FlowPrecomputeStats precompute_flow(const fs::path& root, const FlowBackend& backend,
                                           FlowStorage storage) {
  FlowPrecomputeStats stats;
  for (const char* split : {"train", "test"}) {
    const fs::path dir = root / split;
    if (!fs::exists(dir)) continue;
    std::vector<fs::path> videos;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory()) videos.push_back(e.path());
    std::sort(videos.begin(), videos.end());
    for (const auto& vdir : videos) {
      const std::size_t n = count_frames(vdir);
      if (n == 0) throw Error("video " + vdir.string() + " has no frames");
      cv::Mat prev = read_rgb(vdir / frame_name(0));
      for (std::size_t t = 0; t + 1 < n; ++t) {
        cv::Mat next = read_rgb(vdir / frame_name(t + 1));
        const FlowField f =
            estimate_flow(prev, next, backend, {split, vdir.filename().string(), t});
        const QuantizedFlowPair q = encode_flow(f);
        write_image(vdir / indexed_name("flow_u_", t, flow_extension(storage)), to_mat(q.u));
        write_image(vdir / indexed_name("flow_v_", t, flow_extension(storage)), to_mat(q.v));
        prev = std::move(next);
        ++stats.pairs;
      }
      ++stats.videos;
    }
  }
  return stats;
}

}  // namespace vadkit
