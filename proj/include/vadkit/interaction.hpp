#pragma once

// Object-interaction branch.
//
//   proposals (M boxes per feature frame)
//     -> RoI-align to 3x3xd by bilinear sampling, max-pool to 1x1xd   (P: K x d)
//     -> S = (P Wphi)(P Wphi')^T, G = row-softmax(S)                  (K x K)
//     -> H1 = ReLU(G P W0), H2 = G H1 W1                              (K x d)
//     -> fused with the encoder output, either as a Z-vector for the
//        one-class head or as an extra T'xH'xW'xd block for the decoder.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "vadkit/nn.hpp"
#include "vadkit/tensor.hpp"

namespace vadkit {

/// Axis-aligned box on one feature frame, in feature-map cell units.
struct FeatureBox {
  std::size_t frame = 0;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  friend bool operator==(const FeatureBox&, const FeatureBox&) = default;
};

/// Pixel-space box of a ground-truth object on one source frame
/// (half-open: [x0, x1) x [y0, y1)).
struct PixelBox {
  int id = 0;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

/// Ground-truth object boxes of every source frame of a video.
using FrameObjects = std::vector<std::vector<PixelBox>>;

/// How bottleneck cells map back onto source frames and pixels.
struct FeatureGrid {
  std::size_t frames = 0;  // T'
  std::size_t height = 0;  // H'
  std::size_t width = 0;   // W'
  std::size_t temporal_stride = 1;
  double pixel_stride_y = 1;
  double pixel_stride_x = 1;

  static FeatureGrid from_shapes(const Shape& input, const Shape& bottleneck) {
    FeatureGrid g;
    g.frames = bottleneck[0];
    g.height = bottleneck[1];
    g.width = bottleneck[2];
    g.temporal_stride = input[0] / bottleneck[0];
    g.pixel_stride_y = static_cast<double>(input[1]) / static_cast<double>(bottleneck[1]);
    g.pixel_stride_x = static_cast<double>(input[2]) / static_cast<double>(bottleneck[2]);
    return g;
  }
};

struct ProposalSet {
  std::size_t feature_frames = 0;
  std::size_t per_frame = 0;  // M
  std::vector<FeatureBox> boxes;

  std::size_t size() const { return boxes.size(); }

  void validate(std::size_t height, std::size_t width) const {
    if (boxes.size() != feature_frames * per_frame)
      throw Error("proposal set holds " + std::to_string(boxes.size()) + " boxes, expected " +
                  std::to_string(feature_frames) + " x " + std::to_string(per_frame));
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const auto& b = boxes[i];
      if (b.frame != i / per_frame)
        throw Error("proposal " + std::to_string(i) + " is not grouped by feature frame");
      const bool ok = b.x0 >= 0 && b.x0 < b.x1 && b.x1 <= static_cast<double>(width) &&
                      b.y0 >= 0 && b.y0 < b.y1 && b.y1 <= static_cast<double>(height);
      if (!ok) {
        std::ostringstream os;
        os << "proposal " << i << " box (" << b.x0 << "," << b.y0 << ")-(" << b.x1 << "," << b.y1
           << ") lies outside the " << height << "x" << width << " feature frame";
        throw Error(os.str());
      }
    }
  }
};

/// Where a clip came from; proposal providers that need ground truth or
/// precomputed boxes look them up through this.
struct ProposalContext {
  std::string video_id;
  /// Index of the clip's first frame in the source video.
  std::size_t first_frame = 0;
  /// Ground-truth objects, present only for synthetic videos.
  const FrameObjects* objects = nullptr;
};

class ProposalProvider {
 public:
  virtual ~ProposalProvider() = default;
  virtual std::string name() const = 0;
  virtual ProposalSet propose(const ProposalContext& ctx, const FeatureGrid& grid,
                              std::size_t m) const = 0;
};

namespace detail {

inline FeatureBox full_frame_box(std::size_t frame, const FeatureGrid& g) {
  return {frame, 0.0, 0.0, static_cast<double>(g.width), static_cast<double>(g.height)};
}

inline void pad_with_full_frames(std::vector<FeatureBox>& boxes, std::size_t frame,
                                 const FeatureGrid& g, std::size_t m) {
  while (boxes.size() < m) boxes.push_back(full_frame_box(frame, g));
}

// Keeps a projected box inside the frame with a strictly positive extent.
inline FeatureBox clamp_box(FeatureBox b, const FeatureGrid& g) {
  constexpr double kMinExtent = 1e-3;
  const double w = static_cast<double>(g.width), h = static_cast<double>(g.height);
  b.x0 = std::clamp(b.x0, 0.0, w - kMinExtent);
  b.y0 = std::clamp(b.y0, 0.0, h - kMinExtent);
  b.x1 = std::clamp(b.x1, b.x0 + kMinExtent, w);
  b.y1 = std::clamp(b.y1, b.y0 + kMinExtent, h);
  return b;
}

}  // namespace detail

/// Deterministic multi-scale tiling: the full frame, then the 2x2 tiles, 3x3
/// tiles, ... as long as whole levels fit into M; the remainder is padded
/// with full-frame boxes.
class GridProvider final : public ProposalProvider {
 public:
  std::string name() const override { return "grid"; }

  ProposalSet propose(const ProposalContext&, const FeatureGrid& g, std::size_t m) const override {
    if (m == 0) throw Error("proposal count M must be >= 1");
    ProposalSet set{g.frames, m, {}};
    for (std::size_t t = 0; t < g.frames; ++t) {
      std::vector<FeatureBox> boxes;
      for (std::size_t level = 1; boxes.size() + level * level <= m; ++level) {
        const double tw = static_cast<double>(g.width) / static_cast<double>(level);
        const double th = static_cast<double>(g.height) / static_cast<double>(level);
        for (std::size_t i = 0; i < level; ++i)
          for (std::size_t j = 0; j < level; ++j)
            boxes.push_back({t, j * tw, i * th, (j + 1) * tw, (i + 1) * th});
      }
      detail::pad_with_full_frames(boxes, t, g, m);
      set.boxes.insert(set.boxes.end(), boxes.begin(), boxes.end());
    }
    return set;
  }
};

/// Ground-truth sprite boxes from the synthetic generator. Each object's
/// boxes are unioned over the source frames a feature frame covers and
/// divided by the cumulative spatial stride; objects are ordered by id, at
/// most M are kept, and the rest is padded with full-frame boxes.
class OracleProvider final : public ProposalProvider {
 public:
  std::string name() const override { return "oracle"; }

  ProposalSet propose(const ProposalContext& ctx, const FeatureGrid& g,
                      std::size_t m) const override {
    if (m == 0) throw Error("proposal count M must be >= 1");
    if (!ctx.objects)
      throw Error("oracle proposals need synthetic ground truth, but video '" + ctx.video_id +
                  "' has none");
    ProposalSet set{g.frames, m, {}};
    for (std::size_t t = 0; t < g.frames; ++t) {
      std::map<int, PixelBox> uni;
      for (std::size_t k = 0; k < g.temporal_stride; ++k) {
        const std::size_t f = ctx.first_frame + t * g.temporal_stride + k;
        if (f >= ctx.objects->size())
          throw Error("oracle proposals: frame " + std::to_string(f) + " of video '" +
                      ctx.video_id + "' has no ground truth");
        for (const auto& b : (*ctx.objects)[f]) {
          auto [it, inserted] = uni.try_emplace(b.id, b);
          if (!inserted) {
            it->second.x0 = std::min(it->second.x0, b.x0);
            it->second.y0 = std::min(it->second.y0, b.y0);
            it->second.x1 = std::max(it->second.x1, b.x1);
            it->second.y1 = std::max(it->second.y1, b.y1);
          }
        }
      }
      std::vector<FeatureBox> boxes;
      for (const auto& [id, b] : uni) {
        if (boxes.size() == m) break;
        boxes.push_back(detail::clamp_box({t, b.x0 / g.pixel_stride_x, b.y0 / g.pixel_stride_y,
                                           b.x1 / g.pixel_stride_x, b.y1 / g.pixel_stride_y},
                                          g));
      }
      detail::pad_with_full_frames(boxes, t, g, m);
      set.boxes.insert(set.boxes.end(), boxes.begin(), boxes.end());
    }
    return set;
  }
};

/// Boxes read from a proposal file. One record per line:
///
///     <video_id> <frame> <x0> <y0> <x1> <y1>
///
/// where <frame> is the source-frame index at which a feature frame starts
/// and coordinates are normalised to [0, 1] of the frame. Lines starting with
/// '#' are comments. Feature frames with fewer than M records are padded with
/// full-frame boxes; more than M is an error.
class ExternalProvider final : public ProposalProvider {
 public:
  using Table = std::map<std::string, std::map<std::size_t, std::vector<std::array<double, 4>>>>;

  explicit ExternalProvider(Table table) : table_(std::move(table)) {}

  static ExternalProvider load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open proposal file " + path);
    Table table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream is(line);
      std::string vid;
      std::size_t frame;
      std::array<double, 4> b{};
      if (!(is >> vid >> frame >> b[0] >> b[1] >> b[2] >> b[3]))
        throw Error(path + ":" + std::to_string(lineno) + ": malformed proposal record");
      for (double v : b)
        if (v < 0.0 || v > 1.0)
          throw Error(path + ":" + std::to_string(lineno) + ": coordinates must lie in [0,1]");
      if (!(b[0] < b[2] && b[1] < b[3]))
        throw Error(path + ":" + std::to_string(lineno) + ": empty box");
      table[vid][frame].push_back(b);
    }
    return ExternalProvider(std::move(table));
  }

  std::string name() const override { return "external"; }

  ProposalSet propose(const ProposalContext& ctx, const FeatureGrid& g,
                      std::size_t m) const override {
    if (m == 0) throw Error("proposal count M must be >= 1");
    ProposalSet set{g.frames, m, {}};
    const auto vit = table_.find(ctx.video_id);
    for (std::size_t t = 0; t < g.frames; ++t) {
      std::vector<FeatureBox> boxes;
      const std::size_t frame = ctx.first_frame + t * g.temporal_stride;
      if (vit != table_.end()) {
        if (auto fit = vit->second.find(frame); fit != vit->second.end()) {
          if (fit->second.size() > m)
            throw Error("proposal file lists " + std::to_string(fit->second.size()) +
                        " boxes for video '" + ctx.video_id + "' frame " + std::to_string(frame) +
                        ", more than M=" + std::to_string(m));
          for (const auto& b : fit->second)
            boxes.push_back(detail::clamp_box({t, b[0] * g.width, b[1] * g.height, b[2] * g.width,
                                               b[3] * g.height},
                                              g));
        }
      }
      detail::pad_with_full_frames(boxes, t, g, m);
      set.boxes.insert(set.boxes.end(), boxes.begin(), boxes.end());
    }
    return set;
  }

 private:
  Table table_;
};

inline std::unique_ptr<ProposalProvider> make_provider(const std::string& name,
                                                       const std::string& external_path = {}) {
  if (name == "grid") return std::make_unique<GridProvider>();
  if (name == "oracle") return std::make_unique<OracleProvider>();
  if (name == "external") {
    if (external_path.empty()) throw Error("external proposal provider needs a proposal file");
    return std::make_unique<ExternalProvider>(ExternalProvider::load(external_path));
  }
  throw Error("unknown proposal provider '" + name + "' (expected grid, oracle or external)");
}

// ---------------------------------------------------------------------------
// RoI features

inline constexpr std::size_t kRoiGrid = 3;
inline constexpr std::size_t kRoiSamples = kRoiGrid * kRoiGrid;

/// One bilinear sample: four neighbouring cells (flat offsets into one
/// feature frame, in units of cells) and their weights.
struct BilinearTap {
  std::array<std::size_t, 4> cell{};
  std::array<double, 4> weight{};
};

/// Bilinear sample location for continuous feature coordinates (x, y).
/// Cell j spans [j, j+1) with its value at the centre j + 0.5; positions
/// beyond the outermost centres clamp to the border.
inline BilinearTap bilinear_tap(double x, double y, std::size_t height, std::size_t width) {
  const double u = std::clamp(x - 0.5, 0.0, static_cast<double>(width - 1));
  const double v = std::clamp(y - 0.5, 0.0, static_cast<double>(height - 1));
  const auto j0 = static_cast<std::size_t>(std::floor(u));
  const auto i0 = static_cast<std::size_t>(std::floor(v));
  const std::size_t j1 = std::min(j0 + 1, width - 1);
  const std::size_t i1 = std::min(i0 + 1, height - 1);
  const double a = u - static_cast<double>(j0);
  const double b = v - static_cast<double>(i0);
  BilinearTap t;
  t.cell = {i0 * width + j0, i0 * width + j1, i1 * width + j0, i1 * width + j1};
  t.weight = {(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b};
  return t;
}

/// Centres of the 3x3 regular sub-cells of a box.
inline std::array<std::array<double, 2>, kRoiSamples> roi_sample_points(const FeatureBox& b) {
  std::array<std::array<double, 2>, kRoiSamples> pts{};
  const double bw = (b.x1 - b.x0) / kRoiGrid, bh = (b.y1 - b.y0) / kRoiGrid;
  for (std::size_t i = 0; i < kRoiGrid; ++i)
    for (std::size_t j = 0; j < kRoiGrid; ++j)
      pts[i * kRoiGrid + j] = {b.x0 + (j + 0.5) * bw, b.y0 + (i + 0.5) * bh};
  return pts;
}

template <typename T>
struct RoiTrace {
  Shape h_shape;
  /// K x 9 sampling taps, offsets already include the feature frame.
  std::vector<BilinearTap> taps;
  /// K x d index of the winning sample per channel.
  std::vector<std::uint8_t> argmax;
};

/// RoI-align every proposal to 3x3xd, then max-pool to 1x1xd -> K x d.
template <typename T>
Tensor<T> roi_features(const Tensor<T>& h, const ProposalSet& props, RoiTrace<T>* trace = nullptr) {
  if (h.rank() != 4) throw ShapeError("roi_features: bottleneck must be T' x H' x W' x d");
  const std::size_t tp = h.dim(0), hh = h.dim(1), ww = h.dim(2), d = h.dim(3);
  if (props.feature_frames != tp)
    throw ShapeError("roi_features: proposals cover " + std::to_string(props.feature_frames) +
                     " feature frames, bottleneck has " + std::to_string(tp));
  props.validate(hh, ww);
  const std::size_t k_total = props.size();
  Tensor<T> out({k_total, d});
  std::vector<BilinearTap> taps(k_total * kRoiSamples);
  std::vector<std::uint8_t> argmax(k_total * d, 0);
  std::vector<T> sample(d);
  for (std::size_t k = 0; k < k_total; ++k) {
    const auto& box = props.boxes[k];
    const std::size_t frame_off = box.frame * hh * ww;
    const auto pts = roi_sample_points(box);
    T* row = out.data() + k * d;
    for (std::size_t s = 0; s < kRoiSamples; ++s) {
      BilinearTap tap = bilinear_tap(pts[s][0], pts[s][1], hh, ww);
      for (auto& c : tap.cell) c += frame_off;
      std::fill(sample.begin(), sample.end(), T(0));
      for (int q = 0; q < 4; ++q) {
        const T w = static_cast<T>(tap.weight[q]);
        const T* src = h.data() + tap.cell[q] * d;
        for (std::size_t c = 0; c < d; ++c) sample[c] += w * src[c];
      }
      for (std::size_t c = 0; c < d; ++c) {
        if (s == 0 || sample[c] > row[c]) {
          row[c] = sample[c];
          argmax[k * d + c] = static_cast<std::uint8_t>(s);
        }
      }
      taps[k * kRoiSamples + s] = tap;
    }
  }
  if (trace) {
    trace->h_shape = h.shape();
    trace->taps = std::move(taps);
    trace->argmax = std::move(argmax);
  }
  return out;
}

/// Gradient of roi_features with respect to the bottleneck.
template <typename T>
Tensor<T> roi_features_backward(const RoiTrace<T>& trace, const Tensor<T>& dfeats) {
  Tensor<T> dh(trace.h_shape);
  const std::size_t d = trace.h_shape[3];
  const std::size_t k_total = dfeats.dim(0);
  for (std::size_t k = 0; k < k_total; ++k)
    for (std::size_t c = 0; c < d; ++c) {
      const T g = dfeats[k * d + c];
      if (g == T(0)) continue;
      const auto& tap = trace.taps[k * kRoiSamples + trace.argmax[k * d + c]];
      for (int q = 0; q < 4; ++q) dh[tap.cell[q] * d + c] += static_cast<T>(tap.weight[q]) * g;
    }
  return dh;
}

// ---------------------------------------------------------------------------
// Similarity graph and GCN

template <typename T>
struct SimilarityTrace {
  Tensor<T> a;  // P Wphi
  Tensor<T> b;  // P Wphi'
};

/// In-place row softmax with row-max subtraction.
template <typename T>
void row_softmax_inplace(Tensor<T>& s) {
  const std::size_t n = s.dim(0), m = s.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    T* r = s.data() + i * m;
    const T mx = *std::max_element(r, r + m);
    T z = 0;
    for (std::size_t j = 0; j < m; ++j) {
      r[j] = std::exp(r[j] - mx);
      z += r[j];
    }
    for (std::size_t j = 0; j < m; ++j) r[j] /= z;
  }
}

/// S_ij = <phi(p_i), phi'(p_j)> with phi(p) = p Wphi.
template <typename T>
Tensor<T> similarity_scores(const Tensor<T>& p, const Tensor<T>& w_phi, const Tensor<T>& w_phi_prime,
                            SimilarityTrace<T>* trace = nullptr) {
  Tensor<T> a = matmul(p, w_phi);
  Tensor<T> b = matmul(p, w_phi_prime);
  Tensor<T> s = matmul_nt(a, b);
  if (trace) {
    trace->a = std::move(a);
    trace->b = std::move(b);
  }
  return s;
}

/// G = row-softmax(S): a K x K row-stochastic graph with positive entries.
template <typename T>
Tensor<T> similarity_graph(const Tensor<T>& p, const Tensor<T>& w_phi, const Tensor<T>& w_phi_prime,
                           SimilarityTrace<T>* trace = nullptr) {
  Tensor<T> g = similarity_scores(p, w_phi, w_phi_prime, trace);
  row_softmax_inplace(g);
  return g;
}

template <typename T>
void check_row_stochastic(const Tensor<T>& g, double tol = 1e-4) {
  if (g.rank() != 2 || g.dim(0) != g.dim(1))
    throw ShapeError("graph must be square, got " + shape_string(g.shape()));
  const std::size_t n = g.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(g[i * n + j]);
    if (std::abs(s - 1.0) > tol)
      throw Error("graph row " + std::to_string(i) + " sums to " + std::to_string(s) +
                  ", expected a row-stochastic matrix");
  }
}

template <typename T>
struct GcnTrace {
  Tensor<T> y0;  // G P
  Tensor<T> h1;  // ReLU(G P W0)
  Tensor<T> y1;  // G H1
};

/// Two-layer GCN: H1 = ReLU(G P W0), H2 = G H1 W1.
template <typename T>
Tensor<T> gcn_forward(const Tensor<T>& g, const Tensor<T>& p, const Tensor<T>& w0,
                      const Tensor<T>& w1, GcnTrace<T>* trace = nullptr) {
  check_row_stochastic(g);
  if (g.dim(1) != p.dim(0))
    throw ShapeError("gcn: graph " + shape_string(g.shape()) + " vs features " +
                     shape_string(p.shape()));
  Tensor<T> y0 = matmul(g, p);
  Tensor<T> h1 = matmul(y0, w0);
  relu_inplace(h1);
  Tensor<T> y1 = matmul(g, h1);
  Tensor<T> h2 = matmul(y1, w1);
  if (trace) {
    trace->y0 = std::move(y0);
    trace->h1 = std::move(h1);
    trace->y1 = std::move(y1);
  }
  return h2;
}

// ---------------------------------------------------------------------------
// Fusion

/// Mean over the rows of a K x d matrix.
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& m) {
  const std::size_t k = m.dim(0), d = m.dim(1);
  Tensor<T> out({d});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t c = 0; c < d; ++c) out[c] += m[i * d + c];
  out *= T(1) / static_cast<T>(k);
  return out;
}

/// [avgpool(h_enc), avgpool(h_gcn)] (length 2d) -> linear (2d x Z, no bias).
template <typename T>
Tensor<T> fuse_oc(const Tensor<T>& h_enc, const Tensor<T>& h_gcn, const Tensor<T>& w) {
  const Tensor<T> a = global_average_pool(h_enc);
  const Tensor<T> b = mean_rows(h_gcn);
  Tensor<T> cat({a.size() + b.size()});
  std::copy(a.data(), a.data() + a.size(), cat.data());
  std::copy(b.data(), b.data() + b.size(), cat.data() + a.size());
  return linear_forward(cat, w);
}

template <typename T>
struct FuseReconTrace {
  Tensor<T> f;   // avgpool(h_gcn), length d
  Tensor<T> f1;  // H' x d
  Tensor<T> f2;  // W' x d
};

/// Outer-product expansion of the pooled GCN output into a T'xH'xW'xd block,
/// concatenated after the encoder channels -> T'xH'xW'x2d.
///   f = avgpool(h_gcn); f1 = f W1 (H'xd); f2 = f W2 (W'xd)
///   block[t, i, j, c] = f1[i, c] * f2[j, c]   for every t < T'
template <typename T>
Tensor<T> fuse_recon(const Tensor<T>& h_enc, const Tensor<T>& h_gcn, const Tensor<T>& w1,
                     const Tensor<T>& w2, FuseReconTrace<T>* trace = nullptr) {
  if (h_enc.rank() != 4) throw ShapeError("fuse_recon: bottleneck must be T' x H' x W' x d");
  const std::size_t tp = h_enc.dim(0), hh = h_enc.dim(1), ww = h_enc.dim(2), d = h_enc.dim(3);
  if (hh != ww)
    throw ShapeError("fuse_recon: outer-product fusion needs a square feature frame, got " +
                     std::to_string(hh) + "x" + std::to_string(ww));
  if (h_gcn.rank() != 2 || h_gcn.dim(1) != d)
    throw ShapeError("fuse_recon: GCN output " + shape_string(h_gcn.shape()) +
                     " does not have d=" + std::to_string(d) + " columns");
  Tensor<T> f = mean_rows(h_gcn);
  Tensor<T> f1 = linear_forward(f, w1).reshaped({hh, d});
  Tensor<T> f2 = linear_forward(f, w2).reshaped({ww, d});
  Tensor<T> out({tp, hh, ww, 2 * d});
  for (std::size_t t = 0; t < tp; ++t)
    for (std::size_t i = 0; i < hh; ++i)
      for (std::size_t j = 0; j < ww; ++j) {
        const std::size_t pos = (t * hh + i) * ww + j;
        T* o = out.data() + pos * 2 * d;
        const T* src = h_enc.data() + pos * d;
        std::copy(src, src + d, o);
        for (std::size_t c = 0; c < d; ++c) o[d + c] = f1[i * d + c] * f2[j * d + c];
      }
  if (trace) {
    trace->f = std::move(f);
    trace->f1 = std::move(f1);
    trace->f2 = std::move(f2);
  }
  return out;
}

/// Parameters of the interaction branch inside a shared ParameterSet.
struct InteractionParams {
  std::size_t phi = 0, phi_prime = 0, w0 = 0, w1 = 0;
  // one-class fusion
  std::size_t fuse = 0;
  // reconstruction fusion
  std::size_t outer1 = 0, outer2 = 0;
};

enum class FusionKind { OneClass, Reconstruction };

/// Wires proposals, RoI pooling, similarity graph, GCN and fusion together
/// with a complete backward pass.
template <typename T>
class InteractionBranch {
 public:
  struct Trace {
    RoiTrace<T> roi;
    Tensor<T> p;
    SimilarityTrace<T> sim;
    Tensor<T> g;
    GcnTrace<T> gcn;
    Tensor<T> h_gcn;
    FuseReconTrace<T> fuse;
  };

  InteractionBranch() = default;
  InteractionBranch(FusionKind kind, const Shape& bottleneck, std::size_t z_dim,
                    ParameterSet<T>& params)
      : kind_(kind), bottleneck_(bottleneck) {
    const std::size_t d = bottleneck[3];
    p_.phi = params.add("gcn.phi", Tensor<T>({d, d}));
    p_.phi_prime = params.add("gcn.phi_prime", Tensor<T>({d, d}));
    p_.w0 = params.add("gcn.w0", Tensor<T>({d, d}));
    p_.w1 = params.add("gcn.w1", Tensor<T>({d, d}));
    if (kind == FusionKind::OneClass) {
      p_.fuse = params.add("fuse.weight", Tensor<T>({2 * d, z_dim}));
    } else {
      if (bottleneck[1] != bottleneck[2])
        throw ShapeError("reconstruction fusion needs H' == W', bottleneck is " +
                         shape_string(bottleneck));
      p_.outer1 = params.add("fuse.outer1", Tensor<T>({d, bottleneck[1] * d}));
      p_.outer2 = params.add("fuse.outer2", Tensor<T>({d, bottleneck[2] * d}));
    }
  }

  template <typename Rng>
  void initialize(ParameterSet<T>& params, Rng& rng) const {
    const std::size_t d = bottleneck_[3];
    init_he_normal(params[p_.phi].value, d, rng, 1.0);
    init_he_normal(params[p_.phi_prime].value, d, rng, 1.0);
    init_he_normal(params[p_.w0].value, d, rng);
    init_he_normal(params[p_.w1].value, d, rng, 1.0);
    if (kind_ == FusionKind::OneClass) {
      init_he_normal(params[p_.fuse].value, 2 * d, rng, 1.0);
    } else {
      init_he_normal(params[p_.outer1].value, d, rng, 1.0);
      init_he_normal(params[p_.outer2].value, d, rng, 1.0);
    }
  }

  FusionKind kind() const { return kind_; }
  const InteractionParams& indices() const { return p_; }

  /// Object features -> GCN output (K x d).
  Tensor<T> graph_forward(const ParameterSet<T>& params, const Tensor<T>& h,
                          const ProposalSet& props, Trace* trace) const {
    Trace local;
    Trace& tr = trace ? *trace : local;
    tr.p = roi_features(h, props, &tr.roi);
    tr.g = similarity_graph(tr.p, params[p_.phi].value, params[p_.phi_prime].value, &tr.sim);
    tr.h_gcn = gcn_forward(tr.g, tr.p, params[p_.w0].value, params[p_.w1].value, &tr.gcn);
    return tr.h_gcn;
  }

  /// One-class: bottleneck + proposals -> Z-vector.
  Tensor<T> forward_oc(const ParameterSet<T>& params, const Tensor<T>& h, const ProposalSet& props,
                       Trace* trace = nullptr) const {
    const Tensor<T> hg = graph_forward(params, h, props, trace);
    return fuse_oc(h, hg, params[p_.fuse].value);
  }

  /// Reconstruction: bottleneck + proposals -> T'xH'xW'x2d decoder input.
  Tensor<T> forward_recon(const ParameterSet<T>& params, const Tensor<T>& h,
                          const ProposalSet& props, Trace* trace = nullptr) const {
    Trace local;
    Trace& tr = trace ? *trace : local;
    const Tensor<T> hg = graph_forward(params, h, props, &tr);
    return fuse_recon(h, hg, params[p_.outer1].value, params[p_.outer2].value, &tr.fuse);
  }

  /// Backward from dz (one-class). Returns dh (both the direct path and
  /// through the RoI features).
  Tensor<T> backward_oc(const ParameterSet<T>& params, const Tensor<T>& h, const Trace& tr,
                        const Tensor<T>& dz, Gradients<T>& grads) const {
    const std::size_t d = bottleneck_[3];
    const Tensor<T> a = global_average_pool(h);
    const Tensor<T> b = mean_rows(tr.h_gcn);
    Tensor<T> cat({2 * d});
    std::copy(a.data(), a.data() + d, cat.data());
    std::copy(b.data(), b.data() + d, cat.data() + d);
    const Tensor<T> dcat = linear_backward(cat, params[p_.fuse].value, dz, grads[p_.fuse]);
    Tensor<T> da({d}), db({d});
    std::copy(dcat.data(), dcat.data() + d, da.data());
    std::copy(dcat.data() + d, dcat.data() + 2 * d, db.data());
    Tensor<T> dh = global_average_pool_backward(h.shape(), da);
    dh += graph_backward(params, tr, mean_rows_backward(tr.h_gcn.dim(0), db), grads);
    return dh;
  }

  /// Backward from the gradient of the fused decoder input (T'xH'xW'x2d).
  Tensor<T> backward_recon(const ParameterSet<T>& params, const Trace& tr,
                           const Tensor<T>& dfused, Gradients<T>& grads) const {
    const std::size_t tp = bottleneck_[0], hh = bottleneck_[1], ww = bottleneck_[2],
                      d = bottleneck_[3];
    Tensor<T> dh(bottleneck_);
    Tensor<T> dplane({hh, ww, d});
    for (std::size_t t = 0; t < tp; ++t)
      for (std::size_t i = 0; i < hh; ++i)
        for (std::size_t j = 0; j < ww; ++j) {
          const std::size_t pos = (t * hh + i) * ww + j;
          const T* g = dfused.data() + pos * 2 * d;
          std::copy(g, g + d, dh.data() + pos * d);
          T* dp = dplane.data() + (i * ww + j) * d;
          for (std::size_t c = 0; c < d; ++c) dp[c] += g[d + c];
        }
    Tensor<T> df1({hh * d}), df2({ww * d});
    for (std::size_t i = 0; i < hh; ++i)
      for (std::size_t j = 0; j < ww; ++j)
        for (std::size_t c = 0; c < d; ++c) {
          const T g = dplane[(i * ww + j) * d + c];
          df1[i * d + c] += g * tr.fuse.f2[j * d + c];
          df2[j * d + c] += g * tr.fuse.f1[i * d + c];
        }
    Tensor<T> df = linear_backward(tr.fuse.f, params[p_.outer1].value, df1, grads[p_.outer1]);
    df += linear_backward(tr.fuse.f, params[p_.outer2].value, df2, grads[p_.outer2]);
    dh += graph_backward(params, tr, mean_rows_backward(tr.h_gcn.dim(0), df), grads);
    return dh;
  }

  /// Backward from dH2 (K x d) to the bottleneck, accumulating GCN and
  /// similarity parameter gradients.
  Tensor<T> graph_backward(const ParameterSet<T>& params, const Trace& tr, const Tensor<T>& dh2,
                           Gradients<T>& grads) const {
    const Tensor<T> dp = gcn_similarity_backward(tr, params[p_.phi].value,
                                                 params[p_.phi_prime].value, params[p_.w0].value,
                                                 params[p_.w1].value, dh2, grads[p_.phi],
                                                 grads[p_.phi_prime], grads[p_.w0], grads[p_.w1]);
    return roi_features_backward(tr.roi, dp);
  }

  /// Backward through H2 = G ReLU(G P W0) W1 with G = softmax(P Wphi (P Wphi')^T).
  /// Returns dP; accumulates the four weight gradients.
  static Tensor<T> gcn_similarity_backward(const Trace& tr, const Tensor<T>& w_phi,
                                           const Tensor<T>& w_phi_prime, const Tensor<T>& w0,
                                           const Tensor<T>& w1, const Tensor<T>& dh2,
                                           Tensor<T>& dw_phi, Tensor<T>& dw_phi_prime,
                                           Tensor<T>& dw0, Tensor<T>& dw1) {
    const Tensor<T>& g = tr.g;
    const Tensor<T>& p = tr.p;
    dw1 += matmul_tn(tr.gcn.y1, dh2);
    const Tensor<T> dy1 = matmul_nt(dh2, w1);
    Tensor<T> dg = matmul_nt(dy1, tr.gcn.h1);
    Tensor<T> du = matmul_tn(g, dy1);
    relu_backward_inplace(tr.gcn.h1, du);
    dw0 += matmul_tn(tr.gcn.y0, du);
    const Tensor<T> dy0 = matmul_nt(du, w0);
    dg += matmul_nt(dy0, p);
    Tensor<T> dp = matmul_tn(g, dy0);
    // softmax: dS_ij = G_ij (dG_ij - sum_k G_ik dG_ik)
    const std::size_t k = g.dim(0);
    Tensor<T> ds({k, k});
    for (std::size_t i = 0; i < k; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += g[i * k + j] * dg[i * k + j];
      for (std::size_t j = 0; j < k; ++j) ds[i * k + j] = g[i * k + j] * (dg[i * k + j] - dot);
    }
    const Tensor<T> da = matmul(ds, tr.sim.b);
    const Tensor<T> db = matmul_tn(ds, tr.sim.a);
    dw_phi += matmul_tn(p, da);
    dw_phi_prime += matmul_tn(p, db);
    dp += matmul_nt(da, w_phi);
    dp += matmul_nt(db, w_phi_prime);
    return dp;
  }

  static Tensor<T> mean_rows_backward(std::size_t k, const Tensor<T>& dmean) {
    const std::size_t d = dmean.size();
    Tensor<T> out({k, d});
    const T inv = T(1) / static_cast<T>(k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] = dmean[c] * inv;
    return out;
  }

 private:
  FusionKind kind_ = FusionKind::OneClass;
  Shape bottleneck_;
  InteractionParams p_;
};

}  // namespace vadkit
