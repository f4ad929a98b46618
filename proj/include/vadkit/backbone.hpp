#pragma once

// Strided 3D-conv encoder and its mirrored transposed-conv decoder.
//
// The encoder is a stack of conv stages, each followed by ReLU. Padding is
// planned so that every stage divides its input extent by its stride exactly;
// the bottleneck shape is therefore input_shape / prod(strides) with the last
// stage's channel count. The decoder walks the stages in reverse with
// transposed convolutions, ReLU between stages and tanh at the output so the
// reconstruction lives in the same [-1, 1] range as the clip.

#include <cstddef>
#include <string>
#include <vector>

#include "vadkit/nn.hpp"
#include "vadkit/tensor.hpp"

namespace vadkit {

struct StageConfig {
  std::size_t channels = 0;
  Triple stride{1, 1, 1};
  Triple kernel{1, 1, 1};
};

struct BackboneConfig {
  /// T x H x W x C
  Shape input_shape;
  std::vector<StageConfig> stages;
  /// Learnable biases in the conv stacks. Must stay off for one-class training.
  bool bias = false;
  /// Extra channels concatenated onto the bottleneck before decoding
  /// (the interaction branch's fused block).
  std::size_t decoder_extra_channels = 0;

  std::size_t bottleneck_channels() const { return stages.empty() ? 0 : stages.back().channels; }

  Shape bottleneck_shape() const {
    validate();
    Shape s = input_shape;
    for (const auto& st : stages) {
      for (int a = 0; a < 3; ++a) s[a] /= st.stride[a];
      s[3] = st.channels;
    }
    return s;
  }

  /// Decoder input shape: bottleneck widened by decoder_extra_channels.
  Shape decoder_input_shape() const {
    Shape s = bottleneck_shape();
    s[3] += decoder_extra_channels;
    return s;
  }

  static std::size_t same_padding(std::size_t kernel, std::size_t stride) {
    return kernel > stride ? (kernel - stride + 1) / 2 : 0;
  }

  std::vector<Conv3dGeometry> encoder_plan() const {
    validate();
    std::vector<Conv3dGeometry> plan;
    std::size_t cin = input_shape[3];
    for (const auto& st : stages) {
      Conv3dGeometry g;
      g.in_channels = cin;
      g.out_channels = st.channels;
      g.kernel = st.kernel;
      g.stride = st.stride;
      for (int a = 0; a < 3; ++a) g.padding[a] = same_padding(st.kernel[a], st.stride[a]);
      plan.push_back(g);
      cin = st.channels;
    }
    return plan;
  }

  /// Mirror of encoder_plan(); element i undoes encoder stage (n-1-i).
  std::vector<Conv3dGeometry> decoder_plan() const {
    const auto enc = encoder_plan();
    std::vector<Shape> shapes{input_shape};
    for (const auto& g : enc) shapes.push_back(g.conv_output(shapes.back()));
    std::vector<Conv3dGeometry> plan;
    for (std::size_t k = enc.size(); k-- > 0;) {
      Conv3dGeometry g = enc[k];
      std::swap(g.in_channels, g.out_channels);
      if (k + 1 == enc.size()) g.in_channels += decoder_extra_channels;
      g.output_padding = {0, 0, 0};
      Shape in = shapes[k + 1];
      in[3] = g.in_channels;
      const Shape raw = g.transposed_output(in);
      for (int a = 0; a < 3; ++a) {
        const long extra = static_cast<long>(shapes[k][a]) - static_cast<long>(raw[a]);
        if (extra < 0 || extra >= static_cast<long>(g.stride[a]))
          throw ShapeError("decoder stage " + std::to_string(enc.size() - 1 - k) +
                           " cannot be mirrored to " + shape_string(shapes[k]));
        g.output_padding[a] = static_cast<std::size_t>(extra);
      }
      plan.push_back(g);
    }
    return plan;
  }

  void validate() const {
    if (input_shape.size() != 4) throw ShapeError("input_shape must be T x H x W x C");
    if (stages.empty()) throw Error("backbone needs at least one stage");
    Shape s = input_shape;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const auto& st = stages[i];
      if (st.channels == 0) throw Error("stage " + std::to_string(i) + " has zero channels");
      for (int a = 0; a < 3; ++a) {
        if (st.stride[a] == 0 || st.kernel[a] == 0)
          throw Error("stage " + std::to_string(i) + " has a zero stride or kernel");
        if (s[a] % st.stride[a] != 0)
          throw ShapeError("stage " + std::to_string(i) + " stride " +
                           std::to_string(st.stride[a]) + " does not divide extent " +
                           std::to_string(s[a]) + " of " + shape_string(s));
        s[a] /= st.stride[a];
      }
    }
  }

  /// 32x224x224x3 -> 4x7x7x2048, the I3D input/output contract.
  static BackboneConfig paper() {
    BackboneConfig c;
    c.input_shape = {32, 224, 224, 3};
    c.stages = {{64, {2, 4, 4}, {2, 4, 4}},
                {256, {2, 2, 2}, {2, 2, 2}},
                {1024, {2, 2, 2}, {2, 2, 2}},
                {2048, {1, 2, 2}, {1, 2, 2}}};
    return c;
  }

  /// Bottleneck spatially (and temporally) doubled: 32x224x224x3 -> 8x14x14x2048.
  static BackboneConfig capacity() {
    BackboneConfig c;
    c.input_shape = {32, 224, 224, 3};
    c.stages = {{64, {2, 4, 4}, {2, 4, 4}},
                {256, {2, 2, 2}, {2, 2, 2}},
                {1024, {1, 2, 2}, {1, 2, 2}},
                {2048, {1, 1, 1}, {1, 1, 1}}};
    return c;
  }

  /// 16x64x64x3 -> 2x2x2x64, small enough to train on one CPU core.
  static BackboneConfig toy(std::size_t channels = 3) {
    BackboneConfig c;
    c.input_shape = {16, 64, 64, channels};
    c.stages = {{16, {2, 2, 2}, {2, 2, 2}},
                {32, {2, 2, 2}, {2, 2, 2}},
                {64, {2, 2, 2}, {2, 2, 2}},
                {64, {1, 4, 4}, {1, 4, 4}}};
    return c;
  }

  static BackboneConfig preset(const std::string& name, std::size_t channels = 3) {
    BackboneConfig c;
    if (name == "paper")
      c = paper();
    else if (name == "capacity")
      c = capacity();
    else if (name == "toy")
      c = toy(channels);
    else
      throw Error("unknown backbone preset '" + name + "' (expected paper, capacity or toy)");
    c.input_shape[3] = channels;
    return c;
  }

  friend bool operator==(const BackboneConfig& a, const BackboneConfig& b) {
    if (a.input_shape != b.input_shape || a.bias != b.bias ||
        a.decoder_extra_channels != b.decoder_extra_channels ||
        a.stages.size() != b.stages.size())
      return false;
    for (std::size_t i = 0; i < a.stages.size(); ++i) {
      const auto &x = a.stages[i], &y = b.stages[i];
      if (x.channels != y.channels || x.stride != y.stride || x.kernel != y.kernel) return false;
    }
    return true;
  }
};

/// Per-stage activations recorded by a forward pass; acts[0] is the input.
template <typename T>
struct StackTrace {
  std::vector<Tensor<T>> acts;
};

namespace detail {

template <typename T>
struct ConvLayerRef {
  Conv3dGeometry geometry;
  std::size_t weight = 0;
  std::size_t bias = 0;
  bool has_bias = false;
};

}  // namespace detail

/// Encoder F_e: clip -> bottleneck. Parameters live in a shared ParameterSet
/// under "enc.<i>.weight" / "enc.<i>.bias".
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const BackboneConfig& cfg, ParameterSet<T>& params) : cfg_(cfg) {
    for (const auto& g : cfg.encoder_plan()) {
      detail::ConvLayerRef<T> l;
      l.geometry = g;
      const std::string base = "enc." + std::to_string(layers_.size());
      l.weight = params.add(base + ".weight", Tensor<T>(g.weight_shape()));
      if (cfg.bias) {
        l.has_bias = true;
        l.bias = params.add(base + ".bias", Tensor<T>({g.out_channels}), false);
      }
      layers_.push_back(l);
    }
  }

  template <typename Rng>
  void initialize(ParameterSet<T>& params, Rng& rng) const {
    for (const auto& l : layers_) {
      init_he_normal(params[l.weight].value, l.geometry.kernel_volume() * l.geometry.in_channels,
                     rng);
      if (l.has_bias) params[l.bias].value.fill(T(0));
    }
  }

  const BackboneConfig& config() const { return cfg_; }

  Tensor<T> forward(const ParameterSet<T>& params, const Tensor<T>& clip,
                    StackTrace<T>* trace = nullptr) const {
    if (clip.shape() != cfg_.input_shape)
      throw ShapeError("encode: expected clip " + shape_string(cfg_.input_shape) + ", got " +
                       shape_string(clip.shape()));
    if (trace) trace->acts = {clip};
    Tensor<T> x = clip;
    for (const auto& l : layers_) {
      x = conv3d_forward(x, params[l.weight].value, l.has_bias ? &params[l.bias].value : nullptr,
                         l.geometry);
      relu_inplace(x);
      if (trace) trace->acts.push_back(x);
    }
    return x;
  }

  void backward(const ParameterSet<T>& params, const StackTrace<T>& trace, Tensor<T> dh,
                Gradients<T>& grads, Tensor<T>* dclip = nullptr) const {
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const auto& l = layers_[i];
      relu_backward_inplace(trace.acts[i + 1], dh);
      Tensor<T> dx;
      const bool need_dx = i > 0 || dclip != nullptr;
      conv3d_backward(trace.acts[i], params[l.weight].value, dh, l.geometry,
                      need_dx ? &dx : nullptr, grads[l.weight],
                      l.has_bias ? &grads[l.bias] : nullptr);
      if (i == 0) {
        if (dclip) *dclip = std::move(dx);
      } else {
        dh = std::move(dx);
      }
    }
  }

 private:
  BackboneConfig cfg_;
  std::vector<detail::ConvLayerRef<T>> layers_;
};

/// Decoder F_d: (possibly fused) bottleneck -> clip-shaped reconstruction.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const BackboneConfig& cfg, ParameterSet<T>& params) : cfg_(cfg) {
    for (const auto& g : cfg.decoder_plan()) {
      detail::ConvLayerRef<T> l;
      l.geometry = g;
      const std::string base = "dec." + std::to_string(layers_.size());
      l.weight = params.add(base + ".weight", Tensor<T>(g.weight_shape()));
      if (cfg.bias) {
        l.has_bias = true;
        l.bias = params.add(base + ".bias", Tensor<T>({g.out_channels}), false);
      }
      layers_.push_back(l);
    }
  }

  template <typename Rng>
  void initialize(ParameterSet<T>& params, Rng& rng) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      const auto& g = l.geometry;
      // Each output position of a transposed conv receives roughly
      // kernel_volume / stride_volume taps.
      const std::size_t stride_vol = g.stride[0] * g.stride[1] * g.stride[2];
      const std::size_t taps = std::max<std::size_t>(1, g.kernel_volume() / stride_vol);
      const bool last = i + 1 == layers_.size();
      init_he_normal(params[l.weight].value, taps * g.in_channels, rng, last ? 1.0 : 2.0);
      if (l.has_bias) params[l.bias].value.fill(T(0));
    }
  }

  Tensor<T> forward(const ParameterSet<T>& params, const Tensor<T>& h,
                    StackTrace<T>* trace = nullptr) const {
    if (h.shape() != cfg_.decoder_input_shape())
      throw ShapeError("decode: expected bottleneck " + shape_string(cfg_.decoder_input_shape()) +
                       ", got " + shape_string(h.shape()));
    if (trace) trace->acts = {h};
    Tensor<T> x = h;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      x = conv_transpose3d_forward(x, params[l.weight].value,
                                   l.has_bias ? &params[l.bias].value : nullptr, l.geometry);
      if (i + 1 == layers_.size())
        tanh_inplace(x);
      else
        relu_inplace(x);
      if (trace) trace->acts.push_back(x);
    }
    return x;
  }

  /// Returns the gradient with respect to the decoder input.
  Tensor<T> backward(const ParameterSet<T>& params, const StackTrace<T>& trace, Tensor<T> dy,
                     Gradients<T>& grads) const {
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const auto& l = layers_[i];
      if (i + 1 == layers_.size())
        tanh_backward_inplace(trace.acts[i + 1], dy);
      else
        relu_backward_inplace(trace.acts[i + 1], dy);
      Tensor<T> dx;
      conv_transpose3d_backward(trace.acts[i], params[l.weight].value, dy, l.geometry, &dx,
                                grads[l.weight], l.has_bias ? &grads[l.bias] : nullptr);
      dy = std::move(dx);
    }
    return dy;
  }

 private:
  BackboneConfig cfg_;
  std::vector<detail::ConvLayerRef<T>> layers_;
};

/// One-class head: global average pool over T'xH'xW' then a bias-free linear
/// map d -> Z. Parameter "head.weight" (d x Z).
template <typename T>
class OneClassHead {
 public:
  OneClassHead() = default;
  OneClassHead(std::size_t d, std::size_t z, ParameterSet<T>& params, const std::string& name = "head")
      : weight_(params.add(name + ".weight", Tensor<T>({d, z}))) {}

  template <typename Rng>
  void initialize(ParameterSet<T>& params, Rng& rng) const {
    auto& w = params[weight_].value;
    init_he_normal(w, w.dim(0), rng, 1.0);
  }

  std::size_t weight_index() const { return weight_; }

  Tensor<T> forward(const ParameterSet<T>& params, const Tensor<T>& h) const {
    return linear_forward(global_average_pool(h), params[weight_].value);
  }

  /// Returns dh.
  Tensor<T> backward(const ParameterSet<T>& params, const Tensor<T>& h, const Tensor<T>& dz,
                     Gradients<T>& grads) const {
    const Tensor<T> pooled = global_average_pool(h);
    const Tensor<T> dpool = linear_backward(pooled, params[weight_].value, dz, grads[weight_]);
    return global_average_pool_backward(h.shape(), dpool);
  }

 private:
  std::size_t weight_ = 0;
};

}  // namespace vadkit
