#pragma once

// Minimal building blocks for the 3D conv networks: named parameter storage,
// strided 3D convolution and its transpose over channels-last volumes, and
// elementwise activations. Every op comes with a hand-written backward pass.

#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "vadkit/tensor.hpp"

namespace vadkit {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  /// Included in the weight-decay term. Biases never are.
  bool decay = true;
};

template <typename T>
using Gradients = std::vector<Tensor<T>>;

template <typename T>
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor<T> value, bool decay = true) {
    for (const auto& p : params_)
      if (p.name == name) throw Error("duplicate parameter name: " + name);
    params_.push_back({std::move(name), std::move(value), decay});
    return params_.size() - 1;
  }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    throw Error("unknown parameter: " + name);
  }

  Gradients<T> zeros_like() const {
    Gradients<T> g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.emplace_back(p.value.shape());
    return g;
  }

  /// Sum of squared entries over all decayed parameters (||W||_F^2).
  T decay_norm() const {
    T s = 0;
    for (const auto& p : params_)
      if (p.decay) s += squared_norm(p.value.span());
    return s;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Parameter<T>> params_;
};

template <typename T>
void accumulate(Gradients<T>& into, const Gradients<T>& from) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}

template <typename T>
void scale(Gradients<T>& g, T s) {
  for (auto& t : g) t *= s;
}

/// He (fan-in) normal initialisation.
template <typename T, typename Rng>
void init_he_normal(Tensor<T>& w, std::size_t fan_in, Rng& rng, double gain = 2.0) {
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
  for (auto& v : w.vec()) v = static_cast<T>(dist(rng));
}

using Triple = std::array<std::size_t, 3>;

/// Geometry of a strided 3D convolution (or its transpose). Kernel/stride/
/// padding are ordered (time, height, width).
struct Conv3dGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Triple kernel{1, 1, 1};
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
  /// Only used by the transposed convolution.
  Triple output_padding{0, 0, 0};

  Shape weight_shape() const {
    return {kernel[0], kernel[1], kernel[2], in_channels, out_channels};
  }
  std::size_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }

  Shape conv_output(const Shape& in) const {
    Shape out(4);
    for (int a = 0; a < 3; ++a) {
      const long span = static_cast<long>(in[a] + 2 * padding[a]) - static_cast<long>(kernel[a]);
      if (span < 0)
        throw ShapeError("conv3d: input " + shape_string(in) + " smaller than kernel");
      out[a] = static_cast<std::size_t>(span) / stride[a] + 1;
    }
    out[3] = out_channels;
    return out;
  }

  Shape transposed_output(const Shape& in) const {
    Shape out(4);
    for (int a = 0; a < 3; ++a) {
      const long n = static_cast<long>((in[a] - 1) * stride[a] + kernel[a] + output_padding[a]) -
                     static_cast<long>(2 * padding[a]);
      if (n <= 0) throw ShapeError("conv_transpose3d: empty output for " + shape_string(in));
      out[a] = static_cast<std::size_t>(n);
    }
    out[3] = out_channels;
    return out;
  }
};

namespace detail {

inline bool tap(std::size_t o, std::size_t stride, std::size_t pad, std::size_t k,
                std::size_t extent, std::size_t& i) {
  const long v = static_cast<long>(o * stride + k) - static_cast<long>(pad);
  if (v < 0 || v >= static_cast<long>(extent)) return false;
  i = static_cast<std::size_t>(v);
  return true;
}

// [kt][kh][kw][cin][cout] -> [kt][kh][kw][cout][cin]
template <typename T>
std::vector<T> transpose_kernel(const Tensor<T>& w, std::size_t cin, std::size_t cout) {
  const std::size_t kv = w.size() / (cin * cout);
  std::vector<T> wt(w.size());
  for (std::size_t k = 0; k < kv; ++k)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t co = 0; co < cout; ++co)
        wt[(k * cout + co) * cin + ci] = w[(k * cin + ci) * cout + co];
  return wt;
}

// Visits every (low-res position, kernel tap, high-res position) triple of a
// strided convolution whose "low" side is the conv output.
template <typename F>
void for_each_tap(const Shape& high, const Shape& low, const Conv3dGeometry& g, F&& f) {
  const std::size_t KT = g.kernel[0], KH = g.kernel[1], KW = g.kernel[2];
  for (std::size_t ot = 0; ot < low[0]; ++ot)
    for (std::size_t oh = 0; oh < low[1]; ++oh)
      for (std::size_t ow = 0; ow < low[2]; ++ow) {
        const std::size_t lo = (ot * low[1] + oh) * low[2] + ow;
        for (std::size_t kt = 0; kt < KT; ++kt) {
          std::size_t it;
          if (!tap(ot, g.stride[0], g.padding[0], kt, high[0], it)) continue;
          for (std::size_t kh = 0; kh < KH; ++kh) {
            std::size_t ih;
            if (!tap(oh, g.stride[1], g.padding[1], kh, high[1], ih)) continue;
            for (std::size_t kw = 0; kw < KW; ++kw) {
              std::size_t iw;
              if (!tap(ow, g.stride[2], g.padding[2], kw, high[2], iw)) continue;
              const std::size_t hi = (it * high[1] + ih) * high[2] + iw;
              f(lo, (kt * KH + kh) * KW + kw, hi);
            }
          }
        }
      }
}

// y[n] += x * w  for n in [0, len)
template <typename T>
inline void axpy(T* __restrict y, const T* __restrict w, T x, std::size_t len) {
  for (std::size_t n = 0; n < len; ++n) y[n] += x * w[n];
}

// y[0..ny) += sum_m x[m] * W[m][0..ny)
template <typename T>
inline void gemv_acc(T* __restrict y, const T* __restrict x, const T* __restrict w,
                     std::size_t nx, std::size_t ny) {
  for (std::size_t m = 0; m < nx; ++m) {
    const T xv = x[m];
    if (xv == T(0)) continue;
    axpy(y, w + m * ny, xv, ny);
  }
}

// W[m][n] += x[m] * y[n]
template <typename T>
inline void outer_acc(T* __restrict w, const T* __restrict x, const T* __restrict y,
                      std::size_t nx, std::size_t ny) {
  for (std::size_t m = 0; m < nx; ++m) {
    const T xv = x[m];
    if (xv == T(0)) continue;
    axpy(w + m * ny, y, xv, ny);
  }
}

}  // namespace detail

/// y = conv3d(x, w) + b over a channels-last T x H x W x C volume.
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                         const Conv3dGeometry& g) {
  if (x.rank() != 4 || x.dim(3) != g.in_channels)
    throw ShapeError("conv3d: input " + shape_string(x.shape()) + " incompatible with " +
                     std::to_string(g.in_channels) + " input channels");
  expect_shape(w, g.weight_shape(), "conv3d weight");
  const std::size_t ci = g.in_channels, co = g.out_channels;
  Tensor<T> y(g.conv_output(x.shape()));
  if (bias) {
    for (std::size_t p = 0; p < y.size() / co; ++p)
      std::copy(bias->data(), bias->data() + co, y.data() + p * co);
  }
  detail::for_each_tap(x.shape(), y.shape(), g, [&](std::size_t lo, std::size_t k, std::size_t hi) {
    detail::gemv_acc(y.data() + lo * co, x.data() + hi * ci, w.data() + k * ci * co, ci, co);
  });
  return y;
}

/// Accumulates parameter gradients into dw/db and, when dx is non-null,
/// writes the input gradient.
template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     const Conv3dGeometry& g, Tensor<T>* dx, Tensor<T>& dw, Tensor<T>* db) {
  const std::size_t ci = g.in_channels, co = g.out_channels;
  expect_shape(dy, g.conv_output(x.shape()), "conv3d output gradient");
  if (db) {
    for (std::size_t p = 0; p < dy.size() / co; ++p)
      for (std::size_t c = 0; c < co; ++c) (*db)[c] += dy[p * co + c];
  }
  detail::for_each_tap(x.shape(), dy.shape(), g, [&](std::size_t lo, std::size_t k, std::size_t hi) {
    detail::outer_acc(dw.data() + k * ci * co, x.data() + hi * ci, dy.data() + lo * co, ci, co);
  });
  if (dx) {
    *dx = Tensor<T>(x.shape());
    const auto wt = detail::transpose_kernel(w, ci, co);
    detail::for_each_tap(x.shape(), dy.shape(), g,
                         [&](std::size_t lo, std::size_t k, std::size_t hi) {
                           detail::gemv_acc(dx->data() + hi * ci, dy.data() + lo * co,
                                            wt.data() + k * co * ci, co, ci);
                         });
  }
}

/// Transposed 3D convolution (the adjoint of conv3d's input map), used to
/// upsample in the decoder. Weight layout matches conv3d: [kt][kh][kw][cin][cout].
template <typename T>
Tensor<T> conv_transpose3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                                   const Conv3dGeometry& g) {
  if (x.rank() != 4 || x.dim(3) != g.in_channels)
    throw ShapeError("conv_transpose3d: input " + shape_string(x.shape()) +
                     " incompatible with " + std::to_string(g.in_channels) + " input channels");
  expect_shape(w, g.weight_shape(), "conv_transpose3d weight");
  const std::size_t ci = g.in_channels, co = g.out_channels;
  Tensor<T> y(g.transposed_output(x.shape()));
  if (bias) {
    for (std::size_t p = 0; p < y.size() / co; ++p)
      std::copy(bias->data(), bias->data() + co, y.data() + p * co);
  }
  // The low-resolution side is the input here.
  detail::for_each_tap(y.shape(), x.shape(), g, [&](std::size_t lo, std::size_t k, std::size_t hi) {
    detail::gemv_acc(y.data() + hi * co, x.data() + lo * ci, w.data() + k * ci * co, ci, co);
  });
  return y;
}

template <typename T>
void conv_transpose3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                               const Conv3dGeometry& g, Tensor<T>* dx, Tensor<T>& dw,
                               Tensor<T>* db) {
  const std::size_t ci = g.in_channels, co = g.out_channels;
  expect_shape(dy, g.transposed_output(x.shape()), "conv_transpose3d output gradient");
  if (db) {
    for (std::size_t p = 0; p < dy.size() / co; ++p)
      for (std::size_t c = 0; c < co; ++c) (*db)[c] += dy[p * co + c];
  }
  detail::for_each_tap(dy.shape(), x.shape(), g, [&](std::size_t lo, std::size_t k, std::size_t hi) {
    detail::outer_acc(dw.data() + k * ci * co, x.data() + lo * ci, dy.data() + hi * co, ci, co);
  });
  if (dx) {
    *dx = Tensor<T>(x.shape());
    const auto wt = detail::transpose_kernel(w, ci, co);
    detail::for_each_tap(dy.shape(), x.shape(), g,
                         [&](std::size_t lo, std::size_t k, std::size_t hi) {
                           detail::gemv_acc(dx->data() + lo * ci, dy.data() + hi * co,
                                            wt.data() + k * co * ci, co, ci);
                         });
  }
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.vec()) v = v > T(0) ? v : T(0);
}

/// Backward through ReLU given the forward *output*.
template <typename T>
void relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(y[i] > T(0))) dy[i] = T(0);
}

template <typename T>
void tanh_inplace(Tensor<T>& x) {
  for (auto& v : x.vec()) v = std::tanh(v);
}

template <typename T>
void tanh_backward_inplace(const Tensor<T>& y, Tensor<T>& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= T(1) - y[i] * y[i];
}

/// Mean over all positions of a channels-last volume -> length-C vector.
template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& x) {
  const std::size_t c = x.shape().back();
  const std::size_t n = x.size() / c;
  Tensor<T> out({c});
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t k = 0; k < c; ++k) out[k] += x[p * c + k];
  out *= T(1) / static_cast<T>(n);
  return out;
}

template <typename T>
Tensor<T> global_average_pool_backward(const Shape& in_shape, const Tensor<T>& dout) {
  const std::size_t c = in_shape.back();
  Tensor<T> dx(in_shape);
  const std::size_t n = dx.size() / c;
  const T inv = T(1) / static_cast<T>(n);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t k = 0; k < c; ++k) dx[p * c + k] = dout[k] * inv;
  return dx;
}

/// y = x W for a vector x (length in) and W (in x out), no bias.
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w) {
  if (w.rank() != 2 || x.size() != w.dim(0))
    throw ShapeError("linear: input length " + std::to_string(x.size()) + " vs weight " +
                     shape_string(w.shape()));
  Tensor<T> y({w.dim(1)});
  detail::gemv_acc(y.data(), x.data(), w.data(), w.dim(0), w.dim(1));
  return y;
}

/// Accumulates dW and returns dx.
template <typename T>
Tensor<T> linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                          Tensor<T>& dw) {
  const std::size_t n = w.dim(0), m = w.dim(1);
  Tensor<T> dx({n});
  for (std::size_t i = 0; i < n; ++i) {
    const T* wr = w.data() + i * m;
    T s = 0;
    for (std::size_t j = 0; j < m; ++j) s += wr[j] * dy[j];
    dx[i] = s;
    detail::axpy(dw.data() + i * m, dy.data(), x[i], m);
  }
  return dx;
}

}  // namespace vadkit
