#pragma once

// One-class deep SVDD: hypersphere center, objective and anomaly score.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "vadkit/nn.hpp"
#include "vadkit/tensor.hpp"

namespace vadkit {

/// Hypersphere center c. Written once by initialize(), frozen afterwards.
template <typename T>
class Center {
 public:
  /// Coordinates closer to zero than this are pushed out to +-kMinMagnitude so
  /// the trivial all-zero network cannot reach the center.
  static constexpr T kMinMagnitude = T(0.1);

  Center() = default;

  /// Restores a previously frozen center (checkpoint load).
  static Center frozen_at(std::vector<T> c) {
    Center out;
    out.c_ = std::move(c);
    out.frozen_ = true;
    return out;
  }

  /// c = mean of the feature rows (N x Z), then snapped away from zero.
  void initialize(const Tensor<T>& features) {
    if (frozen_) throw Error("SVDD center is frozen and cannot be re-initialised");
    if (features.rank() != 2 || features.dim(0) == 0)
      throw Error("SVDD center initialisation needs at least one feature vector");
    const std::size_t n = features.dim(0), z = features.dim(1);
    std::vector<T> c(z, T(0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < z; ++j) c[j] += features[i * z + j];
    for (auto& v : c) {
      v /= static_cast<T>(n);
      if (std::abs(v) < kMinMagnitude) v = v < T(0) ? -kMinMagnitude : kMinMagnitude;
    }
    if (!std::all_of(c.begin(), c.end(), [](T v) { return std::isfinite(v); }))
      throw Error("SVDD center is not finite");
    c_ = std::move(c);
    frozen_ = true;
  }

  bool frozen() const noexcept { return frozen_; }
  std::size_t dim() const noexcept { return c_.size(); }
  std::span<const T> values() const noexcept { return c_; }

 private:
  std::vector<T> c_;
  bool frozen_ = false;
};

template <typename T>
struct SvddLoss {
  T value = 0;
  /// dL/dF for every feature row (N x Z).
  Tensor<T> dfeatures;
};

/// (1/N) sum_i ||f_i - c||^2 + (lambda/2) ||W||_F^2, where weight_norm is
/// ||W||_F^2 over the learnable weights. The weight-decay gradient (lambda*W)
/// is applied separately by add_weight_decay().
template <typename T>
SvddLoss<T> svdd_loss(const Tensor<T>& features, const Center<T>& center, T weight_norm,
                      T lambda) {
  if (lambda < T(0)) throw Error("SVDD weight decay lambda must be >= 0");
  if (!center.frozen()) throw Error("SVDD loss requires a frozen center");
  if (features.rank() != 2 || features.dim(1) != center.dim())
    throw ShapeError("svdd_loss: features " + shape_string(features.shape()) +
                     " vs center of dimension " + std::to_string(center.dim()));
  const std::size_t n = features.dim(0), z = features.dim(1);
  if (n == 0) throw Error("svdd_loss: empty batch");
  SvddLoss<T> out;
  out.dfeatures = Tensor<T>(features.shape());
  const auto c = center.values();
  const T inv_n = T(1) / static_cast<T>(n);
  T sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < z; ++j) {
      const T d = features[i * z + j] - c[j];
      sum += d * d;
      out.dfeatures[i * z + j] = T(2) * d * inv_n;
    }
  }
  out.value = sum * inv_n + lambda / T(2) * weight_norm;
  return out;
}

/// ||f - c||^2
template <typename T>
T svdd_score(std::span<const std::type_identity_t<T>> feature, const Center<T>& center) {
  if (feature.size() != center.dim())
    throw ShapeError("svdd_score: feature of length " + std::to_string(feature.size()) +
                     " vs center of dimension " + std::to_string(center.dim()));
  return squared_distance<T>(feature, center.values());
}

/// grads += lambda * W for every decayed parameter.
template <typename T>
void add_weight_decay(const ParameterSet<T>& params, Gradients<T>& grads, T lambda) {
  if (lambda == T(0)) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].decay) continue;
    const auto& w = params[i].value;
    for (std::size_t k = 0; k < w.size(); ++k) grads[i][k] += lambda * w[k];
  }
}

}  // namespace vadkit
