#pragma once

// Reconstruction objective and reconstruction-error anomaly score.

#include <cstddef>
#include <span>
#include <vector>

#include "vadkit/tensor.hpp"

namespace vadkit {

enum class Reduction {
  /// Squared error summed over every clip element (the default).
  Sum,
  /// Squared error averaged over clip elements; rescales the loss only.
  Mean,
};

template <typename T>
struct ReconLoss {
  T value = 0;
  /// dL/dxhat for each clip in the batch.
  std::vector<Tensor<T>> dxhat;
};

/// L = (1/N) sum_i ||x_i - xhat_i||^2
template <typename T>
ReconLoss<T> recon_loss(std::span<const Tensor<T>> x, std::span<const Tensor<T>> xhat,
                        Reduction reduction = Reduction::Sum) {
  if (x.size() != xhat.size())
    throw ShapeError("recon_loss: batch sizes " + std::to_string(x.size()) + " vs " +
                     std::to_string(xhat.size()));
  if (x.empty()) throw Error("recon_loss: empty batch");
  const T inv_n = T(1) / static_cast<T>(x.size());
  ReconLoss<T> out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    expect_shape(xhat[i], x[i].shape(), "recon_loss reconstruction");
    const T elem_scale =
        reduction == Reduction::Mean ? T(1) / static_cast<T>(x[i].size()) : T(1);
    Tensor<T> g(x[i].shape());
    T sum = 0;
    for (std::size_t k = 0; k < x[i].size(); ++k) {
      const T d = x[i][k] - xhat[i][k];
      sum += d * d;
      g[k] = T(-2) * d * inv_n * elem_scale;
    }
    out.value += sum * elem_scale;
    out.dxhat.push_back(std::move(g));
  }
  out.value *= inv_n;
  return out;
}

/// ||x - xhat||^2 over all elements of one clip.
template <typename T>
T recon_score(const Tensor<T>& x, const Tensor<T>& xhat, Reduction reduction = Reduction::Sum) {
  expect_shape(xhat, x.shape(), "recon_score reconstruction");
  const T s = squared_distance(x.span(), xhat.span());
  return reduction == Reduction::Mean ? s / static_cast<T>(x.size()) : s;
}

}  // namespace vadkit
