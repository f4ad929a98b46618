#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "vadkit/error.hpp"

namespace vadkit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  if (s.empty()) os << "scalar";
  return os.str();
}

/// Dense row-major tensor. Videos and bottlenecks are channels-last
/// (T x H x W x C), matrices are rows x cols.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}
  Tensor(std::initializer_list<std::size_t> shape, T fill = T(0))
      : Tensor(Shape(shape), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_volume(shape_))
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <typename... Idx>
  T& at(Idx... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... Idx>
  const T& at(Idx... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    if (shape_volume(s) != size())
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(s));
    return Tensor(std::move(s), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    std::size_t off = 0;
    std::size_t k = 0;
    for (std::size_t i : idx) off = off * shape_[k++] + i;
    return off;
  }
  void check_same(const Tensor& o, const char* op) const {
    if (shape_ != o.shape_)
      throw ShapeError(std::string("shape mismatch in ") + op + ": " + shape_string(shape_) +
                       " vs " + shape_string(o.shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
void expect_shape(const Tensor<T>& t, const Shape& expected, const std::string& what) {
  if (t.shape() != expected)
    throw ShapeError(what + ": expected shape " + shape_string(expected) + ", got " +
                     shape_string(t.shape()));
}

template <typename T>
T squared_norm(std::span<const T> v) {
  T s = 0;
  for (T x : v) s += x * x;
  return s;
}

template <typename T>
T squared_distance(std::span<const T> a, std::span<const std::type_identity_t<T>> b) {
  if (a.size() != b.size())
    throw ShapeError("squared_distance: length " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Small dense matrix kernels used by the interaction branch. All matrices are
// row-major; `rows x inner` times `inner x cols`.

/// out = a * b
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    T* o = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* br = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

/// out = a^T * b
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError("matmul_tn: " + shape_string(a.shape()) + "^T * " + shape_string(b.shape()));
  const std::size_t k = a.dim(0), n = a.dim(1), m = b.dim(1);
  Tensor<T> out({n, m});
  for (std::size_t p = 0; p < k; ++p) {
    const T* ar = a.data() + p * n;
    const T* br = b.data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const T av = ar[i];
      T* o = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

/// out = a * b^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("matmul_nt: " + shape_string(a.shape()) + " * " + shape_string(b.shape()) +
                     "^T");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const T* ar = a.data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const T* br = b.data() + j * k;
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out[i * m + j] = s;
    }
  }
  return out;
}

}  // namespace vadkit
