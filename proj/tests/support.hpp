#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

#include "vadkit/nn.hpp"
#include "vadkit/tensor.hpp"

namespace vadkit::test {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.vec()) v = static_cast<T>(u(rng));
  return t;
}

/// Central-difference derivative of f with respect to every entry of x.
inline Tensor<double> numeric_gradient(Tensor<double>& x, const std::function<double()>& f,
                                       double h = 1e-6) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// max |a - b| / max(max|a|, max|b|).
inline double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) throw std::logic_error("relative_error: shape mismatch");
  double diff = 0, scale = 1e-12;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("vadkit_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace vadkit::test

namespace vadkit::test {

/// Compares analytic parameter gradients against central differences for
/// every parameter of `params`; returns the worst relative error.
inline double worst_parameter_error(ParameterSet<double>& params, const Gradients<double>& analytic,
                                    const std::function<double()>& loss) {
  double worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i)
    worst = std::max(worst, relative_error(analytic[i], numeric_gradient(params[i].value, loss)));
  return worst;
}

}  // namespace vadkit::test
