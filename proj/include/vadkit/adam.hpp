#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vadkit/nn.hpp"

namespace vadkit {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. The moment buffers are public so checkpoints
/// can persist and restore them exactly.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterSet<T>& params, AdamOptions opt)
      : opt_(opt), m_(params.zeros_like()), v_(params.zeros_like()) {
    if (!(opt.learning_rate > 0)) throw Error("learning rate must be > 0");
  }

  void step(ParameterSet<T>& params, const Gradients<T>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T step_size = static_cast<T>(opt_.learning_rate / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(opt_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = params[i].value;
      auto& m = m_[i];
      auto& v = v_[i];
      const auto& g = grads[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = b1 * m[k] + (T(1) - b1) * g[k];
        v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
        w[k] -= step_size * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
      }
    }
  }

  long steps() const noexcept { return t_; }
  void set_steps(long t) noexcept { t_ = t; }
  const AdamOptions& options() const noexcept { return opt_; }
  Gradients<T>& first_moment() noexcept { return m_; }
  Gradients<T>& second_moment() noexcept { return v_; }
  const Gradients<T>& first_moment() const noexcept { return m_; }
  const Gradients<T>& second_moment() const noexcept { return v_; }

 private:
  AdamOptions opt_;
  Gradients<T> m_, v_;
  long t_ = 0;
};

}  // namespace vadkit
