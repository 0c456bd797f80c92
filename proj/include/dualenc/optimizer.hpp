#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dualenc/parameters.hpp"

namespace dualenc {

// Bias-corrected Adam over a parameter set. step() consumes the gradients
// accumulated by backward and zeroes them afterwards.
template <class T>
class AdamT {
 public:
  explicit AdamT(ad::ParameterSetT<T>& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8)
      : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, t] : params) {
      m_[name].assign(t.data.size(), T(0));
      v_[name].assign(t.data.size(), T(0));
    }
  }

  void step() {
    ++steps_;
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T corr1 = T(1) - static_cast<T>(std::pow(beta1_, steps_));
    const T corr2 = T(1) - static_cast<T>(std::pow(beta2_, steps_));
    const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
    for (auto& [name, t] : *params_) {
      if (!t.requires_grad) continue;
      auto& m = m_.at(name);
      auto& v = v_.at(name);
      for (std::size_t i = 0; i < t.data.size(); ++i) {
        const T g = t.grad[i];
        if (!std::isfinite(static_cast<double>(g)))
          throw std::runtime_error("adam: non-finite gradient in parameter '" + name + "'");
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        const T mhat = m[i] / corr1;
        const T vhat = v[i] / corr2;
        t.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
      t.zero_grad();
    }
  }

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::int64_t step_count() const { return steps_; }

 private:
  ad::ParameterSetT<T>* params_;
  std::map<std::string, std::vector<T>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t steps_ = 0;
};

using Adam = AdamT<float>;

}  // namespace dualenc
