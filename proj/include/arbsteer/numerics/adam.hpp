#pragma once

#include <cmath>
#include <vector>

#include "arbsteer/numerics/tensor.hpp"

namespace arbsteer::numerics {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // global-norm clipping; <= 0 disables
};

/// Adam with decoupled weight decay and global gradient-norm clipping.
template <class T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>*> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }

  /// Applies one update. `grads[i]` pairs with the i-th parameter; an empty
  /// tensor means "no gradient this step". Returns the pre-clip grad norm.
  double step(const std::vector<const Tensor<T>*>& grads, double lr_scale = 1.0) {
    double sq = 0.0;
    for (const auto* g : grads) {
      if (!g || g->empty()) continue;
      for (T v : g->data()) sq += static_cast<double>(v) * static_cast<double>(v);
    }
    const double norm = std::sqrt(sq);
    const double clip =
        (opts_.clip_norm > 0.0 && norm > opts_.clip_norm) ? opts_.clip_norm / norm : 1.0;
    ++t_;
    const double lr = opts_.lr * lr_scale;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
    const T c = static_cast<T>(clip), ib1 = static_cast<T>(1.0 / bc1), ib2 = static_cast<T>(1.0 / bc2);
    const T tlr = static_cast<T>(lr), eps = static_cast<T>(opts_.eps);
    const T wd = static_cast<T>(opts_.weight_decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Tensor<T>* g = grads[i];
      if (!g || g->empty()) continue;
      auto p = params_[i]->data();
      auto m = m_[i].data();
      auto v = v_[i].data();
      auto gd = g->data();
      const bool decay = wd > T{0} && params_[i]->rank() == 2;
      for (std::size_t j = 0; j < p.size(); ++j) {
        const T gj = gd[j] * c;
        m[j] = b1 * m[j] + (T{1} - b1) * gj;
        v[j] = b2 * v[j] + (T{1} - b2) * gj * gj;
        T upd = (m[j] * ib1) / (std::sqrt(v[j] * ib2) + eps);
        if (decay) upd += wd * p[j];
        p[j] -= tlr * upd;
      }
    }
    return norm;
  }

  long steps() const noexcept { return t_; }

 private:
  std::vector<Tensor<T>*> params_;
  AdamOptions opts_;
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
};

}  // namespace arbsteer::numerics
