#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "encore/archive.hpp"
#include "encore/encoder.hpp"

namespace encore {

// Adam over named parameter groups. One learning rate for every group; bias
// correction as in the original formulation. Optional global-norm clipping.
template <class T>
class Adam {
 public:
  Adam() = default;

  Adam(std::vector<NamedParam<T>> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
        eps_(eps) {
    for (auto& p : params_) {
      m_.push_back(Tensor<T>::zeros(p.var.value().shape()));
      v_.push_back(Tensor<T>::zeros(p.var.value().shape()));
    }
  }

  // applies one update from the accumulated gradients, then zeroes them
  void step(double grad_clip = 0.0) {
    ++t_;
    double clip_scale = 1.0;
    if (grad_clip > 0.0) {
      double sq = 0;
      for (auto& p : params_) {
        if (!p.var.grad().defined()) continue;
        const Tensor<T>& g = p.var.grad();
        for (i64 i = 0; i < g.numel(); ++i) sq += double(g[i]) * double(g[i]);
      }
      const double norm = std::sqrt(sq);
      if (norm > grad_clip) clip_scale = grad_clip / norm;
    }
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].var;
      if (!p.grad().defined()) continue;  // no path reached it this step
      Tensor<T>& theta = p.value();
      Tensor<T>& g = p.grad();
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      const i64 n = theta.numel();
      for (i64 i = 0; i < n; ++i) {
        const double gi = double(g[i]) * clip_scale;
        const double mi = beta1_ * double(m[i]) + (1 - beta1_) * gi;
        const double vi = beta2_ * double(v[i]) + (1 - beta2_) * gi * gi;
        m[i] = T(mi);
        v[i] = T(vi);
        theta[i] -= T(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
      }
      g.zero();
    }
  }

  void zero_grad() {
    for (auto& p : params_)
      if (p.var.grad().defined()) p.var.grad().zero();
  }

  i64 step_count() const { return t_; }
  double lr() const { return lr_; }
  const std::vector<NamedParam<T>>& params() const { return params_; }

  void serialize(Archive& a, const std::string& prefix) const {
    a.put_i64(prefix + "t", t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      a.put_tensor(prefix + params_[k].name + ".m", m_[k]);
      a.put_tensor(prefix + params_[k].name + ".v", v_[k]);
    }
  }

  void deserialize(const Archive& a, const std::string& prefix) {
    t_ = a.get_i64(prefix + "t");
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<T> m = a.template get_tensor<T>(prefix + params_[k].name + ".m");
      Tensor<T> v = a.template get_tensor<T>(prefix + params_[k].name + ".v");
      if (m.shape() != m_[k].shape() || v.shape() != v_[k].shape())
        throw std::runtime_error("optimizer state shape mismatch for " +
                                 params_[k].name);
      m_[k] = std::move(m);
      v_[k] = std::move(v);
    }
  }

 private:
  std::vector<NamedParam<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  i64 t_ = 0;
};

}  // namespace encore
