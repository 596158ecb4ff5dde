#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ssrt/nn/checkpoint.hpp"
#include "ssrt/nn/params.hpp"

namespace ssrt::train {

/// Adam with decoupled weight decay:
///   p <- p - lr * wd * p;  m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
///   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <class T>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  AdamW(nn::ParamStore<T>& store, Options opt) : store_(&store), opt_(opt) {
    for (const auto& p : store) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  /// One update; `lr_of(name)` gives the learning rate of each parameter.
  void step(const std::function<double(const std::string&)>& lr_of) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store_->size(); ++i) {
      auto& p = (*store_)[i];
      const double lr = lr_of(p.name);
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad.size() ? static_cast<double>(p.grad[k]) : 0.0;
        double w = static_cast<double>(p.value[k]);
        w -= lr * opt_.weight_decay * w;
        const double mk = opt_.beta1 * static_cast<double>(m[k]) + (1.0 - opt_.beta1) * g;
        const double vk = opt_.beta2 * static_cast<double>(v[k]) + (1.0 - opt_.beta2) * g * g;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        w -= lr * (mk / c1) / (std::sqrt(vk / c2) + opt_.eps);
        p.value[k] = static_cast<T>(w);
      }
    }
  }

  std::size_t steps() const { return t_; }

  void save(nn::Checkpoint<T>& ck) const {
    for (std::size_t i = 0; i < store_->size(); ++i) {
      ck.tensors.emplace_back("adam.m." + (*store_)[i].name, m_[i]);
      ck.tensors.emplace_back("adam.v." + (*store_)[i].name, v_[i]);
    }
  }

  void load(const nn::Checkpoint<T>& ck, std::size_t t) {
    for (std::size_t i = 0; i < store_->size(); ++i) {
      const auto* m = ck.find("adam.m." + (*store_)[i].name);
      const auto* v = ck.find("adam.v." + (*store_)[i].name);
      if (!m || !v) throw ValidationError("checkpoint has no optimizer state for " + (*store_)[i].name);
      if (m->shape() != m_[i].shape() || v->shape() != v_[i].shape())
        throw ValidationError("optimizer state shape mismatch for " + (*store_)[i].name);
      m_[i] = *m;
      v_[i] = *v;
    }
    t_ = t;
  }

 private:
  nn::ParamStore<T>* store_;
  Options opt_;
  std::vector<nn::Tensor<T>> m_, v_;
  std::size_t t_ = 0;
};

/// Scales all gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
template <class T>
double clip_grad_norm(nn::ParamStore<T>& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store)
    for (T g : p->grad.values()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& p : store)
      for (T& g : p->grad.values()) g *= s;
  }
  return norm;
}

}  // namespace ssrt::train
