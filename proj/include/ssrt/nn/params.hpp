#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ssrt/error.hpp"
#include "ssrt/nn/tensor.hpp"

namespace ssrt::nn {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

enum class Init { Zeros, Ones, FanInUniform, Normal };

/// Named parameters in registration order. Addresses are stable for the store's lifetime.
template <class T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  /// Registers a parameter. For FanInUniform the fan-in is the first dimension
  /// (affine maps are stored input-major) or the product of trailing dimensions for rank > 2.
  Parameter<T>& add(const std::string& name, Shape shape, Init init, double scale = 1.0) {
    if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = Tensor<T>(shape);
    switch (init) {
      case Init::Zeros:
        break;
      case Init::Ones:
        p->value.fill(T{1});
        break;
      case Init::FanInUniform: {
        std::size_t fan_in = shape.size() > 2 ? shape_volume(shape) / shape[0] : shape[0];
        const double bound = scale / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : p->value.values()) v = static_cast<T>(dist(rng_));
        break;
      }
      case Init::Normal: {
        std::normal_distribution<double> dist(0.0, scale);
        for (auto& v : p->value.values()) v = static_cast<T>(dist(rng_));
        break;
      }
    }
    p->zero_grad();
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Parameter<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
    return *params_[it->second];
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
};

}  // namespace ssrt::nn
