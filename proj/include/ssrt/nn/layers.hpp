#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ssrt/nn/ops.hpp"
#include "ssrt/nn/params.hpp"

namespace ssrt::nn {

/// y = x W + b, with W stored [in x out].
template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out)
      : w_(&store.add(name + ".weight", {in, out}, Init::FanInUniform)),
        b_(&store.add(name + ".bias", {1, out}, Init::Zeros)) {}

  Var<T> operator()(Var<T> x) const { return affine(x, x.tape->parameter(*w_), x.tape->parameter(*b_)); }

  std::size_t in_features() const { return w_->value.dim(0); }
  std::size_t out_features() const { return w_->value.dim(1); }
  Parameter<T>& weight() const { return *w_; }
  Parameter<T>& bias() const { return *b_; }

 private:
  Parameter<T>* w_ = nullptr;
  Parameter<T>* b_ = nullptr;
};

template <class T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t width)
      : gamma_(&store.add(name + ".gamma", {1, width}, Init::Ones)),
        beta_(&store.add(name + ".beta", {1, width}, Init::Zeros)) {}

  Var<T> operator()(Var<T> x) const {
    return layer_norm(x, x.tape->parameter(*gamma_), x.tape->parameter(*beta_));
  }

 private:
  Parameter<T>* gamma_ = nullptr;
  Parameter<T>* beta_ = nullptr;
};

/// Stack of affine maps with ReLU between them; the last layer is linear.
/// `widths` lists every layer boundary, e.g. {in, hidden, hidden, out} for three layers.
template <class T>
class FFN {
 public:
  FFN() = default;
  FFN(ParamStore<T>& store, const std::string& name, const std::vector<std::size_t>& widths) {
    if (widths.size() < 2) throw ValidationError("FFN needs at least two widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
      layers_.emplace_back(store, name + ".l" + std::to_string(i), widths[i], widths[i + 1]);
  }

  Var<T> operator()(Var<T> x) const {
    if (x.cols() != layers_.front().in_features()) throw ValidationError("FFN: input width mismatch");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i](x);
      if (i + 1 < layers_.size()) x = relu(x);
    }
    return x;
  }

  const std::vector<Linear<T>>& layers() const { return layers_; }

 private:
  std::vector<Linear<T>> layers_;
};

/// Scaled dot-product multi-head attention with separate q/k/v/output projections.
template <class T>
class MultiHeadAttention {
 public:
  struct Result {
    Var<T> output;
    std::vector<Var<T>> weights;  // one [n_q x n_k] row-stochastic matrix per head
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, std::size_t d, std::size_t heads)
      : heads_(heads),
        q_(store, name + ".q", d, d),
        k_(store, name + ".k", d, d),
        v_(store, name + ".v", d, d),
        o_(store, name + ".o", d, d) {
    if (heads == 0 || d % heads != 0) throw ValidationError("attention width must be divisible by head count");
  }

  Result operator()(Var<T> query, Var<T> key, Var<T> value) const {
    if (key.rows() != value.rows()) throw ValidationError("attention: key/value length mismatch");
    const std::size_t d = q_.out_features();
    const std::size_t dh = d / heads_;
    const T scale_factor = T{1} / std::sqrt(static_cast<T>(dh));
    Var<T> q = q_(query);
    Var<T> k = k_(key);
    Var<T> v = v_(value);
    Result r;
    std::vector<Var<T>> head_out;
    for (std::size_t h = 0; h < heads_; ++h) {
      Var<T> qh = heads_ == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
      Var<T> kh = heads_ == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
      Var<T> vh = heads_ == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
      Var<T> attn = softmax_rows(scale(matmul_bt(qh, kh), scale_factor));
      r.weights.push_back(attn);
      head_out.push_back(matmul(attn, vh));
    }
    r.output = o_(heads_ == 1 ? head_out[0] : concat_cols(head_out));
    return r;
  }

  std::size_t heads() const { return heads_; }
  const Linear<T>& query_proj() const { return q_; }
  const Linear<T>& key_proj() const { return k_; }
  const Linear<T>& value_proj() const { return v_; }
  const Linear<T>& output_proj() const { return o_; }

 private:
  std::size_t heads_ = 1;
  Linear<T> q_, k_, v_, o_;
};

/// Averages per-head attention weights into one [n_q x n_k] matrix.
template <class T>
Tensor<T> mean_attention(const std::vector<Var<T>>& weights) {
  Tensor<T> out(weights.at(0).shape());
  for (const auto& w : weights) {
    const auto& wv = w.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wv[i];
  }
  for (auto& v : out.values()) v /= static_cast<T>(weights.size());
  return out;
}

/// Conv stage: conv2d followed by ReLU.
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
         std::size_t stride, std::size_t pad)
      : w_(&store.add(name + ".weight", {out_ch, in_ch, kernel, kernel}, Init::FanInUniform)),
        b_(&store.add(name + ".bias", {1, out_ch}, Init::Zeros)),
        stride_(stride),
        pad_(pad) {}

  Var<T> operator()(Var<T> x) const {
    return conv2d(x, x.tape->parameter(*w_), x.tape->parameter(*b_), stride_, pad_);
  }

  std::size_t output_size(std::size_t in) const {
    const std::size_t k = w_->value.dim(2);
    return (in + 2 * pad_ - k) / stride_ + 1;
  }
  std::size_t out_channels() const { return w_->value.dim(0); }

 private:
  Parameter<T>* w_ = nullptr;
  Parameter<T>* b_ = nullptr;
  std::size_t stride_ = 1;
  std::size_t pad_ = 0;
};

/// Fixed 2-D sinusoidal encoding for an H x W grid, flattened row-major to [H*W x d].
/// The first d/2 channels encode the row index, the rest the column index; within
/// each half, even channels are sines and odd channels cosines.
template <class T>
Tensor<T> positional_encoding(std::size_t height, std::size_t width, std::size_t d) {
  if (d == 0 || d % 4 != 0) throw ValidationError("positional encoding width must be divisible by 4");
  const std::size_t half = d / 2;
  Tensor<T> out = Tensor<T>::matrix(height * width, d);
  constexpr double kTwoPi = 6.283185307179586;
  auto encode = [&](std::size_t row, std::size_t offset, double pos, double extent) {
    const double p = (pos + 0.5) / extent * kTwoPi;
    for (std::size_t i = 0; i < half; i += 2) {
      const double freq = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(half));
      out(row, offset + i) = static_cast<T>(std::sin(p / freq));
      out(row, offset + i + 1) = static_cast<T>(std::cos(p / freq));
    }
  };
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t r = y * width + x;
      encode(r, 0, static_cast<double>(y), static_cast<double>(height));
      encode(r, half, static_cast<double>(x), static_cast<double>(width));
    }
  }
  return out;
}

}  // namespace ssrt::nn
