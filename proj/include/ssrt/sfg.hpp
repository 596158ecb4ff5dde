#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "ssrt/config.hpp"
#include "ssrt/nn/layers.hpp"
#include "ssrt/spatial/spatial_map.hpp"
#include "ssrt/spatial/stats.hpp"

namespace ssrt {

/// Indices of the K largest scores, ordered by descending score then ascending index.
inline std::vector<std::size_t> select_topk(const std::vector<double>& s, std::size_t k) {
  if (k > s.size()) throw ValidationError("select_topk: K exceeds the number of scores");
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  idx.resize(k);
  return idx;
}

/// Two strided conv stages (k5 s2 p2, 16 then 32 channels, ReLU), flatten, linear to d.
template <class T>
class SpatialMapEncoder {
 public:
  SpatialMapEncoder() = default;
  SpatialMapEncoder(nn::ParamStore<T>& store, const std::string& name, std::size_t map_size, std::size_t d)
      : conv1_(store, name + ".conv1", 2, 16, 5, 2, 2), conv2_(store, name + ".conv2", 16, 32, 5, 2, 2) {
    if (map_size % 4 != 0) throw ValidationError("spatial map size must be divisible by 4");
    const std::size_t s = conv2_.output_size(conv1_.output_size(map_size));
    proj_ = nn::Linear<T>(store, name + ".proj", 32 * s * s, d);
    size_ = map_size;
  }

  /// map: [2 x B x B] -> [1 x d]
  nn::Var<T> operator()(nn::Var<T> map) const {
    if (map.shape() != nn::Shape{2, size_, size_}) throw ValidationError("spatial map shape mismatch");
    nn::Var<T> h = nn::relu(conv1_(map));
    h = nn::relu(conv2_(h));
    return proj_(nn::reshape(h, {1, h.value().size()}));
  }

 private:
  nn::Conv2d<T> conv1_, conv2_;
  nn::Linear<T> proj_;
  std::size_t size_ = 0;
};

template <class T>
struct SupportFeatures {
  nn::Var<T> features;  // [K x d]
  std::vector<std::size_t> pairs;
  std::vector<spatial::SampledPair> boxes;  // map mode only
  bool empty() const { return pairs.empty(); }
};

/// Image-level OA scoring plus aggregation of semantic and spatial features for the
/// selected pairs. `semantic_table` holds one raw provider row per pair (N_s x d_e).
template <class T>
class SupportFeatureGenerator {
 public:
  SupportFeatureGenerator() = default;
  SupportFeatureGenerator(nn::ParamStore<T>& store, const std::string& name, const ModelConfig& cfg,
                          const nn::Tensor<double>& semantic_table, const spatial::RSCStats& stats)
      : cfg_(cfg), stats_(stats), table_(semantic_table.cast<T>()) {
    if (table_.rows() != cfg.num_pairs)
      throw ValidationError("semantic table has " + std::to_string(table_.rows()) + " rows, expected " +
                            std::to_string(cfg.num_pairs));
    if (stats.pairs.size() != cfg.num_pairs) throw ValidationError("spatial stats do not cover the vocabulary");
    classifier_ = nn::FFN<T>(store, name + ".cls", {cfg.d, cfg.d, cfg.d, cfg.num_pairs});
    semantic_proj_ = nn::Linear<T>(store, name + ".sem", table_.cols(), cfg.d);
    if (cfg.spatial_feature == SpatialFeature::Map) {
      map_encoder_ = SpatialMapEncoder<T>(store, name + ".map", cfg.map_size, cfg.d);
    } else {
      param_proj_ = nn::Linear<T>(store, name + ".params", spatial::spatial_param_width(stats.mode), cfg.d);
    }
    if (cfg.effective_aggregation() == Aggregation::Concat)
      concat_proj_ = nn::Linear<T>(store, name + ".agg", 2 * cfg.d, cfg.d);
  }

  /// Logits of s: ffn3(mean over the H*W axis) -> [1 x N_s].
  nn::Var<T> oa_logits(nn::Var<T> encoded) const {
    if (encoded.rows() == 0) throw ValidationError("score_oa: empty feature map");
    return classifier_(nn::mean_rows(encoded));
  }

  /// Projected semantic rows for the given pairs, [n x d].
  nn::Var<T> semantic_features(nn::Tape<T>& tape, const std::vector<std::size_t>& pairs) const {
    nn::Tensor<T> raw = nn::Tensor<T>::matrix(pairs.size(), table_.cols());
    for (std::size_t i = 0; i < pairs.size(); ++i)
      for (std::size_t j = 0; j < table_.cols(); ++j) raw(i, j) = table_(pairs.at(i), j);
    return semantic_proj_(tape.constant(std::move(raw)));
  }

  /// One embedded spatial feature per pair, [n x d]. Map mode draws boxes from a
  /// stream seeded by (seed, pair), so the result depends only on those two.
  nn::Var<T> spatial_features(nn::Tape<T>& tape, const std::vector<std::size_t>& pairs, std::uint64_t seed,
                              std::vector<spatial::SampledPair>* boxes = nullptr) const {
    std::vector<nn::Var<T>> rows;
    if (cfg_.spatial_feature == SpatialFeature::Params) {
      const std::size_t w = spatial::spatial_param_width(stats_.mode);
      nn::Tensor<T> raw = nn::Tensor<T>::matrix(pairs.size(), w);
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto f = spatial::spatial_param_features(stats_, pairs[i]);
        for (std::size_t j = 0; j < w; ++j) raw(i, j) = static_cast<T>(f[j]);
      }
      return param_proj_(tape.constant(std::move(raw)));
    }
    const spatial::SamplerConfig sc{cfg_.map_size, cfg_.human_top_left};
    for (std::size_t p : pairs) {
      std::mt19937_64 rng(mix_seed(seed, p));
      const auto sp = spatial::sample_pair(stats_, p, rng, sc);
      const auto map = spatial::rasterize(sp.human, sp.object, cfg_.map_size);
      rows.push_back(map_encoder_(tape.constant(map.template to_tensor<T>())));
      if (boxes) boxes->push_back(sp);
    }
    return nn::concat_rows(rows);
  }

  /// g_agr: elementwise product, or concatenation projected back to d.
  nn::Var<T> aggregate(nn::Var<T> sem, nn::Var<T> spa) const {
    if (cfg_.effective_aggregation() == Aggregation::Multiply) return nn::mul(sem, spa);
    return concat_proj_(nn::concat_cols<T>({sem, spa}));
  }

  SupportFeatures<T> build(nn::Tape<T>& tape, const std::vector<std::size_t>& pairs, std::uint64_t seed) const {
    SupportFeatures<T> out;
    out.pairs = pairs;
    if (pairs.empty()) return out;
    for (std::size_t p : pairs)
      if (p >= cfg_.num_pairs) throw ValidationError("selected pair index out of range");
    out.features = aggregate(semantic_features(tape, pairs), spatial_features(tape, pairs, seed, &out.boxes));
    return out;
  }

  const nn::Tensor<T>& semantic_table() const { return table_; }
  const spatial::RSCStats& stats() const { return stats_; }

 private:
  ModelConfig cfg_;
  spatial::RSCStats stats_;
  nn::Tensor<T> table_;
  nn::FFN<T> classifier_;
  nn::Linear<T> semantic_proj_;
  SpatialMapEncoder<T> map_encoder_;
  nn::Linear<T> param_proj_;
  nn::Linear<T> concat_proj_;
};

}  // namespace ssrt
