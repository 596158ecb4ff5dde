#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssrt/config.hpp"
#include "ssrt/data/dataset.hpp"
#include "ssrt/data/image_io.hpp"
#include "ssrt/heads.hpp"
#include "ssrt/nn/layers.hpp"
#include "ssrt/sfg.hpp"
#include "ssrt/spatial/stats.hpp"

namespace ssrt {

/// Frozen inputs the model is built around: vocabulary, spatial statistics and
/// one raw semantic embedding row per OA pair.
struct ModelAssets {
  data::OAVocabulary vocab = data::OAVocabulary::default_synthetic();
  spatial::RSCStats stats;
  nn::Tensor<double> semantic;
  std::string semantic_kind = "one-hot";

  nlohmann::json to_json() const {
    return {{"vocabulary", vocab.to_json()},
            {"stats", spatial::stats_to_json(stats)},
            {"semantic_kind", semantic_kind},
            {"semantic_shape", semantic.shape()},
            {"semantic", semantic.storage()}};
  }
  static ModelAssets from_json(const nlohmann::json& j) {
    try {
      ModelAssets a;
      a.vocab = data::OAVocabulary::from_json(j.at("vocabulary"));
      a.stats = spatial::stats_from_json(j.at("stats"));
      a.semantic_kind = j.at("semantic_kind").get<std::string>();
      a.semantic = nn::Tensor<double>(j.at("semantic_shape").get<nn::Shape>(),
                                      j.at("semantic").get<std::vector<double>>());
      return a;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("model assets: ") + e.what());
    }
  }
};

/// Pre-norm encoder block: self-attention with positions added to queries/keys, then FFN.
template <class T>
struct EncoderLayer {
  nn::LayerNorm<T> norm1, norm2;
  nn::MultiHeadAttention<T> attn;
  nn::FFN<T> ffn;

  EncoderLayer(nn::ParamStore<T>& s, const std::string& n, const ModelConfig& c)
      : norm1(s, n + ".norm1", c.d),
        norm2(s, n + ".norm2", c.d),
        attn(s, n + ".attn", c.d, c.heads),
        ffn(s, n + ".ffn", {c.d, c.ffn_dim, c.d}) {}

  nn::Var<T> operator()(nn::Var<T> x, nn::Var<T> pos) const {
    nn::Var<T> h = norm1(x);
    nn::Var<T> qk = nn::add(h, pos);
    x = nn::add(x, attn(qk, qk, h).output);
    return nn::add(x, ffn(norm2(x)));
  }
};

/// Query Refiner block: self-attention over queries, cross-attention to support features, FFN.
template <class T>
struct RefinerLayer {
  nn::LayerNorm<T> norm1, norm2, norm3;
  nn::MultiHeadAttention<T> self_attn, cross_attn;
  nn::FFN<T> ffn;

  RefinerLayer(nn::ParamStore<T>& s, const std::string& n, const ModelConfig& c)
      : norm1(s, n + ".norm1", c.d),
        norm2(s, n + ".norm2", c.d),
        norm3(s, n + ".norm3", c.d),
        self_attn(s, n + ".self_attn", c.d, c.heads),
        cross_attn(s, n + ".cross_attn", c.d, c.heads),
        ffn(s, n + ".ffn", {c.d, c.ffn_dim, c.d}) {}

  /// With no support rows the cross-attention step is skipped.
  nn::Var<T> operator()(nn::Var<T> q, const std::optional<nn::Var<T>>& support, nn::Tensor<T>* cross_weights) const {
    nn::Var<T> h = norm1(q);
    q = nn::add(q, self_attn(h, h, h).output);
    if (support) {
      auto r = cross_attn(norm2(q), *support, *support);
      if (cross_weights) *cross_weights = nn::mean_attention(r.weights);
      q = nn::add(q, r.output);
    }
    return nn::add(q, ffn(norm3(q)));
  }
};

/// Decoder block: optional self-attention, cross-attention to the encoded map, FFN.
template <class T>
struct DecoderLayer {
  bool use_self_attention = false;
  nn::LayerNorm<T> norm_self, norm_cross, norm_ffn;
  nn::MultiHeadAttention<T> self_attn, cross_attn;
  nn::FFN<T> ffn;

  DecoderLayer(nn::ParamStore<T>& s, const std::string& n, const ModelConfig& c)
      : use_self_attention(c.decoder_self_attention),
        norm_cross(s, n + ".norm_cross", c.d),
        norm_ffn(s, n + ".norm_ffn", c.d),
        cross_attn(s, n + ".cross_attn", c.d, c.heads),
        ffn(s, n + ".ffn", {c.d, c.ffn_dim, c.d}) {
    if (use_self_attention) {
      norm_self = nn::LayerNorm<T>(s, n + ".norm_self", c.d);
      self_attn = nn::MultiHeadAttention<T>(s, n + ".self_attn", c.d, c.heads);
    }
  }

  nn::Var<T> operator()(nn::Var<T> q, nn::Var<T> memory, nn::Var<T> memory_keys, nn::Tensor<T>* cross_weights) const {
    if (use_self_attention) {
      nn::Var<T> h = norm_self(q);
      q = nn::add(q, self_attn(h, h, h).output);
    }
    auto r = cross_attn(norm_cross(q), memory_keys, memory);
    if (cross_weights) *cross_weights = nn::mean_attention(r.weights);
    q = nn::add(q, r.output);
    return nn::add(q, ffn(norm_ffn(q)));
  }
};

struct ForwardOptions {
  /// Seed of the spatial-box sampler; each pair draws from mix_seed(seed, pair).
  std::uint64_t spatial_seed = 0;
  /// Ground-truth OA pairs replacing the predicted top-K (oracle-OA diagnostic).
  std::optional<std::vector<std::size_t>> oracle_pairs;
};

template <class T>
struct ForwardResult {
  HeadOutputs<T> heads;
  nn::Var<T> oa_logits;  // [1 x N_s]
  std::vector<double> oa_scores;
  SupportFeatures<T> support;
  nn::Tensor<T> decoder_attention;  // last decoder layer, [N_q x H*W], averaged over heads
  nn::Tensor<T> refiner_attention;  // last refiner layer, [N_q x K], empty without support
};

/// Evaluation-time sampler seed of an image.
inline std::uint64_t image_seed(const std::string& image_id) { return hash_string(image_id); }

template <class T>
class SSRTModel {
 public:
  SSRTModel(ModelConfig cfg, ModelAssets assets, std::uint64_t seed)
      : cfg_(std::move(cfg)), assets_(std::move(assets)), store_(seed) {
    cfg_.num_objects = assets_.vocab.num_objects();
    cfg_.num_actions = assets_.vocab.num_actions();
    cfg_.num_pairs = assets_.vocab.num_pairs();
    cfg_.validate();
    spatial::check_stats_cover(assets_.stats, assets_.vocab);
    const std::size_t patch_in = cfg_.patch * cfg_.patch * cfg_.channels;
    backbone_ = nn::Linear<T>(store_, "backbone.patch", patch_in, cfg_.d);
    for (std::size_t i = 0; i < cfg_.encoder_layers; ++i)
      encoder_.emplace_back(store_, "encoder." + std::to_string(i), cfg_);
    encoder_norm_ = nn::LayerNorm<T>(store_, "encoder.norm", cfg_.d);
    sfg_ = SupportFeatureGenerator<T>(store_, "sfg", cfg_, assets_.semantic, assets_.stats);
    queries_ = &store_.add("queries", {cfg_.num_queries, cfg_.d}, nn::Init::Normal, 1.0);
    for (std::size_t i = 0; i < cfg_.refiner_layers; ++i)
      refiner_.emplace_back(store_, "refiner." + std::to_string(i), cfg_);
    for (std::size_t i = 0; i < cfg_.decoder_layers; ++i)
      decoder_.emplace_back(store_, "decoder." + std::to_string(i), cfg_);
    decoder_norm_ = nn::LayerNorm<T>(store_, "decoder.norm", cfg_.d);
    heads_ = PredictionHeads<T>(store_, "heads", cfg_);
    pos_ = nn::positional_encoding<T>(cfg_.grid_height(), cfg_.grid_width(), cfg_.d);
  }

  SSRTModel(SSRTModel&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  const ModelAssets& assets() const { return assets_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }
  const SupportFeatureGenerator<T>& sfg() const { return sfg_; }
  const nn::Tensor<T>& positional() const { return pos_; }

  /// Non-overlapping patches flattened (row, col, channel) and mapped to d; pixels scaled to [0,1].
  nn::Var<T> backbone(nn::Tape<T>& tape, const data::Image& img) const {
    if (img.height != cfg_.image_height || img.width != cfg_.image_width || img.channels != cfg_.channels)
      throw ValidationError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) + "x" +
                            std::to_string(img.channels) + ", model expects " + std::to_string(cfg_.image_width) +
                            "x" + std::to_string(cfg_.image_height) + "x" + std::to_string(cfg_.channels));
    const std::size_t p = cfg_.patch, gh = cfg_.grid_height(), gw = cfg_.grid_width(), c = cfg_.channels;
    nn::Tensor<T> patches = nn::Tensor<T>::matrix(gh * gw, p * p * c);
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t px = 0; px < gw; ++px) {
        std::size_t k = 0;
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            for (std::size_t ch = 0; ch < c; ++ch)
              patches(py * gw + px, k++) = static_cast<T>(img.at(py * p + y, px * p + x, ch)) / T{255};
      }
    return backbone_(tape.constant(std::move(patches)));
  }

  nn::Var<T> encode(nn::Var<T> fc) const {
    if (encoder_.empty()) return fc;
    nn::Var<T> pos = fc.tape->constant(pos_);
    for (const auto& layer : encoder_) fc = layer(fc, pos);
    return encoder_norm_(fc);
  }

  nn::Var<T> refine_queries(nn::Tape<T>& tape, const std::optional<nn::Var<T>>& support,
                            nn::Tensor<T>* cross_weights = nullptr) const {
    nn::Var<T> q = tape.parameter(*queries_);
    for (const auto& layer : refiner_) q = layer(q, support, cross_weights);
    return q;
  }

  nn::Var<T> decode(nn::Var<T> fe, nn::Var<T> qr, nn::Tensor<T>* cross_weights = nullptr) const {
    nn::Var<T> keys = nn::add(fe, fe.tape->constant(pos_));
    for (const auto& layer : decoder_) qr = layer(qr, fe, keys, cross_weights);
    return decoder_.empty() ? qr : decoder_norm_(qr);
  }

  /// Pairs fed to the SFG: the predicted top-K, or the ground-truth pairs ordered by
  /// score and truncated to K when oracle pairs are given.
  std::vector<std::size_t> choose_pairs(const std::vector<double>& s, const ForwardOptions& opt) const {
    if (!opt.oracle_pairs) return select_topk(s, cfg_.k);
    std::vector<std::size_t> ranked = select_topk(s, s.size());
    std::vector<std::size_t> out;
    for (std::size_t p : ranked)
      if (out.size() < cfg_.k &&
          std::find(opt.oracle_pairs->begin(), opt.oracle_pairs->end(), p) != opt.oracle_pairs->end())
        out.push_back(p);
    return out;
  }

  ForwardResult<T> forward(nn::Tape<T>& tape, const data::Image& img, const ForwardOptions& opt = {}) const {
    ForwardResult<T> r;
    nn::Var<T> fe = encode(backbone(tape, img));
    r.oa_logits = sfg_.oa_logits(fe);
    const auto& lv = r.oa_logits.value();
    r.oa_scores.resize(lv.size());
    for (std::size_t i = 0; i < lv.size(); ++i) r.oa_scores[i] = sigmoid(static_cast<double>(lv[i]));
    r.support = sfg_.build(tape, choose_pairs(r.oa_scores, opt), opt.spatial_seed);
    std::optional<nn::Var<T>> support;
    if (!r.support.empty()) support = r.support.features;
    nn::Var<T> qr = refine_queries(tape, support, &r.refiner_attention);
    r.heads = heads_(decode(fe, qr, &r.decoder_attention));
    return r;
  }

  /// Gradient-free inference with the deterministic per-image sampler seed.
  PredictionSet predict(const data::ImageAnnotation& ann, bool oracle = false) const {
    nn::Tape<T> tape(false);
    ForwardOptions opt{image_seed(ann.id), std::nullopt};
    if (oracle) opt.oracle_pairs = data::gt_pairs(ann, assets_.vocab);
    const auto r = forward(tape, ann.image, opt);
    return to_prediction_set(r.heads, r.oa_scores);
  }

 private:
  ModelConfig cfg_;
  ModelAssets assets_;
  nn::ParamStore<T> store_;
  nn::Linear<T> backbone_;
  std::vector<EncoderLayer<T>> encoder_;
  nn::LayerNorm<T> encoder_norm_;
  SupportFeatureGenerator<T> sfg_;
  nn::Parameter<T>* queries_ = nullptr;
  std::vector<RefinerLayer<T>> refiner_;
  std::vector<DecoderLayer<T>> decoder_;
  nn::LayerNorm<T> decoder_norm_;
  PredictionHeads<T> heads_;
  nn::Tensor<T> pos_;
};

}  // namespace ssrt
