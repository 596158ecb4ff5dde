#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "ssrt/error.hpp"
#include "ssrt/semantic/templates.hpp"

namespace ssrt {

/// splitmix64 finalizer; combines seeds into independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

enum class Aggregation { Multiply, Concat };
enum class SpatialFeature { Map, Params };

inline std::string to_string(Aggregation a) { return a == Aggregation::Multiply ? "multiply" : "concat"; }
inline std::string to_string(SpatialFeature s) { return s == SpatialFeature::Map ? "map" : "params"; }
inline Aggregation aggregation_from_string(const std::string& s) {
  if (s == "multiply") return Aggregation::Multiply;
  if (s == "concat") return Aggregation::Concat;
  throw ValidationError("unknown aggregation '" + s + "'");
}
inline SpatialFeature spatial_feature_from_string(const std::string& s) {
  if (s == "map") return SpatialFeature::Map;
  if (s == "params") return SpatialFeature::Params;
  throw ValidationError("unknown spatial feature mode '" + s + "'");
}

/// Architecture hyperparameters. Class counts are filled from the vocabulary.
struct ModelConfig {
  std::size_t d = 32;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t refiner_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t ffn_dim = 64;
  std::size_t num_queries = 10;
  std::size_t k = 4;
  std::size_t patch = 4;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t channels = 3;
  std::size_t num_objects = 0;
  std::size_t num_actions = 0;
  std::size_t num_pairs = 0;
  Aggregation aggregation = Aggregation::Multiply;
  semantic::TemplateMode semantic_mode = semantic::TemplateMode::Oa;
  SpatialFeature spatial_feature = SpatialFeature::Map;
  std::size_t map_size = 32;
  double human_top_left = 0.25;
  bool decoder_self_attention = false;

  std::size_t grid_height() const { return image_height / patch; }
  std::size_t grid_width() const { return image_width / patch; }

  /// Params spatial features cannot be multiplied with semantic ones.
  Aggregation effective_aggregation() const {
    return spatial_feature == SpatialFeature::Params ? Aggregation::Concat : aggregation;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("model config: " + m); };
    if (d == 0 || heads == 0 || d % heads != 0) fail("d must be a positive multiple of heads");
    if (d % 4 != 0) fail("d must be divisible by 4");
    if (num_queries == 0) fail("num_queries must be positive");
    if (patch == 0 || image_height % patch != 0 || image_width % patch != 0)
      fail("image size must be divisible by the patch size");
    if (num_pairs > 0 && k > num_pairs) fail("k must not exceed the number of OA pairs");
    if (map_size < 4 || map_size % 4 != 0) fail("map_size must be a positive multiple of 4");
    if (!(human_top_left >= 0.0 && human_top_left < 1.0)) fail("human_top_left must lie in [0, 1)");
    if (ffn_dim == 0) fail("ffn_dim must be positive");
  }

  nlohmann::json to_json() const {
    return {{"d", d},
            {"heads", heads},
            {"encoder_layers", encoder_layers},
            {"refiner_layers", refiner_layers},
            {"decoder_layers", decoder_layers},
            {"ffn_dim", ffn_dim},
            {"num_queries", num_queries},
            {"k", k},
            {"patch", patch},
            {"image_height", image_height},
            {"image_width", image_width},
            {"channels", channels},
            {"num_objects", num_objects},
            {"num_actions", num_actions},
            {"num_pairs", num_pairs},
            {"aggregation", to_string(aggregation)},
            {"semantic_mode", semantic::to_string(semantic_mode)},
            {"spatial_feature", to_string(spatial_feature)},
            {"map_size", map_size},
            {"human_top_left", human_top_left},
            {"decoder_self_attention", decoder_self_attention}};
  }

  /// Reads the keys present in `j` over the current values.
  void update_from_json(const nlohmann::json& j) {
    try {
      for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const auto& v = it.value();
        if (key == "d") d = v.get<std::size_t>();
        else if (key == "heads") heads = v.get<std::size_t>();
        else if (key == "encoder_layers") encoder_layers = v.get<std::size_t>();
        else if (key == "refiner_layers") refiner_layers = v.get<std::size_t>();
        else if (key == "decoder_layers") decoder_layers = v.get<std::size_t>();
        else if (key == "ffn_dim") ffn_dim = v.get<std::size_t>();
        else if (key == "num_queries") num_queries = v.get<std::size_t>();
        else if (key == "k") k = v.get<std::size_t>();
        else if (key == "patch") patch = v.get<std::size_t>();
        else if (key == "image_height") image_height = v.get<std::size_t>();
        else if (key == "image_width") image_width = v.get<std::size_t>();
        else if (key == "channels") channels = v.get<std::size_t>();
        else if (key == "num_objects") num_objects = v.get<std::size_t>();
        else if (key == "num_actions") num_actions = v.get<std::size_t>();
        else if (key == "num_pairs") num_pairs = v.get<std::size_t>();
        else if (key == "aggregation") aggregation = aggregation_from_string(v.get<std::string>());
        else if (key == "semantic_mode") semantic_mode = semantic::template_mode_from_string(v.get<std::string>());
        else if (key == "spatial_feature") spatial_feature = spatial_feature_from_string(v.get<std::string>());
        else if (key == "map_size") map_size = v.get<std::size_t>();
        else if (key == "human_top_left") human_top_left = v.get<double>();
        else if (key == "decoder_self_attention") decoder_self_attention = v.get<bool>();
        else throw ValidationError("model config: unknown key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("model config: ") + e.what());
    }
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.update_from_json(j);
    return c;
  }
};

}  // namespace ssrt
