#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssrt/config.hpp"
#include "ssrt/error.hpp"
#include "ssrt/matchloss/loss.hpp"
#include "ssrt/spatial/stats.hpp"

namespace ssrt::train {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t epochs = 40;
  std::size_t batch_size = 5;
  /// Stop after this many optimizer steps; 0 means run every epoch.
  std::size_t max_steps = 0;
  double lr = 1e-3;
  double backbone_lr_mult = 0.01;
  double weight_decay = 1e-4;
  /// The learning rate is multiplied by lr_drop_factor every round(lr_drop_fraction * epochs) epochs.
  double lr_drop_fraction = 0.43;
  double lr_drop_factor = 0.1;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.1;
  /// Draw fresh spatial boxes every step instead of the fixed per-image draw.
  bool spatial_resample = true;
  /// Feed ground-truth OA pairs to the support branch instead of the predicted top-K.
  bool oracle_oa = false;
  /// Training-set mAP every this many epochs (and after the last one); 0 only after the last.
  std::size_t eval_every = 1;

  std::string train_data;
  /// Stats file; empty fits statistics on the training data.
  std::string stats;
  std::string stats_mode = "bivariate";
  std::string semantic_provider = "one-hot";
  std::string embeddings;
  std::string endpoint;

  ModelConfig model;
  LossWeights loss;

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("train config: " + m); };
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(lr > 0.0)) fail("lr must be positive");
    if (!(backbone_lr_mult > 0.0)) fail("backbone_lr_mult must be positive");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
    if (!(lr_drop_fraction > 0.0)) fail("lr_drop_fraction must be positive");
    if (!(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0)) fail("lr_drop_factor must lie in (0, 1]");
    if (!(grad_clip >= 0.0)) fail("grad_clip must be nonnegative");
    if (semantic_provider != "one-hot" && semantic_provider != "table" && semantic_provider != "remote")
      fail("semantic_provider must be one-hot, table or remote");
    if (semantic_provider == "table" && embeddings.empty()) fail("table provider needs an embeddings path");
    if (semantic_provider == "remote" && endpoint.empty()) fail("remote provider needs an endpoint");
    spatial::stats_mode_from_string(stats_mode);
    loss.validate();
  }

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"max_steps", max_steps},
            {"lr", lr},
            {"backbone_lr_mult", backbone_lr_mult},
            {"weight_decay", weight_decay},
            {"lr_drop_fraction", lr_drop_fraction},
            {"lr_drop_factor", lr_drop_factor},
            {"grad_clip", grad_clip},
            {"spatial_resample", spatial_resample},
            {"oracle_oa", oracle_oa},
            {"eval_every", eval_every},
            {"train_data", train_data},
            {"stats", stats},
            {"stats_mode", stats_mode},
            {"semantic_provider", semantic_provider},
            {"embeddings", embeddings},
            {"endpoint", endpoint},
            {"model", model.to_json()},
            {"loss", loss.to_json()}};
  }

  void update_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("train config must be a JSON object");
    try {
      for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        const auto& v = it.value();
        if (k == "seed") seed = v.get<std::uint64_t>();
        else if (k == "epochs") epochs = v.get<std::size_t>();
        else if (k == "batch_size") batch_size = v.get<std::size_t>();
        else if (k == "max_steps") max_steps = v.get<std::size_t>();
        else if (k == "lr") lr = v.get<double>();
        else if (k == "backbone_lr_mult") backbone_lr_mult = v.get<double>();
        else if (k == "weight_decay") weight_decay = v.get<double>();
        else if (k == "lr_drop_fraction") lr_drop_fraction = v.get<double>();
        else if (k == "lr_drop_factor") lr_drop_factor = v.get<double>();
        else if (k == "grad_clip") grad_clip = v.get<double>();
        else if (k == "spatial_resample") spatial_resample = v.get<bool>();
        else if (k == "oracle_oa") oracle_oa = v.get<bool>();
        else if (k == "eval_every") eval_every = v.get<std::size_t>();
        else if (k == "train_data") train_data = v.get<std::string>();
        else if (k == "stats") stats = v.get<std::string>();
        else if (k == "stats_mode") stats_mode = v.get<std::string>();
        else if (k == "semantic_provider") semantic_provider = v.get<std::string>();
        else if (k == "embeddings") embeddings = v.get<std::string>();
        else if (k == "endpoint") endpoint = v.get<std::string>();
        else if (k == "model") model.update_from_json(v);
        else if (k == "loss") loss.update_from_json(v);
        else throw ValidationError("train config: unknown key '" + k + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("train config: ") + e.what());
    }
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.update_from_json(j);
    return c;
  }
};

/// Dotted keys of every leaf, e.g. "lr", "model.d", "loss.box".
inline std::vector<std::string> config_keys(const nlohmann::json& j, const std::string& prefix = "") {
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string k = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      for (auto& sub : config_keys(*it, k)) keys.push_back(std::move(sub));
    } else {
      keys.push_back(k);
    }
  }
  return keys;
}

/// Environment variable consulted for a dotted key: SSRT_ + upper-case key with '.' -> '_'.
inline std::string env_name(const std::string& key) {
  std::string s = "SSRT_";
  for (char c : key) s += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

/// Sets a dotted key from its text form, parsed by the type of the value it replaces.
inline void apply_override(nlohmann::json& j, const std::string& key, const std::string& text) {
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ValidationError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    if (node->is_boolean()) {
      if (text == "true" || text == "1") *node = true;
      else if (text == "false" || text == "0") *node = false;
      else throw ValidationError("expected true/false for '" + key + "', got '" + text + "'");
    } else if (node->is_number_unsigned() || node->is_number_integer()) {
      std::size_t used = 0;
      const long long v = std::stoll(text, &used);
      if (used != text.size() || v < 0) throw ValidationError("expected a nonnegative integer for '" + key + "'");
      *node = static_cast<std::uint64_t>(v);
    } else if (node->is_number_float()) {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw ValidationError("expected a number for '" + key + "'");
      *node = v;
    } else if (node->is_object()) {
      throw ValidationError("config key '" + key + "' is a section");
    } else {
      *node = text;
    }
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ValidationError*>(&e)) throw;
    throw ValidationError("cannot parse '" + text + "' for config key '" + key + "'");
  }
}

/// Applies SSRT_* environment variables for every known key.
inline void apply_env_overrides(nlohmann::json& j) {
  for (const auto& key : config_keys(j))
    if (const char* v = std::getenv(env_name(key).c_str())) apply_override(j, key, v);
}

/// Reads a config file; relative data paths are resolved against the file's directory.
inline nlohmann::json read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open config: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config parse error in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object: " + path);
  const auto base = std::filesystem::path(path).parent_path();
  for (const char* k : {"train_data", "stats", "embeddings"}) {
    if (j.contains(k) && j[k].is_string()) {
      const std::filesystem::path p = j[k].get<std::string>();
      if (!p.empty() && p.is_relative()) j[k] = (base / p).lexically_normal().string();
    }
  }
  return j;
}

/// Defaults, then the file, then environment variables, then explicit key=value overrides.
inline TrainConfig resolve_config(const nlohmann::json& file, const std::vector<std::pair<std::string, std::string>>& sets) {
  TrainConfig c;
  c.update_from_json(file);
  nlohmann::json j = c.to_json();
  apply_env_overrides(j);
  for (const auto& [k, v] : sets) apply_override(j, k, v);
  TrainConfig out = TrainConfig::from_json(j);
  out.validate();
  return out;
}

}  // namespace ssrt::train
