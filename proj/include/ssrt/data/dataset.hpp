#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssrt/data/image_io.hpp"
#include "ssrt/data/vocabulary.hpp"
#include "ssrt/error.hpp"
#include "ssrt/geometry.hpp"

namespace ssrt::data {

/// One ground-truth triplet. The object box and class are absent exactly when the
/// action is a null-object action.
struct HOIInstance {
  Box human;
  std::optional<Box> object;
  std::optional<std::size_t> object_class;
  std::size_t action_class = 0;

  friend bool operator==(const HOIInstance&, const HOIInstance&) = default;
};

struct ImageAnnotation {
  std::string id;
  Image image;
  std::string path;  // set when pixels live in a separate PNM file
  std::vector<HOIInstance> hois;

  friend bool operator==(const ImageAnnotation&, const ImageAnnotation&) = default;
};

struct Dataset {
  OAVocabulary vocab;
  std::vector<ImageAnnotation> images;

  const ImageAnnotation* find(const std::string& id) const {
    for (const auto& img : images)
      if (img.id == id) return &img;
    return nullptr;
  }
};

/// Instances sharing the same human box, object box and object class, with their actions merged.
struct TargetGroup {
  Box human;
  std::optional<Box> object;
  std::optional<std::size_t> object_class;
  std::vector<std::size_t> actions;  // sorted, unique
};

inline std::vector<TargetGroup> group_instances(const ImageAnnotation& ann) {
  std::vector<TargetGroup> groups;
  for (const auto& h : ann.hois) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const TargetGroup& g) {
      return g.human == h.human && g.object == h.object && g.object_class == h.object_class;
    });
    if (it == groups.end()) {
      groups.push_back({h.human, h.object, h.object_class, {h.action_class}});
    } else if (std::find(it->actions.begin(), it->actions.end(), h.action_class) == it->actions.end()) {
      it->actions.push_back(h.action_class);
      std::sort(it->actions.begin(), it->actions.end());
    }
  }
  return groups;
}

/// Pair index of an instance; throws if the combination is not in the vocabulary.
inline std::size_t instance_pair(const HOIInstance& h, const OAVocabulary& vocab) {
  auto p = vocab.pair_index(h.object_class, h.action_class);
  if (!p) throw ValidationError("instance uses an (object, action) combination outside the vocabulary");
  return *p;
}

/// Multi-hot over the vocabulary's OA pairs present in the image.
inline std::vector<double> gt_oa_targets(const ImageAnnotation& ann, const OAVocabulary& vocab) {
  std::vector<double> t(vocab.num_pairs(), 0.0);
  for (const auto& h : ann.hois) t[instance_pair(h, vocab)] = 1.0;
  return t;
}

/// Distinct pair indices present in the image, ascending.
inline std::vector<std::size_t> gt_pairs(const ImageAnnotation& ann, const OAVocabulary& vocab) {
  std::set<std::size_t> s;
  for (const auto& h : ann.hois) s.insert(instance_pair(h, vocab));
  return {s.begin(), s.end()};
}

namespace detail {

inline std::array<double, 4> box_array(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw ValidationError("box must be an array of 4 numbers");
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
}

inline std::size_t class_ref(const nlohmann::json& j, const std::vector<std::string>& names, const char* what) {
  if (j.is_number_unsigned()) {
    const auto v = j.get<std::size_t>();
    if (v >= names.size()) throw ValidationError(std::string(what) + " index out of range");
    return v;
  }
  const std::string name = j.get<std::string>();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw ValidationError(std::string("unknown ") + what + " '" + name + "'");
}

}  // namespace detail

/// Checks one instance against the vocabulary and the unit-square constraint.
inline void validate_instance(const HOIInstance& h, const OAVocabulary& vocab) {
  if (h.action_class >= vocab.num_actions()) throw ValidationError("action class out of range");
  const bool null_action = vocab.actions()[h.action_class].allows_null_object;
  if (h.object.has_value() != h.object_class.has_value())
    throw ValidationError("object box and object class must both be present or both be null");
  if (null_action && h.object)
    throw ValidationError("action '" + vocab.actions()[h.action_class].name + "' takes no object");
  if (!null_action && !h.object)
    throw ValidationError("action '" + vocab.actions()[h.action_class].name + "' requires an object");
  if (!h.human.is_normalized() || (h.object && !h.object->is_normalized()))
    throw ValidationError("box outside the unit square");
  if (!vocab.pair_index(h.object_class, h.action_class))
    throw ValidationError("(object, action) combination is not a valid pair");
}

inline nlohmann::json dataset_to_json(const Dataset& ds) {
  nlohmann::json j;
  j["vocabulary"] = ds.vocab.to_json();
  j["images"] = nlohmann::json::array();
  for (const auto& img : ds.images) {
    nlohmann::json ji;
    ji["id"] = img.id;
    ji["width"] = img.image.width;
    ji["height"] = img.image.height;
    ji["channels"] = img.image.channels;
    if (!img.path.empty()) {
      ji["path"] = img.path;
    } else {
      ji["pixels"] = img.image.pixels;
    }
    ji["hois"] = nlohmann::json::array();
    for (const auto& h : img.hois) {
      nlohmann::json jh;
      jh["human"] = h.human.corners();
      jh["object"] = h.object ? nlohmann::json(h.object->corners()) : nlohmann::json(nullptr);
      jh["object_class"] =
          h.object_class ? nlohmann::json(ds.vocab.objects()[*h.object_class].name) : nlohmann::json(nullptr);
      jh["action_class"] = ds.vocab.actions()[h.action_class].name;
      ji["hois"].push_back(std::move(jh));
    }
    j["images"].push_back(std::move(ji));
  }
  return j;
}

/// Parses and validates a dataset document. `base_dir` resolves relative image paths.
inline Dataset dataset_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  Dataset ds;
  try {
    ds.vocab = OAVocabulary::from_json(j.at("vocabulary"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("vocabulary: ") + e.what());
  }
  std::vector<std::string> onames, anames;
  for (const auto& o : ds.vocab.objects()) onames.push_back(o.name);
  for (const auto& a : ds.vocab.actions()) anames.push_back(a.name);

  const auto& images = j.at("images");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& ji = images[i];
    std::size_t hoi_idx = 0;
    try {
      ImageAnnotation ann;
      ann.id = ji.at("id").is_string() ? ji.at("id").get<std::string>() : ji.at("id").dump();
      if (ji.contains("path") && !ji.at("path").is_null()) {
        ann.path = ji.at("path").get<std::string>();
        ann.image = read_pnm((base_dir / ann.path).string());
      } else {
        ann.image.width = ji.at("width").get<std::size_t>();
        ann.image.height = ji.at("height").get<std::size_t>();
        ann.image.channels = ji.value("channels", std::size_t{3});
        ann.image.pixels = ji.at("pixels").get<std::vector<std::uint8_t>>();
        if (ann.image.pixels.size() != ann.image.width * ann.image.height * ann.image.channels)
          throw ValidationError("pixel count does not match width x height x channels");
      }
      if (ji.contains("width") && ji.at("width").get<std::size_t>() != ann.image.width)
        throw ValidationError("width does not match image file");
      if (ji.contains("height") && ji.at("height").get<std::size_t>() != ann.image.height)
        throw ValidationError("height does not match image file");
      for (const auto& jh : ji.at("hois")) {
        std::optional<Box> object;
        std::optional<std::size_t> object_class;
        if (!jh.at("object").is_null()) object = Box::from_corners(detail::box_array(jh.at("object")));
        if (!jh.at("object_class").is_null()) object_class = detail::class_ref(jh.at("object_class"), onames, "object");
        HOIInstance h{Box::from_corners(detail::box_array(jh.at("human"))), object, object_class,
                      detail::class_ref(jh.at("action_class"), anames, "action")};
        validate_instance(h, ds.vocab);
        ann.hois.push_back(h);
        ++hoi_idx;
      }
      ds.images.push_back(std::move(ann));
    } catch (const std::exception& e) {
      throw ValidationError("image " + std::to_string(i) + ", hoi " + std::to_string(hoi_idx) + ": " + e.what());
    }
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open dataset: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("dataset parse error: " + std::string(e.what()));
  }
  try {
    return dataset_from_json(j, std::filesystem::path(path).parent_path());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("dataset schema error: " + std::string(e.what()));
  }
}

/// Writes the annotation document; images with a `path` are also written as PNM files next to it.
inline void save_dataset(const Dataset& ds, const std::string& path) {
  const auto base = std::filesystem::path(path).parent_path();
  for (const auto& img : ds.images)
    if (!img.path.empty()) write_pnm((base / img.path).string(), img.image);
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot write dataset: " + path);
  os << dataset_to_json(ds).dump();
}

}  // namespace ssrt::data
