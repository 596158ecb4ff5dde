#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssrt/error.hpp"

namespace ssrt::data {

struct ObjectClass {
  std::string name;
  std::string article = "a";  // used when templating sentences: "a pizza", "the phone"
};

struct ActionClass {
  std::string name;
  std::string gerund;
  std::string preposition;  // may be empty: "eating a pizza"
  bool allows_null_object = false;
};

/// A valid (object, action) combination. Null-object actions use `object == nullopt`.
struct OAPair {
  std::optional<std::size_t> object;
  std::size_t action = 0;
};

/// Object/action vocabulary plus the valid OA pairs, indexed 0..num_pairs()-1 in file order.
///
/// An action that allows a null object is only ever paired with the null object.
class OAVocabulary {
 public:
  static constexpr const char* kNullObject = "null";

  OAVocabulary() = default;
  OAVocabulary(std::vector<ObjectClass> objects, std::vector<ActionClass> actions, std::vector<OAPair> pairs)
      : objects_(std::move(objects)), actions_(std::move(actions)), pairs_(std::move(pairs)) {
    validate();
  }

  std::size_t num_objects() const { return objects_.size(); }
  std::size_t num_actions() const { return actions_.size(); }
  std::size_t num_pairs() const { return pairs_.size(); }

  const std::vector<ObjectClass>& objects() const { return objects_; }
  const std::vector<ActionClass>& actions() const { return actions_; }
  const std::vector<OAPair>& pairs() const { return pairs_; }
  const OAPair& pair(std::size_t i) const { return pairs_.at(i); }

  std::optional<std::size_t> pair_index(std::optional<std::size_t> object, std::size_t action) const {
    auto it = pair_lookup_.find(key_of(object, action));
    if (it == pair_lookup_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::size_t> object_index(const std::string& name) const {
    for (std::size_t i = 0; i < objects_.size(); ++i)
      if (objects_[i].name == name) return i;
    return std::nullopt;
  }
  std::optional<std::size_t> action_index(const std::string& name) const {
    for (std::size_t i = 0; i < actions_.size(); ++i)
      if (actions_[i].name == name) return i;
    return std::nullopt;
  }

  /// "object:action", with "null" standing in for the null object.
  std::string pair_key(std::size_t i) const {
    const OAPair& p = pairs_.at(i);
    return (p.object ? objects_[*p.object].name : std::string(kNullObject)) + ":" + actions_[p.action].name;
  }

  std::optional<std::size_t> pair_index_by_key(const std::string& key) const {
    for (std::size_t i = 0; i < pairs_.size(); ++i)
      if (pair_key(i) == key) return i;
    return std::nullopt;
  }

  /// 6 objects x 5 actions, 14 valid pairs of which 2 are null-object actions.
  static OAVocabulary default_synthetic() {
    std::vector<ObjectClass> objects = {{"phone", "the"}, {"pizza", "a"}, {"ball", "the"},
                                        {"book", "a"},    {"cake", "a"},  {"bicycle", "a"}};
    std::vector<ActionClass> actions = {{"hold", "holding", "", false},
                                        {"eat", "eating", "", false},
                                        {"look", "looking", "at", false},
                                        {"stand", "standing", "", true},
                                        {"walk", "walking", "", true}};
    std::vector<OAPair> pairs;
    for (std::size_t o = 0; o < 6; ++o) pairs.push_back({o, 0});
    pairs.push_back({1, 1});
    pairs.push_back({4, 1});
    for (std::size_t o : {0u, 2u, 3u, 5u}) pairs.push_back({o, 2});
    pairs.push_back({std::nullopt, 3});
    pairs.push_back({std::nullopt, 4});
    return OAVocabulary(std::move(objects), std::move(actions), std::move(pairs));
  }

  friend bool operator==(const OAVocabulary& a, const OAVocabulary& b) { return a.to_json() == b.to_json(); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["objects"] = nlohmann::json::array();
    for (const auto& o : objects_) j["objects"].push_back({{"name", o.name}, {"article", o.article}});
    j["actions"] = nlohmann::json::array();
    for (const auto& a : actions_)
      j["actions"].push_back({{"name", a.name},
                              {"gerund", a.gerund},
                              {"preposition", a.preposition},
                              {"allows_null_object", a.allows_null_object}});
    j["pairs"] = nlohmann::json::array();
    for (const auto& p : pairs_)
      j["pairs"].push_back({p.object ? objects_[*p.object].name : std::string(kNullObject), actions_[p.action].name});
    return j;
  }

  static OAVocabulary from_json(const nlohmann::json& j) {
    try {
      std::vector<ObjectClass> objects;
      for (const auto& o : j.at("objects")) objects.push_back({o.at("name"), o.value("article", "a")});
      std::vector<ActionClass> actions;
      for (const auto& a : j.at("actions")) {
        ActionClass ac{a.at("name"), a.value("gerund", ""), a.value("preposition", ""),
                       a.value("allows_null_object", false)};
        if (ac.gerund.empty()) ac.gerund = ac.name + "ing";
        actions.push_back(std::move(ac));
      }
      auto find = [](const auto& list, const std::string& name) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < list.size(); ++i)
          if (list[i].name == name) return i;
        return std::nullopt;
      };
      std::vector<OAPair> pairs;
      std::size_t idx = 0;
      for (const auto& p : j.at("pairs")) {
        const std::string on = p.at(0), an = p.at(1);
        auto a = find(actions, an);
        if (!a) throw ValidationError("pair " + std::to_string(idx) + ": unknown action '" + an + "'");
        std::optional<std::size_t> o;
        if (on != kNullObject) {
          o = find(objects, on);
          if (!o) throw ValidationError("pair " + std::to_string(idx) + ": unknown object '" + on + "'");
        }
        pairs.push_back({o, *a});
        ++idx;
      }
      return OAVocabulary(std::move(objects), std::move(actions), std::move(pairs));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("vocabulary: ") + e.what());
    }
  }

 private:
  static std::string key_of(std::optional<std::size_t> object, std::size_t action) {
    return (object ? std::to_string(*object) : std::string("-")) + "/" + std::to_string(action);
  }

  void validate() {
    pair_lookup_.clear();
    for (std::size_t i = 0; i < objects_.size(); ++i) {
      if (objects_[i].name.empty() || objects_[i].name == kNullObject)
        throw ValidationError("object " + std::to_string(i) + ": invalid name '" + objects_[i].name + "'");
      for (std::size_t k = 0; k < i; ++k)
        if (objects_[k].name == objects_[i].name) throw ValidationError("duplicate object " + objects_[i].name);
    }
    for (std::size_t i = 0; i < actions_.size(); ++i) {
      if (actions_[i].name.empty()) throw ValidationError("action " + std::to_string(i) + ": empty name");
      for (std::size_t k = 0; k < i; ++k)
        if (actions_[k].name == actions_[i].name) throw ValidationError("duplicate action " + actions_[i].name);
    }
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
      const OAPair& p = pairs_[i];
      const std::string where = "pair " + std::to_string(i);
      if (p.action >= actions_.size()) throw ValidationError(where + ": action index out of range");
      if (p.object && *p.object >= objects_.size()) throw ValidationError(where + ": object index out of range");
      if (p.object.has_value() == actions_[p.action].allows_null_object)
        throw ValidationError(where + ": object presence contradicts action '" + actions_[p.action].name + "'");
      if (!pair_lookup_.emplace(key_of(p.object, p.action), i).second)
        throw ValidationError(where + ": duplicate pair");
    }
  }

  std::vector<ObjectClass> objects_;
  std::vector<ActionClass> actions_;
  std::vector<OAPair> pairs_;
  std::map<std::string, std::size_t> pair_lookup_;
};

}  // namespace ssrt::data
