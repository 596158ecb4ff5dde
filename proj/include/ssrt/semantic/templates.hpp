#pragma once

#include <string>
#include <vector>

#include "ssrt/data/vocabulary.hpp"

namespace ssrt::semantic {

/// Oa: "A person is {gerund} {preposition} {article} {object}."
/// ActionOnly: "A person is {gerund}."
enum class TemplateMode { Oa, ActionOnly };

inline std::string to_string(TemplateMode m) { return m == TemplateMode::Oa ? "oa" : "action-only"; }
inline TemplateMode template_mode_from_string(const std::string& s) {
  if (s == "oa") return TemplateMode::Oa;
  if (s == "action-only") return TemplateMode::ActionOnly;
  throw ValidationError("unknown semantic mode '" + s + "'");
}

inline std::string templatize(std::size_t pair, const data::OAVocabulary& vocab, TemplateMode mode) {
  const data::OAPair& p = vocab.pair(pair);
  const data::ActionClass& a = vocab.actions()[p.action];
  std::vector<std::string> words = {"A", "person", "is", a.gerund};
  if (mode == TemplateMode::Oa && p.object) {
    const data::ObjectClass& o = vocab.objects()[*p.object];
    for (const auto* w : {&a.preposition, &o.article, &o.name})
      if (!w->empty()) words.push_back(*w);
  }
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s + ".";
}

}  // namespace ssrt::semantic
