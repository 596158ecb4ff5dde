#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssrt/data/dataset.hpp"
#include "ssrt/geometry.hpp"
#include "ssrt/spatial/gaussian.hpp"

namespace ssrt::spatial {

/// Bivariate: (dx, dy) and (dw, dh) modelled as two independent 2-D Gaussians.
/// Multivariate: one 4-D Gaussian over (dx, dy, dw, dh).
enum class StatsMode { Bivariate, Multivariate };

inline std::string to_string(StatsMode m) { return m == StatsMode::Bivariate ? "bivariate" : "multivariate"; }
inline StatsMode stats_mode_from_string(const std::string& s) {
  if (s == "bivariate") return StatsMode::Bivariate;
  if (s == "multivariate") return StatsMode::Multivariate;
  throw ValidationError("unknown stats mode '" + s + "'");
}

/// Distributions for one OA pair. Null-object pairs carry only `person`.
struct PairStats {
  std::optional<GaussianParams> xy;
  std::optional<GaussianParams> wh;
  std::optional<GaussianParams> xywh;
  GaussianParams person;  // over (w_h, h_h)
  std::size_t count = 0;

  friend bool operator==(const PairStats&, const PairStats&) = default;
};

struct PairEntry {
  std::string key;  // "object:action"
  bool null_object = false;
  std::optional<PairStats> stats;  // absent when the pair falls back to the global fit

  friend bool operator==(const PairEntry&, const PairEntry&) = default;
};

struct RSCStats {
  StatsMode mode = StatsMode::Bivariate;
  double epsilon = 1e-4;
  std::vector<PairEntry> pairs;  // indexed like the vocabulary's pairs
  PairStats fallback;

  /// Stats used for a pair: its own fit or the global fallback.
  const PairStats& resolve(std::size_t pair) const {
    const auto& e = pairs.at(pair);
    return e.stats ? *e.stats : fallback;
  }
  bool uses_fallback(std::size_t pair) const { return !pairs.at(pair).stats.has_value(); }
  bool is_null_object(std::size_t pair) const { return pairs.at(pair).null_object; }

  friend bool operator==(const RSCStats&, const RSCStats&) = default;
};

/// One human/object pair observed for an OA pair.
struct LayoutSample {
  std::size_t pair = 0;
  Box human;
  std::optional<Box> object;
};

namespace detail {

inline PairStats fit_pair(const std::vector<LayoutSample>& samples, StatsMode mode, double eps) {
  std::vector<std::vector<double>> xy, wh, xywh, person;
  for (const auto& s : samples) {
    person.push_back({s.human.width(), s.human.height()});
    if (!s.object) continue;
    const RSC r = rsc(s.human, *s.object);
    xy.push_back({r.dx, r.dy});
    wh.push_back({r.dw, r.dh});
    xywh.push_back({r.dx, r.dy, r.dw, r.dh});
  }
  PairStats ps;
  ps.count = samples.size();
  ps.person = regularized(fit_gaussian(person), eps);
  if (!xy.empty()) {
    if (mode == StatsMode::Bivariate) {
      ps.xy = regularized(fit_gaussian(xy), eps);
      ps.wh = regularized(fit_gaussian(wh), eps);
    } else {
      ps.xywh = regularized(fit_gaussian(xywh), eps);
    }
  }
  return ps;
}

}  // namespace detail

/// Fits per-pair RSC and person-size Gaussians; pairs with fewer than two samples use the
/// global fit over all samples.
inline RSCStats fit_stats(const std::vector<LayoutSample>& samples, const data::OAVocabulary& vocab, StatsMode mode,
                          double eps = 1e-4) {
  bool any_object = false;
  for (const auto& s : samples) any_object = any_object || s.object.has_value();
  if (!any_object) throw ValidationError("cannot fit spatial statistics: no human-object pairs in the data");
  RSCStats st;
  st.mode = mode;
  st.epsilon = eps;
  st.fallback = detail::fit_pair(samples, mode, eps);
  for (std::size_t p = 0; p < vocab.num_pairs(); ++p) {
    std::vector<LayoutSample> mine;
    for (const auto& s : samples)
      if (s.pair == p) mine.push_back(s);
    PairEntry e{vocab.pair_key(p), !vocab.pair(p).object.has_value(), std::nullopt};
    if (mine.size() >= 2) e.stats = detail::fit_pair(mine, mode, eps);
    st.pairs.push_back(std::move(e));
  }
  return st;
}

inline std::vector<LayoutSample> layout_samples(const data::Dataset& ds) {
  std::vector<LayoutSample> out;
  for (const auto& img : ds.images)
    for (const auto& h : img.hois) out.push_back({data::instance_pair(h, ds.vocab), h.human, h.object});
  return out;
}

inline RSCStats fit_stats(const data::Dataset& ds, StatsMode mode, double eps = 1e-4) {
  if (ds.images.empty()) throw ValidationError("cannot fit spatial statistics on an empty dataset");
  return fit_stats(layout_samples(ds), ds.vocab, mode, eps);
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline nlohmann::json pair_stats_json(const PairStats& ps) {
  nlohmann::json j;
  if (ps.xy) j["xy"] = ps.xy->to_json();
  if (ps.wh) j["wh"] = ps.wh->to_json();
  if (ps.xywh) j["xywh"] = ps.xywh->to_json();
  j["person"] = ps.person.to_json();
  j["count"] = ps.count;
  return j;
}

inline PairStats pair_stats_from_json(const nlohmann::json& j) {
  PairStats ps;
  if (j.contains("xy")) ps.xy = GaussianParams::from_json(j.at("xy"));
  if (j.contains("wh")) ps.wh = GaussianParams::from_json(j.at("wh"));
  if (j.contains("xywh")) ps.xywh = GaussianParams::from_json(j.at("xywh"));
  ps.person = GaussianParams::from_json(j.at("person"));
  ps.count = j.value("count", std::size_t{0});
  return ps;
}

}  // namespace detail

/// {"mode", "epsilon", "pairs": {"obj:action": {...}}, "pair_order": [...], "null_pairs": [...],
///  "fallback": {...}, "fallback_pairs": [...]}
inline nlohmann::json stats_to_json(const RSCStats& st) {
  nlohmann::json j;
  j["mode"] = to_string(st.mode);
  j["epsilon"] = st.epsilon;
  j["pairs"] = nlohmann::json::object();
  j["pair_order"] = nlohmann::json::array();
  j["null_pairs"] = nlohmann::json::array();
  j["fallback_pairs"] = nlohmann::json::array();
  for (const auto& e : st.pairs) {
    j["pair_order"].push_back(e.key);
    if (e.null_object) j["null_pairs"].push_back(e.key);
    if (e.stats) {
      j["pairs"][e.key] = detail::pair_stats_json(*e.stats);
    } else {
      j["fallback_pairs"].push_back(e.key);
    }
  }
  j["fallback"] = detail::pair_stats_json(st.fallback);
  return j;
}

inline RSCStats stats_from_json(const nlohmann::json& j) {
  try {
    RSCStats st;
    st.mode = stats_mode_from_string(j.at("mode").get<std::string>());
    st.epsilon = j.value("epsilon", 1e-4);
    st.fallback = detail::pair_stats_from_json(j.at("fallback"));
    std::vector<std::string> nulls = j.value("null_pairs", std::vector<std::string>{});
    for (const auto& key : j.at("pair_order")) {
      PairEntry e{key.get<std::string>(), false, std::nullopt};
      e.null_object = std::find(nulls.begin(), nulls.end(), e.key) != nulls.end();
      if (j.at("pairs").contains(e.key)) e.stats = detail::pair_stats_from_json(j.at("pairs").at(e.key));
      st.pairs.push_back(std::move(e));
    }
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("stats file: ") + e.what());
  }
}

/// Checks that the stats were fitted for exactly this vocabulary's pairs.
inline void check_stats_cover(const RSCStats& st, const data::OAVocabulary& vocab) {
  if (st.pairs.size() != vocab.num_pairs()) throw ValidationError("stats do not cover the vocabulary's pairs");
  for (std::size_t p = 0; p < vocab.num_pairs(); ++p)
    if (st.pairs[p].key != vocab.pair_key(p))
      throw ValidationError("stats pair " + std::to_string(p) + " is '" + st.pairs[p].key + "', expected '" +
                            vocab.pair_key(p) + "'");
}

inline void save_stats(const RSCStats& st, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot write stats: " + path);
  os << stats_to_json(st).dump(2);
}

inline RSCStats load_stats(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open stats: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("stats parse error: " + std::string(e.what()));
  }
  return stats_from_json(j);
}

}  // namespace ssrt::spatial
