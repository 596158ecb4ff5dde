#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssrt/config.hpp"
#include "ssrt/geometry.hpp"
#include "ssrt/nn/layers.hpp"

namespace ssrt {

/// Raw head outputs on the tape.
template <class T>
struct HeadOutputs {
  nn::Var<T> human_box;   // [N_q x 4] sigmoid (cx, cy, w, h)
  nn::Var<T> object_box;  // [N_q x 4] sigmoid (cx, cy, w, h)
  nn::Var<T> obj_logits;  // [N_q x (N_obj + 1)], background last
  nn::Var<T> hoi_logits;  // [N_q x N_act]
};

/// Four 3-layer FFNs over the decoder output embeddings.
template <class T>
class PredictionHeads {
 public:
  PredictionHeads() = default;
  PredictionHeads(nn::ParamStore<T>& store, const std::string& name, const ModelConfig& cfg)
      : human_(store, name + ".human_box", {cfg.d, cfg.d, cfg.d, 4}),
        object_(store, name + ".object_box", {cfg.d, cfg.d, cfg.d, 4}),
        obj_cls_(store, name + ".obj_cls", {cfg.d, cfg.d, cfg.d, cfg.num_objects + 1}),
        hoi_(store, name + ".hoi", {cfg.d, cfg.d, cfg.d, cfg.num_actions}) {}

  HeadOutputs<T> operator()(nn::Var<T> emb) const {
    return {nn::sigmoid(human_(emb)), nn::sigmoid(object_(emb)), obj_cls_(emb), hoi_(emb)};
  }

 private:
  nn::FFN<T> human_, object_, obj_cls_, hoi_;
};

struct QueryPrediction {
  std::array<double, 4> human_cxcywh{};
  std::array<double, 4> object_cxcywh{};
  std::vector<double> obj_probs;  // N_obj + 1, background last
  std::vector<double> hoi_raw;
  std::vector<double> hoi_weighted;

  double max_real_obj_prob() const {
    return obj_probs.size() < 2 ? 0.0 : *std::max_element(obj_probs.begin(), obj_probs.end() - 1);
  }
  /// Most likely real object class.
  std::size_t object_class() const {
    return static_cast<std::size_t>(std::max_element(obj_probs.begin(), obj_probs.end() - 1) - obj_probs.begin());
  }
};

/// Per-query predictions of one image plus its image-level OA scores.
struct PredictionSet {
  std::vector<QueryPrediction> queries;
  std::vector<double> oa_scores;
};

/// Scales raw interaction scores by the most confident real (non-background) object class.
inline std::vector<double> weight_scores(const std::vector<double>& hoi_raw, const std::vector<double>& obj_probs) {
  if (obj_probs.size() < 2) throw ValidationError("weight_scores: object distribution needs a real class");
  const double m = *std::max_element(obj_probs.begin(), obj_probs.end() - 1);
  std::vector<double> out(hoi_raw.size());
  for (std::size_t i = 0; i < hoi_raw.size(); ++i) out[i] = hoi_raw[i] * m;
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

/// Converts sigmoid (cx, cy, w, h) head output to a corner-form box. Degenerate
/// extents are widened to a tiny positive side so downstream geometry stays valid.
inline Box box_from_cxcywh(const std::array<double, 4>& b) {
  constexpr double kMinSide = 1e-9;
  const double w = std::max(b[2], kMinSide), h = std::max(b[3], kMinSide);
  return Box::from_center(b[0], b[1], w, h);
}

template <class T>
PredictionSet to_prediction_set(const HeadOutputs<T>& out, const std::vector<double>& oa_scores = {}) {
  PredictionSet ps;
  ps.oa_scores = oa_scores;
  const auto& hb = out.human_box.value();
  const auto& ob = out.object_box.value();
  const auto& ol = out.obj_logits.value();
  const auto& hl = out.hoi_logits.value();
  for (std::size_t q = 0; q < hb.rows(); ++q) {
    QueryPrediction p;
    for (std::size_t j = 0; j < 4; ++j) {
      p.human_cxcywh[j] = static_cast<double>(hb(q, j));
      p.object_cxcywh[j] = static_cast<double>(ob(q, j));
    }
    std::vector<double> logits(ol.cols());
    for (std::size_t j = 0; j < ol.cols(); ++j) logits[j] = static_cast<double>(ol(q, j));
    p.obj_probs = softmax(logits);
    p.hoi_raw.resize(hl.cols());
    for (std::size_t j = 0; j < hl.cols(); ++j) p.hoi_raw[j] = sigmoid(static_cast<double>(hl(q, j)));
    p.hoi_weighted = weight_scores(p.hoi_raw, p.obj_probs);
    ps.queries.push_back(std::move(p));
  }
  return ps;
}

/// Prediction dump of one image: one record per query.
inline nlohmann::json prediction_dump(const std::string& image_id, const PredictionSet& ps) {
  nlohmann::json qs = nlohmann::json::array();
  for (std::size_t i = 0; i < ps.queries.size(); ++i) {
    const auto& q = ps.queries[i];
    qs.push_back({{"query", i},
                  {"b_h", q.human_cxcywh},
                  {"b_o", q.object_cxcywh},
                  {"obj_probs", q.obj_probs},
                  {"hoi_raw", q.hoi_raw},
                  {"hoi_weighted", q.hoi_weighted}});
  }
  return {{"image_id", image_id}, {"oa_scores", ps.oa_scores}, {"queries", qs}};
}

inline PredictionSet prediction_set_from_dump(const nlohmann::json& j) {
  try {
    PredictionSet ps;
    ps.oa_scores = j.value("oa_scores", std::vector<double>{});
    for (const auto& r : j.at("queries")) {
      QueryPrediction q;
      q.human_cxcywh = r.at("b_h").get<std::array<double, 4>>();
      q.object_cxcywh = r.at("b_o").get<std::array<double, 4>>();
      q.obj_probs = r.at("obj_probs").get<std::vector<double>>();
      q.hoi_raw = r.at("hoi_raw").get<std::vector<double>>();
      q.hoi_weighted = r.contains("hoi_weighted") ? r.at("hoi_weighted").get<std::vector<double>>()
                                                  : weight_scores(q.hoi_raw, q.obj_probs);
      ps.queries.push_back(std::move(q));
    }
    return ps;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("prediction dump: ") + e.what());
  }
}

}  // namespace ssrt
