#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssrt/data/dataset.hpp"
#include "ssrt/geometry.hpp"
#include "ssrt/heads.hpp"

namespace ssrt::eval {

enum class Scenario { Strict = 1, Relaxed = 2 };
enum class ClassMode { Action, Pair };

inline Scenario scenario_from_int(int s) {
  if (s == 1) return Scenario::Strict;
  if (s == 2) return Scenario::Relaxed;
  throw ValidationError("scenario must be 1 or 2");
}
inline std::string to_string(ClassMode m) { return m == ClassMode::Action ? "action" : "pair"; }
inline ClassMode class_mode_from_string(const std::string& s) {
  if (s == "action") return ClassMode::Action;
  if (s == "pair") return ClassMode::Pair;
  throw ValidationError("class mode must be 'action' or 'pair'");
}

/// A sigmoid object-box output counts as the null box when all four entries are below this.
inline constexpr double kNullBoxThreshold = 0.01;
inline constexpr double kIouThreshold = 0.5;
inline constexpr std::size_t kRareThreshold = 10;

struct Detection {
  std::string image_id;
  Box human;
  std::optional<Box> object;  // nullopt: predicted null box
  std::size_t action = 0;
  std::optional<std::size_t> object_class;
  double score = 0.0;
};

/// Ground-truth instance in evaluation form.
struct GroundTruth {
  Box human;
  std::optional<Box> object;
  std::size_t cls = 0;
};

inline bool is_null_box(const std::array<double, 4>& sigmoid_out) {
  return std::all_of(sigmoid_out.begin(), sigmoid_out.end(), [](double v) { return v < kNullBoxThreshold; });
}

/// Evaluation class of a ground-truth instance.
inline std::size_t gt_class(const data::HOIInstance& h, const data::OAVocabulary& vocab, ClassMode mode) {
  return mode == ClassMode::Action ? h.action_class : data::instance_pair(h, vocab);
}

/// Evaluation class of a detection; nullopt when its (object, action) combination is not a vocabulary pair.
inline std::optional<std::size_t> detection_class(const Detection& d, const data::OAVocabulary& vocab,
                                                  ClassMode mode) {
  if (mode == ClassMode::Action) return d.action;
  const bool null_action = vocab.actions().at(d.action).allows_null_object;
  return vocab.pair_index(null_action ? std::nullopt : d.object_class, d.action);
}

/// Greedy match of one detection against the unused ground truth of its class. Returns
/// the index of the matched ground truth (marked used) or nullopt for a false positive.
/// Among qualifying ground truth the one with the highest min(human IoU, object IoU) wins.
inline std::optional<std::size_t> match_detection(const Detection& det, const std::vector<GroundTruth>& gts,
                                                  std::vector<bool>& used, std::size_t cls, Scenario scenario) {
  std::optional<std::size_t> best;
  double best_iou = -1.0;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const GroundTruth& gt = gts[g];
    if (used[g] || gt.cls != cls) continue;
    const double hi = iou(det.human, gt.human);
    if (!(hi > kIouThreshold)) continue;
    double overlap = hi;
    if (gt.object) {
      if (!det.object) continue;
      const double oi = iou(*det.object, *gt.object);
      if (!(oi > kIouThreshold)) continue;
      overlap = std::min(hi, oi);
    } else if (scenario == Scenario::Strict && det.object) {
      continue;
    }
    if (overlap > best_iou) {
      best_iou = overlap;
      best = g;
    }
  }
  if (best) used[*best] = true;
  return best;
}

/// All-point interpolated AP of a score-sorted TP/FP sequence.
inline double average_precision(const std::vector<bool>& tp, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::vector<double> recall, precision;
  double ctp = 0, cfp = 0;
  for (bool t : tp) {
    (t ? ctp : cfp) += 1.0;
    recall.push_back(ctp / static_cast<double>(n_gt));
    precision.push_back(ctp / (ctp + cfp));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

struct EvalConfig {
  Scenario scenario = Scenario::Relaxed;
  ClassMode class_mode = ClassMode::Action;
  /// Per-pair instance counts of the training set, for the Rare/Non-rare split.
  /// Defaults to the evaluated dataset's own counts.
  std::optional<std::vector<std::size_t>> train_pair_counts;
};

struct ClassResult {
  std::size_t cls = 0;
  std::string name;
  double ap = 0.0;
  std::size_t n_gt = 0;
  std::size_t n_det = 0;
  std::size_t n_tp = 0;
  std::optional<bool> rare;
};

/// Per-class AP and their means. Classes without ground truth are left out of every mean.
struct EvalReport {
  Scenario scenario = Scenario::Relaxed;
  ClassMode class_mode = ClassMode::Action;
  std::vector<ClassResult> classes;
  double map = 0.0;
  std::optional<double> map_rare, map_non_rare;
  std::size_t n_images = 0, n_detections = 0, n_ground_truth = 0;

  std::optional<double> ap_of(std::size_t cls) const {
    for (const auto& c : classes)
      if (c.cls == cls) return c.ap;
    return std::nullopt;
  }

  nlohmann::json to_json() const {
    nlohmann::json cj = nlohmann::json::array();
    for (const auto& c : classes) {
      nlohmann::json e = {{"class", c.cls}, {"name", c.name}, {"ap", c.ap},
                          {"n_gt", c.n_gt}, {"n_det", c.n_det}, {"n_tp", c.n_tp}};
      if (c.rare) e["rare"] = *c.rare;
      cj.push_back(e);
    }
    nlohmann::json j = {{"scenario", static_cast<int>(scenario)},
                        {"class_mode", to_string(class_mode)},
                        {"mAP", map},
                        {"classes", cj},
                        {"n_images", n_images},
                        {"n_detections", n_detections},
                        {"n_ground_truth", n_ground_truth}};
    if (class_mode == ClassMode::Pair) {
      j["splits"] = {{"full", map},
                     {"rare", map_rare ? nlohmann::json(*map_rare) : nlohmann::json(nullptr)},
                     {"non_rare", map_non_rare ? nlohmann::json(*map_non_rare) : nlohmann::json(nullptr)}};
    }
    return j;
  }

  std::string to_csv() const {
    std::string s = "class,name,ap,n_gt,n_det,n_tp,rare\n";
    for (const auto& c : classes) {
      s += std::to_string(c.cls) + "," + c.name + "," + std::to_string(c.ap) + "," + std::to_string(c.n_gt) + "," +
           std::to_string(c.n_det) + "," + std::to_string(c.n_tp) + "," +
           (c.rare ? (*c.rare ? "1" : "0") : "") + "\n";
    }
    return s;
  }
};

inline std::vector<std::size_t> pair_counts(const data::Dataset& ds) {
  std::vector<std::size_t> counts(ds.vocab.num_pairs(), 0);
  for (const auto& img : ds.images)
    for (const auto& h : img.hois) ++counts[data::instance_pair(h, ds.vocab)];
  return counts;
}

inline EvalReport evaluate(const std::vector<Detection>& detections, const data::Dataset& ds,
                           const EvalConfig& cfg = {}) {
  const auto& vocab = ds.vocab;
  const std::size_t n_classes = cfg.class_mode == ClassMode::Action ? vocab.num_actions() : vocab.num_pairs();
  std::map<std::string, std::vector<GroundTruth>> gts;
  std::vector<std::size_t> n_gt(n_classes, 0);
  for (const auto& img : ds.images) {
    auto& v = gts[img.id];
    for (const auto& h : img.hois) {
      const std::size_t c = gt_class(h, vocab, cfg.class_mode);
      v.push_back({h.human, h.object, c});
      ++n_gt[c];
    }
  }

  // Stable order: score descending, then input order.
  std::vector<std::size_t> order(detections.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return detections[a].score > detections[b].score; });

  std::map<std::string, std::vector<bool>> used;
  for (const auto& [id, v] : gts) used[id].assign(v.size(), false);
  std::vector<std::vector<bool>> tp(n_classes);
  for (std::size_t i : order) {
    const Detection& d = detections[i];
    const auto cls = detection_class(d, vocab, cfg.class_mode);
    if (!cls) continue;
    auto it = gts.find(d.image_id);
    bool hit = false;
    if (it != gts.end()) hit = match_detection(d, it->second, used[d.image_id], *cls, cfg.scenario).has_value();
    tp[*cls].push_back(hit);
  }

  EvalReport r;
  r.scenario = cfg.scenario;
  r.class_mode = cfg.class_mode;
  r.n_images = ds.images.size();
  r.n_detections = detections.size();
  const auto counts = cfg.train_pair_counts ? *cfg.train_pair_counts : pair_counts(ds);
  double sum = 0, sum_rare = 0, sum_non = 0;
  std::size_t n = 0, n_rare = 0, n_non = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    r.n_ground_truth += n_gt[c];
    if (n_gt[c] == 0) continue;
    ClassResult cr;
    cr.cls = c;
    cr.name = cfg.class_mode == ClassMode::Action ? vocab.actions()[c].name : vocab.pair_key(c);
    cr.ap = average_precision(tp[c], n_gt[c]);
    cr.n_gt = n_gt[c];
    cr.n_det = tp[c].size();
    cr.n_tp = static_cast<std::size_t>(std::count(tp[c].begin(), tp[c].end(), true));
    sum += cr.ap;
    ++n;
    if (cfg.class_mode == ClassMode::Pair) {
      cr.rare = counts.at(c) < kRareThreshold;
      (*cr.rare ? sum_rare : sum_non) += cr.ap;
      ++(*cr.rare ? n_rare : n_non);
    }
    r.classes.push_back(cr);
  }
  r.map = n ? sum / static_cast<double>(n) : 0.0;
  if (n_rare) r.map_rare = sum_rare / static_cast<double>(n_rare);
  if (n_non) r.map_non_rare = sum_non / static_cast<double>(n_non);
  return r;
}

/// One detection per (query, action) scored by the weighted interaction score. A query's
/// object box becomes null when its sigmoid outputs are all below the null-box threshold;
/// its object class is the most likely real class.
inline std::vector<Detection> detections_from_predictions(const std::string& image_id, const PredictionSet& ps) {
  std::vector<Detection> out;
  for (const auto& q : ps.queries) {
    const Box human = box_from_cxcywh(q.human_cxcywh);
    std::optional<Box> object;
    if (!is_null_box(q.object_cxcywh)) object = box_from_cxcywh(q.object_cxcywh);
    const std::size_t oc = q.object_class();
    for (std::size_t a = 0; a < q.hoi_weighted.size(); ++a)
      out.push_back({image_id, human, object, a, oc, q.hoi_weighted[a]});
  }
  return out;
}

inline void write_report(const EvalReport& r, const std::string& json_path) {
  std::ofstream js(json_path);
  if (!js) throw RuntimeFailure("cannot write report: " + json_path);
  js << r.to_json().dump(2) << "\n";
  std::string csv_path = json_path;
  const auto dot = csv_path.rfind('.');
  const auto slash = csv_path.find_last_of('/');
  if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) csv_path.resize(dot);
  std::ofstream cs(csv_path + ".csv");
  if (!cs) throw RuntimeFailure("cannot write report: " + csv_path + ".csv");
  cs << r.to_csv();
}

}  // namespace ssrt::eval
