#pragma once

#include <array>
#include <optional>
#include <vector>

#include "json.hpp"
#include "ssrt/data/dataset.hpp"
#include "ssrt/geometry.hpp"
#include "ssrt/heads.hpp"
#include "ssrt/matchloss/hungarian.hpp"
#include "ssrt/nn/ops.hpp"

namespace ssrt {

struct LossWeights {
  double box = 2.5;   // lambda_1, L1
  double giou = 1.0;  // lambda_2
  double obj = 1.0;   // lambda_3
  double hoi = 1.0;   // lambda_4
  double oa = 1.0;    // lambda_5, image-level OA scores
  /// Cross-entropy weight of the background class.
  double background = 0.1;
  /// Train the object box of queries matched to null-object instances toward [0,0,0,0].
  bool scenario1 = false;
  /// Train queries matched to null-object instances away from background: their
  /// classification target is the set of all real object classes.
  bool null_foreground = true;

  void validate() const {
    for (double w : {box, giou, obj, hoi, oa, background})
      if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("loss weights must be finite and nonnegative");
  }
  nlohmann::json to_json() const {
    return {{"box", box}, {"giou", giou}, {"obj", obj}, {"hoi", hoi},
            {"oa", oa},   {"background", background}, {"scenario1", scenario1}, {"null_foreground", null_foreground}};
  }
  void update_from_json(const nlohmann::json& j) {
    try {
      for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        if (k == "box") box = it->get<double>();
        else if (k == "giou") giou = it->get<double>();
        else if (k == "obj") obj = it->get<double>();
        else if (k == "hoi") hoi = it->get<double>();
        else if (k == "oa") oa = it->get<double>();
        else if (k == "background") background = it->get<double>();
        else if (k == "scenario1") scenario1 = it->get<bool>();
        else if (k == "null_foreground") null_foreground = it->get<bool>();
        else throw ValidationError("loss weights: unknown key '" + k + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("loss weights: ") + e.what());
    }
  }
};

inline double l1_cxcywh(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < 4; ++i) s += std::abs(a[i] - b[i]);
  return s;
}

/// cost(g, q) = l1 * L1 + l2 * (1 - GIoU) over human and object boxes, minus l3 * P_obj[class]
/// and l4 * mean raw P_HOI over the group's actions. Object terms vanish for null-object groups.
inline CostMatrix match_cost(const PredictionSet& pred, const std::vector<data::TargetGroup>& gt,
                             const LossWeights& w) {
  CostMatrix c(gt.size(), std::vector<double>(pred.queries.size(), 0.0));
  for (std::size_t g = 0; g < gt.size(); ++g) {
    const auto& t = gt[g];
    const auto th = t.human.center_form();
    for (std::size_t q = 0; q < pred.queries.size(); ++q) {
      const auto& p = pred.queries[q];
      const Box ph = box_from_cxcywh(p.human_cxcywh);
      double cost = w.box * l1_cxcywh(p.human_cxcywh, th) + w.giou * (1.0 - giou(ph, t.human));
      if (t.object) {
        const Box po = box_from_cxcywh(p.object_cxcywh);
        cost += w.box * l1_cxcywh(p.object_cxcywh, t.object->center_form()) + w.giou * (1.0 - giou(po, *t.object));
        cost -= w.obj * p.obj_probs.at(*t.object_class);
      }
      double act = 0.0;
      for (std::size_t a : t.actions) act += p.hoi_raw.at(a);
      cost -= w.hoi * act / static_cast<double>(t.actions.size());
      c[g][q] = cost;
    }
  }
  return c;
}

template <class T>
struct LossResult {
  nn::Var<T> total;
  double box = 0, giou = 0, obj = 0, hoi = 0, oa = 0, total_value = 0;
  std::vector<std::size_t> assignment;  // group -> query

  nlohmann::json components() const {
    return {{"total", total_value}, {"box", box}, {"giou", giou}, {"obj", obj}, {"hoi", hoi}, {"oa", oa}};
  }
};

namespace detail {

template <class T>
nn::Var<T> column(nn::Var<T> x, std::size_t c) {
  return nn::slice_cols(x, c, c + 1);
}

/// Sum over rows of 1 - GIoU between predicted (cx, cy, w, h) rows and constant corner-form targets.
template <class T>
nn::Var<T> giou_loss_sum(nn::Var<T> pred, const nn::Tensor<T>& target_corners) {
  using namespace nn;
  Tape<T>& tape = *pred.tape;
  const T half{0.5};
  Var<T> cx = column(pred, 0), cy = column(pred, 1), w = column(pred, 2), h = column(pred, 3);
  Var<T> x1 = sub(cx, scale(w, half)), x2 = add(cx, scale(w, half));
  Var<T> y1 = sub(cy, scale(h, half)), y2 = add(cy, scale(h, half));
  Var<T> tgt = tape.constant(target_corners);
  Var<T> gx1 = column(tgt, 0), gy1 = column(tgt, 1), gx2 = column(tgt, 2), gy2 = column(tgt, 3);
  Var<T> iw = relu(sub(minimum(x2, gx2), maximum(x1, gx1)));
  Var<T> ih = relu(sub(minimum(y2, gy2), maximum(y1, gy1)));
  Var<T> inter = mul(iw, ih);
  Var<T> area_p = mul(w, h);
  Var<T> area_g = mul(sub(gx2, gx1), sub(gy2, gy1));
  Var<T> uni = sub(add(area_p, area_g), inter);
  Var<T> cw = sub(maximum(x2, gx2), minimum(x1, gx1));
  Var<T> ch = sub(maximum(y2, gy2), minimum(y1, gy1));
  Var<T> enclose = mul(cw, ch);
  Var<T> g = sub(div(inter, uni), div(sub(enclose, uni), enclose));
  const auto n = static_cast<T>(pred.rows());
  return add_scalar(scale(sum(g), T{-1}), n);
}

template <class T>
nn::Var<T> l1_sum(nn::Var<T> pred, const nn::Tensor<T>& target) {
  return nn::sum(nn::abs(nn::sub(pred, pred.tape->constant(target))));
}

template <class T>
nn::Var<T> zero(nn::Tape<T>& tape) {
  return tape.constant(nn::Tensor<T>::scalar(T{0}));
}

}  // namespace detail

/// Set loss for one image under a fixed group -> query assignment.
template <class T>
LossResult<T> set_loss(const HeadOutputs<T>& out, nn::Var<T> oa_logits, const std::vector<data::TargetGroup>& gt,
                       const std::vector<double>& oa_targets, const std::vector<std::size_t>& assignment,
                       const LossWeights& w) {
  using namespace nn;
  Tape<T>& tape = *out.human_box.tape;
  if (assignment.size() != gt.size()) throw ValidationError("set_loss: assignment size mismatch");
  const std::size_t nq = out.human_box.rows();
  const std::size_t nobj = out.obj_logits.cols() - 1;
  const std::size_t nact = out.hoi_logits.cols();
  LossResult<T> r;
  r.assignment = assignment;

  // Rows of matched groups, split by whether the group has an object.
  std::vector<std::size_t> all_q, obj_q, null_q;
  std::vector<std::size_t> obj_g, null_g;
  std::vector<bool> matched(nq, false);
  for (std::size_t g = 0; g < gt.size(); ++g) {
    const std::size_t q = assignment[g];
    if (q >= nq || matched[q]) throw ValidationError("set_loss: assignment is not injective");
    matched[q] = true;
    all_q.push_back(q);
    (gt[g].object ? obj_q : null_q).push_back(q);
    (gt[g].object ? obj_g : null_g).push_back(g);
    if (gt[g].object_class && *gt[g].object_class >= nobj) throw ValidationError("set_loss: object class out of range");
    for (std::size_t a : gt[g].actions)
      if (a >= nact) throw ValidationError("set_loss: action class out of range");
  }
  const T n_match = static_cast<T>(std::max<std::size_t>(gt.size(), 1));

  auto box_targets = [&](const std::vector<std::size_t>& groups, bool human, bool corners) {
    Tensor<T> t = Tensor<T>::matrix(groups.size(), 4);
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const Box& b = human ? gt[groups[i]].human : *gt[groups[i]].object;
      const auto v = corners ? b.corners() : b.center_form();
      for (std::size_t j = 0; j < 4; ++j) t(i, j) = static_cast<T>(v[j]);
    }
    return t;
  };

  Var<T> box = ssrt::detail::zero(tape), gi = ssrt::detail::zero(tape);
  if (!gt.empty()) {
    std::vector<std::size_t> all_g(gt.size());
    for (std::size_t g = 0; g < gt.size(); ++g) all_g[g] = g;
    Var<T> ph = gather_rows(out.human_box, all_q);
    box = ssrt::detail::l1_sum(ph, box_targets(all_g, true, false));
    gi = ssrt::detail::giou_loss_sum(ph, box_targets(all_g, true, true));
    if (!obj_g.empty()) {
      Var<T> po = gather_rows(out.object_box, obj_q);
      box = add(box, ssrt::detail::l1_sum(po, box_targets(obj_g, false, false)));
      gi = add(gi, ssrt::detail::giou_loss_sum(po, box_targets(obj_g, false, true)));
    }
    if (w.scenario1 && !null_g.empty()) {
      Var<T> po = gather_rows(out.object_box, null_q);
      box = add(box, ssrt::detail::l1_sum(po, Tensor<T>::matrix(null_q.size(), 4)));
    }
    box = scale(box, T{1} / n_match);
    gi = scale(gi, T{1} / n_match);
  }

  // Object classification: matched rows with an object take their class and unmatched rows
  // take background. Rows matched to null-object instances are left out, or with
  // null_foreground take the set of real classes.
  std::vector<std::size_t> cls_rows;
  std::vector<std::vector<std::size_t>> cls_targets;
  std::vector<T> cls_weights;
  std::vector<std::size_t> target_of(nq, nobj);
  for (std::size_t i = 0; i < obj_g.size(); ++i) target_of[obj_q[i]] = *gt[obj_g[i]].object_class;
  std::vector<bool> is_null(nq, false);
  for (std::size_t q : null_q) is_null[q] = true;
  std::vector<std::size_t> real(nobj);
  for (std::size_t c = 0; c < nobj; ++c) real[c] = c;
  for (std::size_t q = 0; q < nq; ++q) {
    if (is_null[q] && !w.null_foreground) continue;
    cls_rows.push_back(q);
    if (is_null[q]) {
      cls_targets.push_back(real);
      cls_weights.push_back(T{1});
    } else {
      cls_targets.push_back({target_of[q]});
      cls_weights.push_back(target_of[q] == nobj ? static_cast<T>(w.background) : T{1});
    }
  }
  Var<T> obj = ssrt::detail::zero(tape);
  if (!cls_rows.empty())
    obj = set_cross_entropy(gather_rows(out.obj_logits, cls_rows), std::move(cls_targets), std::move(cls_weights));

  // Interaction BCE against each matched group's action multi-hot.
  Var<T> hoi = ssrt::detail::zero(tape);
  if (!gt.empty()) {
    Tensor<T> t = Tensor<T>::matrix(gt.size(), nact);
    for (std::size_t g = 0; g < gt.size(); ++g)
      for (std::size_t a : gt[g].actions) t(g, a) = T{1};
    hoi = scale(bce_with_logits(gather_rows(out.hoi_logits, all_q), std::move(t)), T{1} / n_match);
  }

  if (oa_targets.size() != oa_logits.value().size()) throw ValidationError("set_loss: OA target width mismatch");
  Tensor<T> st = Tensor<T>::matrix(1, oa_targets.size());
  for (std::size_t i = 0; i < oa_targets.size(); ++i) st[i] = static_cast<T>(oa_targets[i]);
  Var<T> oa = scale(bce_with_logits(oa_logits, std::move(st)), T{1} / static_cast<T>(oa_targets.size()));

  r.total = add(add(add(scale(box, static_cast<T>(w.box)), scale(gi, static_cast<T>(w.giou))),
                    add(scale(obj, static_cast<T>(w.obj)), scale(hoi, static_cast<T>(w.hoi)))),
                scale(oa, static_cast<T>(w.oa)));
  r.box = static_cast<double>(box.value().item());
  r.giou = static_cast<double>(gi.value().item());
  r.obj = static_cast<double>(obj.value().item());
  r.hoi = static_cast<double>(hoi.value().item());
  r.oa = static_cast<double>(oa.value().item());
  r.total_value = static_cast<double>(r.total.value().item());
  return r;
}

/// Matches ground truth to queries on the current outputs, then computes the set loss.
template <class T>
LossResult<T> matched_loss(const HeadOutputs<T>& out, nn::Var<T> oa_logits, const std::vector<data::TargetGroup>& gt,
                           const std::vector<double>& oa_targets, const LossWeights& w) {
  const PredictionSet ps = to_prediction_set(out);
  if (gt.size() > ps.queries.size()) throw ValidationError("more ground-truth groups than queries");
  const auto assignment = hungarian(match_cost(ps, gt, w));
  return set_loss(out, oa_logits, gt, oa_targets, assignment, w);
}

}  // namespace ssrt
