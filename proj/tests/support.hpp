#pragma once

// Independent oracles and fixtures shared by the unit tests and the acceptance runner.
// The oracles deliberately avoid the library's own code paths.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ssrt/config.hpp"
#include "ssrt/data/dataset.hpp"
#include "ssrt/data/synth.hpp"
#include "ssrt/eval/eval.hpp"
#include "ssrt/model.hpp"
#include "ssrt/spatial/stats.hpp"

namespace ssrt::testing {

// ---------------------------------------------------------------------------
// Assignment oracle

struct BruteAssignment {
  double cost = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> cols;  // lexicographically smallest among the optima
};

/// Enumerates every injection of rows into columns in lexicographic order.
inline BruteAssignment brute_force_assignment(const std::vector<std::vector<double>>& c) {
  BruteAssignment best;
  const std::size_t n = c.size();
  if (n == 0) {
    best.cost = 0.0;
    return best;
  }
  const std::size_t m = c[0].size();
  std::vector<std::size_t> cur(n);
  std::vector<bool> taken(m, false);
  auto rec = [&](auto&& self, std::size_t row, double acc) -> void {
    if (row == n) {
      if (acc < best.cost) {
        best.cost = acc;
        best.cols = cur;
      }
      return;
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (taken[j]) continue;
      taken[j] = true;
      cur[row] = j;
      self(self, row + 1, acc + c[row][j]);
      taken[j] = false;
    }
  };
  rec(rec, 0, 0.0);
  return best;
}

// ---------------------------------------------------------------------------
// Rasterization oracle

/// Cells whose centre lies inside [x1, x2] x [y1, y2], counted by a plain double loop.
inline std::size_t cell_center_count(const Box& b, std::size_t size) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      const double cy = (static_cast<double>(i) + 0.5) / static_cast<double>(size);
      const double cx = (static_cast<double>(j) + 0.5) / static_cast<double>(size);
      if (cx >= b.x1() && cx <= b.x2() && cy >= b.y1() && cy <= b.y2()) ++n;
    }
  }
  return n;
}

// ---------------------------------------------------------------------------
// mAP oracle

inline double box_iou(const Box& a, const Box& b) {
  const double w = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double h = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = w * h;
  return inter / (a.width() * a.height() + b.width() * b.height() - inter);
}

struct OracleGt {
  std::string image;
  Box human;
  std::optional<Box> object;
  std::size_t cls;
};

/// Per-class AP by a separate route: detections are ranked, each takes the best unused
/// qualifying ground truth, and AP sums the precision envelope at every true positive.
inline std::map<std::size_t, double> brute_force_ap(const std::vector<eval::Detection>& dets,
                                                    const data::Dataset& ds, eval::Scenario scenario,
                                                    eval::ClassMode mode) {
  const auto& vocab = ds.vocab;
  auto pair_of = [&](std::optional<std::size_t> obj, std::size_t act) -> std::optional<std::size_t> {
    for (std::size_t p = 0; p < vocab.num_pairs(); ++p)
      if (vocab.pairs()[p].action == act && vocab.pairs()[p].object == obj) return p;
    return std::nullopt;
  };
  std::vector<OracleGt> gts;
  for (const auto& img : ds.images)
    for (const auto& h : img.hois)
      gts.push_back({img.id, h.human, h.object,
                     mode == eval::ClassMode::Action ? h.action_class : *pair_of(h.object_class, h.action_class)});

  std::map<std::size_t, double> out;
  std::map<std::size_t, std::size_t> n_gt;
  for (const auto& g : gts) ++n_gt[g.cls];
  for (const auto& [cls, count] : n_gt) {
    std::vector<const eval::Detection*> mine;
    for (const auto& d : dets) {
      std::optional<std::size_t> c;
      if (mode == eval::ClassMode::Action) {
        c = d.action;
      } else {
        const bool null_action = vocab.actions()[d.action].allows_null_object;
        c = pair_of(null_action ? std::nullopt : d.object_class, d.action);
      }
      if (c && *c == cls) mine.push_back(&d);
    }
    std::stable_sort(mine.begin(), mine.end(), [](auto* a, auto* b) { return a->score > b->score; });
    std::vector<bool> used(gts.size(), false);
    std::vector<bool> hits;
    for (const auto* d : mine) {
      long best = -1;
      double best_ov = -1.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        const auto& gt = gts[g];
        if (used[g] || gt.cls != cls || gt.image != d->image_id) continue;
        const double hi = box_iou(d->human, gt.human);
        if (hi <= 0.5) continue;
        double ov = hi;
        if (gt.object) {
          if (!d->object) continue;
          const double oi = box_iou(*d->object, *gt.object);
          if (oi <= 0.5) continue;
          ov = std::min(hi, oi);
        } else if (scenario == eval::Scenario::Strict && d->object) {
          continue;
        }
        if (ov > best_ov) {
          best_ov = ov;
          best = static_cast<long>(g);
        }
      }
      if (best >= 0) used[static_cast<std::size_t>(best)] = true;
      hits.push_back(best >= 0);
    }
    // Precision envelope at each true positive: the best precision at this rank or later.
    double ap = 0.0;
    for (std::size_t i = 0; i < hits.size(); ++i) {
      if (!hits[i]) continue;
      double env = 0.0;
      std::size_t tp = 0;
      for (std::size_t j = 0; j < hits.size(); ++j) {
        tp += hits[j];
        if (j >= i) env = std::max(env, static_cast<double>(tp) / static_cast<double>(j + 1));
      }
      ap += env / static_cast<double>(count);
    }
    out[cls] = ap;
  }
  return out;
}

/// Random fixture of `n_images` images with 1-3 instances each and detections that mix
/// jittered copies of the ground truth, null object boxes and planted false positives.
struct EvalFixture {
  data::Dataset ds;
  std::vector<eval::Detection> dets;
};

inline Box jitter(const Box& b, double amount, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-amount, amount);
  const double x1 = std::clamp(b.x1() + u(rng), 0.0, 0.9), y1 = std::clamp(b.y1() + u(rng), 0.0, 0.9);
  const double x2 = std::clamp(b.x2() + u(rng), x1 + 0.02, 1.0), y2 = std::clamp(b.y2() + u(rng), y1 + 0.02, 1.0);
  return Box(x1, y1, x2, y2);
}

inline EvalFixture random_eval_fixture(std::uint64_t seed, std::size_t n_images = 5) {
  std::mt19937_64 rng(seed);
  EvalFixture f;
  const auto vocab = data::OAVocabulary::default_synthetic();
  f.ds = data::synth_dataset(seed, n_images, vocab, data::default_layout_stats(vocab));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> act(0, vocab.num_actions() - 1), obj(0, vocab.num_objects() - 1);
  for (const auto& img : f.ds.images) {
    for (const auto& h : img.hois) {
      const std::size_t copies = 1 + static_cast<std::size_t>(u(rng) * 3);
      for (std::size_t c = 0; c < copies; ++c) {
        eval::Detection d{img.id, jitter(h.human, u(rng) < 0.7 ? 0.01 : 0.2, rng), std::nullopt, 0, std::nullopt, 0.0};
        if (h.object && u(rng) < 0.85) d.object = jitter(*h.object, u(rng) < 0.7 ? 0.01 : 0.2, rng);
        else if (!h.object && u(rng) < 0.5) d.object = jitter(h.human, 0.1, rng);
        d.action = u(rng) < 0.8 ? h.action_class : act(rng);
        d.object_class = h.object_class && u(rng) < 0.8 ? *h.object_class : obj(rng);
        d.score = u(rng);
        f.dets.push_back(d);
      }
    }
    const std::size_t planted = static_cast<std::size_t>(u(rng) * 4);
    for (std::size_t k = 0; k < planted; ++k) {
      const double x = u(rng) * 0.6, y = u(rng) * 0.6;
      eval::Detection d{img.id, Box(x, y, x + 0.1 + u(rng) * 0.3, y + 0.1 + u(rng) * 0.3), std::nullopt, 0,
                        std::nullopt, 0.0};
      if (u(rng) < 0.7) d.object = jitter(d.human, 0.2, rng);
      d.action = act(rng);
      d.object_class = obj(rng);
      d.score = u(rng);
      f.dets.push_back(d);
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Model fixtures

inline ModelAssets one_hot_assets(const data::Dataset& ds) {
  ModelAssets a;
  a.vocab = ds.vocab;
  a.stats = spatial::fit_stats(ds, spatial::StatsMode::Bivariate);
  a.semantic = nn::Tensor<double>::matrix(a.vocab.num_pairs(), a.vocab.num_pairs());
  for (std::size_t i = 0; i < a.vocab.num_pairs(); ++i) a.semantic(i, i) = 1.0;
  a.semantic_kind = "one-hot";
  return a;
}

/// Small synthetic dataset at a given image size.
inline data::Dataset micro_dataset(std::uint64_t seed, std::size_t n, std::size_t image_size = 16) {
  const auto vocab = data::OAVocabulary::default_synthetic();
  data::SynthConfig sc;
  sc.image_size = image_size;
  return data::synth_dataset(seed, n, vocab, data::default_layout_stats(vocab), sc);
}

/// d=8, one layer per stack, three queries, 8x8 images with patch 4, 8x8 spatial maps.
inline ModelConfig micro_config() {
  ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.refiner_layers = 1;
  c.decoder_layers = 1;
  c.ffn_dim = 8;
  c.num_queries = 3;
  c.k = 2;
  c.patch = 4;
  c.image_height = 8;
  c.image_width = 8;
  c.channels = 3;
  c.map_size = 8;
  return c;
}

}  // namespace ssrt::testing
