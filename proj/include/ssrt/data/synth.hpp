#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ssrt/data/dataset.hpp"
#include "ssrt/spatial/gaussian.hpp"
#include "ssrt/spatial/stats.hpp"

namespace ssrt::data {

struct SynthConfig {
  std::size_t image_size = 32;
  std::size_t min_instances = 1;
  std::size_t max_instances = 3;
  /// Write images as PNM files named "<id>.ppm" instead of inline pixel arrays.
  bool external_images = false;
};

inline constexpr std::array<std::uint8_t, 3> kHumanColor = {255, 255, 255};

/// Distinct saturated colour per object class.
inline std::array<std::uint8_t, 3> object_color(std::size_t object_class) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette = {{{255, 0, 0},
                                                                          {0, 255, 0},
                                                                          {0, 0, 255},
                                                                          {255, 255, 0},
                                                                          {255, 0, 255},
                                                                          {0, 255, 255},
                                                                          {255, 128, 0},
                                                                          {128, 0, 255}}};
  if (object_class < kPalette.size()) return kPalette[object_class];
  const auto k = static_cast<std::uint8_t>(40 + (object_class * 53) % 200);
  return {k, static_cast<std::uint8_t>(255 - k), 128};
}

/// Hand-set layout distributions that make actions distinguishable by placement
/// (and null-object actions by body shape). Used to drive `synth_dataset`.
inline spatial::RSCStats default_layout_stats(const OAVocabulary& vocab) {
  using spatial::GaussianParams;
  auto diag2 = [](double a, double b, double va, double vb) { return GaussianParams{{a, b}, {va, 0.0, 0.0, vb}}; };
  spatial::RSCStats st;
  st.mode = spatial::StatsMode::Bivariate;
  st.epsilon = 0.0;
  std::size_t object_action_rank = 0;
  std::size_t null_action_rank = 0;
  std::vector<int> action_slot(vocab.num_actions(), -1);
  std::vector<int> null_slot(vocab.num_actions(), -1);
  for (std::size_t a = 0; a < vocab.num_actions(); ++a) {
    if (vocab.actions()[a].allows_null_object) {
      null_slot[a] = static_cast<int>(null_action_rank++);
    } else {
      action_slot[a] = static_cast<int>(object_action_rank++);
    }
  }
  // (dx, dy) per object-action slot: beside the hand, over the head, out in front.
  static constexpr std::array<std::array<double, 2>, 6> kPlacements = {
      {{0.85, 0.45}, {0.45, -0.05}, {1.55, 0.05}, {-0.9, 0.45}, {0.3, 0.85}, {-1.4, 0.1}}};
  // (w, h) of the human per null-action slot.
  static constexpr std::array<std::array<double, 2>, 4> kBodies = {
      {{0.12, 0.50}, {0.28, 0.34}, {0.2, 0.25}, {0.35, 0.5}}};
  for (std::size_t p = 0; p < vocab.num_pairs(); ++p) {
    const OAPair& pr = vocab.pair(p);
    spatial::PairEntry e{vocab.pair_key(p), !pr.object.has_value(), spatial::PairStats{}};
    auto& ps = *e.stats;
    if (pr.object) {
      const auto& place = kPlacements[static_cast<std::size_t>(action_slot[pr.action]) % kPlacements.size()];
      // Object size relative to the human; larger for higher class indices.
      const double rel_w = 0.65 + 0.08 * static_cast<double>(*pr.object % 6);
      const double rel_h = 0.3 + 0.03 * static_cast<double>(*pr.object % 6);
      ps.xy = diag2(place[0], place[1], 0.0025, 0.0025);
      ps.wh = diag2(std::log(rel_w), std::log(rel_h), 0.0025, 0.0025);
      ps.person = diag2(0.2, 0.45, 2e-4, 2e-4);
    } else {
      const auto& body = kBodies[static_cast<std::size_t>(null_slot[pr.action]) % kBodies.size()];
      ps.person = diag2(body[0], body[1], 1e-4, 1e-4);
    }
    ps.count = 1;
    st.pairs.push_back(std::move(e));
  }
  st.fallback.person = diag2(0.2, 0.45, 2e-4, 2e-4);
  st.fallback.xy = diag2(0.85, 0.45, 0.0025, 0.0025);
  st.fallback.wh = diag2(std::log(0.7), std::log(0.3), 0.0025, 0.0025);
  return st;
}

namespace detail {

inline double snap(double v, double n) { return std::round(v * n) / n; }

inline bool overlaps(const Box& a, const Box& b, double margin) {
  return a.x1() < b.x2() + margin && b.x1() < a.x2() + margin && a.y1() < b.y2() + margin &&
         b.y1() < a.y2() + margin;
}

inline void paint(Image& img, const Box& b, const std::array<std::uint8_t, 3>& color) {
  for (std::size_t y = 0; y < img.height; ++y) {
    const double cy = (static_cast<double>(y) + 0.5) / static_cast<double>(img.height);
    if (cy < b.y1() || cy >= b.y2()) continue;
    for (std::size_t x = 0; x < img.width; ++x) {
      const double cx = (static_cast<double>(x) + 0.5) / static_cast<double>(img.width);
      if (cx < b.x1() || cx >= b.x2()) continue;
      for (std::size_t c = 0; c < img.channels; ++c) img.at(y, x, c) = color[c % 3];
    }
  }
}

}  // namespace detail

/// Renders an image from its annotation: black background, humans in kHumanColor, then
/// objects in their class colour on top. A pixel belongs to a box when its center does.
inline Image render_instances(const std::vector<HOIInstance>& hois, std::size_t size) {
  Image img{size, size, 3, std::vector<std::uint8_t>(size * size * 3, 0)};
  for (const auto& h : hois) detail::paint(img, h.human, kHumanColor);
  for (const auto& h : hois)
    if (h.object) detail::paint(img, *h.object, object_color(*h.object_class));
  return img;
}

/// Deterministic synthetic HOI dataset. Each image holds 1-3 instances whose boxes are
/// drawn from `layout` (human size and RSC per pair), snapped to the pixel grid, and
/// kept apart from other instances so every box is visible.
inline Dataset synth_dataset(std::uint64_t seed, std::size_t n_images, const OAVocabulary& vocab,
                             const spatial::RSCStats& layout, const SynthConfig& cfg = {}) {
  spatial::check_stats_cover(layout, vocab);
  Dataset ds;
  ds.vocab = vocab;
  std::mt19937_64 rng(seed);
  const double n = static_cast<double>(cfg.image_size);
  const double min_side = 2.0 / n;
  std::uniform_int_distribution<std::size_t> count_dist(cfg.min_instances, cfg.max_instances);
  std::uniform_int_distribution<std::size_t> pair_dist(0, vocab.num_pairs() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t i = 0; i < n_images; ++i) {
    ImageAnnotation ann;
    ann.id = "synth-" + std::to_string(seed) + "-" + std::to_string(i);
    std::vector<Box> hulls;
    const std::size_t want = count_dist(rng);
    for (std::size_t k = 0; k < want; ++k) {
      const std::size_t pair = pair_dist(rng);
      const OAPair& pr = vocab.pair(pair);
      const spatial::PairStats& ps = layout.resolve(pair);
      // The first instance always finds a spot; later ones may be dropped when the image is crowded.
      const int attempts = hulls.empty() ? 10000 : 200;
      for (int attempt = 0; attempt < attempts; ++attempt) {
        const auto size = spatial::sample_gaussian(ps.person, rng);
        const double w = detail::snap(std::max(size[0], min_side), n);
        const double h = detail::snap(std::max(size[1], min_side), n);
        if (w < min_side || h < min_side || w >= 1.0 || h >= 1.0) continue;
        const double x = detail::snap(unit(rng) * (1.0 - w), n);
        const double y = detail::snap(unit(rng) * (1.0 - h), n);
        const Box human = Box::from_top_left(x, y, w, h);
        std::optional<Box> object;
        if (pr.object) {
          const auto xy = spatial::sample_gaussian(*ps.xy, rng);
          const auto wh = spatial::sample_gaussian(*ps.wh, rng);
          const Box raw = apply_rsc(human, RSC{xy[0], xy[1], wh[0], wh[1]});
          const double ox1 = detail::snap(raw.x1(), n), oy1 = detail::snap(raw.y1(), n);
          const double ox2 = detail::snap(raw.x2(), n), oy2 = detail::snap(raw.y2(), n);
          if (ox2 - ox1 < min_side || oy2 - oy1 < min_side) continue;
          if (ox1 < 0.0 || oy1 < 0.0 || ox2 > 1.0 || oy2 > 1.0) continue;
          object = Box(ox1, oy1, ox2, oy2);
        }
        const Box hull = object ? Box(std::min(human.x1(), object->x1()), std::min(human.y1(), object->y1()),
                                      std::max(human.x2(), object->x2()), std::max(human.y2(), object->y2()))
                                : human;
        bool clash = false;
        for (const auto& other : hulls) clash = clash || detail::overlaps(hull, other, 1.0 / n);
        if (clash) continue;
        hulls.push_back(hull);
        ann.hois.push_back({human, object, pr.object, pr.action});
        break;
      }
    }
    ann.image = render_instances(ann.hois, cfg.image_size);
    if (cfg.external_images) ann.path = ann.id + ".ppm";
    ds.images.push_back(std::move(ann));
  }
  return ds;
}

}  // namespace ssrt::data
