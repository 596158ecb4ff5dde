#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ssrt/geometry.hpp"
#include "ssrt/nn/tensor.hpp"
#include "ssrt/spatial/stats.hpp"

namespace ssrt::spatial {

struct SamplerConfig {
  std::size_t map_size = 64;
  /// Fixed human top-left corner as a fraction of the map (16 cells of 64).
  double top_left_fraction = 0.25;
};

struct SampledPair {
  Box human;
  std::optional<Box> object;
  /// Pre-clamp boxes; rsc(human_raw, *object_raw) equals the drawn configuration.
  Box human_raw;
  std::optional<Box> object_raw;
};

/// Draws a human box (fixed top-left, size from the person Gaussian) and, for pairs
/// with an object, an object box placed by a drawn RSC. Boxes are clamped to the unit
/// square with minimum side 1/map_size.
template <class Rng>
SampledPair sample_pair(const RSCStats& stats, std::size_t pair, Rng& rng, const SamplerConfig& cfg = {}) {
  const double min_side = 1.0 / static_cast<double>(cfg.map_size);
  const PairStats& ps = stats.resolve(pair);
  const auto size = sample_gaussian(ps.person, rng);
  const double tl = cfg.top_left_fraction;
  const Box human_raw = Box::from_top_left(tl, tl, std::max(size[0], min_side), std::max(size[1], min_side));
  SampledPair out{clamp_to_unit(human_raw, min_side), std::nullopt, human_raw, std::nullopt};
  if (stats.is_null_object(pair)) return out;

  // Null-object pairs never reach here; object pairs always have a fit or fall back to one.
  const PairStats& geo = (ps.xy || ps.xywh) ? ps : stats.fallback;
  RSC r;
  if (stats.mode == StatsMode::Bivariate) {
    const auto xy = sample_gaussian(*geo.xy, rng);
    const auto wh = sample_gaussian(*geo.wh, rng);
    r = RSC{xy[0], xy[1], wh[0], wh[1]};
  } else {
    const auto v = sample_gaussian(*geo.xywh, rng);
    r = RSC{v[0], v[1], v[2], v[3]};
  }
  out.object_raw = apply_rsc(human_raw, r);
  out.object = clamp_to_unit(*out.object_raw, min_side);
  return out;
}

/// Binary 2 x B x B raster: channel 0 marks the human box, channel 1 the object box.
struct SpatialMap {
  std::size_t size = 0;
  std::vector<std::uint8_t> cells;

  std::uint8_t at(std::size_t channel, std::size_t row, std::size_t col) const {
    return cells[(channel * size + row) * size + col];
  }
  std::size_t count(std::size_t channel) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < size * size; ++i) n += cells[channel * size * size + i];
    return n;
  }

  template <class T>
  nn::Tensor<T> to_tensor() const {
    return nn::Tensor<T>({2, size, size}, std::vector<T>(cells.begin(), cells.end()));
  }
};

/// Cell (row, col) is set when its center ((col+0.5)/B, (row+0.5)/B) lies in [x1, x2) x [y1, y2).
inline void rasterize_box(const Box& b, std::size_t size, std::uint8_t* channel) {
  const double n = static_cast<double>(size);
  for (std::size_t r = 0; r < size; ++r) {
    const double cy = (static_cast<double>(r) + 0.5) / n;
    if (cy < b.y1() || cy >= b.y2()) continue;
    for (std::size_t c = 0; c < size; ++c) {
      const double cx = (static_cast<double>(c) + 0.5) / n;
      if (cx >= b.x1() && cx < b.x2()) channel[r * size + c] = 1;
    }
  }
}

inline SpatialMap rasterize(const Box& human, const std::optional<Box>& object, std::size_t size) {
  SpatialMap m{size, std::vector<std::uint8_t>(2 * size * size, 0)};
  rasterize_box(human, size, m.cells.data());
  if (object) rasterize_box(*object, size, m.cells.data() + size * size);
  return m;
}

/// Flat distribution-parameter features of a pair, in a fixed order:
///   bivariate:    mean(4), var(4), cov_xy, cov_wh, person mean(2), person var(2), person cov  -> 15
///   multivariate: mean(4), var(4), cov over the 6 unordered pairs, person (5)               -> 19
/// RSC entries are zero for null-object pairs.
inline std::vector<double> spatial_param_features(const RSCStats& stats, std::size_t pair) {
  const PairStats& ps = stats.resolve(pair);
  std::vector<double> f;
  const bool has_object = !stats.is_null_object(pair);
  if (stats.mode == StatsMode::Bivariate) {
    f.assign(10, 0.0);
    if (has_object && ps.xy && ps.wh) {
      const auto& xy = *ps.xy;
      const auto& wh = *ps.wh;
      f = {xy.mean[0],       xy.mean[1],       wh.mean[0],       wh.mean[1],      xy.cov_at(0, 0),
           xy.cov_at(1, 1),  wh.cov_at(0, 0),  wh.cov_at(1, 1),  xy.cov_at(0, 1), wh.cov_at(0, 1)};
    }
  } else {
    f.assign(14, 0.0);
    if (has_object && ps.xywh) {
      const auto& g = *ps.xywh;
      f.clear();
      for (std::size_t i = 0; i < 4; ++i) f.push_back(g.mean[i]);
      for (std::size_t i = 0; i < 4; ++i) f.push_back(g.cov_at(i, i));
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) f.push_back(g.cov_at(i, j));
    }
  }
  const auto& p = ps.person;
  for (double v : {p.mean[0], p.mean[1], p.cov_at(0, 0), p.cov_at(1, 1), p.cov_at(0, 1)}) f.push_back(v);
  return f;
}

inline std::size_t spatial_param_width(StatsMode mode) { return mode == StatsMode::Bivariate ? 15 : 19; }

}  // namespace ssrt::spatial
