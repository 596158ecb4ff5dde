#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ssrt/data/image_io.hpp"
#include "ssrt/model.hpp"

namespace ssrt::train {

inline constexpr double kRowSumTolerance = 1e-6;

struct AttentionDump {
  std::size_t grid_height = 0, grid_width = 0;
  std::vector<std::vector<double>> decoder;  // per query, H*W row-major
  std::vector<std::vector<double>> refiner;  // per query, K
  std::vector<std::size_t> support_pairs;
};

/// Largest |row sum - 1| of a set of attention rows.
inline double max_row_sum_error(const std::vector<std::vector<double>>& rows) {
  double e = 0.0;
  for (const auto& r : rows) {
    double s = 0.0;
    for (double v : r) s += v;
    e = std::max(e, std::abs(s - 1.0));
  }
  return e;
}

template <class T>
AttentionDump collect_attention(const SSRTModel<T>& model, const data::ImageAnnotation& ann) {
  nn::Tape<T> tape(false);
  const auto r = model.forward(tape, ann.image, {image_seed(ann.id), std::nullopt});
  AttentionDump d;
  d.grid_height = model.config().grid_height();
  d.grid_width = model.config().grid_width();
  d.support_pairs = r.support.pairs;
  auto rows_of = [](const nn::Tensor<T>& t) {
    std::vector<std::vector<double>> out;
    if (t.empty()) return out;
    for (std::size_t i = 0; i < t.rows(); ++i) {
      std::vector<double> row(t.cols());
      for (std::size_t j = 0; j < t.cols(); ++j) row[j] = static_cast<double>(t(i, j));
      out.push_back(std::move(row));
    }
    return out;
  };
  d.decoder = rows_of(r.decoder_attention);
  d.refiner = rows_of(r.refiner_attention);
  return d;
}

/// Writes query_<i>.csv (H x W grid) and query_<i>.pgm (grid scaled to its maximum) per
/// query, and refiner.csv (N_q x K, header = selected pair keys). Fails if any attention
/// row does not sum to 1.
inline void write_attention(const AttentionDump& d, const data::OAVocabulary& vocab,
                            const std::filesystem::path& dir) {
  if (max_row_sum_error(d.decoder) > kRowSumTolerance || max_row_sum_error(d.refiner) > kRowSumTolerance)
    throw RuntimeFailure("attention rows are not normalized");
  std::filesystem::create_directories(dir);
  for (std::size_t q = 0; q < d.decoder.size(); ++q) {
    const auto& row = d.decoder[q];
    std::ofstream csv(dir / ("query_" + std::to_string(q) + ".csv"));
    if (!csv) throw RuntimeFailure("cannot write attention grid in " + dir.string());
    csv.precision(9);
    for (std::size_t y = 0; y < d.grid_height; ++y) {
      for (std::size_t x = 0; x < d.grid_width; ++x) csv << (x ? "," : "") << row[y * d.grid_width + x];
      csv << "\n";
    }
    const double mx = *std::max_element(row.begin(), row.end());
    data::Image img{d.grid_width, d.grid_height, 1, std::vector<std::uint8_t>(row.size())};
    for (std::size_t i = 0; i < row.size(); ++i)
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(mx > 0 ? 255.0 * row[i] / mx : 0.0));
    data::write_pnm((dir / ("query_" + std::to_string(q) + ".pgm")).string(), img);
  }
  std::ofstream rc(dir / "refiner.csv");
  if (!rc) throw RuntimeFailure("cannot write refiner attention in " + dir.string());
  rc.precision(9);
  for (std::size_t k = 0; k < d.support_pairs.size(); ++k) rc << (k ? "," : "") << vocab.pair_key(d.support_pairs[k]);
  rc << "\n";
  for (const auto& row : d.refiner) {
    for (std::size_t k = 0; k < row.size(); ++k) rc << (k ? "," : "") << row[k];
    rc << "\n";
  }
}

}  // namespace ssrt::train
