#pragma once

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "json.hpp"
#include "ssrt/error.hpp"

namespace ssrt::spatial {

/// Mean and row-major covariance of a multivariate Gaussian (dimension 2 or 4 here).
struct GaussianParams {
  std::vector<double> mean;
  std::vector<double> cov;

  std::size_t dim() const { return mean.size(); }
  double cov_at(std::size_t i, std::size_t j) const { return cov[i * dim() + j]; }

  friend bool operator==(const GaussianParams&, const GaussianParams&) = default;

  nlohmann::json to_json() const { return {{"mean", mean}, {"cov", cov}}; }
  static GaussianParams from_json(const nlohmann::json& j) {
    GaussianParams g{j.at("mean").get<std::vector<double>>(), j.at("cov").get<std::vector<double>>()};
    if (g.cov.size() != g.dim() * g.dim()) throw ValidationError("covariance size does not match mean dimension");
    return g;
  }
};

/// Maximum-likelihood fit (divide-by-N covariance) of row samples.
inline GaussianParams fit_gaussian(const std::vector<std::vector<double>>& samples) {
  if (samples.empty()) throw ValidationError("cannot fit a Gaussian to zero samples");
  const std::size_t d = samples[0].size();
  GaussianParams g{std::vector<double>(d, 0.0), std::vector<double>(d * d, 0.0)};
  for (const auto& s : samples) {
    if (s.size() != d) throw ValidationError("sample dimension mismatch");
    for (std::size_t i = 0; i < d; ++i) g.mean[i] += s[i];
  }
  const double n = static_cast<double>(samples.size());
  for (auto& m : g.mean) m /= n;
  for (const auto& s : samples)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) g.cov[i * d + j] += (s[i] - g.mean[i]) * (s[j] - g.mean[j]);
  for (auto& c : g.cov) c /= n;
  return g;
}

/// Adds eps to the covariance diagonal.
inline GaussianParams regularized(GaussianParams g, double eps) {
  for (std::size_t i = 0; i < g.dim(); ++i) g.cov[i * g.dim() + i] += eps;
  return g;
}

/// Lower-triangular factor L with L L^T = cov. Non-positive pivots (semi-definite
/// directions) produce zero columns, so a zero covariance yields L = 0.
inline std::vector<double> cholesky_psd(const GaussianParams& g) {
  const std::size_t d = g.dim();
  std::vector<double> l(d * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double diag = g.cov_at(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l[j * d + k] * l[j * d + k];
    if (diag <= 0.0) continue;
    const double ljj = std::sqrt(diag);
    l[j * d + j] = ljj;
    for (std::size_t i = j + 1; i < d; ++i) {
      double s = g.cov_at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l[i * d + k] * l[j * d + k];
      l[i * d + j] = s / ljj;
    }
  }
  return l;
}

/// True when a strict Cholesky factorization exists (all pivots positive).
inline bool is_positive_definite(const GaussianParams& g) {
  const std::size_t d = g.dim();
  std::vector<double> l(d * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double diag = g.cov_at(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l[j * d + k] * l[j * d + k];
    if (!(diag > 0.0)) return false;
    l[j * d + j] = std::sqrt(diag);
    for (std::size_t i = j + 1; i < d; ++i) {
      double s = g.cov_at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l[i * d + k] * l[j * d + k];
      l[i * d + j] = s / l[j * d + j];
    }
  }
  return true;
}

template <class Rng>
std::vector<double> sample_gaussian(const GaussianParams& g, Rng& rng) {
  const std::size_t d = g.dim();
  const auto l = cholesky_psd(g);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(d);
  for (auto& v : z) v = normal(rng);
  std::vector<double> out = g.mean;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k <= i; ++k) out[i] += l[i * d + k] * z[k];
  return out;
}

}  // namespace ssrt::spatial
