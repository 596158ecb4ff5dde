#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "ssrt/error.hpp"

namespace ssrt {

using CostMatrix = std::vector<std::vector<double>>;

namespace detail {

/// Shortest augmenting path with potentials, O(n^2 m). Returns the column of each row.
/// Rows with `fixed[i] >= 0` are pinned to that column.
inline std::vector<std::size_t> solve_assignment(const CostMatrix& cost, std::size_t m,
                                                 const std::vector<long>& fixed) {
  const std::size_t n = cost.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  auto c = [&](std::size_t i, std::size_t j) {
    if (fixed[i] >= 0 && static_cast<std::size_t>(fixed[i]) != j) return inf;
    return cost[i][j];
  };
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      if (j1 == 0 || delta == inf) throw ValidationError("hungarian: no feasible assignment");
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> rows(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) rows[p[j] - 1] = j - 1;
  return rows;
}

inline double assignment_cost(const CostMatrix& cost, const std::vector<std::size_t>& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += cost[i][a[i]];
  return s;
}

}  // namespace detail

/// Minimum-cost injective assignment of the n rows to m >= n columns. Among optimal
/// assignments the lexicographically smallest column sequence is returned.
inline std::vector<std::size_t> hungarian(const CostMatrix& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  const std::size_t m = cost[0].size();
  if (n > m) throw ValidationError("hungarian: more rows than columns");
  double scale = 1.0;
  for (const auto& row : cost) {
    if (row.size() != m) throw ValidationError("hungarian: ragged cost matrix");
    for (double x : row) {
      if (!std::isfinite(x)) throw ValidationError("hungarian: non-finite cost");
      scale = std::max(scale, std::abs(x));
    }
  }
  std::vector<long> fixed(n, -1);
  auto best = detail::solve_assignment(cost, m, fixed);
  const double optimum = detail::assignment_cost(cost, best);
  // Slack for summation-order differences between equally optimal assignments.
  const double tol = 1e-12 * scale * static_cast<double>(n);

  // Pin rows in order to the smallest column that still admits an optimal completion.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < best[i]; ++j) {
      bool taken = false;
      for (std::size_t r = 0; r < i; ++r) taken = taken || static_cast<std::size_t>(fixed[r]) == j;
      if (taken) continue;
      fixed[i] = static_cast<long>(j);
      auto trial = detail::solve_assignment(cost, m, fixed);
      if (detail::assignment_cost(cost, trial) <= optimum + tol) {
        best = std::move(trial);
        break;
      }
      fixed[i] = -1;
    }
    fixed[i] = static_cast<long>(best[i]);
  }
  return best;
}

}  // namespace ssrt
