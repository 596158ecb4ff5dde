#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ssrt/nn/params.hpp"
#include "ssrt/nn/tape.hpp"

namespace ssrt::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error, so entries that are zero in
  /// both routes compare on absolute terms. Central differences at step 1e-5 carry
  /// roundoff near 1e-10 for O(1) losses, so smaller gradients cannot be resolved.
  double floor = 1e-5;
  /// Entries checked per parameter tensor (all when the tensor is smaller).
  std::size_t max_entries_per_param = 64;
  std::uint64_t seed = 7;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients against central finite differences.
///
/// `loss` builds a scalar on the tape it is given; it must be a pure function of the
/// parameter values (any discrete choices fixed by the caller).
inline GradCheckReport check_gradients(ParamStore<double>& params,
                                       const std::function<Var<double>(Tape<double>&)>& loss,
                                       const GradCheckOptions& opt = {}) {
  params.zero_grad();
  {
    Tape<double> tape(true);
    tape.backward(loss(tape));
  }
  auto eval = [&]() {
    Tape<double> tape(false);
    return loss(tape).value().item();
  };
  GradCheckReport rep;
  std::mt19937_64 rng(opt.seed);
  for (auto& pp : params) {
    auto& p = *pp;
    std::vector<std::size_t> idx(p.value.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > opt.max_entries_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_entries_per_param);
    }
    for (std::size_t i : idx) {
      const double orig = p.value[i];
      p.value[i] = orig + opt.step;
      const double up = eval();
      p.value[i] = orig - opt.step;
      const double down = eval();
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = p.grad[i];
      const double err = relative_error(analytic, numeric, opt.floor);
      ++rep.checked;
      if (err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst_param = p.name;
        rep.worst_index = i;
        rep.worst_analytic = analytic;
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace ssrt::nn
