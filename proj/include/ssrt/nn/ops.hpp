#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ssrt/error.hpp"
#include "ssrt/nn/tape.hpp"

namespace ssrt::nn {

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw ValidationError(what);
}

template <class T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  }
}

// c[n x m] += a[n x k] * b[k x m]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* ci = c + i * m;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T{0}) continue;
      const T* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[n x m] += a[n x k] * b[m x k]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const T* bj = b + j * k;
      T s{0};
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * m + j] += s;
    }
  }
}

// c[k x m] += a[n x k]^T * b[n x m]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T{0}) continue;
      T* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * bi[j];
    }
  }
}

template <class T, class F>
Var<T> unary(Var<T> x, F f, std::function<T(T x, T y)> dfdx) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return x.tape->record(std::move(out), {x}, [x, dfdx](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(x.id)) return;
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    const auto& xv = t.value(x.id);
    auto& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i], y[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a[n x k] * b[k x m]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require(av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.rows(), "matmul: shape mismatch");
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor<T> out = Tensor<T>::matrix(n, m);
  detail::gemm_nn(av.data(), bv.data(), out.data(), n, k, m);
  return a.tape->record(std::move(out), {a, b}, [a, b, n, k, m](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) detail::gemm_nt(g.data(), t.value(b.id).data(), t.grad(a.id).data(), n, m, k);
    if (t.requires_grad(b.id)) detail::gemm_tn(t.value(a.id).data(), g.data(), t.grad(b.id).data(), n, k, m);
  });
}

/// a[n x k] * b[m x k]^T
template <class T>
Var<T> matmul_bt(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require(av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.cols(), "matmul_bt: shape mismatch");
  const std::size_t n = av.rows(), k = av.cols(), m = bv.rows();
  Tensor<T> out = Tensor<T>::matrix(n, m);
  detail::gemm_nt(av.data(), bv.data(), out.data(), n, k, m);
  return a.tape->record(std::move(out), {a, b}, [a, b, n, k, m](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) detail::gemm_nn(g.data(), t.value(b.id).data(), t.grad(a.id).data(), n, m, k);
    if (t.requires_grad(b.id)) detail::gemm_tn(g.data(), t.value(a.id).data(), t.grad(b.id).data(), n, m, k);
  });
}

/// x[n x in] * w[in x out] + b[1 x out]
template <class T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> b) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  detail::require(xv.rank() == 2 && wv.rank() == 2 && xv.cols() == wv.rows(), "affine: input width mismatch");
  detail::require(bv.size() == wv.cols(), "affine: bias width mismatch");
  const std::size_t n = xv.rows(), in = xv.cols(), out_w = wv.cols();
  Tensor<T> out = Tensor<T>::matrix(n, out_w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out_w; ++j) out(i, j) = bv[j];
  detail::gemm_nn(xv.data(), wv.data(), out.data(), n, in, out_w);
  return x.tape->record(std::move(out), {x, w, b}, [x, w, b, n, in, out_w](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(x.id)) detail::gemm_nt(g.data(), t.value(w.id).data(), t.grad(x.id).data(), n, out_w, in);
    if (t.requires_grad(w.id)) detail::gemm_tn(t.value(x.id).data(), g.data(), t.grad(w.id).data(), n, in, out_w);
    if (t.requires_grad(b.id)) {
      auto& gb = t.grad(b.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out_w; ++j) gb[j] += g(i, j);
    }
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  const auto& av = a.value();
  const std::size_t n = av.rows(), m = av.cols();
  Tensor<T> out = Tensor<T>::matrix(m, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(j, i) = av(i, j);
  return a.tape->record(std::move(out), {a}, [a, n, m](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(a.id)) return;
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga(i, j) += g(j, i);
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (auto v : {a, b}) {
      if (!t.requires_grad(v.id)) continue;
      auto& gv = t.grad(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      auto& ga = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b.id)) {
      auto& gb = t.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      auto& ga = t.grad(a.id);
      const auto& bv = t.value(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b.id)) {
      auto& gb = t.grad(b.id);
      const auto& av = t.value(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> div(Var<T> a, Var<T> b) {
  detail::check_same_shape(a, b, "div");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& bv = t.value(b.id);
    if (t.requires_grad(a.id)) {
      auto& ga = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
    }
    if (t.requires_grad(b.id)) {
      auto& gb = t.grad(b.id);
      const auto& y = t.value(self);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * y[i] / bv[i];
    }
  });
}

/// Elementwise minimum; the gradient goes to `a` on ties.
template <class T>
Var<T> minimum(Var<T> a, Var<T> b) {
  detail::check_same_shape(a, b, "minimum");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], bv[i]);
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(a.id);
    const auto& bv = t.value(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const bool pick_a = av[i] <= bv[i];
      if (pick_a && t.requires_grad(a.id)) t.grad(a.id)[i] += g[i];
      if (!pick_a && t.requires_grad(b.id)) t.grad(b.id)[i] += g[i];
    }
  });
}

/// Elementwise maximum; the gradient goes to `a` on ties.
template <class T>
Var<T> maximum(Var<T> a, Var<T> b) {
  detail::check_same_shape(a, b, "maximum");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], bv[i]);
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(a.id);
    const auto& bv = t.value(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const bool pick_a = av[i] >= bv[i];
      if (pick_a && t.requires_grad(a.id)) t.grad(a.id)[i] += g[i];
      if (!pick_a && t.requires_grad(b.id)) t.grad(b.id)[i] += g[i];
    }
  });
}

/// a[n x c] + r[1 x c] broadcast over rows.
template <class T>
Var<T> add_row(Var<T> a, Var<T> r) {
  const auto& av = a.value();
  const auto& rv = r.value();
  detail::require(av.rank() == 2 && rv.size() == av.cols(), "add_row: width mismatch");
  Tensor<T> out = av;
  const std::size_t n = av.rows(), c = av.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) += rv[j];
  return a.tape->record(std::move(out), {a, r}, [a, r, n, c](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      auto& ga = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(r.id)) {
      auto& gr = t.grad(r.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gr[j] += g(i, j);
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  return detail::unary<T>(
      a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  return detail::unary<T>(
      a, [s](T x) { return x + s; }, [](T, T) { return T{1}; });
}

template <class T>
Var<T> relu(Var<T> a) {
  return detail::unary<T>(
      a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary<T>(
      a,
      [](T x) {
        if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
        const T e = std::exp(x);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var<T> abs(Var<T> a) {
  return detail::unary<T>(
      a, [](T x) { return std::abs(x); }, [](T x, T) { return x > T{0} ? T{1} : (x < T{0} ? T{-1} : T{0}); });
}

// ---------------------------------------------------------------------------
// Reductions and normalization

/// Row-wise softmax of a[n x c].
template <class T>
Var<T> softmax_rows(Var<T> a) {
  const auto& av = a.value();
  const std::size_t n = av.rows(), c = av.cols();
  Tensor<T> out = Tensor<T>::matrix(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, av(i, j));
    T sum{0};
    for (std::size_t j = 0; j < c; ++j) {
      out(i, j) = std::exp(av(i, j) - mx);
      sum += out(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= sum;
  }
  return a.tape->record(std::move(out), {a}, [a, n, c](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(a.id)) return;
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad(a.id);
    for (std::size_t i = 0; i < n; ++i) {
      T dot{0};
      for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < c; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

/// Layer normalization over the columns of x[n x c] with affine gamma/beta [1 x c].
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  detail::require(gv.size() == c && bv.size() == c, "layer_norm: gamma/beta width mismatch");
  Tensor<T> out = Tensor<T>::matrix(n, c);
  Tensor<T> xhat = Tensor<T>::matrix(n, c);
  std::vector<T> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    T mean{0};
    for (std::size_t j = 0; j < c; ++j) mean += xv(i, j);
    mean /= static_cast<T>(c);
    T var{0};
    for (std::size_t j = 0; j < c; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<T>(c);
    inv_std[i] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
      out(i, j) = gv[j] * xhat(i, j) + bv[j];
    }
  }
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                            Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          if (t.requires_grad(gamma.id)) {
                            auto& gg = t.grad(gamma.id);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < c; ++j) gg[j] += g(i, j) * xhat(i, j);
                          }
                          if (t.requires_grad(beta.id)) {
                            auto& gb = t.grad(beta.id);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < c; ++j) gb[j] += g(i, j);
                          }
                          if (t.requires_grad(x.id)) {
                            const auto& gv = t.value(gamma.id);
                            auto& gx = t.grad(x.id);
                            std::vector<T> dxhat(c);
                            for (std::size_t i = 0; i < n; ++i) {
                              T mean_d{0}, mean_dx{0};
                              for (std::size_t j = 0; j < c; ++j) {
                                dxhat[j] = g(i, j) * gv[j];
                                mean_d += dxhat[j];
                                mean_dx += dxhat[j] * xhat(i, j);
                              }
                              mean_d /= static_cast<T>(c);
                              mean_dx /= static_cast<T>(c);
                              for (std::size_t j = 0; j < c; ++j)
                                gx(i, j) += inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
                            }
                          }
                        });
}

/// Mean over rows: a[n x c] -> [1 x c].
template <class T>
Var<T> mean_rows(Var<T> a) {
  const auto& av = a.value();
  const std::size_t n = av.rows(), c = av.cols();
  detail::require(n > 0, "mean_rows: empty input");
  Tensor<T> out = Tensor<T>::matrix(1, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += av(i, j);
  for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<T>(n);
  return a.tape->record(std::move(out), {a}, [a, n, c](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(a.id)) return;
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    const T inv = T{1} / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) ga(i, j) += g[j] * inv;
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  T s{0};
  for (auto v : a.value().values()) s += v;
  return a.tape->record(Tensor<T>::scalar(s), {a}, [a](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(a.id)) return;
    const T g = t.grad(self)[0];
    auto& ga = t.grad(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

// ---------------------------------------------------------------------------
// Structural

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  detail::require(shape_volume(shape) == a.value().size(), "reshape: volume mismatch");
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(a.id)) return;
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

/// Columns [c0, c1) of a[n x c].
template <class T>
Var<T> slice_cols(Var<T> a, std::size_t c0, std::size_t c1) {
  const auto& av = a.value();
  detail::require(c0 < c1 && c1 <= av.cols(), "slice_cols: bad range");
  const std::size_t n = av.rows(), w = c1 - c0, c = av.cols();
  Tensor<T> out = Tensor<T>::matrix(n, w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = av(i, c0 + j);
  return a.tape->record(std::move(out), {a}, [a, n, w, c, c0](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(a.id)) return;
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * c + c0 + j] += g(i, j);
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == n, "concat_cols: row mismatch");
    total += p.cols();
  }
  Tensor<T> out = Tensor<T>::matrix(n, total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
    off += pv.cols();
  }
  return parts[0].tape->record(std::move(out), parts, [parts, n, total](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = t.value(p.id).cols();
      if (t.requires_grad(p.id)) {
        auto& gp = t.grad(p.id);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) gp(i, j) += g[i * total + off + j];
      }
      off += w;
    }
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.value().rank() == 2 && p.cols() == c, "concat_rows: column mismatch");
    total += p.rows();
  }
  Tensor<T> out = Tensor<T>::matrix(total, c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    std::copy(pv.data(), pv.data() + pv.size(), out.data() + off);
    off += pv.size();
  }
  return parts[0].tape->record(std::move(out), parts, [parts](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t len = t.value(p.id).size();
      if (t.requires_grad(p.id)) {
        auto& gp = t.grad(p.id);
        for (std::size_t i = 0; i < len; ++i) gp[i] += g[off + i];
      }
      off += len;
    }
  });
}

/// Rows of a[n x c] picked by index (repeats allowed).
template <class T>
Var<T> gather_rows(Var<T> a, std::vector<std::size_t> idx) {
  const auto& av = a.value();
  const std::size_t c = av.cols();
  Tensor<T> out = Tensor<T>::matrix(idx.size(), c);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    detail::require(idx[r] < av.rows(), "gather_rows: index out of range");
    for (std::size_t j = 0; j < c; ++j) out(r, j) = av(idx[r], j);
  }
  return a.tape->record(std::move(out), {a}, [a, c, idx = std::move(idx)](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(a.id)) return;
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) ga(idx[r], j) += g(r, j);
  });
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

/// Unfolds x[Ci x H x W] into cols[(Ci*k*k) x (oh*ow)]; padded taps are zero.
template <class T>
void im2col(const T* x, T* cols, std::size_t ci, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow) {
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix >= 0 &&
                                ix < static_cast<std::ptrdiff_t>(w);
            row[oy * ow + ox] = inside ? x[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] : T{0};
          }
        }
      }
}

/// Adjoint of im2col: accumulates cols back into gx[Ci x H x W].
template <class T>
void col2im(const T* cols, T* gx, std::size_t ci, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow) {
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            gx[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += row[oy * ow + ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution of x[Ci x H x W] with w[Co x Ci x k x k] and bias b[1 x Co], via im2col.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  detail::require(xv.rank() == 3 && wv.rank() == 4 && wv.dim(1) == xv.dim(0) && wv.dim(2) == wv.dim(3),
                  "conv2d: shape mismatch");
  detail::require(stride > 0, "conv2d: stride must be positive");
  const std::size_t ci = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const std::size_t co = wv.dim(0), k = wv.dim(2);
  detail::require(b.value().size() == co, "conv2d: bias width mismatch");
  detail::require(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d: kernel larger than padded input");
  const std::size_t oh = (h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - k) / stride + 1;
  const std::size_t taps = ci * k * k, np = oh * ow;
  Tensor<T> cols({taps, np});
  detail::im2col(xv.data(), cols.data(), ci, h, wd, k, stride, pad, oh, ow);
  Tensor<T> out({co, oh, ow});
  const auto& bv = b.value();
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < np; ++i) out[o * np + i] = bv[o];
  detail::gemm_nn(wv.data(), cols.data(), out.data(), co, taps, np);
  return x.tape->record(std::move(out), {x, w, b},
                        [x, w, b, ci, h, wd, co, k, oh, ow, np, taps, stride, pad,
                         cols = std::move(cols)](Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          if (t.requires_grad(b.id)) {
                            auto& gb = t.grad(b.id);
                            for (std::size_t o = 0; o < co; ++o)
                              for (std::size_t i = 0; i < np; ++i) gb[o] += g[o * np + i];
                          }
                          if (t.requires_grad(w.id))
                            detail::gemm_nt(g.data(), cols.data(), t.grad(w.id).data(), co, np, taps);
                          if (t.requires_grad(x.id)) {
                            Tensor<T> gcols({taps, np});
                            detail::gemm_tn(t.value(w.id).data(), g.data(), gcols.data(), co, taps, np);
                            detail::col2im(gcols.data(), t.grad(x.id).data(), ci, h, wd, k, stride, pad, oh, ow);
                          }
                        });
}

// ---------------------------------------------------------------------------
// Losses

/// Weighted mean cross-entropy over rows of logits[n x C]:
/// sum_i w[t_i] * -log softmax(logits_i)[t_i] / sum_i w[t_i].
template <class T>
Var<T> cross_entropy(Var<T> logits, std::vector<std::size_t> targets, std::vector<T> class_weights) {
  const auto& lv = logits.value();
  const std::size_t n = lv.rows(), c = lv.cols();
  detail::require(targets.size() == n, "cross_entropy: target count mismatch");
  detail::require(class_weights.size() == c, "cross_entropy: class weight count mismatch");
  Tensor<T> prob = Tensor<T>::matrix(n, c);
  T total{0}, wsum{0};
  for (std::size_t i = 0; i < n; ++i) {
    detail::require(targets[i] < c, "cross_entropy: target out of range");
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lv(i, j));
    T s{0};
    for (std::size_t j = 0; j < c; ++j) {
      prob(i, j) = std::exp(lv(i, j) - mx);
      s += prob(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) prob(i, j) /= s;
    const T w = class_weights[targets[i]];
    total += w * (std::log(s) + mx - lv(i, targets[i]));
    wsum += w;
  }
  const T value = wsum > T{0} ? total / wsum : T{0};
  return logits.tape->record(Tensor<T>::scalar(value), {logits},
                             [logits, n, c, wsum, prob = std::move(prob), targets = std::move(targets),
                              class_weights = std::move(class_weights)](Tape<T>& t, std::size_t self) {
                               if (!t.requires_grad(logits.id) || wsum <= T{0}) return;
                               const T g = t.grad(self)[0] / wsum;
                               auto& gl = t.grad(logits.id);
                               for (std::size_t i = 0; i < n; ++i) {
                                 const T w = class_weights[targets[i]] * g;
                                 for (std::size_t j = 0; j < c; ++j)
                                   gl(i, j) += w * (prob(i, j) - (j == targets[i] ? T{1} : T{0}));
                               }
                             });
}

/// Weighted mean over rows of -log(sum of softmax probabilities over the row's target set).
template <class T>
Var<T> set_cross_entropy(Var<T> logits, std::vector<std::vector<std::size_t>> targets, std::vector<T> row_weights) {
  const auto& lv = logits.value();
  const std::size_t n = lv.rows(), c = lv.cols();
  detail::require(targets.size() == n, "set_cross_entropy: target count mismatch");
  detail::require(row_weights.size() == n, "set_cross_entropy: row weight count mismatch");
  auto log_sum_exp = [&](std::size_t i, const auto& cols) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j : cols) mx = std::max(mx, lv(i, j));
    T s{0};
    for (std::size_t j : cols) s += std::exp(lv(i, j) - mx);
    return mx + std::log(s);
  };
  std::vector<std::size_t> all(c);
  for (std::size_t j = 0; j < c; ++j) all[j] = j;
  // prob holds softmax over all classes; within holds softmax restricted to the target set.
  Tensor<T> prob = Tensor<T>::matrix(n, c), within = Tensor<T>::matrix(n, c);
  T total{0}, wsum{0};
  for (std::size_t i = 0; i < n; ++i) {
    detail::require(!targets[i].empty(), "set_cross_entropy: empty target set");
    for (std::size_t j : targets[i]) detail::require(j < c, "set_cross_entropy: target out of range");
    const T lz = log_sum_exp(i, all), ls = log_sum_exp(i, targets[i]);
    for (std::size_t j = 0; j < c; ++j) prob(i, j) = std::exp(lv(i, j) - lz);
    for (std::size_t j : targets[i]) within(i, j) = std::exp(lv(i, j) - ls);
    total += row_weights[i] * (lz - ls);
    wsum += row_weights[i];
  }
  const T value = wsum > T{0} ? total / wsum : T{0};
  return logits.tape->record(Tensor<T>::scalar(value), {logits},
                             [logits, n, c, wsum, prob = std::move(prob), within = std::move(within),
                              row_weights = std::move(row_weights)](Tape<T>& t, std::size_t self) {
                               if (!t.requires_grad(logits.id) || wsum <= T{0}) return;
                               const T g = t.grad(self)[0] / wsum;
                               auto& gl = t.grad(logits.id);
                               for (std::size_t i = 0; i < n; ++i) {
                                 const T w = row_weights[i] * g;
                                 for (std::size_t j = 0; j < c; ++j) gl(i, j) += w * (prob(i, j) - within(i, j));
                               }
                             });
}

/// Sum of elementwise binary cross-entropy between sigmoid(logits) and targets.
template <class T>
Var<T> bce_with_logits(Var<T> logits, Tensor<T> targets) {
  const auto& lv = logits.value();
  detail::require(lv.shape() == targets.shape(), "bce_with_logits: shape mismatch");
  T total{0};
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const T x = lv[i];
    total += std::max(x, T{0}) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  return logits.tape->record(Tensor<T>::scalar(total), {logits},
                             [logits, targets = std::move(targets)](Tape<T>& t, std::size_t self) {
                               if (!t.requires_grad(logits.id)) return;
                               const T g = t.grad(self)[0];
                               const auto& lv = t.value(logits.id);
                               auto& gl = t.grad(logits.id);
                               for (std::size_t i = 0; i < lv.size(); ++i) {
                                 const T x = lv[i];
                                 const T s = x >= T{0} ? T{1} / (T{1} + std::exp(-x))
                                                       : std::exp(x) / (T{1} + std::exp(x));
                                 gl[i] += g * (s - targets[i]);
                               }
                             });
}

}  // namespace ssrt::nn
