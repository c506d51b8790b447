#pragma once

// Scalar reference kernels. Reductions accumulate in f64.

#include <algorithm>
#include <cstdint>
#include <vector>

namespace mgst::kernels::ref {

template <class T>
void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const T* a, std::int64_t lda,
          const T* b, std::int64_t ldb, bool accumulate, T* c, std::int64_t ldc) {
  // op(B) rows must be contiguous for the inner loop.
  std::vector<T> bt;
  const T* brow = b;
  std::int64_t ldbr = ldb;
  if (tb) {
    bt.resize(static_cast<std::size_t>(k * n));
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t p = 0; p < k; ++p) bt[static_cast<std::size_t>(p * n + j)] = b[j * ldb + p];
    brow = bt.data();
    ldbr = n;
  }
  std::vector<double> acc(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = ta ? a[p * lda + i] : a[i * lda + p];
      if (av == 0.0) continue;
      const T* br = brow + p * ldbr;
      for (std::int64_t j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += av * static_cast<double>(br[j]);
    }
    T* cr = c + i * ldc;
    for (std::int64_t j = 0; j < n; ++j) {
      const double base = accumulate ? static_cast<double>(cr[j]) : 0.0;
      cr[j] = static_cast<T>(base + acc[static_cast<std::size_t>(j)]);
    }
  }
}

template <class T>
void add(std::int64_t n, const T* x, const T* y, T* out) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

template <class T>
void mul(std::int64_t n, const T* x, const T* y, T* out) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

template <class T>
void axpy(std::int64_t n, T alpha, const T* x, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

template <class T>
void relu(std::int64_t n, const T* x, T* out) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_backward(std::int64_t n, const T* x, const T* gy, T* gx) {
  for (std::int64_t i = 0; i < n; ++i)
    if (x[i] > T(0)) gx[i] += gy[i];
}

template <class T>
double dot(std::int64_t n, const T* x, const T* y) {
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  return s;
}

template <class T>
double sum(std::int64_t n, const T* x) {
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += static_cast<double>(x[i]);
  return s;
}

}  // namespace mgst::kernels::ref
