#include "avx2.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cstring>
#include <vector>

namespace mgst {
inline namespace MGST_ABI {
namespace kernels::avx2 {
namespace {

constexpr std::int64_t kMr = 6;
constexpr std::int64_t kNr = 16;
constexpr std::int64_t kKc = 256;
constexpr std::int64_t kMc = 96;
constexpr std::int64_t kNc = 2048;

struct PackBuffers {
  std::vector<float> a;
  std::vector<float> b;
};

PackBuffers& pack_buffers() {
  thread_local PackBuffers buf;
  return buf;
}

// A sliver: for each p, kMr consecutive row values; rows past mc are zero.
void pack_a(bool ta, const float* a, std::int64_t lda, std::int64_t i0, std::int64_t mc, std::int64_t k0,
            std::int64_t kc, float* dst) {
  for (std::int64_t ib = 0; ib < mc; ib += kMr) {
    const std::int64_t mr = std::min(kMr, mc - ib);
    for (std::int64_t p = 0; p < kc; ++p) {
      const std::int64_t kk = k0 + p;
      for (std::int64_t r = 0; r < kMr; ++r) {
        if (r < mr) {
          const std::int64_t i = i0 + ib + r;
          dst[r] = ta ? a[kk * lda + i] : a[i * lda + kk];
        } else {
          dst[r] = 0.0f;
        }
      }
      dst += kMr;
    }
  }
}

// B sliver: for each p, kNr consecutive column values; columns past nc are zero.
void pack_b(bool tb, const float* b, std::int64_t ldb, std::int64_t k0, std::int64_t kc, std::int64_t j0,
            std::int64_t nc, float* dst) {
  for (std::int64_t jb = 0; jb < nc; jb += kNr) {
    const std::int64_t nr = std::min(kNr, nc - jb);
    for (std::int64_t p = 0; p < kc; ++p) {
      const std::int64_t kk = k0 + p;
      if (!tb && nr == kNr) {
        const float* src = b + kk * ldb + j0 + jb;
        _mm256_storeu_ps(dst, _mm256_loadu_ps(src));
        _mm256_storeu_ps(dst + 8, _mm256_loadu_ps(src + 8));
      } else {
        for (std::int64_t c = 0; c < kNr; ++c) {
          if (c < nr) {
            const std::int64_t j = j0 + jb + c;
            dst[c] = tb ? b[j * ldb + kk] : b[kk * ldb + j];
          } else {
            dst[c] = 0.0f;
          }
        }
      }
      dst += kNr;
    }
  }
}

void micro_kernel(std::int64_t kc, const float* pa, const float* pb, float* c, std::int64_t ldc, std::int64_t mr,
                  std::int64_t nr, bool accumulate) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();

  for (std::int64_t p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(pb);
    const __m256 b1 = _mm256_loadu_ps(pb + 8);
    __m256 a = _mm256_broadcast_ss(pa + 0);
    c00 = _mm256_fmadd_ps(a, b0, c00);
    c01 = _mm256_fmadd_ps(a, b1, c01);
    a = _mm256_broadcast_ss(pa + 1);
    c10 = _mm256_fmadd_ps(a, b0, c10);
    c11 = _mm256_fmadd_ps(a, b1, c11);
    a = _mm256_broadcast_ss(pa + 2);
    c20 = _mm256_fmadd_ps(a, b0, c20);
    c21 = _mm256_fmadd_ps(a, b1, c21);
    a = _mm256_broadcast_ss(pa + 3);
    c30 = _mm256_fmadd_ps(a, b0, c30);
    c31 = _mm256_fmadd_ps(a, b1, c31);
    a = _mm256_broadcast_ss(pa + 4);
    c40 = _mm256_fmadd_ps(a, b0, c40);
    c41 = _mm256_fmadd_ps(a, b1, c41);
    a = _mm256_broadcast_ss(pa + 5);
    c50 = _mm256_fmadd_ps(a, b0, c50);
    c51 = _mm256_fmadd_ps(a, b1, c51);
    pa += kMr;
    pb += kNr;
  }

  alignas(32) float tile[kMr * kNr];
  _mm256_store_ps(tile + 0 * kNr, c00);
  _mm256_store_ps(tile + 0 * kNr + 8, c01);
  _mm256_store_ps(tile + 1 * kNr, c10);
  _mm256_store_ps(tile + 1 * kNr + 8, c11);
  _mm256_store_ps(tile + 2 * kNr, c20);
  _mm256_store_ps(tile + 2 * kNr + 8, c21);
  _mm256_store_ps(tile + 3 * kNr, c30);
  _mm256_store_ps(tile + 3 * kNr + 8, c31);
  _mm256_store_ps(tile + 4 * kNr, c40);
  _mm256_store_ps(tile + 4 * kNr + 8, c41);
  _mm256_store_ps(tile + 5 * kNr, c50);
  _mm256_store_ps(tile + 5 * kNr + 8, c51);

  if (nr == kNr) {
    for (std::int64_t r = 0; r < mr; ++r) {
      float* cr = c + r * ldc;
      __m256 lo = _mm256_load_ps(tile + r * kNr);
      __m256 hi = _mm256_load_ps(tile + r * kNr + 8);
      if (accumulate) {
        lo = _mm256_add_ps(_mm256_loadu_ps(cr), lo);
        hi = _mm256_add_ps(_mm256_loadu_ps(cr + 8), hi);
      }
      _mm256_storeu_ps(cr, lo);
      _mm256_storeu_ps(cr + 8, hi);
    }
  } else {
    for (std::int64_t r = 0; r < mr; ++r) {
      float* cr = c + r * ldc;
      for (std::int64_t j = 0; j < nr; ++j) cr[j] = accumulate ? cr[j] + tile[r * kNr + j] : tile[r * kNr + j];
    }
  }
}

}  // namespace

void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const float* a, std::int64_t lda,
          const float* b, std::int64_t ldb, bool accumulate, float* c, std::int64_t ldc) {
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    if (!accumulate)
      for (std::int64_t i = 0; i < m; ++i) std::memset(c + i * ldc, 0, static_cast<std::size_t>(n) * sizeof(float));
    return;
  }
  auto& buf = pack_buffers();
  buf.a.resize(static_cast<std::size_t>(((kMc + kMr - 1) / kMr) * kMr * kKc));
  buf.b.resize(static_cast<std::size_t>(((kNc + kNr - 1) / kNr) * kNr * kKc));

  for (std::int64_t jc = 0; jc < n; jc += kNc) {
    const std::int64_t nc = std::min(kNc, n - jc);
    for (std::int64_t pc = 0; pc < k; pc += kKc) {
      const std::int64_t kc = std::min(kKc, k - pc);
      const bool acc = accumulate || pc > 0;
      pack_b(tb, b, ldb, pc, kc, jc, nc, buf.b.data());
      for (std::int64_t ic = 0; ic < m; ic += kMc) {
        const std::int64_t mc = std::min(kMc, m - ic);
        pack_a(ta, a, lda, ic, mc, pc, kc, buf.a.data());
        for (std::int64_t jr = 0; jr < nc; jr += kNr) {
          const std::int64_t nr = std::min(kNr, nc - jr);
          const float* pb = buf.b.data() + (jr / kNr) * kNr * kc;
          for (std::int64_t ir = 0; ir < mc; ir += kMr) {
            const std::int64_t mr = std::min(kMr, mc - ir);
            const float* pa = buf.a.data() + (ir / kMr) * kMr * kc;
            micro_kernel(kc, pa, pb, c + (ic + ir) * ldc + jc + jr, ldc, mr, nr, acc);
          }
        }
      }
    }
  }
}

void add(std::int64_t n, const float* x, const float* y, float* out) {
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul(std::int64_t n, const float* x, const float* y, float* out) {
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

// Unfused multiply-add so results match the scalar reference bit for bit.
void axpy(std::int64_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_mul_ps(va, _mm256_loadu_ps(x + i))));
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void relu(std::int64_t n, const float* x, float* out) {
  const __m256 zero = _mm256_setzero_ps();
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    _mm256_storeu_ps(out + i, _mm256_and_ps(v, _mm256_cmp_ps(v, zero, _CMP_GT_OQ)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(std::int64_t n, const float* x, const float* gy, float* gx) {
  const __m256 zero = _mm256_setzero_ps();
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    const __m256 g = _mm256_and_ps(_mm256_loadu_ps(gy + i), mask);
    _mm256_storeu_ps(gx + i, _mm256_add_ps(_mm256_loadu_ps(gx + i), g));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0f) gx[i] += gy[i];
}

double dot(std::int64_t n, const float* x, const float* y) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vx = _mm256_loadu_ps(x + i);
    const __m256 vy = _mm256_loadu_ps(y + i);
    acc0 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(vx)), _mm256_cvtps_pd(_mm256_castps256_ps128(vy)),
                           acc0);
    acc1 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(vx, 1)),
                           _mm256_cvtps_pd(_mm256_extractf128_ps(vy, 1)), acc1);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  return s;
}

double sum(std::int64_t n, const float* x) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm256_castps256_ps128(v)));
    acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)));
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += static_cast<double>(x[i]);
  return s;
}

}  // namespace kernels::avx2
}  // namespace MGST_ABI
}  // namespace mgst
