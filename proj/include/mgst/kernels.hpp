#pragma once

#include <cstdint>
#include <string_view>

#include "mgst/real.hpp"

// Inner-loop kernels. Every entry point has a scalar reference implementation
// and, for f32 storage on x86-64, an AVX2/FMA variant picked at runtime. The
// MGST_KERNEL environment variable ("scalar" or "avx2") overrides detection.

namespace mgst {
inline namespace MGST_ABI {
namespace kernels {

enum class Backend { kScalar, kAvx2 };

bool avx2_supported();
Backend backend();
void set_backend(Backend b);
std::string_view backend_name(Backend b);

/// C[m,n] = (accumulate ? C : 0) + op(A)[m,k] * op(B)[k,n]
/// op(A) is A^T when trans_a (A stored k x m); likewise for B.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const Real* a,
          std::int64_t lda, const Real* b, std::int64_t ldb, bool accumulate, Real* c, std::int64_t ldc);

void add(std::int64_t n, const Real* x, const Real* y, Real* out);
void mul(std::int64_t n, const Real* x, const Real* y, Real* out);
/// y += alpha * x
void axpy(std::int64_t n, Real alpha, const Real* x, Real* y);
void relu(std::int64_t n, const Real* x, Real* out);
/// gx += (x > 0) ? gy : 0
void relu_backward(std::int64_t n, const Real* x, const Real* gy, Real* gx);
double dot(std::int64_t n, const Real* x, const Real* y);
double sum(std::int64_t n, const Real* x);

}  // namespace kernels
}  // namespace MGST_ABI
}  // namespace mgst
