#pragma once

#include <cstdint>

#include "mgst/real.hpp"

// AVX2/FMA kernels for f32. Only call when avx2_supported().

namespace mgst {
inline namespace MGST_ABI {
namespace kernels::avx2 {

void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const float* a, std::int64_t lda,
          const float* b, std::int64_t ldb, bool accumulate, float* c, std::int64_t ldc);
void add(std::int64_t n, const float* x, const float* y, float* out);
void mul(std::int64_t n, const float* x, const float* y, float* out);
void axpy(std::int64_t n, float alpha, const float* x, float* y);
void relu(std::int64_t n, const float* x, float* out);
void relu_backward(std::int64_t n, const float* x, const float* gy, float* gx);
double dot(std::int64_t n, const float* x, const float* y);
double sum(std::int64_t n, const float* x);

}  // namespace kernels::avx2
}  // namespace MGST_ABI
}  // namespace mgst
