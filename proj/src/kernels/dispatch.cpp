#include <atomic>
#include <cstdlib>
#include <cstring>

#include "mgst/kernels.hpp"
#include "reference.hpp"

#if defined(MGST_HAVE_AVX2) && !defined(MGST_REAL_DOUBLE)
#include "avx2.hpp"
#define MGST_DISPATCH_AVX2 1
#else
#define MGST_DISPATCH_AVX2 0
#endif

namespace mgst {
inline namespace MGST_ABI {
namespace kernels {
namespace {

Backend detect() {
  if (const char* env = std::getenv("MGST_KERNEL")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::kScalar;
    if (std::strcmp(env, "avx2") == 0 && avx2_supported()) return Backend::kAvx2;
  }
  return avx2_supported() ? Backend::kAvx2 : Backend::kScalar;
}

std::atomic<Backend>& active() {
  static std::atomic<Backend> b{detect()};
  return b;
}

#if MGST_DISPATCH_AVX2
bool use_avx2() { return active().load(std::memory_order_relaxed) == Backend::kAvx2; }
#endif

}  // namespace

bool avx2_supported() {
#if MGST_DISPATCH_AVX2
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
#else
  return false;
#endif
}

Backend backend() { return active().load(); }

void set_backend(Backend b) {
  if (b == Backend::kAvx2 && !avx2_supported()) b = Backend::kScalar;
  active().store(b);
}

std::string_view backend_name(Backend b) { return b == Backend::kAvx2 ? "avx2" : "scalar"; }

#if MGST_DISPATCH_AVX2
#define MGST_DISPATCH(fn, ...)                  \
  do {                                          \
    if (use_avx2()) return avx2::fn(__VA_ARGS__); \
    return ref::fn(__VA_ARGS__);                \
  } while (0)
#else
#define MGST_DISPATCH(fn, ...) return ref::fn(__VA_ARGS__)
#endif

void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const Real* a, std::int64_t lda,
          const Real* b, std::int64_t ldb, bool accumulate, Real* c, std::int64_t ldc) {
  MGST_DISPATCH(gemm, ta, tb, m, n, k, a, lda, b, ldb, accumulate, c, ldc);
}

void add(std::int64_t n, const Real* x, const Real* y, Real* out) { MGST_DISPATCH(add, n, x, y, out); }
void mul(std::int64_t n, const Real* x, const Real* y, Real* out) { MGST_DISPATCH(mul, n, x, y, out); }
void axpy(std::int64_t n, Real alpha, const Real* x, Real* y) { MGST_DISPATCH(axpy, n, alpha, x, y); }
void relu(std::int64_t n, const Real* x, Real* out) { MGST_DISPATCH(relu, n, x, out); }
void relu_backward(std::int64_t n, const Real* x, const Real* gy, Real* gx) {
  MGST_DISPATCH(relu_backward, n, x, gy, gx);
}
double dot(std::int64_t n, const Real* x, const Real* y) { MGST_DISPATCH(dot, n, x, y); }
double sum(std::int64_t n, const Real* x) { MGST_DISPATCH(sum, n, x); }

#undef MGST_DISPATCH

}  // namespace kernels
}  // namespace MGST_ABI
}  // namespace mgst
