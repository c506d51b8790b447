#pragma once

// Storage precision. The default build stores f32; configuring with
// -DMGST_DOUBLE=ON compiles the same sources at f64 into a separate inline
// namespace so both variants can be linked into one test binary.

#if defined(MGST_REAL_DOUBLE)
#define MGST_ABI v_f64
#else
#define MGST_ABI v_f32
#endif

namespace mgst {
inline namespace MGST_ABI {

#if defined(MGST_REAL_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

inline constexpr bool kRealIsDouble = sizeof(Real) == sizeof(double);

}  // namespace MGST_ABI
}  // namespace mgst
