#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mgst/tensor.hpp"

namespace mgst {
inline namespace MGST_ABI {

/// Window geometry over the (time, height, width) axes. 2D ops use time = 1.
struct ConvSpec {
  std::array<std::int64_t, 3> kernel{1, 1, 1};
  std::array<std::int64_t, 3> stride{1, 1, 1};
  std::array<std::int64_t, 3> pad{0, 0, 0};

  static ConvSpec planar(std::int64_t kh, std::int64_t kw, std::int64_t stride = 1, std::int64_t pad = 0) {
    return ConvSpec{{1, kh, kw}, {1, stride, stride}, {0, pad, pad}};
  }
  static ConvSpec cube(std::int64_t k, std::int64_t stride = 1, std::int64_t pad = 0) {
    return ConvSpec{{k, k, k}, {stride, stride, stride}, {pad, pad, pad}};
  }

  /// floor((in + 2*pad - k) / stride) + 1; rejects windows that do not fit.
  std::int64_t out_extent(int axis, std::int64_t in) const;
  void validate() const;
  bool operator==(const ConvSpec&) const = default;
};

// ---- convolution (cross-correlation, zero padding) -------------------------

/// x [N,Cin,T,H,W], w [Cout,Cin,kt,kh,kw], bias [Cout] or empty.
Tensor conv3d_batched(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvSpec& spec);

/// Accumulates into whichever of gx / gw / gb is non-null (pre-shaped).
void conv3d_batched_backward(const Tensor& x, const Tensor& w, const ConvSpec& spec, const Tensor& gy, Tensor* gx,
                             Tensor* gw, Tensor* gb);

/// input [Cin,H,W], weights [Cout,Cin,kh,kw], bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec);
/// input [Cin,T,H,W], weights [Cout,Cin,kt,kh,kw], bias [Cout].
Tensor conv3d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec);

// ---- pooling and resampling ------------------------------------------------

/// Max over windows of the trailing (T,H,W) axes; rank-2 input is [H,W],
/// rank-1 is [W]. Padding never wins against a real value.
Tensor maxpool(const Tensor& x, const ConvSpec& spec);

struct MaxPoolResult {
  Tensor out;
  std::vector<std::int64_t> argmax;  // flat input index per output element
};
/// Ties resolve to the first maximal element in window scan order.
MaxPoolResult maxpool_with_argmax(const Tensor& x, const ConvSpec& spec);
void maxpool_backward(const std::vector<std::int64_t>& argmax, const Tensor& gy, Tensor& gx);

/// Mean over windows of the trailing (T,H,W) axes. No padding.
Tensor avgpool(const Tensor& x, const ConvSpec& spec);
void avgpool_backward(const Shape& x_shape, const ConvSpec& spec, const Tensor& gy, Tensor& gx);

/// Nearest-neighbour resize of the last two axes: src = floor(dst * H / H2).
Tensor upsample_nearest(const Tensor& x, std::int64_t h2, std::int64_t w2);
void upsample_nearest_backward(const Tensor& gy, Tensor& gx);

// ---- elementwise -----------------------------------------------------------

/// Output clamped into the open interval (0, 1).
Real sigmoid(Real x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real s);

/// x [N], w [M,N], b [M] -> [M]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace MGST_ABI
}  // namespace mgst
