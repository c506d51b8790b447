#pragma once

#include "mgst/autodiff.hpp"
#include "mgst/nn.hpp"

namespace mgst {
inline namespace MGST_ABI {

struct FusionConfig {
  bool single_channel = false;  // one mask channel broadcast over all features
  bool both_inputs = false;     // mask conditioned on [S;T] instead of T alone
  bool bias = false;
};

/// Mask generator: a 1x1x1 convolution followed by a sigmoid.
struct FusionParams {
  FusionConfig cfg;
  Parameter* weight = nullptr;  // [Cm, Cin, 1, 1, 1]
  Parameter* bias = nullptr;

  /// Zero-initialised, so a fresh mask is 0.5 everywhere.
  static FusionParams create(ParameterSet& ps, std::int64_t channels, const FusionConfig& cfg);
};

struct Fused {
  Var out;
  Var mask;
};

/// mask = sigmoid(W * T) (or W * [S;T]); F = S + mask (T - S), i.e. T*mask + S*(1-mask).
Fused fuse(Tape& tape, const Var& s, const Var& t, const FusionParams& p);
Var fusion_mask(Tape& tape, const Var& s, const Var& t, const FusionParams& p);
/// F = S + mask (T - S); mask may have one channel.
Var fuse_with_mask(const Var& s, const Var& t, const Var& mask);

/// Unbatched conveniences over [C,T,h,w] tensors.
Tensor fuse(const Tensor& s, const Tensor& t, const FusionParams& p);
Tensor export_mask(const Tensor& t, const FusionParams& p, const Tensor& s = {});

}  // namespace MGST_ABI
}  // namespace mgst
