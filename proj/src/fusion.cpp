#include "mgst/fusion.hpp"

namespace mgst {
inline namespace MGST_ABI {

FusionParams FusionParams::create(ParameterSet& ps, std::int64_t channels, const FusionConfig& cfg) {
  FusionParams p;
  p.cfg = cfg;
  const std::int64_t cm = cfg.single_channel ? 1 : channels;
  const std::int64_t cin = cfg.both_inputs ? 2 * channels : channels;
  p.weight = &ps.add("fusion.weight", Tensor::zeros({cm, cin, 1, 1, 1}));
  if (cfg.bias) p.bias = &ps.add("fusion.bias", Tensor::zeros({cm}));
  return p;
}

Var fusion_mask(Tape& tape, const Var& s, const Var& t, const FusionParams& p) {
  require_same_shape(s.value(), t.value(), "fuse");
  const Var in = p.cfg.both_inputs ? ag::concat_channels({s, t}) : t;
  return ag::sigmoid(
      ag::conv3d(in, tape.param(*p.weight), p.bias ? tape.param(*p.bias) : Var(), ConvSpec::cube(1, 1, 0)));
}

Var fuse_with_mask(const Var& s, const Var& t, const Var& mask) {
  require_same_shape(s.value(), t.value(), "fuse");
  const Var diff = ag::sub(t, s);
  const Var gated = mask.dim(1) == diff.dim(1) ? ag::mul(mask, diff) : ag::mul_channel_broadcast(diff, mask);
  return ag::add(s, gated);
}

Fused fuse(Tape& tape, const Var& s, const Var& t, const FusionParams& p) {
  Var mask = fusion_mask(tape, s, t, p);
  return {fuse_with_mask(s, t, mask), mask};
}

namespace {

Tensor batch1(const Tensor& x, const char* what) {
  require(x.rank() == 4, ErrorCode::kShapeMismatch, std::string(what) + ": expects [C,T,h,w], got " + shape_str(x.shape()));
  return x.reshaped({1, x.dim(0), x.dim(1), x.dim(2), x.dim(3)});
}

Tensor unbatch(const Tensor& x) { return x.reshaped({x.dim(1), x.dim(2), x.dim(3), x.dim(4)}); }

}  // namespace

Tensor fuse(const Tensor& s, const Tensor& t, const FusionParams& p) {
  require_same_shape(s, t, "fuse");
  Tape tape(false);
  return unbatch(fuse(tape, tape.constant(batch1(s, "fuse")), tape.constant(batch1(t, "fuse")), p).out.value());
}

Tensor export_mask(const Tensor& t, const FusionParams& p, const Tensor& s) {
  Tape tape(false);
  const Var tv = tape.constant(batch1(t, "export_mask"));
  const Var sv = s.empty() ? tv : tape.constant(batch1(s, "export_mask"));
  return unbatch(fusion_mask(tape, sv, tv, p).value());
}

}  // namespace MGST_ABI
}  // namespace mgst
