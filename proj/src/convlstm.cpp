#include "mgst/convlstm.hpp"

#include <cmath>

namespace mgst {
inline namespace MGST_ABI {
namespace {

ConvSpec same(std::int64_t k) { return ConvSpec::planar(k, k, 1, k / 2); }

// Orthogonal [rows, cols] blocks per spatial tap, written into w[row0 + r, c, ky, kx].
void fill_orthogonal(Initializer& init, Tensor& w, std::int64_t row0, std::int64_t rows, double gain) {
  const std::int64_t cols = w.dim(1), k = w.dim(2);
  for (std::int64_t ky = 0; ky < k; ++ky)
    for (std::int64_t kx = 0; kx < k; ++kx) {
      const auto q = init.orthogonal(rows, cols);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c)
          w.at({row0 + r, c, ky, kx}) = static_cast<Real>(gain * q[static_cast<std::size_t>(r * cols + c)]);
    }
}

Tensor gate_kernel(Initializer& init, std::int64_t gates, std::int64_t hidden, std::int64_t cin, std::int64_t k) {
  Tensor w({gates * hidden, cin, k, k});
  const double gain = 1.0 / static_cast<double>(k);
  for (std::int64_t g = 0; g < gates; ++g) fill_orthogonal(init, w, g * hidden, hidden, gain);
  return w;
}

Var conv_same(Tape& tape, const Var& x, Parameter& w, Parameter* b) {
  const Tensor& wv = w.value;
  const std::int64_t k = wv.dim(2);
  // Kernels are stored [Co, Ci, k, k]; the conv op wants a unit time axis.
  const Var w5 = ag::reshape(tape.param(w), {wv.dim(0), wv.dim(1), 1, k, k});
  return ag::conv3d(x, w5, b ? tape.param(*b) : Var(), same(k));
}

Var peephole(Tape& tape, const Var& c, Parameter& p) {
  const Tensor& v = p.value;
  return ag::mul_batch_broadcast(c, ag::reshape(tape.param(p), {v.dim(0), 1, v.dim(1), v.dim(2)}));
}

}  // namespace

ConvLSTMParams ConvLSTMParams::create(ParameterSet& ps, Initializer& init, const std::string& name, std::int64_t cin,
                                      std::int64_t hidden, std::int64_t kernel, std::int64_t h, std::int64_t w,
                                      bool peephole) {
  require(cin >= 1 && hidden >= 1 && kernel >= 1 && kernel % 2 == 1, ErrorCode::kConfig,
          "convlstm: channels must be positive and the kernel odd");
  ConvLSTMParams p;
  p.cin = cin;
  p.hidden = hidden;
  p.kernel = kernel;
  p.wx = &ps.add(name + ".wx", gate_kernel(init, 4, hidden, cin, kernel));
  p.wh = &ps.add(name + ".wh", gate_kernel(init, 4, hidden, hidden, kernel));
  Tensor b({4 * hidden});
  for (std::int64_t i = hidden; i < 2 * hidden; ++i) b[static_cast<std::size_t>(i)] = Real(1);
  p.b = &ps.add(name + ".b", std::move(b));
  if (peephole) {
    p.wci = &ps.add(name + ".wci", Tensor::zeros({hidden, h, w}));
    p.wcf = &ps.add(name + ".wcf", Tensor::zeros({hidden, h, w}));
    p.wco = &ps.add(name + ".wco", Tensor::zeros({hidden, h, w}));
  }
  return p;
}

InputAttentionParams InputAttentionParams::create(ParameterSet& ps, Initializer& init, const std::string& name,
                                                  std::int64_t cin, std::int64_t hidden, std::int64_t kernel) {
  InputAttentionParams a;
  a.wxa = &ps.add(name + ".wxa", gate_kernel(init, 1, cin, cin, kernel));
  a.wha = &ps.add(name + ".wha", gate_kernel(init, 1, cin, hidden, kernel));
  return a;
}

ConvLSTMState cell_step(Tape& tape, const Var& x, const ConvLSTMState& prev, const ConvLSTMParams& p) {
  require(x.value().rank() == 5 && x.dim(1) == p.cin && x.dim(2) == 1, ErrorCode::kShapeMismatch,
          "cell_step: input must be [N," + std::to_string(p.cin) + ",1,h,w], got " + shape_str(x.shape()));
  const std::int64_t hd = p.hidden;
  Var z = conv_same(tape, x, *p.wx, p.b);
  if (!prev.is_zero()) {
    require(prev.c.shape() == Shape({x.dim(0), hd, 1, x.dim(3), x.dim(4)}), ErrorCode::kShapeMismatch,
            "cell_step: state " + shape_str(prev.c.shape()) + " does not match input " + shape_str(x.shape()));
    z = ag::add(z, conv_same(tape, prev.h, *p.wh, nullptr));
  }
  Var zi = ag::slice_channels(z, 0, hd);
  Var zf = ag::slice_channels(z, hd, 2 * hd);
  Var zc = ag::slice_channels(z, 2 * hd, 3 * hd);
  Var zo = ag::slice_channels(z, 3 * hd, 4 * hd);
  if (p.peephole() && !prev.is_zero()) {
    zi = ag::add(zi, peephole(tape, prev.c, *p.wci));
    zf = ag::add(zf, peephole(tape, prev.c, *p.wcf));
  }
  const Var i = ag::sigmoid(zi);
  const Var cand = ag::tanh(zc);
  Var c = ag::mul(i, cand);
  if (!prev.is_zero()) c = ag::add(ag::mul(ag::sigmoid(zf), prev.c), c);
  if (p.peephole()) zo = ag::add(zo, peephole(tape, c, *p.wco));
  const Var o = ag::sigmoid(zo);
  return {c, ag::mul(o, ag::tanh(c))};
}

Var attention_map(Tape& tape, const Var& x, const Var& prev_h, const InputAttentionParams& p) {
  Var z = conv_same(tape, x, *p.wxa, nullptr);
  if (prev_h.valid()) z = ag::add(z, conv_same(tape, prev_h, *p.wha, nullptr));
  return ag::sigmoid(z);
}

Var attend_input(Tape& tape, const Var& x, const Var& prev_h, const InputAttentionParams& p, bool ones_override) {
  if (ones_override) return ag::mul(tape.constant(Tensor::ones(x.shape())), x);
  return ag::mul(attention_map(tape, x, prev_h, p), x);
}

BiConvLSTM BiConvLSTM::create(ParameterSet& ps, Initializer& init, const RecurrentConfig& cfg, std::int64_t cin,
                              std::int64_t h, std::int64_t w) {
  require(cfg.layers >= 1, ErrorCode::kConfig, "recurrent: layers must be >= 1");
  BiConvLSTM net;
  net.cfg = cfg;
  std::int64_t c = cin;
  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    const std::string name = "lstm.l" + std::to_string(l);
    Layer layer;
    layer.fwd = ConvLSTMParams::create(ps, init, name + ".fwd", c, cfg.hidden, cfg.kernel, h, w, cfg.peephole);
    layer.bwd = ConvLSTMParams::create(ps, init, name + ".bwd", c, cfg.hidden, cfg.kernel, h, w, cfg.peephole);
    if (cfg.attention) {
      layer.att = InputAttentionParams::create(ps, init, name + ".att", c, cfg.hidden, cfg.kernel);
      layer.has_attention = true;
    }
    net.layers.push_back(layer);
    c = 2 * cfg.hidden;
  }
  return net;
}

Var BiConvLSTM::forward(Tape& tape, const Var& seq, const std::vector<std::int64_t>& lengths) const {
  require(seq.value().rank() == 5, ErrorCode::kShapeMismatch, "bilayer_forward: input must be [N,C,T,h,w]");
  const std::int64_t n = seq.dim(0), tt = seq.dim(2);
  require(tt >= 1, ErrorCode::kInvalidArgument, "bilayer_forward: T must be >= 1");
  require(lengths.empty() || static_cast<std::int64_t>(lengths.size()) == n, ErrorCode::kShapeMismatch,
          "bilayer_forward: one length per sample required");
  bool padded = false;
  for (auto l : lengths) {
    require(l >= 1 && l <= tt, ErrorCode::kInvalidArgument, "bilayer_forward: length out of range");
    padded = padded || l < tt;
  }
  // valid[t] is [N,1,1,h,w] with 1 for real frames of each sample.
  std::vector<Var> valid;
  if (padded) {
    const std::int64_t hw = seq.dim(3) * seq.dim(4);
    for (std::int64_t t = 0; t < tt; ++t) {
      Tensor m({n, 1, 1, seq.dim(3), seq.dim(4)});
      for (std::int64_t b = 0; b < n; ++b)
        if (t < lengths[static_cast<std::size_t>(b)])
          std::fill(m.data() + b * hw, m.data() + (b + 1) * hw, Real(1));
      valid.push_back(tape.constant(std::move(m)));
    }
  }

  Var x = seq;
  for (const auto& layer : layers) {
    std::vector<Var> frames(static_cast<std::size_t>(tt));
    for (std::int64_t t = 0; t < tt; ++t) frames[static_cast<std::size_t>(t)] = ag::time_slice(x, t);

    std::vector<Var> out_f(static_cast<std::size_t>(tt)), out_b(static_cast<std::size_t>(tt));
    ConvLSTMState st;
    for (std::int64_t t = 0; t < tt; ++t) {
      Var in = frames[static_cast<std::size_t>(t)];
      if (layer.has_attention) in = attend_input(tape, in, st.h, layer.att, attention_ones);
      st = cell_step(tape, in, st, layer.fwd);
      out_f[static_cast<std::size_t>(t)] = st.h;
    }
    st = ConvLSTMState{};
    for (std::int64_t t = tt - 1; t >= 0; --t) {
      st = cell_step(tape, frames[static_cast<std::size_t>(t)], st, layer.bwd);
      if (padded) {
        const Var& m = valid[static_cast<std::size_t>(t)];
        st = {ag::mul_channel_broadcast(st.c, m), ag::mul_channel_broadcast(st.h, m)};
      }
      out_b[static_cast<std::size_t>(t)] = st.h;
    }
    x = ag::concat_channels({ag::time_stack(out_f), ag::time_stack(out_b)});
  }
  return x;
}

ClassifyHead ClassifyHead::create(ParameterSet& ps, Initializer& init, const std::string& name, std::int64_t features,
                                  std::int64_t classes, bool average_probs) {
  ClassifyHead h;
  h.w = &ps.add(name + ".weight", init.uniform({classes, features}, 1.0 / std::sqrt(static_cast<double>(features))));
  h.b = &ps.add(name + ".bias", Tensor::zeros({classes}));
  h.average_probs = average_probs;
  return h;
}

Var ClassifyHead::forward(Tape& tape, const Var& hidden, const std::vector<std::int64_t>& lengths) const {
  require(hidden.value().rank() == 5, ErrorCode::kShapeMismatch, "classify_head: input must be [N,C,T,h,w]");
  const std::int64_t n = hidden.dim(0), tt = hidden.dim(2);
  require(tt >= 1, ErrorCode::kInvalidArgument, "classify_head: T must be >= 1");
  const Var rows = ag::frames_to_rows(hidden);
  const Var logits = ag::linear_rows(rows, tape.param(*w), tape.param(*b));
  const Var per_frame = ag::reshape(logits, {n, tt, w->value.dim(0)});
  return average_probs ? ag::log_mean_softmax_frames(per_frame, lengths) : ag::mean_frames(per_frame, lengths);
}

// ---- unbatched ----------------------------------------------------------------

namespace {

Tensor add_batch(const Tensor& x) { return x.reshaped({1, x.dim(0), 1, x.dim(1), x.dim(2)}); }
Tensor drop_batch(const Tensor& x) { return x.reshaped({x.dim(1), x.dim(3), x.dim(4)}); }

}  // namespace

ConvLSTMStateT cell_step(const Tensor& x, const ConvLSTMStateT& prev, const ConvLSTMParams& p) {
  require(x.rank() == 3, ErrorCode::kShapeMismatch, "cell_step: input must be [Cin,h,w]");
  Tape tape(false);
  ConvLSTMState st;
  if (!prev.c.empty()) {
    require(prev.c.shape() == Shape({p.hidden, x.dim(1), x.dim(2)}) && prev.h.shape() == prev.c.shape(),
            ErrorCode::kShapeMismatch, "cell_step: state shape " + shape_str(prev.c.shape()) + " does not match input");
    st = {tape.constant(add_batch(prev.c)), tape.constant(add_batch(prev.h))};
  }
  const ConvLSTMState next = cell_step(tape, tape.constant(add_batch(x)), st, p);
  return {drop_batch(next.c.value()), drop_batch(next.h.value())};
}

Tensor attend_input(const Tensor& x, const Tensor& prev_h, const InputAttentionParams& p) {
  Tape tape(false);
  const Var h = prev_h.empty() ? Var() : tape.constant(add_batch(prev_h));
  return drop_batch(attend_input(tape, tape.constant(add_batch(x)), h, p).value());
}

Tensor bilayer_forward(const Tensor& seq, const BiConvLSTM& net) {
  require(seq.rank() == 4, ErrorCode::kShapeMismatch, "bilayer_forward: input must be [C,T,h,w]");
  Tape tape(false);
  const Var out = net.forward(tape, tape.constant(seq.reshaped({1, seq.dim(0), seq.dim(1), seq.dim(2), seq.dim(3)})));
  const Tensor& v = out.value();
  return v.reshaped({v.dim(1), v.dim(2), v.dim(3), v.dim(4)});
}

Tensor classify_head(const Tensor& hidden, const ClassifyHead& head) {
  require(hidden.rank() == 4, ErrorCode::kShapeMismatch, "classify_head: input must be [C,T,h,w]");
  Tape tape(false);
  const Var out = head.forward(
      tape, tape.constant(hidden.reshaped({1, hidden.dim(0), hidden.dim(1), hidden.dim(2), hidden.dim(3)})));
  return out.value().reshaped({out.dim(1)});
}

}  // namespace MGST_ABI
}  // namespace mgst
