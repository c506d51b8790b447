#pragma once

#include <vector>

#include "mgst/autodiff.hpp"
#include "mgst/nn.hpp"

namespace mgst {
inline namespace MGST_ABI {

/// Gate order along the stacked output channels of wx / wh / b: i, f, c, o.
struct ConvLSTMParams {
  std::int64_t cin = 0, hidden = 0, kernel = 3;
  Parameter* wx = nullptr;   // [4H, Cin, k, k]
  Parameter* wh = nullptr;   // [4H, H, k, k]
  Parameter* b = nullptr;    // [4H]
  Parameter* wci = nullptr;  // [H, h, w] peepholes, null when disabled
  Parameter* wcf = nullptr;
  Parameter* wco = nullptr;

  /// Orthogonal kernels per gate and tap, forget bias 1, peepholes 0.
  static ConvLSTMParams create(ParameterSet& ps, Initializer& init, const std::string& name, std::int64_t cin,
                               std::int64_t hidden, std::int64_t kernel, std::int64_t h, std::int64_t w,
                               bool peephole);
  bool peephole() const { return wci != nullptr; }
};

struct InputAttentionParams {
  Parameter* wxa = nullptr;  // [Cin, Cin, k, k]
  Parameter* wha = nullptr;  // [Cin, H, k, k]

  static InputAttentionParams create(ParameterSet& ps, Initializer& init, const std::string& name, std::int64_t cin,
                                     std::int64_t hidden, std::int64_t kernel);
};

/// Batched state [N, H, 1, h, w]. An invalid pair stands for the zero state.
struct ConvLSTMState {
  Var c, h;
  bool is_zero() const { return !c.valid(); }
};

/// One recurrence step on x [N, Cin, 1, h, w].
ConvLSTMState cell_step(Tape& tape, const Var& x, const ConvLSTMState& prev, const ConvLSTMParams& p);

/// a = sigmoid(Wxa * x + Wha * h_prev); returns a (x). With ones_override the
/// gate is replaced by exact ones.
Var attend_input(Tape& tape, const Var& x, const Var& prev_h, const InputAttentionParams& p, bool ones_override = false);
/// The attention map itself.
Var attention_map(Tape& tape, const Var& x, const Var& prev_h, const InputAttentionParams& p);

struct RecurrentConfig {
  std::int64_t hidden = 256;
  std::int64_t kernel = 3;
  std::int64_t layers = 2;
  bool attention = true;  // forward-direction input attention in every layer
  bool peephole = true;
};

struct BiConvLSTM {
  struct Layer {
    ConvLSTMParams fwd, bwd;
    InputAttentionParams att;
    bool has_attention = false;
  };

  RecurrentConfig cfg;
  std::vector<Layer> layers;
  bool attention_ones = false;  // diagnostic a == 1 override

  static BiConvLSTM create(ParameterSet& ps, Initializer& init, const RecurrentConfig& cfg, std::int64_t cin,
                           std::int64_t h, std::int64_t w);
  /// seq [N, C, T, h, w] -> [N, 2H, T, h, w]. Frames at t >= lengths[n] are
  /// padding; the reverse direction starts from a zero state at the last real
  /// frame.
  Var forward(Tape& tape, const Var& seq, const std::vector<std::int64_t>& lengths = {}) const;
};

/// Per-frame linear classifier, averaged over real frames.
struct ClassifyHead {
  Parameter* w = nullptr;  // [K, F]
  Parameter* b = nullptr;  // [K]
  bool average_probs = false;

  static ClassifyHead create(ParameterSet& ps, Initializer& init, const std::string& name, std::int64_t features,
                             std::int64_t classes, bool average_probs);
  /// hidden [N, C, T, h, w] -> [N, K]
  Var forward(Tape& tape, const Var& hidden, const std::vector<std::int64_t>& lengths = {}) const;
};

// ---- unbatched conveniences ([C,h,w] states, [C,T,h,w] sequences) ----------

struct ConvLSTMStateT {
  Tensor c, h;
};
ConvLSTMStateT cell_step(const Tensor& x, const ConvLSTMStateT& prev, const ConvLSTMParams& p);
Tensor attend_input(const Tensor& x, const Tensor& prev_h, const InputAttentionParams& p);
Tensor bilayer_forward(const Tensor& seq, const BiConvLSTM& net);
Tensor classify_head(const Tensor& hidden, const ClassifyHead& head);

}  // namespace MGST_ABI
}  // namespace mgst
