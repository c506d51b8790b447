#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mgst/ops.hpp"
#include "mgst/tensor.hpp"

namespace mgst {
inline namespace MGST_ABI {

/// A named tensor owned by a model. Buffers (BN running statistics) ride
/// along for checkpointing but never receive gradients.
struct Parameter {
  enum class Kind { kWeight, kBuffer };

  std::string name;
  Tensor value;
  Kind kind = Kind::kWeight;
  bool frozen = false;

  bool trainable() const { return kind == Kind::kWeight && !frozen; }
};

/// Parameter name -> gradient, same shape as the parameter.
using GradientMap = std::map<std::string, Tensor>;

/// Ordered, pointer-stable parameter registry.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value, Parameter::Kind kind = Parameter::Kind::kWeight);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& get(const std::string& name);

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> weights();
  std::size_t weight_count() const;  // scalar count over kWeight entries
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
  std::unordered_map<std::string, Parameter*> index_;
};

class Tape;

/// Handle to a value produced on a Tape. Cheap to copy; keeps its value alive.
class Var {
 public:
  Var() = default;

  bool valid() const { return value_ != nullptr; }
  const Tensor& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  std::int64_t dim(int axis) const { return value_->dim(axis); }
  bool needs_grad() const { return needs_grad_; }
  Tape* tape() const { return tape_; }

  /// Scalar value; reductions carry an f64 shadow of their result.
  double scalar() const;

 private:
  friend class Tape;
  Tape* tape_ = nullptr;
  std::int64_t id_ = -1;
  std::shared_ptr<const Tensor> value_;
  bool needs_grad_ = false;
  double shadow_ = std::numeric_limits<double>::quiet_NaN();
};

/// Receives the node's forward value, its gradient, and one pointer per input
/// (null when that input needs no gradient). Implementations accumulate.
using BackwardFn = std::function<void(const Tensor& y, const Tensor& gy, std::span<Tensor* const> gx)>;

/// Dynamic reverse-mode tape. Creation order is the forward schedule; the
/// backward sweep walks it in reverse. A tape is single-threaded.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor t);
  /// One leaf per Parameter per tape; repeated calls return the same node.
  Var param(Parameter& p);

  Var push(Tensor value, std::vector<Var> inputs, BackwardFn backward,
           double shadow = std::numeric_limits<double>::quiet_NaN());

  /// Gradients of a scalar w.r.t. every trainable parameter leaf on the tape.
  /// Leaves off the loss path get zeros. The tape is left intact.
  GradientMap backward(const Var& loss) const;

  std::size_t size() const { return nodes_.size(); }

  /// Opt-in fingerprint of every non-smooth branch taken in the forward
  /// pass (ReLU signs, max-pool winners). Two evaluations with equal
  /// fingerprints lie on the same smooth piece.
  void track_decisions(bool on) { track_ = on; }
  bool tracking_decisions() const { return track_; }
  void note_decision(std::uint64_t h);
  std::uint64_t decisions() const { return decisions_; }

 private:
  struct Node {
    std::shared_ptr<const Tensor> value;
    std::vector<std::int64_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  Var make_var(std::int64_t id, std::shared_ptr<const Tensor> value, bool needs_grad, double shadow);

  bool record_;
  bool track_ = false;
  std::uint64_t decisions_ = 0;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, Var> leaves_;
};

// ---- differentiable operations ---------------------------------------------

namespace ag {

Var conv3d(const Var& x, const Var& w, const Var& bias, const ConvSpec& spec);
Var relu(const Var& x);
Var maxpool(const Var& x, const ConvSpec& spec);
Var avgpool(const Var& x, const ConvSpec& spec);
Var upsample(const Var& x, std::int64_t h2, std::int64_t w2);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var one_minus(const Var& x);
Var scale(const Var& x, Real s);
/// x [N, ...] * p [...], p broadcast over the leading batch axis.
Var mul_batch_broadcast(const Var& x, const Var& p);
/// x [N, C, ...] * m [N, 1, ...], m broadcast over channels.
Var mul_channel_broadcast(const Var& x, const Var& m);
Var reshape(const Var& x, Shape shape);

/// Concatenate / slice along axis 1.
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, std::int64_t c0, std::int64_t c1);

/// [N,C,T,H,W] -> [N,C,1,H,W] at frame t, and the inverse stacking.
Var time_slice(const Var& x, std::int64_t t);
Var time_stack(const std::vector<Var>& frames);

/// [N,C,T,H,W] -> [N*T, C*H*W], one row per frame.
Var frames_to_rows(const Var& x);
/// x [R,F], w [K,F], b [K] -> [R,K]
Var linear_rows(const Var& x, const Var& w, const Var& b);
/// x [N,T,K] -> [N,K] mean over the first lengths[n] frames (all when empty).
Var mean_frames(const Var& x, const std::vector<std::int64_t>& lengths = {});
/// x [N,T,K] -> [N,K] = log(mean_t softmax(x_t)), restricted to lengths.
Var log_mean_softmax_frames(const Var& x, const std::vector<std::int64_t>& lengths = {});

/// Mean cross-entropy of logits [N,K] against labels, log-sum-exp stabilised.
Var cross_entropy(const Var& logits, const std::vector<std::int64_t>& labels);
Var sum(const Var& x);
/// sum(x * w) for a constant weight tensor w.
Var weighted_sum(const Var& x, const Tensor& w);

struct BatchNormBuffers {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
};
/// Channel axis 1. Train mode normalises with batch statistics and, when
/// update_running is set, folds them into the running buffers.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormBuffers buffers, bool train, Real momentum,
              Real eps, bool update_running = true);

}  // namespace ag

// ---- finite-difference oracle ----------------------------------------------

struct FdReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose perturbations crossed a kink
};

struct FdOptions {
  Real eps = Real(1e-3);
  std::size_t max_per_param = 0;  // > 0 checks a fixed pseudo-random subset
  std::uint64_t seed = 0;
  /// Denominator floor as a fraction of the largest analytic gradient over
  /// all listed parameters.
  double floor_fraction = 0.0;
  /// Richardson levels at halved steps; each cancels the next even power.
  int extrapolations = 0;
  /// Skip coordinates where a perturbed evaluation takes a different ReLU or
  /// max-pool branch than the unperturbed one.
  bool skip_kinks = false;
};

/// Central differences against Tape::backward for every listed parameter.
/// Relative error uses max(|a|, |b|, 1e-8, floor) as denominator. Rejects
/// graphs whose repeated evaluation is not bitwise stable.
FdReport finite_diff_check(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params,
                           const FdOptions& opt);

/// Single-tensor form: f receives the parameter leaf.
double finite_diff_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& params, Real eps);

/// Default threshold for the storage precision.
inline constexpr double kGradCheckTolerance = kRealIsDouble ? 1e-6 : 1e-3;

}  // namespace MGST_ABI
}  // namespace mgst
