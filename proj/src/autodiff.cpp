#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

#include "mgst/autodiff.hpp"

namespace mgst {
inline namespace MGST_ABI {

Parameter& ParameterSet::add(std::string name, Tensor value, Parameter::Kind kind) {
  require(!index_.contains(name), ErrorCode::kInvalidArgument, "duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = std::move(value);
  p->kind = kind;
  Parameter& ref = *p;
  index_.emplace(ref.name, &ref);
  items_.push_back(std::move(p));
  return ref;
}

Parameter* ParameterSet::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

Parameter& ParameterSet::get(const std::string& name) {
  Parameter* p = find(name);
  require(p != nullptr, ErrorCode::kInvalidArgument, "unknown parameter '" + name + "'");
  return *p;
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  out.reserve(items_.size());
  for (auto& p : items_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  out.reserve(items_.size());
  for (const auto& p : items_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParameterSet::weights() {
  std::vector<Parameter*> out;
  for (auto& p : items_)
    if (p->kind == Parameter::Kind::kWeight) out.push_back(p.get());
  return out;
}

std::size_t ParameterSet::weight_count() const {
  std::size_t n = 0;
  for (const auto& p : items_)
    if (p->kind == Parameter::Kind::kWeight) n += p->value.size();
  return n;
}

double Var::scalar() const {
  if (!std::isnan(shadow_)) return shadow_;
  require(valid() && value_->size() == 1, ErrorCode::kShapeMismatch,
          "scalar() on non-scalar value " + (valid() ? shape_str(value_->shape()) : std::string("<empty>")));
  return static_cast<double>((*value_)[0]);
}

Var Tape::make_var(std::int64_t id, std::shared_ptr<const Tensor> value, bool needs_grad, double shadow) {
  Var v;
  v.tape_ = this;
  v.id_ = id;
  v.value_ = std::move(value);
  v.needs_grad_ = needs_grad;
  v.shadow_ = shadow;
  return v;
}

void Tape::note_decision(std::uint64_t h) {
  // splitmix64 finalizer over the running fingerprint.
  std::uint64_t z = decisions_ + 0x9E3779B97F4A7C15ull + h;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  decisions_ = z ^ (z >> 31);
}

Var Tape::constant(Tensor t) {
  return make_var(-1, std::make_shared<const Tensor>(std::move(t)), false,
                  std::numeric_limits<double>::quiet_NaN());
}

Var Tape::param(Parameter& p) {
  if (auto it = leaves_.find(&p); it != leaves_.end()) return it->second;
  // Non-owning alias: parameters must outlive the tape and stay unmodified
  // while it is in use.
  std::shared_ptr<const Tensor> alias(std::shared_ptr<const Tensor>{}, &p.value);
  const bool grad = record_ && p.trainable();
  Var v;
  if (grad) {
    Node node;
    node.value = alias;
    node.param = &p;
    node.needs_grad = true;
    nodes_.push_back(std::move(node));
    v = make_var(static_cast<std::int64_t>(nodes_.size()) - 1, alias, true,
                 std::numeric_limits<double>::quiet_NaN());
  } else {
    v = make_var(-1, alias, false, std::numeric_limits<double>::quiet_NaN());
  }
  leaves_.emplace(&p, v);
  return v;
}

Var Tape::push(Tensor value, std::vector<Var> inputs, BackwardFn backward, double shadow) {
  auto val = std::make_shared<const Tensor>(std::move(value));
  bool grad = false;
  for (const auto& in : inputs) {
    require(in.valid(), ErrorCode::kInvalidArgument, "tape op received an empty Var");
    require(in.tape_ == this || !in.needs_grad_, ErrorCode::kInvalidArgument, "tape op mixes Vars from two tapes");
    grad = grad || in.needs_grad_;
  }
  if (!record_ || !grad) return make_var(-1, std::move(val), false, shadow);
  Node node;
  node.value = val;
  node.needs_grad = true;
  node.backward = std::move(backward);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) node.inputs.push_back(in.needs_grad_ ? in.id_ : -1);
  nodes_.push_back(std::move(node));
  return make_var(static_cast<std::int64_t>(nodes_.size()) - 1, std::move(val), true, shadow);
}

GradientMap Tape::backward(const Var& loss) const {
  require(loss.valid() && loss.value().size() == 1, ErrorCode::kShapeMismatch,
          "backward: loss must be a scalar, got " + (loss.valid() ? shape_str(loss.shape()) : std::string("<empty>")));
  require(loss.tape_ == this, ErrorCode::kInvalidArgument, "backward: loss belongs to another tape");

  std::vector<Tensor> grads(nodes_.size());
  if (loss.id_ >= 0) grads[static_cast<std::size_t>(loss.id_)] = Tensor::ones(loss.shape());

  std::vector<Tensor*> gx;
  for (std::int64_t id = loss.id_; id >= 0; --id) {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    Tensor& gy = grads[static_cast<std::size_t>(id)];
    if (gy.empty() || !node.backward) continue;
    gx.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const std::int64_t in = node.inputs[i];
      if (in < 0) continue;
      Tensor& g = grads[static_cast<std::size_t>(in)];
      if (g.empty() && !nodes_[static_cast<std::size_t>(in)].value->empty())
        g = Tensor::zeros(nodes_[static_cast<std::size_t>(in)].value->shape());
      gx[i] = &g;
    }
    node.backward(*node.value, gy, gx);
    gy = Tensor();
  }

  GradientMap out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (!node.param) continue;
    Tensor g = grads[id].empty() ? Tensor::zeros(node.value->shape()) : std::move(grads[id]);
    auto [it, inserted] = out.emplace(node.param->name, std::move(g));
    require(inserted, ErrorCode::kInvalidArgument, "two parameter leaves share the name '" + node.param->name + "'");
  }
  return out;
}

FdReport finite_diff_check(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params,
                           const FdOptions& opt) {
  require(opt.eps > Real(0), ErrorCode::kInvalidArgument, "finite_diff_check: eps must be positive");
  require(opt.extrapolations >= 0, ErrorCode::kInvalidArgument, "finite_diff_check: negative extrapolation count");
  GradientMap analytic;
  double recorded = 0.0;
  {
    Tape tape;
    const Var loss = f(tape);
    recorded = loss.scalar();
    analytic = tape.backward(loss);
  }
  std::uint64_t fingerprint = 0;
  auto eval = [&] {
    Tape tape(false);
    tape.track_decisions(opt.skip_kinks);
    const double v = f(tape).scalar();
    fingerprint = tape.decisions();
    return v;
  };
  const double first = eval();
  const std::uint64_t base = fingerprint;
  const double second = eval();
  if (std::bit_cast<std::uint64_t>(first) != std::bit_cast<std::uint64_t>(second) ||
      std::bit_cast<std::uint64_t>(first) != std::bit_cast<std::uint64_t>(recorded))
    fail(ErrorCode::kNonDeterministic, "finite_diff_check: repeated evaluation differs (" + std::to_string(first) +
                                           " vs " + std::to_string(second) + ")");

  double scale = 0.0;
  for (Parameter* p : params)
    if (auto it = analytic.find(p->name); it != analytic.end())
      for (Real g : it->second.values()) scale = std::max(scale, std::abs(static_cast<double>(g)));
  const double floor = std::max(1e-8, opt.floor_fraction * scale);

  FdReport report;
  std::mt19937_64 rng(opt.seed);
  for (Parameter* p : params) {
    require(p->trainable(), ErrorCode::kInvalidArgument, "finite_diff_check: '" + p->name + "' is not trainable");
    auto it = analytic.find(p->name);
    const Tensor grad = it == analytic.end() ? Tensor::zeros(p->value.shape()) : it->second;
    std::vector<std::size_t> idx(p->value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.max_per_param > 0 && idx.size() > opt.max_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_per_param);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const Real orig = p->value[i];
      bool kink = false;
      auto central = [&](Real h, double& width) {
        p->value[i] = orig + h;
        const double hi = p->value[i];
        const double fp = eval();
        kink |= fingerprint != base;
        p->value[i] = orig - h;
        const double lo = p->value[i];
        const double fm = eval();
        kink |= fingerprint != base;
        p->value[i] = orig;
        width = 0.5 * (hi - lo);
        return (fp - fm) / (hi - lo);
      };
      // Richardson table over steps eps, eps/2, ...; each level cancels the
      // next even power of the step.
      const std::size_t levels = static_cast<std::size_t>(opt.extrapolations) + 1;
      std::vector<double> width(levels), prev, row;
      Real h = opt.eps;
      for (std::size_t k = 0; k < levels; ++k, h /= Real(2)) {
        row.assign(k + 1, 0.0);
        row[0] = central(h, width[k]);
        for (std::size_t m = 1; m <= k; ++m) {
          const double ratio = width[k - m] / width[k];
          row[m] = row[m - 1] + (row[m - 1] - prev[m - 1]) / (ratio * ratio - 1.0);
        }
        prev.swap(row);
      }
      const double numeric = prev[levels - 1];
      const double a = grad[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      if (kink) {
        ++report.skipped;
        continue;
      }
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = rel;
        report.worst_param = p->name;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

double finite_diff_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& params, Real eps) {
  Parameter p{"x", params};
  Parameter* list[] = {&p};
  FdOptions opt;
  opt.eps = eps;
  return finite_diff_check([&](Tape& tape) { return f(tape, tape.param(p)); }, list, opt).max_rel_error;
}

}  // namespace MGST_ABI
}  // namespace mgst
