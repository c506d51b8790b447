#include "mgst/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <optional>
#include <random>

#include "mgst/convlstm.hpp"
#include "mgst/fusion.hpp"
#include "mgst/model.hpp"

namespace mgst {
inline namespace MGST_ABI {
namespace {

// Smooth modules: Richardson-extrapolated central differences with a step
// large enough that f32 rounding in the forward pass stays small. Max-pool is
// piecewise linear and needs a step below half its value gap. The full model
// is full of ReLU and pooling kinks, so coordinates whose perturbations switch
// a branch are skipped.
FdOptions default_options(std::string_view module) {
  FdOptions o;
  o.extrapolations = kRealIsDouble ? 1 : 2;
  o.eps = kRealIsDouble ? Real(1e-3) : Real(0.2);
  o.floor_fraction = kRealIsDouble ? 1e-4 : 1e-2;
  if (module == "maxpool") {
    o.eps = Real(1e-2);
    o.extrapolations = 0;
  } else if (module == "end2end") {
    o.eps = kRealIsDouble ? Real(1e-4) : Real(2e-3);
    o.extrapolations = kRealIsDouble ? 1 : 0;
    o.floor_fraction = kRealIsDouble ? 1e-3 : 1e-2;
    o.skip_kinks = true;
  }
  return o;
}

// A check with more skipped coordinates than this fraction fails.
constexpr double kMaxSkippedFraction = 0.1;

struct Fixture {
  ParameterSet ps;
  std::vector<Parameter*> checked;
  std::function<Var(Tape&)> loss;
  std::optional<Model> model;
  Tensor running_mean, running_var;

  Parameter& input(const std::string& name, Tensor value) {
    Parameter& p = ps.add(name, std::move(value));
    return p;
  }
  void check_all() {
    checked.clear();
    for (Parameter* p : ps.all())
      if (p->trainable()) checked.push_back(p);
  }
};

/// Values whose pairwise gaps exceed the step, so pooling never switches
/// winners under perturbation.
Tensor distinct_values(const Shape& shape, Initializer& init) {
  Tensor t(shape);
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), init.rng());
  for (std::size_t i = 0; i < t.size(); ++i)
    t[order[i]] = static_cast<Real>(-1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(t.size()));
  return t;
}

// Every checked tensor has at most 64 elements.
void build(Fixture& fx, std::string_view module, std::uint64_t seed) {
  Initializer init(seed);
  if (module == "conv2d" || module == "conv3d") {
    const bool planar = module == "conv2d";
    const ConvSpec spec = planar ? ConvSpec::planar(3, 3, 2, 1) : ConvSpec::cube(3, 1, 1);
    Parameter& x = fx.input("x", init.uniform({1, 2, planar ? 1 : 2, 5, 5}, 1.0));
    Parameter& w = fx.input("w", init.uniform({2, 2, planar ? 1 : 3, 3, 3}, 0.5));
    Parameter& b = fx.input("b", init.uniform({2}, 0.5));
    auto proj = init.uniform({1, 2, planar ? 1 : 2, planar ? 3 : 5, planar ? 3 : 5}, 1.0);
    fx.loss = [&x, &w, &b, spec, proj](Tape& t) {
      return ag::weighted_sum(ag::conv3d(t.param(x), t.param(w), t.param(b), spec), proj);
    };
  } else if (module == "maxpool") {
    Parameter& x = fx.input("x", distinct_values({1, 1, 1, 7, 7}, init));
    const ConvSpec spec{{1, 3, 3}, {1, 2, 2}, {0, 1, 1}};
    auto proj = init.uniform({1, 1, 1, 4, 4}, 1.0);
    fx.loss = [&x, spec, proj](Tape& t) { return ag::weighted_sum(ag::maxpool(t.param(x), spec), proj); };
  } else if (module == "upsample") {
    Parameter& x = fx.input("x", init.uniform({1, 2, 1, 5, 5}, 1.0));
    auto proj = init.uniform({1, 2, 1, 7, 7}, 1.0);
    fx.loss = [&x, proj](Tape& t) { return ag::weighted_sum(ag::upsample(t.param(x), 7, 7), proj); };
  } else if (module == "batchnorm" || module == "batchnorm-train") {
    const bool train = module == "batchnorm-train";
    Parameter& x = fx.input("x", init.uniform({2, 2, 1, 3, 3}, 1.0));
    Parameter& g = fx.input("gamma", init.uniform({2}, 1.0));
    Parameter& b = fx.input("beta", init.uniform({2}, 1.0));
    fx.running_mean = init.uniform({2}, 0.2);
    fx.running_var = init.uniform({2}, 0.3);
    for (auto& v : fx.running_var.values()) v += Real(1);
    auto proj = init.uniform({2, 2, 1, 3, 3}, 1.0);
    fx.loss = [&fx, &x, &g, &b, proj, train](Tape& t) {
      return ag::weighted_sum(ag::batchnorm(t.param(x), t.param(g), t.param(b), {&fx.running_mean, &fx.running_var},
                                            train, Real(0.1), Real(1e-5), false),
                              proj);
    };
  } else if (module == "fuse") {
    Parameter& s = fx.input("s", init.uniform({1, 3, 2, 3, 3}, 1.0));
    Parameter& tt = fx.input("t", init.uniform({1, 3, 2, 3, 3}, 1.0));
    FusionParams fp = FusionParams::create(fx.ps, 3, FusionConfig{});
    fp.weight->value = init.uniform(fp.weight->value.shape(), 1.0);
    auto proj = init.uniform({1, 3, 2, 3, 3}, 1.0);
    fx.loss = [&s, &tt, fp, proj](Tape& t) { return ag::weighted_sum(fuse(t, t.param(s), t.param(tt), fp).out, proj); };
  } else if (module == "attend_input") {
    Parameter& x = fx.input("x", init.uniform({1, 2, 1, 3, 3}, 1.0));
    Parameter& h = fx.input("h_prev", init.uniform({1, 1, 1, 3, 3}, 1.0));
    auto p = InputAttentionParams::create(fx.ps, init, "att", 2, 1, 3);
    auto proj = init.uniform({1, 2, 1, 3, 3}, 1.0);
    fx.loss = [&x, &h, p, proj](Tape& t) {
      return ag::weighted_sum(attend_input(t, t.param(x), t.param(h), p), proj);
    };
  } else if (module == "cell_step") {
    Parameter& x = fx.input("x", init.uniform({1, 1, 1, 3, 3}, 1.0));
    Parameter& c = fx.input("c_prev", init.uniform({1, 1, 1, 3, 3}, 1.0));
    Parameter& h = fx.input("h_prev", init.uniform({1, 1, 1, 3, 3}, 1.0));
    auto p = ConvLSTMParams::create(fx.ps, init, "cell", 1, 1, 3, 3, 3, true);
    for (Parameter* pp : {p.wci, p.wcf, p.wco}) pp->value = init.uniform(pp->value.shape(), 0.5);
    auto proj_h = init.uniform({1, 1, 1, 3, 3}, 1.0);
    auto proj_c = init.uniform({1, 1, 1, 3, 3}, 1.0);
    fx.loss = [&x, &c, &h, p, proj_h, proj_c](Tape& t) {
      const ConvLSTMState next = cell_step(t, t.param(x), {t.param(c), t.param(h)}, p);
      return ag::add(ag::weighted_sum(next.h, proj_h), ag::weighted_sum(next.c, proj_c));
    };
  } else if (module == "recurrence") {
    // attend_input then cell_step over T = 3 frames of 2x3x3, both directions.
    Parameter& x = fx.input("x", init.uniform({1, 2, 3, 3, 3}, 1.0));
    RecurrentConfig rc;
    rc.hidden = 1;
    rc.layers = 1;
    BiConvLSTM net = BiConvLSTM::create(fx.ps, init, rc, 2, 3, 3);
    for (Parameter* pp : fx.ps.all())
      if (pp->name.find(".wc") != std::string::npos) pp->value = init.uniform(pp->value.shape(), 0.5);
    auto proj = init.uniform({1, 2, 3, 3, 3}, 1.0);
    fx.loss = [&x, net, proj](Tape& t) { return ag::weighted_sum(net.forward(t, t.param(x)), proj); };
  } else if (module == "classify_head") {
    Parameter& hid = fx.input("hidden", init.uniform({2, 2, 3, 2, 2}, 1.0));
    auto head = ClassifyHead::create(fx.ps, init, "head", 8, 4, false);
    head.b->value = init.uniform({4}, 0.5);
    fx.loss = [&hid, head](Tape& t) { return ag::cross_entropy(head.forward(t, t.param(hid)), {1, 3}); };
  } else if (module == "end2end") {
    fx.model.emplace(Model::build(ModelConfig::preset_config("gradcheck"), seed));
    const auto& cfg = fx.model->config();
    const Tensor videos = init.uniform({2, 1, cfg.t, cfg.h, cfg.w}, 0.5);
    Tensor shifted = videos;
    for (auto& v : shifted.values()) v += Real(0.5);
    // Non-zero fusion weights and peepholes so every path carries gradient.
    for (Parameter* p : fx.model->params().weights())
      if (p->name.rfind("fusion.", 0) == 0 || p->name.find(".wc") != std::string::npos)
        p->value = init.uniform(p->value.shape(), 0.3);
    const std::vector<std::int64_t> labels{0, 2};
    fx.loss = [&fx, shifted, labels](Tape& t) {
      return ag::cross_entropy(fx.model->forward(t, shifted, Mode::kTrain).logits, labels);
    };
    fx.checked = fx.model->params().weights();
    return;
  } else {
    fail(ErrorCode::kInvalidArgument, "unknown gradcheck module '" + std::string(module) + "'");
  }
  fx.check_all();
}

}  // namespace

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names{"conv2d",   "conv3d", "maxpool",      "upsample",  "batchnorm",
                                              "batchnorm-train", "fuse", "attend_input", "cell_step", "recurrence", "classify_head",
                                              "end2end"};
  return names;
}

GradcheckResult run_gradcheck(std::string_view module, const GradcheckOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  Fixture fx;
  build(fx, module, opt.seed);
  FdOptions fd = default_options(module);
  fd.seed = opt.seed;
  if (opt.step > 0) fd.eps = static_cast<Real>(opt.step);
  if (opt.floor_fraction >= 0) fd.floor_fraction = opt.floor_fraction;
  if (opt.extrapolations >= 0) fd.extrapolations = opt.extrapolations;
  GradcheckResult r;
  r.module = std::string(module);
  r.report = finite_diff_check(fx.loss, fx.checked, fd);
  r.tolerance = kGradCheckTolerance;
  const double total = static_cast<double>(r.report.checked + r.report.skipped);
  r.passed = r.report.max_rel_error < r.tolerance && static_cast<double>(r.report.skipped) <= kMaxSkippedFraction * total;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace MGST_ABI
}  // namespace mgst
