#include "mgst/nn.hpp"

#include <cmath>

namespace mgst {
inline namespace MGST_ABI {

const Shape* ShapeTrace::find(std::string_view name) const {
  for (const auto& [n, s] : entries)
    if (n == name) return &s;
  return nullptr;
}

Tensor Initializer::normal(const Shape& shape, double stddev) {
  Tensor t(shape);
  std::normal_distribution<double> d(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<Real>(d(rng_));
  return t;
}

Tensor Initializer::he_normal(const Shape& shape, std::int64_t fan_in) {
  return normal(shape, std::sqrt(2.0 / static_cast<double>(std::max<std::int64_t>(1, fan_in))));
}

Tensor Initializer::uniform(const Shape& shape, double bound) {
  Tensor t(shape);
  std::uniform_real_distribution<double> d(-bound, bound);
  for (auto& v : t.values()) v = static_cast<Real>(d(rng_));
  return t;
}

std::vector<double> Initializer::orthogonal(std::int64_t rows, std::int64_t cols) {
  // Gram-Schmidt over the shorter dimension's vectors.
  const bool by_rows = rows <= cols;
  const std::int64_t nvec = by_rows ? rows : cols;
  const std::int64_t len = by_rows ? cols : rows;
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<std::vector<double>> q;
  while (static_cast<std::int64_t>(q.size()) < nvec) {
    std::vector<double> v(static_cast<std::size_t>(len));
    for (auto& x : v) x = d(rng_);
    for (const auto& u : q) {
      double p = 0.0;
      for (std::int64_t i = 0; i < len; ++i) p += v[i] * u[i];
      for (std::int64_t i = 0; i < len; ++i) v[i] -= p * u[i];
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-8) continue;
    for (auto& x : v) x /= n;
    q.push_back(std::move(v));
  }
  std::vector<double> m(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) m[r * cols + c] = by_rows ? q[r][c] : q[c][r];
  return m;
}

BatchNorm BatchNorm::create(ParameterSet& ps, const std::string& name, std::int64_t channels, Real momentum, Real eps) {
  BatchNorm bn;
  bn.gamma = &ps.add(name + ".gamma", Tensor::ones({channels}));
  bn.beta = &ps.add(name + ".beta", Tensor::zeros({channels}));
  bn.running_mean = &ps.add(name + ".running_mean", Tensor::zeros({channels}), Parameter::Kind::kBuffer);
  bn.running_var = &ps.add(name + ".running_var", Tensor::ones({channels}), Parameter::Kind::kBuffer);
  bn.momentum = momentum;
  bn.eps = eps;
  return bn;
}

Var BatchNorm::forward(Tape& tape, const Var& x, Mode mode) const {
  return ag::batchnorm(x, tape.param(*gamma), tape.param(*beta), {&running_mean->value, &running_var->value},
                       mode == Mode::kTrain, momentum, eps);
}

Conv Conv::create(ParameterSet& ps, Initializer& init, const std::string& name, std::int64_t cin, std::int64_t cout,
                  const ConvSpec& spec, bool bias) {
  spec.validate();
  Conv c;
  const std::int64_t fan_in = cin * spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
  c.weight = &ps.add(name + ".weight",
                     init.he_normal({cout, cin, spec.kernel[0], spec.kernel[1], spec.kernel[2]}, fan_in));
  if (bias) c.bias = &ps.add(name + ".bias", Tensor::zeros({cout}));
  c.spec = spec;
  return c;
}

Var Conv::forward(Tape& tape, const Var& x) const {
  return ag::conv3d(x, tape.param(*weight), bias ? tape.param(*bias) : Var(), spec);
}

// ---- stem -------------------------------------------------------------------

namespace {

const ConvSpec kStemPool{{1, 3, 3}, {1, 2, 2}, {0, 1, 1}};

}  // namespace

Stem Stem::create(ParameterSet& ps, Initializer& init, const StemConfig& cfg, Real bn_momentum, Real bn_eps) {
  Stem s;
  s.cfg = cfg;
  s.conv = Conv::create(ps, init, "stem.conv", 1, cfg.channels, ConvSpec{cfg.kernel, cfg.stride, cfg.pad}, true);
  s.bn = BatchNorm::create(ps, "stem.bn", cfg.channels, bn_momentum, bn_eps);
  return s;
}

std::int64_t Stem::out_extent(std::int64_t in) const {
  std::int64_t e = conv.spec.out_extent(1, in);
  if (cfg.pool) e = kStemPool.out_extent(1, e);
  if (cfg.upsample_to > 0) {
    require(cfg.upsample_to >= e, ErrorCode::kConfig,
            "stem: upsample target " + std::to_string(cfg.upsample_to) + " is below pooled size " + std::to_string(e));
    e = cfg.upsample_to;
  }
  return e;
}

Var Stem::forward(Tape& tape, const Var& video, Mode mode, ShapeTrace* trace) const {
  require(video.value().rank() == 5 && video.dim(1) == 1, ErrorCode::kShapeMismatch,
          "stem: video must be [N,1,T,H,W], got " + shape_str(video.shape()));
  require(video.dim(2) >= 1, ErrorCode::kInvalidArgument, "stem: T must be >= 1");
  Var y = ag::relu(bn.forward(tape, conv.forward(tape, video), mode));
  if (trace) trace->add("stem.conv", y.shape());
  if (cfg.pool) {
    y = ag::maxpool(y, kStemPool);
    if (trace) trace->add("stem.pool", y.shape());
  }
  if (cfg.upsample_to > 0 && cfg.upsample_to != y.dim(4)) {
    y = ag::upsample(y, cfg.upsample_to, cfg.upsample_to);
    if (trace) trace->add("stem.upsample", y.shape());
  }
  return y;
}

// ---- residual branch ----------------------------------------------------------

Var BasicBlock::forward(Tape& tape, const Var& x, Mode mode) const {
  Var h = ag::relu(bn1.forward(tape, conv1.forward(tape, x), mode));
  h = bn2.forward(tape, conv2.forward(tape, h), mode);
  Var shortcut = has_projection ? proj_bn.forward(tape, proj.forward(tape, x), mode) : x;
  return ag::relu(ag::add(h, shortcut));
}

ResidualBranch ResidualBranch::create(ParameterSet& ps, Initializer& init, const ResidualConfig& cfg,
                                      std::int64_t in_channels, Real bn_momentum, Real bn_eps) {
  require(!cfg.widths.empty() && cfg.widths.size() == cfg.blocks.size() && cfg.widths.size() == cfg.strides.size(),
          ErrorCode::kConfig, "residual branch: widths, blocks and strides must have equal non-zero length");
  ResidualBranch rb;
  rb.cfg = cfg;
  std::int64_t cin = in_channels;
  for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
    require(cfg.blocks[s] >= 1 && cfg.widths[s] >= 1 && cfg.strides[s] >= 1, ErrorCode::kConfig,
            "residual branch: stage " + std::to_string(s) + " has a non-positive entry");
    for (std::int64_t b = 0; b < cfg.blocks[s]; ++b) {
      const std::string name = "res.s" + std::to_string(s) + ".b" + std::to_string(b);
      const std::int64_t stride = b == 0 ? cfg.strides[s] : 1;
      const std::int64_t cout = cfg.widths[s];
      BasicBlock blk;
      blk.conv1 = Conv::create(ps, init, name + ".conv1", cin, cout, ConvSpec::planar(3, 3, stride, 1), false);
      blk.bn1 = BatchNorm::create(ps, name + ".bn1", cout, bn_momentum, bn_eps);
      blk.conv2 = Conv::create(ps, init, name + ".conv2", cout, cout, ConvSpec::planar(3, 3, 1, 1), false);
      blk.bn2 = BatchNorm::create(ps, name + ".bn2", cout, bn_momentum, bn_eps);
      if (stride != 1 || cin != cout) {
        blk.has_projection = true;
        blk.proj = Conv::create(ps, init, name + ".proj", cin, cout, ConvSpec::planar(1, 1, stride, 0), false);
        blk.proj_bn = BatchNorm::create(ps, name + ".proj_bn", cout, bn_momentum, bn_eps);
      }
      rb.blocks.push_back(blk);
      cin = cout;
    }
  }
  return rb;
}

Var ResidualBranch::forward(Tape& tape, const Var& x, Mode mode, ShapeTrace* trace) const {
  Var h = x;
  std::size_t i = 0;
  for (std::size_t s = 0; s < cfg.blocks.size(); ++s) {
    for (std::int64_t b = 0; b < cfg.blocks[s]; ++b) h = blocks[i++].forward(tape, h, mode);
    if (trace) trace->add("res.stage" + std::to_string(s), h.shape());
  }
  return h;
}

std::int64_t ResidualBranch::out_extent(std::int64_t in) const {
  std::int64_t e = in;
  for (const auto& b : blocks) e = b.conv1.spec.out_extent(1, e);
  return e;
}

// ---- dense branch -------------------------------------------------------------

Var DenseLayer::forward(Tape& tape, const Var& x, Mode mode) const {
  Var h = ag::relu(bn1.forward(tape, x, mode));
  if (bottleneck) h = ag::relu(bn2.forward(tape, conv1.forward(tape, h), mode));
  return conv2.forward(tape, h);
}

Var Transition::forward(Tape& tape, const Var& x, Mode mode) const {
  Var h = conv.forward(tape, ag::relu(bn.forward(tape, x, mode)));
  return ag::avgpool(h, ConvSpec{{1, 2, 2}, {1, 2, 2}, {0, 0, 0}});
}

DenseBranch DenseBranch::create(ParameterSet& ps, Initializer& init, const DenseConfig& cfg, std::int64_t in_channels,
                                Real bn_momentum, Real bn_eps) {
  require(!cfg.blocks.empty() && cfg.growth >= 1 && cfg.theta > 0.0 && cfg.theta <= 1.0 && cfg.out_channels >= 1,
          ErrorCode::kConfig, "dense branch: needs blocks, growth >= 1, theta in (0,1], out_channels >= 1");
  DenseBranch db;
  db.cfg = cfg;
  std::int64_t c = in_channels;
  const ConvSpec k3 = ConvSpec::cube(3, 1, 1);
  const ConvSpec k1 = ConvSpec::cube(1, 1, 0);
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    require(cfg.blocks[b] >= 1, ErrorCode::kConfig, "dense branch: block " + std::to_string(b) + " is empty");
    std::vector<DenseLayer> layers;
    for (std::int64_t l = 0; l < cfg.blocks[b]; ++l) {
      const std::string name = "dense.b" + std::to_string(b) + ".l" + std::to_string(l);
      DenseLayer dl;
      dl.bottleneck = cfg.bottleneck;
      dl.bn1 = BatchNorm::create(ps, name + ".bn1", c, bn_momentum, bn_eps);
      std::int64_t mid = c;
      if (cfg.bottleneck) {
        mid = 4 * cfg.growth;
        dl.conv1 = Conv::create(ps, init, name + ".conv1", c, mid, k1, false);
        dl.bn2 = BatchNorm::create(ps, name + ".bn2", mid, bn_momentum, bn_eps);
      }
      dl.conv2 = Conv::create(ps, init, name + ".conv2", mid, cfg.growth, k3, false);
      layers.push_back(dl);
      c += cfg.growth;
    }
    db.blocks.push_back(std::move(layers));
    if (b + 1 < cfg.blocks.size()) {
      const std::string name = "dense.t" + std::to_string(b);
      const auto cout = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(cfg.theta * static_cast<double>(c))));
      Transition t;
      t.bn = BatchNorm::create(ps, name + ".bn", c, bn_momentum, bn_eps);
      t.conv = Conv::create(ps, init, name + ".conv", c, cout, k1, false);
      db.transitions.push_back(t);
      c = cout;
    }
  }
  db.final_bn = BatchNorm::create(ps, "dense.final_bn", c, bn_momentum, bn_eps);
  db.projection = Conv::create(ps, init, "dense.proj", c, cfg.out_channels, k1, false);
  db.out_bn = BatchNorm::create(ps, "dense.out_bn", cfg.out_channels, bn_momentum, bn_eps);
  return db;
}

Var DenseBranch::forward(Tape& tape, const Var& x, Mode mode, ShapeTrace* trace) const {
  Var h = x;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (const auto& layer : blocks[b]) h = ag::concat_channels({h, layer.forward(tape, h, mode)});
    if (trace) trace->add("dense.block" + std::to_string(b), h.shape());
    if (b < transitions.size()) h = transitions[b].forward(tape, h, mode);
  }
  h = projection.forward(tape, ag::relu(final_bn.forward(tape, h, mode)));
  return ag::relu(out_bn.forward(tape, h, mode));
}

std::int64_t DenseBranch::out_extent(std::int64_t in) const {
  std::int64_t e = in;
  for (std::size_t i = 0; i < transitions.size(); ++i) {
    require(e >= 2, ErrorCode::kConfig, "dense branch: spatial extent collapses before transition " + std::to_string(i));
    e /= 2;
  }
  return e;
}

std::int64_t DenseBranch::weighted_layers() const {
  std::int64_t n = 0;
  for (const auto& b : blocks)
    for (const auto& l : b) n += l.bottleneck ? 2 : 1;
  return n + static_cast<std::int64_t>(transitions.size()) + 1;
}

}  // namespace MGST_ABI
}  // namespace mgst
