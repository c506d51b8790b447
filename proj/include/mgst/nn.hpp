#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mgst/autodiff.hpp"

namespace mgst {
inline namespace MGST_ABI {

enum class Mode { kTrain, kEval };

/// Named intermediate shapes recorded during a forward pass.
struct ShapeTrace {
  std::vector<std::pair<std::string, Shape>> entries;
  void add(std::string name, const Shape& s) { entries.emplace_back(std::move(name), s); }
  const Shape* find(std::string_view name) const;
};

/// Deterministic parameter initialisation stream.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  /// He-normal: std = sqrt(2 / fan_in).
  Tensor he_normal(const Shape& shape, std::int64_t fan_in);
  Tensor normal(const Shape& shape, double stddev);
  Tensor uniform(const Shape& shape, double bound);
  /// rows x cols matrix with orthonormal rows (rows <= cols) or columns.
  std::vector<double> orthogonal(std::int64_t rows, std::int64_t cols);

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

struct BatchNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  Parameter* running_mean = nullptr;
  Parameter* running_var = nullptr;
  Real momentum = Real(0.1);
  Real eps = Real(1e-5);

  static BatchNorm create(ParameterSet& ps, const std::string& name, std::int64_t channels, Real momentum = Real(0.1),
                          Real eps = Real(1e-5));
  Var forward(Tape& tape, const Var& x, Mode mode) const;
};

/// 3D convolution over [N,C,T,H,W]; 2D layers use a (1,kh,kw) kernel.
struct Conv {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;  // may be null
  ConvSpec spec;

  static Conv create(ParameterSet& ps, Initializer& init, const std::string& name, std::int64_t cin,
                     std::int64_t cout, const ConvSpec& spec, bool bias);
  Var forward(Tape& tape, const Var& x) const;
  std::int64_t out_channels() const { return weight->value.dim(0); }
};

// ---- shared 3D stem --------------------------------------------------------

struct StemConfig {
  std::int64_t channels = 64;
  std::array<std::int64_t, 3> kernel{5, 7, 7};
  std::array<std::int64_t, 3> stride{1, 2, 2};
  std::array<std::int64_t, 3> pad{2, 3, 3};
  bool pool = true;              // maxpool 1x3x3, stride (1,2,2), pad (0,1,1)
  std::int64_t upsample_to = 0;  // 0 keeps the pooled size
};

struct Stem {
  StemConfig cfg;
  Conv conv;
  BatchNorm bn;

  static Stem create(ParameterSet& ps, Initializer& init, const StemConfig& cfg, Real bn_momentum, Real bn_eps);
  /// video [N,1,T,H,W] -> [N,C,T,h,w]
  Var forward(Tape& tape, const Var& video, Mode mode, ShapeTrace* trace = nullptr) const;
  /// Spatial output extent for an input extent.
  std::int64_t out_extent(std::int64_t in) const;
};

// ---- per-frame residual branch --------------------------------------------

struct ResidualConfig {
  std::vector<std::int64_t> widths{64, 128, 256, 512};
  std::vector<std::int64_t> blocks{3, 4, 6, 3};
  std::vector<std::int64_t> strides{1, 2, 2, 2};
};

struct BasicBlock {
  Conv conv1, conv2;
  BatchNorm bn1, bn2;
  bool has_projection = false;
  Conv proj;
  BatchNorm proj_bn;

  Var forward(Tape& tape, const Var& x, Mode mode) const;
};

struct ResidualBranch {
  ResidualConfig cfg;
  std::vector<BasicBlock> blocks;

  static ResidualBranch create(ParameterSet& ps, Initializer& init, const ResidualConfig& cfg, std::int64_t in_channels,
                               Real bn_momentum, Real bn_eps);
  /// [N,C,T,h,w] -> [N,Cfeat,T,h',w']; no mixing across frames.
  Var forward(Tape& tape, const Var& x, Mode mode, ShapeTrace* trace = nullptr) const;
  std::int64_t out_extent(std::int64_t in) const;
  std::int64_t out_channels() const { return cfg.widths.back(); }
  /// Number of 3x3 convolutions on the main path (projections excluded).
  std::int64_t main_path_convs() const { return static_cast<std::int64_t>(blocks.size()) * 2; }
};

// ---- densely connected 3D branch ------------------------------------------

struct DenseConfig {
  std::int64_t growth = 32;
  std::vector<std::int64_t> blocks{6, 6, 6, 6};
  bool bottleneck = true;  // BN-ReLU-1x1x1(4g) before each 3x3x3
  double theta = 0.5;      // transition compression
  std::int64_t out_channels = 512;
};

struct DenseLayer {
  BatchNorm bn1;
  Conv conv1;  // bottleneck, absent when !bottleneck
  BatchNorm bn2;
  Conv conv2;
  bool bottleneck = false;

  Var forward(Tape& tape, const Var& x, Mode mode) const;
};

struct Transition {
  BatchNorm bn;
  Conv conv;
  Var forward(Tape& tape, const Var& x, Mode mode) const;
};

struct DenseBranch {
  DenseConfig cfg;
  std::vector<std::vector<DenseLayer>> blocks;
  std::vector<Transition> transitions;
  BatchNorm final_bn;
  Conv projection;
  BatchNorm out_bn;

  static DenseBranch create(ParameterSet& ps, Initializer& init, const DenseConfig& cfg, std::int64_t in_channels,
                            Real bn_momentum, Real bn_eps);
  /// [N,C,T,h,w] -> [N,Cfeat,T,h',w']; T preserved, spatial halved per transition.
  Var forward(Tape& tape, const Var& x, Mode mode, ShapeTrace* trace = nullptr) const;
  std::int64_t out_extent(std::int64_t in) const;
  /// Weighted layers: every convolution in blocks, transitions and projection.
  std::int64_t weighted_layers() const;
};

}  // namespace MGST_ABI
}  // namespace mgst
