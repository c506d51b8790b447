#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mgst/convlstm.hpp"
#include "mgst/fusion.hpp"
#include "mgst/nn.hpp"

namespace mgst {
inline namespace MGST_ABI {

enum class Ablation { kFull, k2dOnly, k3dOnly, kConcatFusion, kNoInputAttention, kPlainConvLSTM };

std::string_view ablation_name(Ablation a);
Ablation parse_ablation(std::string_view name);
const std::vector<Ablation>& all_ablations();

/// Which branch feeds the recurrence at run time. Used by the two-stage
/// schedule; single-branch ablations fix it at build.
enum class Route { kBoth, k2d, k3d };

struct ModelConfig {
  std::string preset = "tiny";
  std::int64_t t = 8, h = 32, w = 32;
  StemConfig stem;
  ResidualConfig res;
  DenseConfig dense;
  FusionConfig fusion;
  RecurrentConfig recurrent;
  std::int64_t classes = 8;
  bool average_probs = false;
  Ablation ablation = Ablation::kFull;
  Real bn_momentum = Real(0.1);
  Real bn_eps = Real(1e-5);
  /// Diagnostic: the head reads the fused features directly (no recurrence).
  bool bypass_recurrence = false;

  std::int64_t feat() const { return dense.out_channels; }

  static ModelConfig preset_config(std::string_view name);
  /// key = value lines; '#' starts a comment. A `preset` line selects the
  /// base values, every other key overrides one field.
  static ModelConfig parse(std::string_view text);
  static ModelConfig load(const std::filesystem::path& path);
  std::string to_text() const;

  /// Throws kConfig naming the violated constraint.
  void validate() const;
};

/// Weighted scalar count implied by a config, from closed-form layer sizes.
std::size_t expected_parameter_count(const ModelConfig& cfg);

struct ForwardResult {
  Var logits;  // [N, K]
  Var s, t;    // branch outputs (invalid when the branch is off)
  Var fused;   // recurrence input [N, Cfeat, T, h, w]
  Var mask;    // fusion mask (full mode only)
};

class Model {
 public:
  static Model build(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// videos [N,1,T,H,W] with raw pixels in [0,1]. lengths marks real frames
  /// of zero-padded sequences.
  ForwardResult forward(Tape& tape, const Tensor& videos, Mode mode, const std::vector<std::int64_t>& lengths = {},
                        ShapeTrace* trace = nullptr) const;
  /// Single sequence [1,T,H,W] -> logits [K], eval mode.
  Tensor predict(const Tensor& video) const;

  /// Spatial extents along the pipeline: input, stem conv, pool, resample,
  /// then one entry per downsampling stage of the branches.
  std::vector<std::int64_t> spatial_chain() const;
  std::int64_t feature_extent() const { return feat_hw_; }

  Route route = Route::kBoth;
  bool attention_ones = false;  // diagnostic a == 1 override
  Real input_mean = Real(0);
  Real input_std = Real(1);

  bool has_2d() const { return res_.has_value(); }
  bool has_3d() const { return dense_.has_value(); }
  bool has_fusion_mask() const { return fusion_.has_value(); }
  const FusionParams* fusion() const { return fusion_ ? &*fusion_ : nullptr; }
  const Stem& stem() const { return stem_; }
  const ResidualBranch* residual() const { return res_ ? &*res_ : nullptr; }
  const DenseBranch* dense() const { return dense_ ? &*dense_ : nullptr; }
  const BiConvLSTM* recurrent() const { return lstm_ ? &*lstm_ : nullptr; }
  const ClassifyHead& head() const { return head_; }

  /// Parameter names belonging to each branch, for freezing.
  std::vector<Parameter*> branch_parameters(Route branch);

  /// Copy every same-named, same-shaped tensor from other. Returns the count.
  std::size_t copy_parameters_from(const Model& other);

  /// One MGT1 file per tensor plus `parameters.manifest` (`<name> <file>`).
  void export_parameters(const std::filesystem::path& dir) const;
  void import_parameters(const std::filesystem::path& dir);

 private:
  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  ParameterSet params_;
  Stem stem_;
  std::optional<ResidualBranch> res_;
  std::optional<DenseBranch> dense_;
  std::optional<FusionParams> fusion_;
  std::optional<Conv> concat_reduce_;
  std::optional<BiConvLSTM> lstm_;
  ClassifyHead head_;
  std::int64_t feat_hw_ = 0;
};

}  // namespace MGST_ABI
}  // namespace mgst
