#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mgst/data.hpp"
#include "mgst/model.hpp"

namespace mgst {
inline namespace MGST_ABI {

// ---- Adam ------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::int64_t t = 0;
  std::map<std::string, Tensor> m, v;
};

/// Bias-corrected Adam over every parameter that has a gradient. A
/// non-finite gradient rejects the whole step (kNonFinite, naming the
/// parameter) before anything is modified.
void adam_step(ParameterSet& params, const GradientMap& grads, AdamState& state);

// ---- evaluation ------------------------------------------------------------

struct EvalResult {
  double accuracy = 0;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]
  std::vector<std::int64_t> labels, predictions;
  std::vector<Tensor> logits;  // one [K] row per sample
};

EvalResult evaluate(const Model& model, const std::vector<SampleRecord>& data, std::int64_t batch = 16);

/// Accuracy on samples whose label is in `classes`, deciding only between the
/// two members of the label's pair (2k, 2k+1). Chance is 1/2.
double pair_accuracy(const EvalResult& r, const std::vector<std::int64_t>& classes);

// ---- training --------------------------------------------------------------

enum class Schedule { kEnd2End, kTwoStage };
std::string_view schedule_name(Schedule s);
Schedule parse_schedule(std::string_view name);

struct TrainOptions {
  Schedule schedule = Schedule::kEnd2End;
  std::int64_t epochs = 40;       // end-to-end epochs (after the branch stages)
  std::int64_t stage_epochs = 0;  // E1, per branch stage of the two-stage schedule
  std::int64_t batch = 8;
  double lr = 1e-3;
  double flip_prob = 0.5;
  std::uint64_t seed = 1;
  bool timing = true;  // false writes seconds = 0 for reproducible CSVs

  std::int64_t total_epochs() const { return schedule == Schedule::kTwoStage ? 2 * stage_epochs + epochs : epochs; }
  std::string to_text() const;
  static TrainOptions parse(std::string_view text);
};

struct EpochMetrics {
  std::int64_t epoch = 0;  // 1-based
  double train_loss = 0, train_acc = 0, val_acc = 0, seconds = 0;
};

inline constexpr std::string_view kMetricsHeader = "epoch,train_loss,train_acc,val_acc,seconds";
std::string metrics_csv(const std::vector<EpochMetrics>& history);

// ---- checkpoint ------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'M', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_text;
  std::string options_text;
  std::uint64_t model_seed = 0;
  std::int64_t epoch = 0;  // completed epochs
  std::string rng_state;
  double input_mean = 0, input_std = 1;
  std::vector<Parameter> tensors;  // weights and BN buffers, registry order
  AdamState adam;
  std::vector<EpochMetrics> history;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ck);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
/// Throws kBadMagic, kVersionMismatch or kTruncatedPayload.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Builds the checkpointed model and restores its tensors and normalization.
Model restore_model(const Checkpoint& ck);
/// Copies checkpoint tensors into a model; kPresetMismatch when the model's
/// config differs from the one recorded in the checkpoint.
void load_into(const Checkpoint& ck, Model& model);

class Trainer {
 public:
  /// Rejects an empty training set, labels outside [0,K) and frames whose
  /// extents differ from the config.
  Trainer(const ModelConfig& cfg, const TrainOptions& opt, std::vector<SampleRecord> train,
          std::vector<SampleRecord> val);
  /// Continue from a checkpoint; the config and options come from it.
  static Trainer resume(const Checkpoint& ck, std::vector<SampleRecord> train, std::vector<SampleRecord> val);

  /// Trains up to `until` completed epochs (default: the whole schedule).
  /// With an output directory, rewrites metrics.csv and checkpoint.mgck
  /// after every epoch.
  void run(std::int64_t until = -1);

  void set_output(std::filesystem::path dir) { out_ = std::move(dir); }
  void set_epoch_callback(std::function<void(const EpochMetrics&)> cb) { on_epoch_ = std::move(cb); }

  Model& model() { return model_; }
  const TrainOptions& options() const { return opt_; }
  const std::vector<EpochMetrics>& history() const { return history_; }
  std::int64_t epoch() const { return epoch_; }
  Checkpoint checkpoint() const;

 private:
  Trainer(Model model, const TrainOptions& opt, std::vector<SampleRecord> train, std::vector<SampleRecord> val);
  void check_data(const std::vector<SampleRecord>& data, const char* what) const;
  void enter_stage(std::int64_t epoch);
  EpochMetrics train_epoch();

  Model model_;
  TrainOptions opt_;
  std::vector<SampleRecord> train_, val_;
  AdamState adam_;
  std::mt19937_64 rng_;
  std::int64_t epoch_ = 0;
  std::vector<EpochMetrics> history_;
  std::filesystem::path out_;
  std::function<void(const EpochMetrics&)> on_epoch_;
};

}  // namespace MGST_ABI
}  // namespace mgst
