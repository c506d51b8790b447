#include "mgst/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "keyvalue.hpp"
#include "mgst/tensor_io.hpp"

namespace mgst {
inline namespace MGST_ABI {
namespace {

std::string f64_str(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Stacks records [1,T,H,W] into a batch [N,1,T,H,W].
Tensor stack_batch(const std::vector<const SampleRecord*>& recs) {
  const Shape& s = recs.front()->frames.shape();
  Tensor out({static_cast<std::int64_t>(recs.size()), 1, s[1], s[2], s[3]});
  const std::size_t n = recs.front()->frames.size();
  for (std::size_t i = 0; i < recs.size(); ++i)
    std::copy_n(recs[i]->frames.data(), n, out.data() + i * n);
  return out;
}

std::int64_t argmax_row(const Real* row, std::int64_t k) {
  return static_cast<std::int64_t>(std::max_element(row, row + k) - row);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

// ---- Adam ------------------------------------------------------------------

void adam_step(ParameterSet& params, const GradientMap& grads, AdamState& state) {
  for (const auto& [name, g] : grads) {
    const Parameter* p = params.find(name);
    require(p != nullptr, ErrorCode::kInvalidArgument, "adam: gradient for unknown parameter '" + name + "'");
    require(g.shape() == p->value.shape(), ErrorCode::kShapeMismatch,
            "adam: gradient shape " + shape_str(g.shape()) + " differs from parameter '" + name + "' " +
                shape_str(p->value.shape()));
    require(g.all_finite(), ErrorCode::kNonFinite, "adam: non-finite gradient for parameter '" + name + "'");
  }
  ++state.t;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (const auto& [name, g] : grads) {
    Parameter& p = params.get(name);
    if (!p.trainable()) continue;
    auto [mi, fresh_m] = state.m.try_emplace(name, Tensor::zeros(p.value.shape()));
    auto [vi, fresh_v] = state.v.try_emplace(name, Tensor::zeros(p.value.shape()));
    Real* m = mi->second.data();
    Real* v = vi->second.data();
    Real* w = p.value.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g[i];
      const double mn = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vn = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<Real>(mn);
      v[i] = static_cast<Real>(vn);
      w[i] = static_cast<Real>(w[i] - c.lr * (mn / bc1) / (std::sqrt(vn / bc2) + c.eps));
    }
  }
}

// ---- evaluation ------------------------------------------------------------

EvalResult evaluate(const Model& model, const std::vector<SampleRecord>& data, std::int64_t batch) {
  require(!data.empty(), ErrorCode::kEmptyDataset, "evaluate: no samples");
  const auto& cfg = model.config();
  const Shape want{1, cfg.t, cfg.h, cfg.w};
  const std::int64_t k = cfg.classes;
  EvalResult r;
  r.confusion.assign(static_cast<std::size_t>(k), std::vector<std::int64_t>(static_cast<std::size_t>(k), 0));
  std::int64_t correct = 0;
  for (std::size_t b = 0; b < data.size(); b += static_cast<std::size_t>(batch)) {
    std::vector<const SampleRecord*> recs;
    for (std::size_t i = b; i < std::min(data.size(), b + static_cast<std::size_t>(batch)); ++i) {
      require(data[i].frames.shape() == want, ErrorCode::kShapeMismatch,
              "evaluate: sample extents " + shape_str(data[i].frames.shape()) + " do not match the model input " +
                  shape_str(want));
      require(data[i].label < static_cast<std::uint32_t>(k), ErrorCode::kConfig,
              "evaluate: label " + std::to_string(data[i].label) + " outside the model's " + std::to_string(k) +
                  " classes");
      recs.push_back(&data[i]);
    }
    Tape tape(false);
    const Tensor logits = model.forward(tape, stack_batch(recs), Mode::kEval).logits.value();
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const Real* row = logits.data() + i * static_cast<std::size_t>(k);
      const std::int64_t pred = argmax_row(row, k);
      const std::int64_t label = recs[i]->label;
      correct += pred == label;
      ++r.confusion[static_cast<std::size_t>(label)][static_cast<std::size_t>(pred)];
      r.labels.push_back(label);
      r.predictions.push_back(pred);
      r.logits.emplace_back(Shape{k}, std::vector<Real>(row, row + k));
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

double pair_accuracy(const EvalResult& r, const std::vector<std::int64_t>& classes) {
  std::int64_t n = 0, correct = 0;
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    const std::int64_t label = r.labels[i];
    if (std::find(classes.begin(), classes.end(), label) == classes.end()) continue;
    const std::int64_t base = label - label % 2;
    require(base + 1 < r.logits[i].dim(0), ErrorCode::kInvalidArgument, "pair_accuracy: label without a partner");
    const std::int64_t pred = r.logits[i][static_cast<std::size_t>(base + 1)] > r.logits[i][static_cast<std::size_t>(base)]
                                  ? base + 1
                                  : base;
    correct += pred == label;
    ++n;
  }
  require(n > 0, ErrorCode::kEmptyDataset, "pair_accuracy: no samples in the class subset");
  return static_cast<double>(correct) / static_cast<double>(n);
}

// ---- options and metrics ---------------------------------------------------

std::string_view schedule_name(Schedule s) { return s == Schedule::kTwoStage ? "two-stage" : "end2end"; }

Schedule parse_schedule(std::string_view name) {
  if (name == "end2end") return Schedule::kEnd2End;
  if (name == "two-stage") return Schedule::kTwoStage;
  fail(ErrorCode::kConfig, "unknown schedule '" + std::string(name) + "' (expected end2end or two-stage)");
}

std::string TrainOptions::to_text() const {
  std::ostringstream os;
  os << "schedule = " << schedule_name(schedule) << '\n'
     << "epochs = " << epochs << '\n'
     << "stage_epochs = " << stage_epochs << '\n'
     << "batch = " << batch << '\n'
     << "lr = " << f64_str(lr) << '\n'
     << "flip_prob = " << f64_str(flip_prob) << '\n'
     << "seed = " << seed << '\n'
     << "timing = " << (timing ? "true" : "false") << '\n';
  return os.str();
}

TrainOptions TrainOptions::parse(std::string_view text) {
  TrainOptions o;
  for (const auto& [k, v] : kv::split_lines(text)) {
    if (k == "schedule") o.schedule = parse_schedule(v);
    else if (k == "epochs") o.epochs = kv::parse_int(k, v);
    else if (k == "stage_epochs") o.stage_epochs = kv::parse_int(k, v);
    else if (k == "batch") o.batch = kv::parse_int(k, v);
    else if (k == "lr") o.lr = kv::parse_double(k, v);
    else if (k == "flip_prob") o.flip_prob = kv::parse_double(k, v);
    else if (k == "seed") o.seed = kv::parse_u64(k, v);
    else if (k == "timing") o.timing = kv::parse_bool(k, v);
    else fail(ErrorCode::kConfig, "unknown training option '" + k + "'");
  }
  return o;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::string s(kMetricsHeader);
  s += '\n';
  char buf[160];
  for (const auto& m : history) {
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.6f,%.6f,%.3f\n", static_cast<long long>(m.epoch), m.train_loss,
                  m.train_acc, m.val_acc, m.seconds);
    s += buf;
  }
  return s;
}

// ---- checkpoint ------------------------------------------------------------

void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  using namespace binio;
  os.write(kCheckpointMagic, 4);
  put_u32(os, kCheckpointVersion);
  put_string(os, ck.config_text);
  put_string(os, ck.options_text);
  put_u64(os, ck.model_seed);
  put_u64(os, static_cast<std::uint64_t>(ck.epoch));
  put_string(os, ck.rng_state);
  put_f64(os, ck.input_mean);
  put_f64(os, ck.input_std);
  put_u32(os, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& p : ck.tensors) {
    put_string(os, p.name);
    put_u32(os, p.kind == Parameter::Kind::kBuffer ? 1u : 0u);
    write_tensor(os, p.value);
  }
  put_f64(os, ck.adam.cfg.lr);
  put_f64(os, ck.adam.cfg.beta1);
  put_f64(os, ck.adam.cfg.beta2);
  put_f64(os, ck.adam.cfg.eps);
  put_u64(os, static_cast<std::uint64_t>(ck.adam.t));
  put_u32(os, static_cast<std::uint32_t>(ck.adam.m.size()));
  for (const auto& [name, m] : ck.adam.m) {
    put_string(os, name);
    write_tensor(os, m);
    write_tensor(os, ck.adam.v.at(name));
  }
  put_u32(os, static_cast<std::uint32_t>(ck.history.size()));
  for (const auto& h : ck.history) {
    put_u64(os, static_cast<std::uint64_t>(h.epoch));
    put_f64(os, h.train_loss);
    put_f64(os, h.train_acc);
    put_f64(os, h.val_acc);
    put_f64(os, h.seconds);
  }
}

Checkpoint read_checkpoint(std::istream& is) {
  using namespace binio;
  expect_magic(is, kCheckpointMagic, "checkpoint");
  const std::uint32_t version = get_u32(is);
  require(version == kCheckpointVersion, ErrorCode::kVersionMismatch,
          "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  Checkpoint ck;
  ck.config_text = get_string(is);
  ck.options_text = get_string(is);
  ck.model_seed = get_u64(is);
  ck.epoch = static_cast<std::int64_t>(get_u64(is));
  ck.rng_state = get_string(is);
  ck.input_mean = get_f64(is);
  ck.input_std = get_f64(is);
  const std::uint32_t n = get_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    Parameter p;
    p.name = get_string(is);
    p.kind = get_u32(is) == 1 ? Parameter::Kind::kBuffer : Parameter::Kind::kWeight;
    p.value = read_tensor(is);
    ck.tensors.push_back(std::move(p));
  }
  ck.adam.cfg.lr = get_f64(is);
  ck.adam.cfg.beta1 = get_f64(is);
  ck.adam.cfg.beta2 = get_f64(is);
  ck.adam.cfg.eps = get_f64(is);
  ck.adam.t = static_cast<std::int64_t>(get_u64(is));
  const std::uint32_t slots = get_u32(is);
  for (std::uint32_t i = 0; i < slots; ++i) {
    std::string name = get_string(is);
    ck.adam.m[name] = read_tensor(is);
    ck.adam.v[name] = read_tensor(is);
  }
  const std::uint32_t rows = get_u32(is);
  for (std::uint32_t i = 0; i < rows; ++i) {
    EpochMetrics h;
    h.epoch = static_cast<std::int64_t>(get_u64(is));
    h.train_loss = get_f64(is);
    h.train_acc = get_f64(is);
    h.val_acc = get_f64(is);
    h.seconds = get_f64(is);
    ck.history.push_back(h);
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  // Write then rename, so an interrupted save never leaves a torn file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    require(static_cast<bool>(os), ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    write_checkpoint(os, ck);
    require(static_cast<bool>(os), ErrorCode::kIo, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::kIo, "cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

void load_into(const Checkpoint& ck, Model& model) {
  require(model.config().to_text() == ck.config_text, ErrorCode::kPresetMismatch,
          "checkpoint was written for a different config (model preset '" + model.config().preset + "')");
  for (const auto& src : ck.tensors) {
    Parameter* dst = model.params().find(src.name);
    require(dst != nullptr && dst->value.shape() == src.value.shape(), ErrorCode::kPresetMismatch,
            "checkpoint tensor '" + src.name + "' has no matching model parameter");
    dst->value = src.value;
  }
  require(ck.tensors.size() == model.params().size(), ErrorCode::kPresetMismatch,
          "checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, model has " +
              std::to_string(model.params().size()));
  model.input_mean = static_cast<Real>(ck.input_mean);
  model.input_std = static_cast<Real>(ck.input_std);
}

Model restore_model(const Checkpoint& ck) {
  Model m = Model::build(ModelConfig::parse(ck.config_text), ck.model_seed);
  load_into(ck, m);
  return m;
}

// ---- trainer ---------------------------------------------------------------

Trainer::Trainer(const ModelConfig& cfg, const TrainOptions& opt, std::vector<SampleRecord> train,
                 std::vector<SampleRecord> val)
    : Trainer(Model::build(cfg, opt.seed), opt, std::move(train), std::move(val)) {
  rng_.seed(opt.seed ^ 0xA5A5A5A55A5A5A5Aull);
  // Standardize by the pixel statistics of the training set.
  double s = 0, s2 = 0, n = 0;
  for (const auto& r : train_)
    for (Real v : r.frames.values()) {
      s += v;
      s2 += static_cast<double>(v) * v;
      n += 1;
    }
  const double mean = s / n;
  const double var = std::max(s2 / n - mean * mean, 1e-12);
  model_.input_mean = static_cast<Real>(mean);
  model_.input_std = static_cast<Real>(std::sqrt(var));
}

Trainer::Trainer(Model model, const TrainOptions& opt, std::vector<SampleRecord> train, std::vector<SampleRecord> val)
    : model_(std::move(model)), opt_(opt), train_(std::move(train)), val_(std::move(val)) {
  require(opt_.batch >= 1, ErrorCode::kConfig, "train: batch must be >= 1");
  require(opt_.epochs >= 0 && opt_.stage_epochs >= 0, ErrorCode::kConfig, "train: epoch counts must be >= 0");
  require(opt_.lr > 0, ErrorCode::kConfig, "train: learning rate must be positive");
  if (opt_.schedule == Schedule::kTwoStage)
    require(model_.has_2d() && model_.has_3d(), ErrorCode::kConfig,
            "train: the two-stage schedule needs both branches (ablation '" +
                std::string(ablation_name(model_.config().ablation)) + "')");
  require(!train_.empty(), ErrorCode::kEmptyDataset, "train: the training set is empty");
  check_data(train_, "training");
  check_data(val_, "validation");
  adam_.cfg.lr = opt_.lr;
}

void Trainer::check_data(const std::vector<SampleRecord>& data, const char* what) const {
  const auto& cfg = model_.config();
  const Shape want{1, cfg.t, cfg.h, cfg.w};
  for (const auto& r : data) {
    require(static_cast<std::int64_t>(r.label) < cfg.classes, ErrorCode::kConfig,
            std::string(what) + " label " + std::to_string(r.label) + " exceeds the config class count " +
                std::to_string(cfg.classes));
    require(r.frames.shape() == want, ErrorCode::kShapeMismatch,
            std::string(what) + " sample extents " + shape_str(r.frames.shape()) + " differ from the config " +
                shape_str(want));
  }
}

Trainer Trainer::resume(const Checkpoint& ck, std::vector<SampleRecord> train, std::vector<SampleRecord> val) {
  Trainer tr(restore_model(ck), TrainOptions::parse(ck.options_text), std::move(train), std::move(val));
  tr.adam_ = ck.adam;
  tr.epoch_ = ck.epoch;
  tr.history_ = ck.history;
  std::istringstream rs(ck.rng_state);
  rs >> tr.rng_;
  require(!rs.fail(), ErrorCode::kInvalidArgument, "checkpoint rng state is malformed");
  return tr;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config_text = model_.config().to_text();
  ck.options_text = opt_.to_text();
  ck.model_seed = model_.seed();
  ck.epoch = epoch_;
  std::ostringstream rs;
  rs << rng_;
  ck.rng_state = rs.str();
  ck.input_mean = model_.input_mean;
  ck.input_std = model_.input_std;
  for (const Parameter* p : model_.params().all()) {
    Parameter copy;
    copy.name = p->name;
    copy.kind = p->kind;
    copy.value = p->value;
    ck.tensors.push_back(std::move(copy));
  }
  ck.adam = adam_;
  ck.history = history_;
  return ck;
}

void Trainer::enter_stage(std::int64_t epoch) {
  Route route = Route::kBoth;
  if (opt_.schedule == Schedule::kTwoStage) {
    if (epoch < opt_.stage_epochs) route = Route::k2d;
    else if (epoch < 2 * opt_.stage_epochs) route = Route::k3d;
  }
  model_.route = route;
  for (Parameter* p : model_.params().all()) p->frozen = false;
  if (route == Route::k2d)
    for (Parameter* p : model_.branch_parameters(Route::k3d)) p->frozen = true;
  if (route == Route::k3d)
    for (Parameter* p : model_.branch_parameters(Route::k2d)) p->frozen = true;
}

EpochMetrics Trainer::train_epoch() {
  const auto start = std::chrono::steady_clock::now();
  enter_stage(epoch_);

  std::vector<std::size_t> order(train_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_() % i]);

  const std::int64_t k = model_.config().classes;
  double loss_sum = 0;
  std::int64_t correct = 0;
  for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(opt_.batch)) {
    std::vector<SampleRecord> flipped;
    std::vector<const SampleRecord*> recs;
    std::vector<std::int64_t> labels;
    const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(opt_.batch));
    flipped.reserve(end - b);
    for (std::size_t i = b; i < end; ++i) {
      const SampleRecord& r = train_[order[i]];
      if (uniform01(rng_) < opt_.flip_prob) {
        flipped.push_back(flip_horizontal(r));
        recs.push_back(&flipped.back());
      } else {
        recs.push_back(&r);
      }
      labels.push_back(r.label);
    }
    Tape tape;
    const ForwardResult fr = model_.forward(tape, stack_batch(recs), Mode::kTrain);
    const Var loss = ag::cross_entropy(fr.logits, labels);
    const double lv = loss.scalar();
    require(std::isfinite(lv), ErrorCode::kNonFinite, "train: non-finite loss at epoch " + std::to_string(epoch_ + 1));
    adam_step(model_.params(), tape.backward(loss), adam_);
    loss_sum += lv * static_cast<double>(labels.size());
    const Tensor& logits = fr.logits.value();
    for (std::size_t i = 0; i < labels.size(); ++i)
      correct += argmax_row(logits.data() + i * static_cast<std::size_t>(k), k) == labels[i];
  }

  EpochMetrics m;
  m.epoch = epoch_ + 1;
  m.train_loss = loss_sum / static_cast<double>(train_.size());
  m.train_acc = static_cast<double>(correct) / static_cast<double>(train_.size());
  m.val_acc = val_.empty() ? 0.0 : evaluate(model_, val_).accuracy;
  if (opt_.timing)
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

void Trainer::run(std::int64_t until) {
  const std::int64_t last = until < 0 ? opt_.total_epochs() : std::min(until, opt_.total_epochs());
  if (!out_.empty()) std::filesystem::create_directories(out_);
  while (epoch_ < last) {
    const EpochMetrics m = train_epoch();
    ++epoch_;
    history_.push_back(m);
    if (!out_.empty()) {
      std::ofstream(out_ / "metrics.csv") << metrics_csv(history_);
      save_checkpoint(out_ / "checkpoint.mgck", checkpoint());
    }
    if (on_epoch_) on_epoch_(m);
  }
  // Leave the model in inference routing once the schedule is complete.
  if (epoch_ >= opt_.total_epochs()) {
    model_.route = Route::kBoth;
    for (Parameter* p : model_.params().all()) p->frozen = false;
  }
}

}  // namespace MGST_ABI
}  // namespace mgst
