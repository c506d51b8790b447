#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mgst/data.hpp"
#include "mgst/gradcheck.hpp"
#include "mgst/model.hpp"
#include "mgst/tensor_io.hpp"
#include "mgst/train.hpp"

namespace fs = std::filesystem;
using namespace mgst;

namespace {

/// A config file path, or a preset name when no such file exists.
ModelConfig resolve_config(const std::string& arg) {
  if (fs::exists(arg)) return ModelConfig::load(arg);
  return ModelConfig::preset_config(arg);
}

DatasetSpec spec_near(const fs::path& manifest) {
  const fs::path p = manifest.parent_path() / "spec.txt";
  return fs::exists(p) ? DatasetSpec::load(p) : DatasetSpec::default_spec();
}

fs::path sibling_val(const fs::path& train_manifest) { return train_manifest.parent_path() / "val.manifest"; }

void print_epoch(const EpochMetrics& m) {
  std::printf("epoch=%lld train_loss=%.6f train_acc=%.4f val_acc=%.4f seconds=%.2f\n", static_cast<long long>(m.epoch),
              m.train_loss, m.train_acc, m.val_acc, m.seconds);
  std::fflush(stdout);
}

void print_eval(const EvalResult& r, const DatasetSpec* spec) {
  std::printf("accuracy=%.6f samples=%zu\n", r.accuracy, r.labels.size());
  if (spec) {
    std::printf("texture_pair_accuracy=%.6f\n", pair_accuracy(r, spec->texture_pair_classes()));
    std::printf("motion_pair_accuracy=%.6f\n", pair_accuracy(r, spec->motion_pair_classes()));
  }
  std::printf("confusion (rows true, columns predicted)\n");
  for (const auto& row : r.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) std::printf(j ? " %lld" : "%lld", static_cast<long long>(row[j]));
    std::printf("\n");
  }
}

struct TrainArgs {
  std::string config = "tiny";
  std::string data, val, out = "run";
  std::string schedule = "end2end";
  std::string resume;
  std::string ablation;
  std::uint64_t seed = 1;
  std::int64_t epochs = -1, stage_epochs = -1, batch = -1;
  double lr = -1;
  bool no_timing = false;
};

TrainOptions train_options(const TrainArgs& a) {
  TrainOptions opt;
  opt.schedule = parse_schedule(a.schedule);
  opt.seed = a.seed;
  if (a.epochs >= 0) opt.epochs = a.epochs;
  if (a.stage_epochs >= 0) opt.stage_epochs = a.stage_epochs;
  if (a.batch > 0) opt.batch = a.batch;
  if (a.lr > 0) opt.lr = a.lr;
  opt.timing = !a.no_timing;
  return opt;
}

int cmd_gen(const std::string& spec_path, const std::string& out) {
  const DatasetSpec spec = spec_path.empty() ? DatasetSpec::default_spec() : DatasetSpec::load(spec_path);
  const GenerateSummary s = generate_corpus(spec, out);
  std::printf("train=%lld val=%lld train_manifest=%s val_manifest=%s\n", static_cast<long long>(s.train_count),
              static_cast<long long>(s.val_count), s.train_manifest.string().c_str(), s.val_manifest.string().c_str());
  return 0;
}

int cmd_train(const TrainArgs& a) {
  require(!a.data.empty(), ErrorCode::kInvalidArgument, "train: --data is required");
  const fs::path val = a.val.empty() ? sibling_val(a.data) : fs::path(a.val);
  auto train_set = load_dataset(a.data);
  auto val_set = load_dataset(val);
  if (!a.resume.empty()) {
    const Checkpoint ck = load_checkpoint(a.resume);
    if (a.config != "tiny" || !a.ablation.empty()) {
      ModelConfig cfg = resolve_config(a.config);
      if (!a.ablation.empty()) cfg.ablation = parse_ablation(a.ablation);
      require(cfg.to_text() == ck.config_text, ErrorCode::kPresetMismatch,
              "train: --config does not match the checkpoint's model config");
    }
    Trainer trainer = Trainer::resume(ck, std::move(train_set), std::move(val_set));
    trainer.set_output(a.out);
    trainer.set_epoch_callback(print_epoch);
    trainer.run();
    return 0;
  }
  ModelConfig cfg = resolve_config(a.config);
  if (!a.ablation.empty()) cfg.ablation = parse_ablation(a.ablation);
  Trainer trainer(cfg, train_options(a), std::move(train_set), std::move(val_set));
  trainer.set_output(a.out);
  trainer.set_epoch_callback(print_epoch);
  trainer.run();
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const Model model = restore_model(ck);
  const auto samples = load_dataset(data);
  const DatasetSpec spec = spec_near(data);
  const bool pairs = spec.num_classes() == model.config().classes;
  print_eval(evaluate(model, samples), pairs ? &spec : nullptr);
  return 0;
}

int cmd_gradcheck(const std::string& module) {
  bool ok = true;
  double total = 0;
  for (const auto& m : gradcheck_modules()) {
    if (!module.empty() && m != module) continue;
    const GradcheckResult r = run_gradcheck(m);
    total += r.seconds;
    std::printf("%-16s max_rel_error=%.3e tolerance=%.0e checked=%zu skipped=%zu worst=%s[%zu] %.2fs %s\n",
                m.c_str(), r.report.max_rel_error, r.tolerance, r.report.checked, r.report.skipped,
                r.report.worst_param.c_str(), r.report.worst_index, r.seconds, r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  if (!module.empty() && total == 0) run_gradcheck(module);  // raises kInvalidArgument
  std::printf("total_seconds=%.2f\n", total);
  if (!ok) {
    std::fprintf(stderr, "error code=gradcheck_failed msg=finite differences disagree with backward\n");
    return 1;
  }
  return 0;
}

int cmd_export_mask(const std::string& ckpt, const std::string& sample, const std::string& out) {
  const Model model = restore_model(load_checkpoint(ckpt));
  require(model.has_fusion_mask(), ErrorCode::kConfig,
          "export-mask: model mode '" + std::string(ablation_name(model.config().ablation)) + "' has no fusion mask");
  const SampleRecord rec = read_sequence(sample);
  const Tensor video = rec.frames.reshaped({1, 1, rec.frames.dim(1), rec.frames.dim(2), rec.frames.dim(3)});
  Tape tape(false);
  const ForwardResult r = model.forward(tape, video, Mode::kEval);
  save_tensor(out, r.mask.value());
  const Shape& s = r.mask.value().shape();
  std::printf("mask shape=[%lld,%lld,%lld,%lld,%lld] out=%s\n", static_cast<long long>(s[0]),
              static_cast<long long>(s[1]), static_cast<long long>(s[2]), static_cast<long long>(s[3]),
              static_cast<long long>(s[4]), out.c_str());
  return 0;
}

int cmd_export_params(const std::string& ckpt, const std::string& out) {
  const Model model = restore_model(load_checkpoint(ckpt));
  model.export_parameters(out);
  std::printf("tensors=%zu out=%s\n", model.params().all().size(), out.c_str());
  return 0;
}

std::vector<Ablation> parse_grid(const std::string& grid) {
  if (grid == "all") return all_ablations();
  std::vector<Ablation> modes;
  std::size_t start = 0;
  while (start <= grid.size()) {
    const std::size_t comma = std::min(grid.find(',', start), grid.size());
    if (comma > start) modes.push_back(parse_ablation(std::string_view(grid).substr(start, comma - start)));
    start = comma + 1;
  }
  require(!modes.empty(), ErrorCode::kInvalidArgument, "ablate: empty --grid");
  return modes;
}

int cmd_ablate(const TrainArgs& a, const std::string& grid, const std::vector<std::uint64_t>& seeds) {
  require(!a.data.empty(), ErrorCode::kInvalidArgument, "ablate: --data is required");
  const auto modes = parse_grid(grid);
  const auto train_set = load_dataset(a.data);
  const auto val_set = load_dataset(a.val.empty() ? sibling_val(a.data) : fs::path(a.val));
  const DatasetSpec spec = spec_near(a.data);
  const fs::path out(a.out);
  fs::create_directories(out);
  std::ofstream summary(out / "summary.csv");
  summary << "mode,seed,val_acc,texture_pair_acc,motion_pair_acc\n";
  for (Ablation mode : modes) {
    for (std::uint64_t seed : seeds) {
      ModelConfig cfg = resolve_config(a.config);
      cfg.ablation = mode;
      TrainArgs run = a;
      run.seed = seed;
      Trainer trainer(cfg, train_options(run), train_set, val_set);
      const fs::path dir = out / std::string(ablation_name(mode)) / ("seed" + std::to_string(seed));
      trainer.set_output(dir);
      trainer.run();
      const EvalResult r = evaluate(trainer.model(), val_set);
      const double tex = pair_accuracy(r, spec.texture_pair_classes());
      const double mot = pair_accuracy(r, spec.motion_pair_classes());
      char line[256];
      std::snprintf(line, sizeof line, "%s,%llu,%.6f,%.6f,%.6f", std::string(ablation_name(mode)).c_str(),
                    static_cast<unsigned long long>(seed), r.accuracy, tex, mot);
      summary << line << '\n' << std::flush;
      std::printf("%s\n", line);
      std::fflush(stdout);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-grained spatio-temporal lip-reading toolkit"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  auto* gen = app.add_subcommand("gen", "Generate the synthetic corpus");
  gen->add_option("--spec", spec_path, "Dataset spec file (default corpus when omitted)");
  gen->add_option("--out", out_dir, "Output directory")->required();

  TrainArgs ta;
  auto add_train_flags = [&ta](CLI::App* c) {
    c->add_option("--config", ta.config, "Model config file or preset name")->capture_default_str();
    c->add_option("--data", ta.data, "Training manifest")->required();
    c->add_option("--val", ta.val, "Validation manifest (default: val.manifest beside --data)");
    c->add_option("--schedule", ta.schedule, "end2end or two-stage")->capture_default_str();
    c->add_option("--epochs", ta.epochs, "End-to-end epochs");
    c->add_option("--stage-epochs", ta.stage_epochs, "Epochs per branch stage of two-stage");
    c->add_option("--batch", ta.batch, "Mini-batch size");
    c->add_option("--lr", ta.lr, "Adam learning rate");
    c->add_option("--out", ta.out, "Output directory")->capture_default_str();
    c->add_flag("--no-timing", ta.no_timing, "Write seconds=0 for reproducible metrics");
  };
  auto* train = app.add_subcommand("train", "Train a model");
  add_train_flags(train);
  train->add_option("--seed", ta.seed, "Seed")->capture_default_str();
  train->add_option("--ablation", ta.ablation, "Ablation mode");
  train->add_option("--resume", ta.resume, "Continue from a checkpoint");

  std::string ckpt, data;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--data", data, "Manifest")->required();

  std::string module;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--module", module, "One module (default: all)");

  std::string sample;
  auto* em = app.add_subcommand("export-mask", "Write the fusion mask for one sequence");
  em->add_option("--ckpt", ckpt, "Checkpoint")->required();
  em->add_option("--sample", sample, "Sequence file (.mgsq)")->required();
  em->add_option("--out", out_dir, "Output tensor file")->required();

  auto* ep = app.add_subcommand("export-params", "Write every parameter as a tensor file");
  ep->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ep->add_option("--out", out_dir, "Output directory")->required();

  std::string grid = "all";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  auto* ab = app.add_subcommand("ablate", "Train every ablation mode over several seeds");
  add_train_flags(ab);
  ab->add_option("--grid", grid, "Comma-separated modes or 'all'")->capture_default_str();
  ab->add_option("--seeds", seeds, "Seeds")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_gen(spec_path, out_dir);
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ckpt, data);
    if (*gc) return cmd_gradcheck(module);
    if (*em) return cmd_export_mask(ckpt, sample, out_dir);
    if (*ep) return cmd_export_params(ckpt, out_dir);
    if (*ab) return cmd_ablate(ta, grid, seeds);
  } catch (const Error& e) {
    std::fprintf(stderr, "error code=%s msg=%s\n", std::string(error_code_name(e.code())).c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error code=internal msg=%s\n", e.what());
    return 1;
  }
  return 0;
}
