#include "mgst/model.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "keyvalue.hpp"
#include "mgst/tensor_io.hpp"

namespace mgst {
inline namespace MGST_ABI {
namespace {

constexpr std::pair<Ablation, std::string_view> kAblationNames[] = {
    {Ablation::kFull, "full"},
    {Ablation::k2dOnly, "2d-only"},
    {Ablation::k3dOnly, "3d-only"},
    {Ablation::kConcatFusion, "concat-fusion"},
    {Ablation::kNoInputAttention, "no-input-attention"},
    {Ablation::kPlainConvLSTM, "plain-convlstm"},
};

using kv::parse_bool;
using kv::parse_double;
using kv::parse_int;
using kv::parse_list;

std::array<std::int64_t, 3> parse_triple(const std::string& key, const std::string& v) {
  const auto l = parse_list(key, v);
  require(l.size() == 3, ErrorCode::kConfig, "config: '" + key + "' expects three values (t,h,w)");
  return {l[0], l[1], l[2]};
}

template <class C>
std::string join(const C& c) {
  std::string s;
  for (auto v : c) {
    if (!s.empty()) s += ',';
    s += std::to_string(v);
  }
  return s;
}

template <class F>
std::string real_str(F v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void apply(ModelConfig& c, const std::string& key, const std::string& v) {
  if (key == "input.t") c.t = parse_int(key, v);
  else if (key == "input.h") c.h = parse_int(key, v);
  else if (key == "input.w") c.w = parse_int(key, v);
  else if (key == "stem.channels") c.stem.channels = parse_int(key, v);
  else if (key == "stem.kernel") c.stem.kernel = parse_triple(key, v);
  else if (key == "stem.stride") c.stem.stride = parse_triple(key, v);
  else if (key == "stem.pad") c.stem.pad = parse_triple(key, v);
  else if (key == "stem.pool") c.stem.pool = parse_bool(key, v);
  else if (key == "stem.upsample") c.stem.upsample_to = parse_int(key, v);
  else if (key == "branches.feat") c.dense.out_channels = parse_int(key, v);
  else if (key == "branches.res.widths") c.res.widths = parse_list(key, v);
  else if (key == "branches.res.blocks") c.res.blocks = parse_list(key, v);
  else if (key == "branches.res.strides") c.res.strides = parse_list(key, v);
  else if (key == "branches.dense.growth") c.dense.growth = parse_int(key, v);
  else if (key == "branches.dense.blocks") c.dense.blocks = parse_list(key, v);
  else if (key == "branches.dense.bottleneck") c.dense.bottleneck = parse_bool(key, v);
  else if (key == "branches.dense.theta") c.dense.theta = parse_double(key, v);
  else if (key == "fusion.single_channel") c.fusion.single_channel = parse_bool(key, v);
  else if (key == "fusion.both_inputs") c.fusion.both_inputs = parse_bool(key, v);
  else if (key == "fusion.bias") c.fusion.bias = parse_bool(key, v);
  else if (key == "recurrent.hidden") c.recurrent.hidden = parse_int(key, v);
  else if (key == "recurrent.kernel") c.recurrent.kernel = parse_int(key, v);
  else if (key == "recurrent.layers") c.recurrent.layers = parse_int(key, v);
  else if (key == "head.k") c.classes = parse_int(key, v);
  else if (key == "head.average") {
    require(v == "logits" || v == "probs", ErrorCode::kConfig, "config: 'head.average' expects logits or probs");
    c.average_probs = v == "probs";
  } else if (key == "ablation") c.ablation = parse_ablation(v);
  else if (key == "bn.momentum") c.bn_momentum = static_cast<Real>(parse_double(key, v));
  else if (key == "bn.eps") c.bn_eps = static_cast<Real>(parse_double(key, v));
  else if (key == "diagnostic.bypass_recurrence") c.bypass_recurrence = parse_bool(key, v);
  else fail(ErrorCode::kConfig, "config: unknown key '" + key + "'");
}

std::size_t bn_count(std::int64_t c) { return static_cast<std::size_t>(2 * c); }

}  // namespace

std::string_view ablation_name(Ablation a) {
  for (const auto& [v, n] : kAblationNames)
    if (v == a) return n;
  return "unknown";
}

Ablation parse_ablation(std::string_view name) {
  for (const auto& [v, n] : kAblationNames)
    if (n == name) return v;
  fail(ErrorCode::kConfig, "unknown ablation mode '" + std::string(name) + "'");
}

const std::vector<Ablation>& all_ablations() {
  static const std::vector<Ablation> all = {Ablation::kFull,          Ablation::k2dOnly,
                                            Ablation::k3dOnly,        Ablation::kConcatFusion,
                                            Ablation::kNoInputAttention, Ablation::kPlainConvLSTM};
  return all;
}

ModelConfig ModelConfig::preset_config(std::string_view name) {
  ModelConfig c;
  if (name == "full") {
    c.preset = "full";
    c.t = 29;
    c.h = c.w = 88;
    c.stem = StemConfig{64, {5, 7, 7}, {1, 2, 2}, {2, 3, 3}, true, 24};
    c.res = ResidualConfig{{64, 128, 256, 512}, {3, 4, 6, 3}, {1, 2, 2, 2}};
    c.dense = DenseConfig{32, {6, 6, 6, 6}, true, 0.5, 512};
    c.recurrent = RecurrentConfig{256, 3, 2, true, true};
    c.classes = 500;
  } else if (name == "tiny") {
    c.preset = "tiny";
    c.t = 8;
    c.h = c.w = 32;
    c.stem = StemConfig{8, {5, 7, 7}, {1, 2, 2}, {2, 3, 3}, true, 0};
    c.res = ResidualConfig{{8, 16, 32}, {1, 1, 1}, {1, 2, 2}};
    c.dense = DenseConfig{8, {2, 2, 2}, false, 0.5, 32};
    c.recurrent = RecurrentConfig{8, 3, 2, true, true};
    c.classes = 8;
  } else if (name == "gradcheck") {
    c.preset = "gradcheck";
    c.t = 3;
    c.h = c.w = 12;
    c.stem = StemConfig{2, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, false, 0};
    c.res = ResidualConfig{{4, 4}, {1, 1}, {1, 2}};
    c.dense = DenseConfig{2, {1, 1}, false, 0.5, 4};
    c.recurrent = RecurrentConfig{2, 3, 2, true, true};
    c.classes = 3;
  } else {
    fail(ErrorCode::kConfig, "unknown preset '" + std::string(name) + "' (expected full, tiny or gradcheck)");
  }
  return c;
}

ModelConfig ModelConfig::parse(std::string_view text) {
  std::string preset = "tiny";
  auto lines = kv::split_lines(text);
  for (const auto& [k, v] : lines)
    if (k == "preset") preset = v;
  ModelConfig c = preset_config(preset);
  for (const auto& [k, v] : lines)
    if (k != "preset") apply(c, k, v);
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) { return parse(kv::read_text(path)); }

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "preset = " << preset << '\n'
     << "input.t = " << t << '\n'
     << "input.h = " << h << '\n'
     << "input.w = " << w << '\n'
     << "stem.channels = " << stem.channels << '\n'
     << "stem.kernel = " << join(stem.kernel) << '\n'
     << "stem.stride = " << join(stem.stride) << '\n'
     << "stem.pad = " << join(stem.pad) << '\n'
     << "stem.pool = " << (stem.pool ? "true" : "false") << '\n'
     << "stem.upsample = " << stem.upsample_to << '\n'
     << "branches.feat = " << dense.out_channels << '\n'
     << "branches.res.widths = " << join(res.widths) << '\n'
     << "branches.res.blocks = " << join(res.blocks) << '\n'
     << "branches.res.strides = " << join(res.strides) << '\n'
     << "branches.dense.growth = " << dense.growth << '\n'
     << "branches.dense.blocks = " << join(dense.blocks) << '\n'
     << "branches.dense.bottleneck = " << (dense.bottleneck ? "true" : "false") << '\n'
     << "branches.dense.theta = " << real_str(dense.theta) << '\n'
     << "fusion.single_channel = " << (fusion.single_channel ? "true" : "false") << '\n'
     << "fusion.both_inputs = " << (fusion.both_inputs ? "true" : "false") << '\n'
     << "fusion.bias = " << (fusion.bias ? "true" : "false") << '\n'
     << "recurrent.hidden = " << recurrent.hidden << '\n'
     << "recurrent.kernel = " << recurrent.kernel << '\n'
     << "recurrent.layers = " << recurrent.layers << '\n'
     << "head.k = " << classes << '\n'
     << "head.average = " << (average_probs ? "probs" : "logits") << '\n'
     << "ablation = " << ablation_name(ablation) << '\n'
     << "bn.momentum = " << real_str(bn_momentum) << '\n'
     << "bn.eps = " << real_str(bn_eps) << '\n'
     << "diagnostic.bypass_recurrence = " << (bypass_recurrence ? "true" : "false") << '\n';
  return os.str();
}

void ModelConfig::validate() const {
  require(t >= 1 && h >= 1 && w >= 1, ErrorCode::kConfig, "config: input extents must be positive");
  require(h == w, ErrorCode::kConfig, "config: input must be square (input.h == input.w)");
  require(stem.channels >= 1, ErrorCode::kConfig, "config: stem.channels must be positive");
  require(stem.stride[0] == 1 && stem.kernel[0] == 2 * stem.pad[0] + 1, ErrorCode::kConfig,
          "config: stem must preserve T (temporal stride 1, kernel 2*pad+1)");
  require(stem.kernel[1] == stem.kernel[2] && stem.stride[1] == stem.stride[2] && stem.pad[1] == stem.pad[2],
          ErrorCode::kConfig, "config: stem spatial kernel, stride and pad must be square");
  require(!res.widths.empty() && res.widths.back() == dense.out_channels, ErrorCode::kConfig,
          "config: branch channel agreement: last residual width " +
              (res.widths.empty() ? std::string("<none>") : std::to_string(res.widths.back())) +
              " != branches.feat " + std::to_string(dense.out_channels));
  require(recurrent.hidden >= 1 && recurrent.kernel >= 1 && recurrent.kernel % 2 == 1 && recurrent.layers >= 1,
          ErrorCode::kConfig, "config: recurrent.hidden/layers must be positive and recurrent.kernel odd");
  require(classes >= 2, ErrorCode::kConfig, "config: head.k must be >= 2");
  require(bn_eps > Real(0) && bn_momentum >= Real(0) && bn_momentum <= Real(1), ErrorCode::kConfig,
          "config: bn.eps must be positive and bn.momentum in [0,1]");
}

std::size_t expected_parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  const auto& sc = cfg.stem;
  n += static_cast<std::size_t>(sc.channels * sc.kernel[0] * sc.kernel[1] * sc.kernel[2] + sc.channels);
  n += bn_count(sc.channels);

  const bool use2d = cfg.ablation != Ablation::k3dOnly;
  const bool use3d = cfg.ablation != Ablation::k2dOnly;
  if (use2d) {
    std::int64_t cin = sc.channels;
    for (std::size_t s = 0; s < cfg.res.widths.size(); ++s)
      for (std::int64_t b = 0; b < cfg.res.blocks[s]; ++b) {
        const std::int64_t cout = cfg.res.widths[s];
        const std::int64_t stride = b == 0 ? cfg.res.strides[s] : 1;
        n += static_cast<std::size_t>(cin * cout * 9 + cout * cout * 9) + 2 * bn_count(cout);
        if (stride != 1 || cin != cout) n += static_cast<std::size_t>(cin * cout) + bn_count(cout);
        cin = cout;
      }
  }
  if (use3d) {
    const auto& d = cfg.dense;
    std::int64_t c = sc.channels;
    for (std::size_t b = 0; b < d.blocks.size(); ++b) {
      for (std::int64_t l = 0; l < d.blocks[b]; ++l) {
        n += bn_count(c);
        if (d.bottleneck) n += static_cast<std::size_t>(c * 4 * d.growth + 4 * d.growth * d.growth * 27) + bn_count(4 * d.growth);
        else n += static_cast<std::size_t>(c * d.growth * 27);
        c += d.growth;
      }
      if (b + 1 < d.blocks.size()) {
        const auto cout = std::max<std::int64_t>(1, static_cast<std::int64_t>(d.theta * static_cast<double>(c)));
        n += bn_count(c) + static_cast<std::size_t>(c * cout);
        c = cout;
      }
    }
    n += bn_count(c) + static_cast<std::size_t>(c * d.out_channels) + bn_count(d.out_channels);
  }
  const std::int64_t f = cfg.feat();
  if (use2d && use3d) {
    if (cfg.ablation == Ablation::kConcatFusion) {
      n += static_cast<std::size_t>(2 * f * f + f);
    } else {
      const std::int64_t cm = cfg.fusion.single_channel ? 1 : f;
      n += static_cast<std::size_t>(cm * (cfg.fusion.both_inputs ? 2 * f : f) + (cfg.fusion.bias ? cm : 0));
    }
  }
  // Spatial extent of the fused features, by the shape formulas.
  auto out = [](std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) { return (in + 2 * p - k) / s + 1; };
  std::int64_t e = out(cfg.h, sc.kernel[1], sc.stride[1], sc.pad[1]);
  if (sc.pool) e = out(e, 3, 2, 1);
  if (sc.upsample_to > 0) e = sc.upsample_to;
  for (std::size_t s = 0; s < cfg.res.strides.size(); ++s) e = out(e, 3, cfg.res.strides[s], 1);
  const std::int64_t hw = e * e;

  if (cfg.bypass_recurrence) return n + static_cast<std::size_t>(cfg.classes * f * hw + cfg.classes);
  const auto& r = cfg.recurrent;
  const std::int64_t k2 = r.kernel * r.kernel;
  const bool attention = cfg.ablation != Ablation::kNoInputAttention && cfg.ablation != Ablation::kPlainConvLSTM;
  const bool peephole = cfg.ablation != Ablation::kPlainConvLSTM;
  std::int64_t cin = f;
  for (std::int64_t l = 0; l < r.layers; ++l) {
    const std::int64_t dir = 4 * r.hidden * cin * k2 + 4 * r.hidden * r.hidden * k2 + 4 * r.hidden +
                             (peephole ? 3 * r.hidden * hw : 0);
    n += static_cast<std::size_t>(2 * dir);
    if (attention) n += static_cast<std::size_t>(cin * cin * k2 + cin * r.hidden * k2);
    cin = 2 * r.hidden;
  }
  return n + static_cast<std::size_t>(cfg.classes * 2 * r.hidden * hw + cfg.classes);
}

Model Model::build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  m.seed_ = seed;
  Initializer init(seed);
  const Real mom = cfg.bn_momentum, eps = cfg.bn_eps;
  m.stem_ = Stem::create(m.params_, init, cfg.stem, mom, eps);
  const std::int64_t stem_hw = m.stem_.out_extent(cfg.h);
  const bool use2d = cfg.ablation != Ablation::k3dOnly;
  const bool use3d = cfg.ablation != Ablation::k2dOnly;

  // Both extents are computed even for a disabled branch so shape agreement is
  // a property of the config, not of the ablation.
  std::int64_t res_hw = stem_hw;
  for (auto stride : cfg.res.strides) res_hw = ConvSpec::planar(3, 3, stride, 1).out_extent(1, res_hw);
  DenseBranch probe_dense;
  probe_dense.transitions.resize(cfg.dense.blocks.size() - 1);
  const std::int64_t dense_hw = probe_dense.out_extent(stem_hw);
  require(res_hw == dense_hw, ErrorCode::kConfig,
          "config: branch shape agreement: residual branch ends at " + std::to_string(res_hw) + "x" +
              std::to_string(res_hw) + " but dense branch at " + std::to_string(dense_hw) + "x" +
              std::to_string(dense_hw));
  require(res_hw >= 1, ErrorCode::kConfig, "config: feature map collapses to zero extent");
  m.feat_hw_ = res_hw;

  if (use2d) m.res_ = ResidualBranch::create(m.params_, init, cfg.res, cfg.stem.channels, mom, eps);
  if (use3d) m.dense_ = DenseBranch::create(m.params_, init, cfg.dense, cfg.stem.channels, mom, eps);
  const std::int64_t f = cfg.feat();
  if (use2d && use3d) {
    if (cfg.ablation == Ablation::kConcatFusion)
      m.concat_reduce_ = Conv::create(m.params_, init, "fusion.reduce", 2 * f, f, ConvSpec::cube(1, 1, 0), true);
    else
      m.fusion_ = FusionParams::create(m.params_, f, cfg.fusion);
  }
  const std::int64_t hw = res_hw * res_hw;
  if (cfg.bypass_recurrence) {
    m.head_ = ClassifyHead::create(m.params_, init, "head", f * hw, cfg.classes, cfg.average_probs);
  } else {
    RecurrentConfig rc = cfg.recurrent;
    rc.attention = rc.attention && cfg.ablation != Ablation::kNoInputAttention && cfg.ablation != Ablation::kPlainConvLSTM;
    rc.peephole = rc.peephole && cfg.ablation != Ablation::kPlainConvLSTM;
    m.lstm_ = BiConvLSTM::create(m.params_, init, rc, f, res_hw, res_hw);
    m.head_ = ClassifyHead::create(m.params_, init, "head", 2 * rc.hidden * hw, cfg.classes, cfg.average_probs);
  }

  const std::size_t expected = expected_parameter_count(cfg);
  require(m.params_.weight_count() == expected, ErrorCode::kConfig,
          "parameter census: built " + std::to_string(m.params_.weight_count()) + " weights, expected " +
              std::to_string(expected));
  return m;
}

ForwardResult Model::forward(Tape& tape, const Tensor& videos, Mode mode, const std::vector<std::int64_t>& lengths,
                             ShapeTrace* trace) const {
  require(videos.rank() == 5 && videos.dim(1) == 1 && videos.dim(3) == cfg_.h && videos.dim(4) == cfg_.w,
          ErrorCode::kShapeMismatch,
          "model: videos must be [N,1,T," + std::to_string(cfg_.h) + "," + std::to_string(cfg_.w) + "], got " +
              shape_str(videos.shape()));
  require(videos.dim(0) >= 1 && videos.dim(2) >= 1, ErrorCode::kShapeMismatch, "model: empty batch or sequence");
  const std::int64_t n = videos.dim(0), tt = videos.dim(2), hw = cfg_.h * cfg_.w;
  require(lengths.empty() || static_cast<std::int64_t>(lengths.size()) == n, ErrorCode::kShapeMismatch,
          "model: one length per sample required");

  Tensor x(videos.shape());
  const Real inv = Real(1) / input_std;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (videos[i] - input_mean) * inv;
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(lengths.size()); ++b)
    for (std::int64_t t = lengths[static_cast<std::size_t>(b)]; t < tt; ++t)
      std::fill(x.data() + (b * tt + t) * hw, x.data() + (b * tt + t + 1) * hw, Real(0));
  if (trace) trace->add("input", x.shape());

  ForwardResult r;
  const Var stem = stem_.forward(tape, tape.constant(std::move(x)), mode, trace);
  const bool want2d = route != Route::k3d;
  const bool want3d = route != Route::k2d;
  require((want2d && res_) || (want3d && dense_), ErrorCode::kInvalidArgument,
          "model: route selects a branch this ablation does not build");
  if (res_ && want2d) {
    r.s = res_->forward(tape, stem, mode, trace);
    if (trace) trace->add("S", r.s.shape());
  }
  if (dense_ && want3d) {
    r.t = dense_->forward(tape, stem, mode, trace);
    if (trace) trace->add("T", r.t.shape());
  }
  if (r.s.valid() && r.t.valid()) {
    if (concat_reduce_) {
      r.fused = concat_reduce_->forward(tape, ag::concat_channels({r.s, r.t}));
    } else {
      auto fz = fuse(tape, r.s, r.t, *fusion_);
      r.fused = fz.out;
      r.mask = fz.mask;
    }
  } else {
    r.fused = r.s.valid() ? r.s : r.t;
  }
  if (trace) trace->add("fused", r.fused.shape());
  (void)n;

  Var hidden = r.fused;
  if (lstm_) {
    BiConvLSTM net = *lstm_;
    net.attention_ones = attention_ones;
    hidden = net.forward(tape, r.fused, lengths);
    if (trace) trace->add("recurrent", hidden.shape());
  }
  r.logits = head_.forward(tape, hidden, lengths);
  if (trace) trace->add("logits", r.logits.shape());
  return r;
}

Tensor Model::predict(const Tensor& video) const {
  require(video.rank() == 4, ErrorCode::kShapeMismatch, "predict: video must be [1,T,H,W], got " + shape_str(video.shape()));
  Tape tape(false);
  const auto r = forward(tape, video.reshaped({1, video.dim(0), video.dim(1), video.dim(2), video.dim(3)}), Mode::kEval);
  return r.logits.value().reshaped({cfg_.classes});
}

std::vector<std::int64_t> Model::spatial_chain() const {
  std::vector<std::int64_t> chain{cfg_.h};
  std::int64_t e = stem_.conv.spec.out_extent(1, cfg_.h);
  if (cfg_.stem.pool) {
    e = ConvSpec{{1, 3, 3}, {1, 2, 2}, {0, 1, 1}}.out_extent(1, e);
  }
  chain.push_back(e);
  if (cfg_.stem.upsample_to > 0 && cfg_.stem.upsample_to != e) {
    e = cfg_.stem.upsample_to;
    chain.push_back(e);
  }
  for (std::size_t s = 0; s < cfg_.res.strides.size(); ++s) {
    const std::int64_t next = (e + 2 - 3) / cfg_.res.strides[s] + 1;
    if (next != e) chain.push_back(next);
    e = next;
  }
  return chain;
}

std::vector<Parameter*> Model::branch_parameters(Route branch) {
  std::vector<Parameter*> out;
  const std::string prefix = branch == Route::k2d ? "res." : branch == Route::k3d ? "dense." : "";
  for (Parameter* p : params_.all())
    if (prefix.empty() || p->name.rfind(prefix, 0) == 0) out.push_back(p);
  return out;
}

std::size_t Model::copy_parameters_from(const Model& other) {
  std::size_t n = 0;
  for (const Parameter* src : other.params_.all()) {
    Parameter* dst = params_.find(src->name);
    if (dst && dst->value.shape() == src->value.shape()) {
      dst->value = src->value;
      ++n;
    }
  }
  input_mean = other.input_mean;
  input_std = other.input_std;
  return n;
}

void Model::export_parameters(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "parameters.manifest");
  require(manifest.good(), ErrorCode::kIo, "cannot write parameter manifest in '" + dir.string() + "'");
  for (const Parameter* p : params_.all()) {
    const std::string file = p->name + ".mgt";
    save_tensor(dir / file, p->value);
    manifest << p->name << ' ' << file << '\n';
  }
}

void Model::import_parameters(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "parameters.manifest");
  require(manifest.good(), ErrorCode::kIo, "cannot read parameter manifest in '" + dir.string() + "'");
  std::map<std::string, std::string> files;
  std::string name, file;
  while (manifest >> name >> file) files[name] = file;
  for (Parameter* p : params_.all()) {
    auto it = files.find(p->name);
    require(it != files.end(), ErrorCode::kShapeMismatch, "parameter manifest lacks '" + p->name + "'");
    Tensor t = load_tensor(dir / it->second);
    require(t.shape() == p->value.shape(), ErrorCode::kShapeMismatch,
            "parameter '" + p->name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                shape_str(p->value.shape()));
    p->value = std::move(t);
  }
}

}  // namespace MGST_ABI
}  // namespace mgst
