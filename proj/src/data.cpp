#include "mgst/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "keyvalue.hpp"
#include "mgst/tensor_io.hpp"

namespace mgst {
inline namespace MGST_ABI {
namespace {

constexpr std::pair<Motion, std::string_view> kMotionNames[] = {
    {Motion::kOscillateLR, "osc-lr"}, {Motion::kOscillateUD, "osc-ud"}, {Motion::kSweepDown, "sweep-down"},
    {Motion::kSweepUp, "sweep-up"},   {Motion::kOpen, "open"},          {Motion::kClose, "close"},
};
constexpr std::pair<Texture, std::string_view> kTextureNames[] = {
    {Texture::kStripes, "stripes"},
    {Texture::kChecker, "checker"},
};

constexpr double kBackground = 0.5;
constexpr double kContrast = 0.4;  // texture values are 0.5 +- kContrast
constexpr int kSupersample = 4;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6D67737464617461ull;
  for (auto p : parts) h = splitmix(h ^ p);
  return h;
}

constexpr std::uint64_t kMotionStream = 0x4D4F54;
constexpr std::uint64_t kTextureStream = 0x544558;

struct Geometry {
  double cx, cy, rx, ry;
};

/// Ellipse parameters per frame. Driven only by the motion stream, so
/// classes sharing a motion program and sample index share a trajectory.
std::vector<Geometry> trajectory(const DatasetSpec& spec, Motion motion, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double unit = static_cast<double>(std::min(spec.h, spec.w)) / 32.0;
  const double phase = 2.0 * std::numbers::pi * u01(rng);
  const double scale = 0.85 + 0.3 * u01(rng);
  const double dx = (u01(rng) - 0.5) * 3.0 * unit;
  const double dy = (u01(rng) - 0.5) * 3.0 * unit;
  const double onset = u01(rng) - 0.5;
  const double cx0 = (static_cast<double>(spec.w) - 1.0) / 2.0 + dx;
  const double cy0 = (static_cast<double>(spec.h) - 1.0) / 2.0 + dy;
  const double rx = 7.0 * unit * scale, ry = 4.5 * unit * scale;
  const double span = static_cast<double>(std::max<std::int64_t>(spec.t - 1, 1));

  std::vector<Geometry> g(static_cast<std::size_t>(spec.t));
  for (std::int64_t t = 0; t < spec.t; ++t) {
    const double td = static_cast<double>(t);
    const double osc = std::sin(2.0 * std::numbers::pi * td / static_cast<double>(spec.t) + phase);
    const double p = (td + onset) / span;
    auto& f = g[static_cast<std::size_t>(t)];
    f = {cx0, cy0, rx, ry};
    switch (motion) {
      case Motion::kOscillateLR: f.cx += 6.0 * unit * osc; break;
      case Motion::kOscillateUD: f.cy += 5.0 * unit * osc; break;
      case Motion::kSweepDown: f.cy += 5.0 * unit * (2.0 * p - 1.0); break;
      case Motion::kSweepUp: f.cy -= 5.0 * unit * (2.0 * p - 1.0); break;
      case Motion::kOpen: f.ry = unit * (1.5 + (6.0 * scale - 1.5) * p); break;
      case Motion::kClose: f.ry = unit * (1.5 + (6.0 * scale - 1.5) * (1.0 - p)); break;
    }
    f.ry = std::max(f.ry, 0.5 * unit);
  }
  return g;
}

double coverage(const Geometry& g, std::int64_t x, std::int64_t y) {
  int inside = 0;
  for (int sy = 0; sy < kSupersample; ++sy) {
    const double py = static_cast<double>(y) + (sy + 0.5) / kSupersample - 0.5;
    const double ny = (py - g.cy) / g.ry;
    for (int sx = 0; sx < kSupersample; ++sx) {
      const double px = static_cast<double>(x) + (sx + 0.5) / kSupersample - 0.5;
      const double nx = (px - g.cx) / g.rx;
      inside += nx * nx + ny * ny <= 1.0;
    }
  }
  return static_cast<double>(inside) / (kSupersample * kSupersample);
}

double texture_value(Texture tex, std::int64_t x, std::int64_t y, std::int64_t phase) {
  const std::int64_t bit = tex == Texture::kStripes ? (x + phase) & 1 : (x + y + phase) & 1;
  return kBackground + (bit ? kContrast : -kContrast);
}

}  // namespace

std::string_view motion_name(Motion m) {
  for (const auto& [k, n] : kMotionNames)
    if (k == m) return n;
  return "?";
}

Motion parse_motion(std::string_view name) {
  for (const auto& [k, n] : kMotionNames)
    if (n == name) return k;
  fail(ErrorCode::kConfig, "unknown motion program '" + std::string(name) + "'");
}

std::string_view texture_name(Texture t) {
  for (const auto& [k, n] : kTextureNames)
    if (k == t) return n;
  return "?";
}

Texture parse_texture(std::string_view name) {
  for (const auto& [k, n] : kTextureNames)
    if (n == name) return k;
  fail(ErrorCode::kConfig, "unknown texture program '" + std::string(name) + "'");
}

DatasetSpec DatasetSpec::default_spec() {
  DatasetSpec s;
  s.classes = {
      {Motion::kOscillateLR, Texture::kStripes}, {Motion::kOscillateLR, Texture::kChecker},
      {Motion::kOscillateUD, Texture::kStripes}, {Motion::kOscillateUD, Texture::kChecker},
      {Motion::kSweepDown, Texture::kStripes},   {Motion::kSweepUp, Texture::kStripes},
      {Motion::kOpen, Texture::kChecker},        {Motion::kClose, Texture::kChecker},
  };
  return s;
}

DatasetSpec DatasetSpec::parse(std::string_view text) {
  DatasetSpec s = default_spec();
  for (const auto& [key, v] : kv::split_lines(text)) {
    if (key == "classes") {
      const auto k = kv::parse_int(key, v);
      require(k > 0 && k <= 4096, ErrorCode::kConfig, "config: 'classes' must be in [1, 4096]");
      s.classes.resize(static_cast<std::size_t>(k), ClassProgram{Motion::kOscillateLR, Texture::kStripes});
    } else if (key.rfind("class.", 0) == 0) {
      const auto k = kv::parse_int(key, key.substr(6));
      require(k >= 0 && k < s.num_classes(), ErrorCode::kConfig, "config: '" + key + "' is outside the class table");
      std::istringstream is(v);
      std::string m, t, extra;
      is >> m >> t;
      require(!m.empty() && !t.empty() && !(is >> extra), ErrorCode::kConfig,
              "config: '" + key + "' expects '<motion> <texture>'");
      s.classes[static_cast<std::size_t>(k)] = {parse_motion(m), parse_texture(t)};
    } else if (key == "input.t") s.t = kv::parse_int(key, v);
    else if (key == "input.h") s.h = kv::parse_int(key, v);
    else if (key == "input.w") s.w = kv::parse_int(key, v);
    else if (key == "train_per_class") s.train_per_class = kv::parse_int(key, v);
    else if (key == "val_per_class") s.val_per_class = kv::parse_int(key, v);
    else if (key == "noise") s.noise = kv::parse_double(key, v);
    else if (key == "seed") s.seed = kv::parse_u64(key, v);
    else fail(ErrorCode::kConfig, "config: unknown dataset key '" + key + "'");
  }
  s.validate();
  return s;
}

DatasetSpec DatasetSpec::load(const std::filesystem::path& path) { return parse(kv::read_text(path)); }

std::string DatasetSpec::to_text() const {
  std::ostringstream os;
  os << "classes = " << classes.size() << '\n';
  for (std::size_t k = 0; k < classes.size(); ++k)
    os << "class." << k << " = " << motion_name(classes[k].motion) << ' ' << texture_name(classes[k].texture) << '\n';
  char noise_buf[32];
  std::snprintf(noise_buf, sizeof noise_buf, "%.17g", noise);
  os << "input.t = " << t << '\n'
     << "input.h = " << h << '\n'
     << "input.w = " << w << '\n'
     << "train_per_class = " << train_per_class << '\n'
     << "val_per_class = " << val_per_class << '\n'
     << "noise = " << noise_buf << '\n'
     << "seed = " << seed << '\n';
  return os.str();
}

void DatasetSpec::validate() const {
  require(!classes.empty(), ErrorCode::kConfig, "dataset: at least one class is required");
  require(t >= 1 && h >= 8 && w >= 8, ErrorCode::kConfig, "dataset: extents must satisfy T >= 1, H >= 8, W >= 8");
  require(train_per_class >= 0 && val_per_class >= 0, ErrorCode::kConfig, "dataset: split sizes must be >= 0");
  require(noise >= 0.0 && noise <= 0.5, ErrorCode::kConfig, "dataset: noise must be in [0, 0.5]");
}

std::vector<std::int64_t> DatasetSpec::texture_pair_classes() const {
  std::vector<std::int64_t> out;
  for (std::size_t k = 0; k + 1 < classes.size(); k += 2)
    if (classes[k].motion == classes[k + 1].motion && classes[k].texture != classes[k + 1].texture) {
      out.push_back(static_cast<std::int64_t>(k));
      out.push_back(static_cast<std::int64_t>(k + 1));
    }
  return out;
}

std::vector<std::int64_t> DatasetSpec::motion_pair_classes() const {
  std::vector<std::int64_t> out;
  for (std::size_t k = 0; k + 1 < classes.size(); k += 2)
    if (classes[k].texture == classes[k + 1].texture && classes[k].motion != classes[k + 1].motion) {
      out.push_back(static_cast<std::int64_t>(k));
      out.push_back(static_cast<std::int64_t>(k + 1));
    }
  return out;
}

SampleRecord generate_sample(const DatasetSpec& spec, std::int64_t class_id, std::int64_t sample_index) {
  require(class_id >= 0 && class_id < spec.num_classes(), ErrorCode::kInvalidArgument,
          "class id " + std::to_string(class_id) + " outside [0, " + std::to_string(spec.num_classes()) + ")");
  require(sample_index >= 0, ErrorCode::kInvalidArgument, "sample index must be >= 0");
  const auto& prog = spec.classes[static_cast<std::size_t>(class_id)];
  const auto idx = static_cast<std::uint64_t>(sample_index);
  const auto pair = static_cast<std::uint64_t>(class_id / 2);

  std::mt19937_64 motion_rng(mix({spec.seed, kMotionStream, pair, idx}));
  const auto geom = trajectory(spec, prog.motion, motion_rng);

  SampleRecord rec;
  rec.label = static_cast<std::uint32_t>(class_id);
  rec.seed = mix({spec.seed, kTextureStream, static_cast<std::uint64_t>(class_id), idx});
  std::mt19937_64 rng(rec.seed);
  const std::int64_t tex_phase = static_cast<std::int64_t>(rng() & 1);
  std::uniform_real_distribution<double> noise(-spec.noise, spec.noise);

  rec.frames = Tensor({1, spec.t, spec.h, spec.w});
  Real* px = rec.frames.data();
  for (std::int64_t t = 0; t < spec.t; ++t) {
    const auto& g = geom[static_cast<std::size_t>(t)];
    for (std::int64_t y = 0; y < spec.h; ++y)
      for (std::int64_t x = 0; x < spec.w; ++x) {
        const double cov = coverage(g, x, y);
        const double v = kBackground * (1.0 - cov) + texture_value(prog.texture, x, y, tex_phase) * cov;
        *px++ = static_cast<Real>(std::clamp(v + noise(rng), 0.0, 1.0));
      }
  }
  return rec;
}

SampleRecord flip_horizontal(const SampleRecord& rec) {
  SampleRecord out = rec;
  const auto& s = rec.frames.shape();
  const std::int64_t w = s.back();
  const std::size_t rows = rec.frames.size() / static_cast<std::size_t>(w);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* src = rec.frames.data() + r * static_cast<std::size_t>(w);
    Real* dst = out.frames.data() + r * static_cast<std::size_t>(w);
    for (std::int64_t x = 0; x < w; ++x) dst[x] = src[w - 1 - x];
  }
  return out;
}

std::vector<std::pair<double, double>> frame_centroids(const Tensor& frames) {
  require(frames.rank() == 4, ErrorCode::kShapeMismatch, "frame_centroids expects [1,T,H,W]");
  const std::int64_t t_n = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  std::vector<std::pair<double, double>> out;
  const Real* p = frames.data();
  for (std::int64_t t = 0; t < t_n; ++t) {
    double sw = 0, sx = 0, sy = 0;
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const double d = std::abs(static_cast<double>(*p++) - kBackground);
        if (d <= 0.1) continue;
        sw += d;
        sx += d * static_cast<double>(x);
        sy += d * static_cast<double>(y);
      }
    out.emplace_back(sw > 0 ? sx / sw : std::nan(""), sw > 0 ? sy / sw : std::nan(""));
  }
  return out;
}

void write_sequence(const SampleRecord& rec, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  os.write(kSequenceMagic, 4);
  binio::put_u32(os, kSequenceVersion);
  binio::put_u32(os, rec.label);
  binio::put_u64(os, rec.seed);
  write_tensor(os, rec.frames);
  require(static_cast<bool>(os), ErrorCode::kIo, "write failed: " + path.string());
}

SampleRecord read_sequence(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::kIo, "cannot open " + path.string());
  binio::expect_magic(is, kSequenceMagic, "sequence file");
  const std::uint32_t version = binio::get_u32(is);
  require(version == kSequenceVersion, ErrorCode::kVersionMismatch,
          "sequence file version " + std::to_string(version) + ", expected " + std::to_string(kSequenceVersion));
  SampleRecord rec;
  rec.label = binio::get_u32(is);
  rec.seed = binio::get_u64(is);
  rec.frames = read_tensor(is);
  require(rec.frames.rank() == 4 && rec.frames.dim(0) == 1, ErrorCode::kExtentMismatch,
          "sequence frames must be [1,T,H,W], got " + shape_str(rec.frames.shape()));
  require(is.peek() == std::char_traits<char>::eof(), ErrorCode::kExtentMismatch,
          "sequence file has bytes past the declared extents: " + path.string());
  return rec;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::kIo, "cannot open manifest " + path.string());
  const auto dir = path.parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = kv::trim(line);
    if (t.empty()) continue;
    const auto sp = t.find_last_of(" \t");
    require(sp != std::string::npos, ErrorCode::kInvalidArgument,
            "manifest line " + std::to_string(lineno) + ": expected '<path> <label>'");
    ManifestEntry e;
    e.path = dir / kv::trim(std::string_view(t).substr(0, sp));
    e.label = kv::parse_int("label", t.substr(sp + 1));
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::int64_t>>& rows) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  for (const auto& [p, label] : rows) os << p << ' ' << label << '\n';
  require(static_cast<bool>(os), ErrorCode::kIo, "write failed: " + path.string());
}

std::vector<SampleRecord> load_dataset(const std::filesystem::path& manifest) {
  const auto entries = read_manifest(manifest);
  require(!entries.empty(), ErrorCode::kEmptyDataset, "manifest " + manifest.string() + " lists no samples");
  std::vector<SampleRecord> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    auto rec = read_sequence(e.path);
    require(static_cast<std::int64_t>(rec.label) == e.label, ErrorCode::kInvalidArgument,
            "label mismatch between manifest and " + e.path.string());
    if (!out.empty())
      require(rec.frames.shape() == out.front().frames.shape(), ErrorCode::kExtentMismatch,
              "sequence " + e.path.string() + " has extents " + shape_str(rec.frames.shape()) + ", expected " +
                  shape_str(out.front().frames.shape()));
    out.push_back(std::move(rec));
  }
  return out;
}

GenerateSummary generate_corpus(const DatasetSpec& spec, const std::filesystem::path& out) {
  spec.validate();
  std::filesystem::create_directories(out / "train");
  std::filesystem::create_directories(out / "val");
  std::vector<std::pair<std::string, std::int64_t>> train_rows, val_rows;
  char name[64];
  for (std::int64_t k = 0; k < spec.num_classes(); ++k) {
    for (std::int64_t i = 0; i < spec.train_per_class + spec.val_per_class; ++i) {
      const bool is_train = i < spec.train_per_class;
      std::snprintf(name, sizeof name, "%s/c%03lld_%05lld.mgsq", is_train ? "train" : "val",
                    static_cast<long long>(k), static_cast<long long>(i));
      write_sequence(generate_sample(spec, k, i), out / name);
      (is_train ? train_rows : val_rows).emplace_back(name, k);
    }
  }
  GenerateSummary s;
  s.train_manifest = out / "train.manifest";
  s.val_manifest = out / "val.manifest";
  write_manifest(s.train_manifest, train_rows);
  write_manifest(s.val_manifest, val_rows);
  std::ofstream(out / "spec.txt") << spec.to_text();
  s.train_count = static_cast<std::int64_t>(train_rows.size());
  s.val_count = static_cast<std::int64_t>(val_rows.size());
  return s;
}

}  // namespace MGST_ABI
}  // namespace mgst
