#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mgst/tensor.hpp"

namespace mgst {
inline namespace MGST_ABI {

/// Trajectory of the elliptical mouth shape over the sequence. Every program
/// maps to itself (up to a phase shift) under a horizontal flip.
enum class Motion { kOscillateLR, kOscillateUD, kSweepDown, kSweepUp, kOpen, kClose };
/// Fine aperture pattern anchored to the pixel grid, mean 0.5.
enum class Texture { kStripes, kChecker };

std::string_view motion_name(Motion m);
Motion parse_motion(std::string_view name);
std::string_view texture_name(Texture t);
Texture parse_texture(std::string_view name);

struct ClassProgram {
  Motion motion;
  Texture texture;
};

struct DatasetSpec {
  std::vector<ClassProgram> classes;
  std::int64_t t = 8, h = 32, w = 32;
  std::int64_t train_per_class = 120;
  std::int64_t val_per_class = 30;
  double noise = 0.05;
  std::uint64_t seed = 1;

  /// K=8: two texture pairs (oscillations) then two motion pairs.
  static DatasetSpec default_spec();
  /// key = value lines, '#' comments. `class.<k> = <motion> <texture>`
  /// overrides one class; `classes = K` resizes the table.
  static DatasetSpec parse(std::string_view text);
  static DatasetSpec load(const std::filesystem::path& path);
  std::string to_text() const;
  void validate() const;

  std::int64_t num_classes() const { return static_cast<std::int64_t>(classes.size()); }
  /// Classes of pairs (2k, 2k+1) sharing motion but not texture.
  std::vector<std::int64_t> texture_pair_classes() const;
  /// Classes of pairs (2k, 2k+1) sharing texture but not motion.
  std::vector<std::int64_t> motion_pair_classes() const;
};

struct SampleRecord {
  std::uint32_t label = 0;
  Tensor frames;  // [1,T,H,W] in [0,1]
  std::uint64_t seed = 0;
};

/// Pure function of (spec.seed, class_id, sample_index).
SampleRecord generate_sample(const DatasetSpec& spec, std::int64_t class_id, std::int64_t sample_index);
SampleRecord flip_horizontal(const SampleRecord& rec);

/// Brightness-weighted centroid (x, y) of each frame, weight |p - 0.5| where
/// it exceeds 0.1.
std::vector<std::pair<double, double>> frame_centroids(const Tensor& frames);

// "MGSQ" | u32 version | u32 label | u64 seed | MGT1 tensor
inline constexpr char kSequenceMagic[4] = {'M', 'G', 'S', 'Q'};
inline constexpr std::uint32_t kSequenceVersion = 1;

void write_sequence(const SampleRecord& rec, const std::filesystem::path& path);
/// Throws kBadMagic, kVersionMismatch, kTruncatedPayload or kExtentMismatch.
SampleRecord read_sequence(const std::filesystem::path& path);

struct ManifestEntry {
  std::filesystem::path path;  // as resolved against the manifest directory
  std::int64_t label = 0;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::int64_t>>& rows);

/// Loads every record of a manifest and checks the extents agree.
std::vector<SampleRecord> load_dataset(const std::filesystem::path& manifest);

struct GenerateSummary {
  std::filesystem::path train_manifest, val_manifest;
  std::int64_t train_count = 0, val_count = 0;
};

/// Writes <out>/{train,val}/*.mgsq, train.manifest, val.manifest, spec.txt.
/// Train indices are [0, n_train), val indices follow, so the two never meet.
GenerateSummary generate_corpus(const DatasetSpec& spec, const std::filesystem::path& out);

}  // namespace MGST_ABI
}  // namespace mgst
