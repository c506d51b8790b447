#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "mgst/data.hpp"
#include "test_util.hpp"

using namespace mgst;
using mgst::test::expect_code;
using mgst::test::TempDir;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Frame-mean feature vector of one sample, one entry per frame.
std::vector<double> frame_means(const Tensor& frames) {
  const std::int64_t t = frames.dim(1), hw = frames.dim(2) * frames.dim(3);
  std::vector<double> out(static_cast<std::size_t>(t));
  for (std::int64_t k = 0; k < t; ++k) {
    double s = 0;
    for (std::int64_t i = 0; i < hw; ++i) s += frames[static_cast<std::size_t>(k * hw + i)];
    out[static_cast<std::size_t>(k)] = s / double(hw);
  }
  return out;
}

/// Binary logistic regression by full-batch gradient descent on standardised
/// features; returns held-out accuracy.
double logistic_accuracy(const std::vector<std::vector<double>>& xtr, const std::vector<int>& ytr,
                         const std::vector<std::vector<double>>& xva, const std::vector<int>& yva) {
  const std::size_t d = xtr[0].size();
  std::vector<double> mu(d, 0), sd(d, 0);
  for (const auto& x : xtr)
    for (std::size_t j = 0; j < d; ++j) mu[j] += x[j] / double(xtr.size());
  for (const auto& x : xtr)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (x[j] - mu[j]) * (x[j] - mu[j]) / double(xtr.size());
  for (auto& s : sd) s = std::sqrt(s) + 1e-12;
  auto feat = [&](const std::vector<double>& x, std::size_t j) { return (x[j] - mu[j]) / sd[j]; };
  std::vector<double> w(d, 0);
  double b = 0;
  for (int it = 0; it < 500; ++it) {
    std::vector<double> gw(d, 0);
    double gb = 0;
    for (std::size_t n = 0; n < xtr.size(); ++n) {
      double z = b;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * feat(xtr[n], j);
      const double err = 1 / (1 + std::exp(-z)) - ytr[n];
      for (std::size_t j = 0; j < d; ++j) gw[j] += err * feat(xtr[n], j) / double(xtr.size());
      gb += err / double(xtr.size());
    }
    for (std::size_t j = 0; j < d; ++j) w[j] -= 0.5 * gw[j];
    b -= 0.5 * gb;
  }
  int correct = 0;
  for (std::size_t n = 0; n < xva.size(); ++n) {
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += w[j] * feat(xva[n], j);
    correct += (z > 0) == (yva[n] == 1);
  }
  return double(correct) / double(xva.size());
}

}  // namespace

TEST(DatasetSpec, DefaultStructure) {
  const DatasetSpec s = DatasetSpec::default_spec();
  EXPECT_EQ(s.num_classes(), 8);
  EXPECT_EQ(s.t, 8);
  EXPECT_EQ(s.h, 32);
  EXPECT_EQ(s.train_per_class, 120);
  EXPECT_EQ(s.val_per_class, 30);
  EXPECT_EQ(s.texture_pair_classes(), (std::vector<std::int64_t>{0, 1, 2, 3}));
  EXPECT_EQ(s.motion_pair_classes(), (std::vector<std::int64_t>{4, 5, 6, 7}));
  for (std::int64_t k : s.texture_pair_classes())
    EXPECT_EQ(s.classes[static_cast<std::size_t>(k)].motion, s.classes[static_cast<std::size_t>(k ^ 1)].motion);
  for (std::int64_t k : s.motion_pair_classes())
    EXPECT_EQ(s.classes[static_cast<std::size_t>(k)].texture, s.classes[static_cast<std::size_t>(k ^ 1)].texture);
}

TEST(DatasetSpec, TextRoundTripAndOverrides) {
  const DatasetSpec s = DatasetSpec::parse("seed = 9\nclass.1 = sweep-up checker\ntrain_per_class = 4\n");
  EXPECT_EQ(s.seed, 9u);
  EXPECT_EQ(s.train_per_class, 4);
  EXPECT_EQ(s.classes[1].motion, Motion::kSweepUp);
  EXPECT_EQ(DatasetSpec::parse(s.to_text()).to_text(), s.to_text());
  expect_code(ErrorCode::kConfig, [] { DatasetSpec::parse("class.12 = open stripes"); });
  expect_code(ErrorCode::kConfig, [] { DatasetSpec::parse("class.0 = spin stripes"); });
  expect_code(ErrorCode::kConfig, [] { DatasetSpec::parse("mystery = 1"); });
}

TEST(GenerateSample, Deterministic) {
  const DatasetSpec s = DatasetSpec::default_spec();
  for (std::int64_t k = 0; k < 8; ++k) {
    const SampleRecord a = generate_sample(s, k, 3), b = generate_sample(s, k, 3);
    EXPECT_TRUE(a.frames.identical(b.frames));
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.label, static_cast<std::uint32_t>(k));
    EXPECT_EQ(a.frames.shape(), (Shape{1, 8, 32, 32}));
  }
  EXPECT_FALSE(generate_sample(s, 0, 3).frames.identical(generate_sample(s, 0, 4).frames));
  DatasetSpec other = s;
  other.seed = 2;
  EXPECT_FALSE(generate_sample(s, 0, 3).frames.identical(generate_sample(other, 0, 3).frames));
}

TEST(GenerateSample, PixelsInUnitRange) {
  const DatasetSpec s = DatasetSpec::default_spec();
  for (std::int64_t i = 0; i < 100; ++i) {
    const SampleRecord r = generate_sample(s, i % 8, i);
    for (Real v : r.frames.values()) {
      ASSERT_GE(v, Real(0));
      ASSERT_LE(v, Real(1));
    }
  }
}

TEST(GenerateSample, RejectsUnknownClass) {
  expect_code(ErrorCode::kInvalidArgument, [] { generate_sample(DatasetSpec::default_spec(), 8, 0); });
}

TEST(GenerateSample, TexturePairsShareTheirTrajectory) {
  const DatasetSpec s = DatasetSpec::default_spec();
  const auto cls = s.texture_pair_classes();
  double worst = 0;
  for (std::size_t k = 0; k < cls.size(); k += 2)
    for (std::int64_t i = 0; i < 20; ++i) {
      const auto a = frame_centroids(generate_sample(s, cls[k], i).frames);
      const auto b = frame_centroids(generate_sample(s, cls[k + 1], i).frames);
      ASSERT_EQ(a.size(), b.size());
      for (std::size_t t = 0; t < a.size(); ++t)
        worst = std::max({worst, std::abs(a[t].first - b[t].first), std::abs(a[t].second - b[t].second)});
    }
  EXPECT_LT(worst, 0.5);
}

TEST(GenerateSample, MotionPairsFoolAFrameMeanClassifier) {
  // 400 train and 200 val samples per class, generated directly.
  const DatasetSpec s = DatasetSpec::default_spec();
  const auto cls = s.motion_pair_classes();
  for (std::size_t k = 0; k < cls.size(); k += 2) {
    std::vector<std::vector<double>> xtr, xva;
    std::vector<int> ytr, yva;
    for (int side = 0; side < 2; ++side) {
      for (std::int64_t i = 0; i < 600; ++i) {
        auto f = frame_means(generate_sample(s, cls[k + side], i).frames);
        (i < 400 ? xtr : xva).push_back(std::move(f));
        (i < 400 ? ytr : yva).push_back(side);
      }
    }
    const double acc = logistic_accuracy(xtr, ytr, xva, yva);
    EXPECT_NEAR(acc, 0.5, 0.1) << "classes " << cls[k] << "," << cls[k + 1];
  }
}

TEST(FlipHorizontal, IsAnInvolution) {
  const DatasetSpec s = DatasetSpec::default_spec();
  for (std::int64_t k = 0; k < 8; ++k) {
    const SampleRecord r = generate_sample(s, k, 5);
    const SampleRecord f = flip_horizontal(r);
    EXPECT_EQ(f.label, r.label);
    EXPECT_FALSE(f.frames.identical(r.frames));
    EXPECT_TRUE(flip_horizontal(f).frames.identical(r.frames));
  }
}

TEST(FlipHorizontal, ColumnSymmetricFrameIsFixed) {
  SampleRecord r;
  r.label = 3;
  r.frames = Tensor({1, 2, 3, 4});
  for (std::int64_t t = 0; t < 2; ++t)
    for (std::int64_t y = 0; y < 3; ++y)
      for (std::int64_t x = 0; x < 2; ++x) {
        const Real v = Real(0.1) * Real(t + 2 * y + 3 * x);
        r.frames.at({0, t, y, x}) = v;
        r.frames.at({0, t, y, 3 - x}) = v;
      }
  EXPECT_TRUE(flip_horizontal(r).frames.identical(r.frames));
}

TEST(FlipHorizontal, ReversesTheLeftRightTrajectory) {
  const DatasetSpec s = DatasetSpec::default_spec();
  ASSERT_EQ(s.classes[0].motion, Motion::kOscillateLR);
  const SampleRecord r = generate_sample(s, 0, 7);
  const auto a = frame_centroids(r.frames), b = frame_centroids(flip_horizontal(r).frames);
  const double mid = double(s.w - 1);
  double travel = 0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_NEAR(b[t].first, mid - a[t].first, 1e-4);
    EXPECT_NEAR(b[t].second, a[t].second, 1e-4);
    if (t) travel += (a[t].first - a[t - 1].first) * (b[t].first - b[t - 1].first);
  }
  EXPECT_LT(travel, 0);  // horizontal steps run in the opposite direction
}

TEST(SequenceFile, RoundTripIsBitExact) {
  TempDir dir("seq");
  const SampleRecord r = generate_sample(DatasetSpec::default_spec(), 6, 11);
  const auto p = dir.path() / "a.mgsq", q = dir.path() / "b.mgsq";
  write_sequence(r, p);
  const SampleRecord back = read_sequence(p);
  EXPECT_EQ(back.label, r.label);
  EXPECT_EQ(back.seed, r.seed);
  if (!kRealIsDouble) EXPECT_TRUE(back.frames.identical(r.frames));
  write_sequence(back, q);
  EXPECT_EQ(read_bytes(p), read_bytes(q));
}

TEST(SequenceFile, CorruptFilesGiveDistinctErrors) {
  TempDir dir("seqbad");
  const auto p = dir.path() / "a.mgsq";
  write_sequence(generate_sample(DatasetSpec::default_spec(), 1, 1), p);
  const std::string good = read_bytes(p);
  const auto bad = dir.path() / "bad.mgsq";

  std::string b = good;
  b[0] = 'X';
  write_bytes(bad, b);
  expect_code(ErrorCode::kBadMagic, [&] { read_sequence(bad); });

  b = good;
  b[4] = 9;  // version field
  write_bytes(bad, b);
  expect_code(ErrorCode::kVersionMismatch, [&] { read_sequence(bad); });

  write_bytes(bad, good.substr(0, good.size() - 17));  // payload shorter than declared extents
  expect_code(ErrorCode::kTruncatedPayload, [&] { read_sequence(bad); });

  write_bytes(bad, good.substr(0, 10));  // header cut
  expect_code(ErrorCode::kTruncatedPayload, [&] { read_sequence(bad); });

  write_bytes(bad, good + "junk");
  expect_code(ErrorCode::kExtentMismatch, [&] { read_sequence(bad); });
}

TEST(Corpus, BalancedDisjointAndLoadable) {
  TempDir dir("corpus");
  DatasetSpec s = DatasetSpec::default_spec();
  s.train_per_class = 5;
  s.val_per_class = 2;
  const GenerateSummary g = generate_corpus(s, dir.path());
  EXPECT_EQ(g.train_count, 40);
  EXPECT_EQ(g.val_count, 16);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "spec.txt"));
  const auto train = load_dataset(g.train_manifest), val = load_dataset(g.val_manifest);
  std::map<std::uint32_t, int> per_class;
  std::set<std::pair<std::uint32_t, std::uint64_t>> train_ids;
  for (const auto& r : train) {
    ++per_class[r.label];
    train_ids.insert({r.label, r.seed});
  }
  EXPECT_EQ(per_class.size(), 8u);
  for (const auto& [label, n] : per_class) EXPECT_EQ(n, 5) << label;
  for (const auto& r : val) EXPECT_FALSE(train_ids.count({r.label, r.seed})) << "val sample reused from train";
  // Files reproduce the generator exactly.
  EXPECT_TRUE(train[0].frames.identical(generate_sample(s, train[0].label, 0).frames) || kRealIsDouble);
}

TEST(Corpus, ManifestLabelMismatchRejected) {
  TempDir dir("manifest");
  const SampleRecord r = generate_sample(DatasetSpec::default_spec(), 2, 0);
  write_sequence(r, dir.path() / "x.mgsq");
  write_manifest(dir.path() / "m.manifest", {{"x.mgsq", 5}});
  expect_code(ErrorCode::kInvalidArgument, [&] { load_dataset(dir.path() / "m.manifest"); });
}

TEST(Corpus, MixedExtentsRejected) {
  TempDir dir("extents");
  DatasetSpec small = DatasetSpec::default_spec();
  small.h = small.w = 24;
  write_sequence(generate_sample(DatasetSpec::default_spec(), 0, 0), dir.path() / "a.mgsq");
  write_sequence(generate_sample(small, 1, 0), dir.path() / "b.mgsq");
  write_manifest(dir.path() / "m.manifest", {{"a.mgsq", 0}, {"b.mgsq", 1}});
  expect_code(ErrorCode::kExtentMismatch, [&] { load_dataset(dir.path() / "m.manifest"); });
}
