#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mgst/kernels.hpp"
#include "mgst/ops.hpp"
#include "mgst/tensor.hpp"
#include "mgst/tensor_io.hpp"
#include "test_util.hpp"

using namespace mgst;
using mgst::test::expect_code;
using mgst::test::random_tensor;

namespace {

/// Direct-definition cross-correlation over [N,Cin,T,H,W], accumulated in f64.
Tensor direct_conv(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& s) {
  const std::int64_t n = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  const std::int64_t to = s.out_extent(0, x.dim(2)), ho = s.out_extent(1, x.dim(3)), wo = s.out_extent(2, x.dim(4));
  Tensor y({n, cout, to, ho, wo});
  for (std::int64_t in = 0; in < n; ++in)
    for (std::int64_t co = 0; co < cout; ++co)
      for (std::int64_t t = 0; t < to; ++t)
        for (std::int64_t i = 0; i < ho; ++i)
          for (std::int64_t j = 0; j < wo; ++j) {
            double acc = b.empty() ? 0.0 : b[static_cast<std::size_t>(co)];
            for (std::int64_t ci = 0; ci < cin; ++ci)
              for (std::int64_t kt = 0; kt < s.kernel[0]; ++kt)
                for (std::int64_t kh = 0; kh < s.kernel[1]; ++kh)
                  for (std::int64_t kw = 0; kw < s.kernel[2]; ++kw) {
                    const std::int64_t tt = t * s.stride[0] - s.pad[0] + kt;
                    const std::int64_t hh = i * s.stride[1] - s.pad[1] + kh;
                    const std::int64_t ww = j * s.stride[2] - s.pad[2] + kw;
                    if (tt < 0 || hh < 0 || ww < 0 || tt >= x.dim(2) || hh >= x.dim(3) || ww >= x.dim(4)) continue;
                    acc += static_cast<double>(x.at({in, ci, tt, hh, ww})) * w.at({co, ci, kt, kh, kw});
                  }
            y.at({in, co, t, i, j}) = static_cast<Real>(acc);
          }
  return y;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
  double worst = 0, scale = 0;
  for (std::size_t i = 0; i < a.size(); ++i) scale = std::max(scale, std::abs(static_cast<double>(b[i])));
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]) / std::max(scale, 1e-12));
  return worst;
}

}  // namespace

TEST(Tensor, ShapeAndAccess) {
  Tensor t({2, 3}, Real(1));
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2);
  t.at({1, 2}) = Real(5);
  EXPECT_EQ(t[5], Real(5));
  expect_code(ErrorCode::kInvalidArgument, [&] { (void)t.at({2, 0}); });
  expect_code(ErrorCode::kShapeMismatch, [] { Tensor({2, 2}, std::vector<Real>(3)); });
  expect_code(ErrorCode::kShapeMismatch, [&] { (void)t.reshaped({4}); });
}

TEST(Conv2d, IdentityKernel) {
  const Tensor x({1, 2, 2}, {1, -2, 3.5, 4});
  const Tensor y = conv2d(x, Tensor({1, 1, 1, 1}, {1}), Tensor({1}), ConvSpec::planar(1, 1));
  EXPECT_TRUE(y.identical(x));
}

TEST(Conv2d, AllOnesKernelDirectSum) {
  const Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor y = conv2d(x, Tensor::ones({1, 1, 2, 2}), Tensor({1}), ConvSpec::planar(2, 2));
  EXPECT_TRUE(y.identical(Tensor({1, 2, 2}, {12, 16, 24, 28})));
}

TEST(Conv2d, ZeroKernelGivesZero) {
  const Tensor x = random_tensor({2, 5, 5}, 1);
  const Tensor y = conv2d(x, Tensor({3, 2, 3, 3}), Tensor({3}), ConvSpec::planar(3, 3, 1, 1));
  for (Real v : y.values()) EXPECT_EQ(v, Real(0));
}

TEST(Conv2d, ShapeMismatchRejected) {
  const Tensor x = random_tensor({2, 5, 5}, 1);
  expect_code(ErrorCode::kShapeMismatch, [&] { conv2d(x, Tensor({3, 4, 3, 3}), Tensor({3}), ConvSpec::planar(3, 3)); });
  expect_code(ErrorCode::kShapeMismatch, [&] { conv2d(x, Tensor({3, 2, 3, 3}), Tensor({2}), ConvSpec::planar(3, 3)); });
}

TEST(Conv3d, IdentityAndAllOnes) {
  const Tensor x = random_tensor({1, 2, 3, 3}, 2);
  EXPECT_TRUE(conv3d(x, Tensor({1, 1, 1, 1, 1}, {1}), Tensor({1}), ConvSpec::cube(1)).identical(x));
  const Tensor y = conv3d(Tensor::ones({1, 2, 2, 2}), Tensor::ones({1, 1, 2, 2, 2}), Tensor({1}), ConvSpec::cube(2));
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], Real(8));
  const Tensor z = conv3d(Tensor({2, 3, 4, 4}), random_tensor({3, 2, 3, 3, 3}, 3), Tensor({3}), ConvSpec::cube(3, 1, 1));
  for (Real v : z.values()) EXPECT_EQ(v, Real(0));
}

TEST(Conv3d, MatchesDirectSummationOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> k(1, 3), st(1, 2), p(0, 1), c(1, 4);
    ConvSpec s{{k(rng), k(rng), k(rng)}, {st(rng), st(rng), st(rng)}, {p(rng), p(rng), p(rng)}};
    const std::int64_t cin = c(rng), cout = c(rng);
    const Tensor x = random_tensor({2, cin, 4, 6, 7}, 100 + trial);
    const Tensor w = random_tensor({cout, cin, s.kernel[0], s.kernel[1], s.kernel[2]}, 200 + trial);
    const Tensor b = random_tensor({cout}, 300 + trial);
    EXPECT_LT(max_rel_diff(conv3d_batched(x, w, b, s), direct_conv(x, w, b, s)), 1e-5) << "trial " << trial;
  }
}

TEST(Conv, LinearInInput) {
  const ConvSpec s = ConvSpec::cube(3, 1, 1);
  const Tensor x = random_tensor({1, 2, 3, 5, 5}, 4), y = random_tensor({1, 2, 3, 5, 5}, 5);
  const Tensor w = random_tensor({3, 2, 3, 3, 3}, 6), none;
  const Real a = Real(0.7), b = Real(-1.3);
  const Tensor lhs = conv3d_batched(add(scale(x, a), scale(y, b)), w, none, s);
  const Tensor rhs = add(scale(conv3d_batched(x, w, none, s), a), scale(conv3d_batched(y, w, none, s), b));
  EXPECT_LT(max_rel_diff(lhs, rhs), 1e-5);
}

TEST(Conv, Conv2dEqualsConv3dWithUnitTime) {
  const Tensor x = random_tensor({2, 5, 6}, 8), w = random_tensor({3, 2, 3, 3}, 9), b = random_tensor({3}, 10);
  const ConvSpec s = ConvSpec::planar(3, 3, 2, 1);
  const Tensor y2 = conv2d(x, w, b, s);
  const Tensor y3 = conv3d(x.reshaped({2, 1, 5, 6}), w.reshaped({3, 2, 1, 3, 3}), b, s);
  EXPECT_TRUE(y2.identical(y3.reshaped(y2.shape())));
}

TEST(ConvSpec, OutputFormulaProperty) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::int64_t> k(1, 7), st(1, 4), p(0, 3), in(1, 40);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const ConvSpec s{{k(rng), k(rng), k(rng)}, {st(rng), st(rng), st(rng)}, {p(rng), p(rng), p(rng)}};
    const std::int64_t extent = in(rng);
    for (int axis = 0; axis < 3; ++axis) {
      const auto au = static_cast<std::size_t>(axis);
      if (extent + 2 * s.pad[au] < s.kernel[au]) {
        expect_code(ErrorCode::kShapeMismatch, [&] { (void)s.out_extent(axis, extent); });
        continue;
      }
      EXPECT_EQ(s.out_extent(axis, extent), (extent + 2 * s.pad[au] - s.kernel[au]) / s.stride[au] + 1);
      ++checked;
    }
  }
  EXPECT_GT(checked, 300);
}

TEST(MaxPool, Examples) {
  EXPECT_TRUE(maxpool(Tensor({2, 2}, {1, 2, 3, 4}), ConvSpec::planar(2, 2, 2)).identical(Tensor({1, 1}, {4})));
  EXPECT_TRUE(
      maxpool(Tensor({1, 4}, {1, 2, 3, 4}), ConvSpec{{1, 1, 2}, {1, 1, 2}, {0, 0, 0}}).identical(Tensor({1, 2}, {2, 4})));
  const Tensor c({1, 1, 5, 5}, Real(-3));
  const Tensor pooled = maxpool(c, ConvSpec{{1, 3, 3}, {1, 2, 2}, {0, 1, 1}});
  for (Real v : pooled.values()) EXPECT_EQ(v, Real(-3));
}

TEST(MaxPool, PaddingNeverWinsAndWindowBound) {
  const Tensor x = random_tensor({2, 3, 7, 7}, 12);
  const ConvSpec s{{1, 3, 3}, {1, 2, 2}, {0, 1, 1}};
  const Tensor y = maxpool(add(x, Tensor(x.shape(), Real(-10))), s);
  for (Real v : y.values()) EXPECT_LT(v, Real(-8));
  const MaxPoolResult r = maxpool_with_argmax(x, s);
  for (std::size_t i = 0; i < r.out.size(); ++i) EXPECT_EQ(r.out[i], x[static_cast<std::size_t>(r.argmax[i])]);
  expect_code(ErrorCode::kInvalidArgument, [] { maxpool(Tensor({1, 2, 2}), ConvSpec::planar(3, 3)); });
}

TEST(MaxPool, TiesRouteToFirstIndex) {
  const MaxPoolResult r = maxpool_with_argmax(Tensor({2, 2}, Real(1)), ConvSpec::planar(2, 2, 2));
  ASSERT_EQ(r.argmax.size(), 1u);
  EXPECT_EQ(r.argmax[0], 0);
}

TEST(Upsample, Examples) {
  const Tensor one({1, 1}, {Real(2.5)});
  const Tensor expanded = upsample_nearest(one, 3, 4);
  EXPECT_EQ(expanded.size(), 12u);
  for (Real v : expanded.values()) EXPECT_EQ(v, Real(2.5));
  const Tensor x = random_tensor({2, 3, 3}, 13);
  EXPECT_TRUE(upsample_nearest(x, 3, 3).identical(x));
  const Tensor y = upsample_nearest(Tensor({2, 2}, {1, 2, 3, 4}), 4, 4);
  EXPECT_TRUE(y.identical(Tensor({4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4})));
  expect_code(ErrorCode::kInvalidArgument, [&] { upsample_nearest(x, 2, 3); });
}

TEST(Elementwise, Examples) {
  EXPECT_EQ(sigmoid(Real(0)), Real(0.5));
  EXPECT_EQ(mgst::tanh(Tensor::zeros({1}))[0], Real(0));
  EXPECT_NEAR(sigmoid(static_cast<Real>(std::log(3.0))), 0.75, 1e-6);
  const Tensor a = random_tensor({3, 4}, 14);
  EXPECT_TRUE(hadamard(a, Tensor::ones(a.shape())).identical(a));
  expect_code(ErrorCode::kShapeMismatch, [&] { add(a, Tensor({4, 3})); });
  const Tensor y = linear(Tensor({2}, {1, 2}), Tensor({2, 2}, {1, 0, 1, 1}), Tensor({2}, {0.5, 0}));
  EXPECT_TRUE(y.identical(Tensor({2}, {1.5, 3})));
}

TEST(Elementwise, SigmoidSymmetryAndRange) {
  for (int i = -300; i <= 300; ++i) {
    const Real x = static_cast<Real>(i) / Real(10);
    const Real s = sigmoid(x);
    EXPECT_NEAR(static_cast<double>(s) + sigmoid(-x), 1.0, 1e-6);
    EXPECT_GT(s, Real(0));
    EXPECT_LT(s, Real(1));
  }
}

TEST(TensorIo, RoundTripIsByteExact) {
  const Tensor t = random_tensor({2, 3, 4}, 15);
  std::stringstream a;
  write_tensor(a, t);
  const std::string bytes = a.str();
  EXPECT_EQ(bytes.substr(0, 4), "MGT1");
  EXPECT_EQ(bytes.size(), 4u + 4u + 3u * 4u + t.size() * 4u);
  std::stringstream in(bytes);
  const Tensor back = read_tensor(in);
  EXPECT_TRUE(back.identical(t));
  std::stringstream b;
  write_tensor(b, back);
  EXPECT_EQ(b.str(), bytes);
}

TEST(TensorIo, CorruptInputsRejected) {
  std::stringstream a;
  write_tensor(a, random_tensor({2, 2}, 16));
  std::string bytes = a.str();
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream s1(bad);
  expect_code(ErrorCode::kBadMagic, [&] { read_tensor(s1); });
  std::stringstream s2(bytes.substr(0, bytes.size() - 3));
  expect_code(ErrorCode::kTruncatedPayload, [&] { read_tensor(s2); });
}

TEST(Kernels, ScalarAndAvx2Agree) {
  if (!kernels::avx2_supported()) GTEST_SKIP() << "no AVX2 on this machine or build";
  const kernels::Backend saved = kernels::backend();
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::int64_t> dim(1, 70);
  for (int trial = 0; trial < 40; ++trial) {
    const bool ta = trial % 2, tb = (trial / 2) % 2;
    const std::int64_t m = dim(rng), n = dim(rng), k = dim(rng);
    const Tensor a = random_tensor({m * k}, 400 + trial), b = random_tensor({k * n}, 500 + trial);
    const Tensor c0 = random_tensor({m * n}, 600 + trial);
    Tensor cs = c0, cv = c0;
    const std::int64_t lda = ta ? m : k, ldb = tb ? k : n;
    kernels::set_backend(kernels::Backend::kScalar);
    kernels::gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, trial % 3 == 0, cs.data(), n);
    kernels::set_backend(kernels::Backend::kAvx2);
    kernels::gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, trial % 3 == 0, cv.data(), n);
    for (std::size_t i = 0; i < cs.size(); ++i)
      EXPECT_NEAR(cs[i], cv[i], 1e-5 * std::sqrt(static_cast<double>(k)) * 4) << "trial " << trial << " at " << i;
  }
  for (std::int64_t n : {1, 7, 8, 15, 16, 33, 1000}) {
    const Tensor x = random_tensor({n}, 700 + n), y = random_tensor({n}, 800 + n);
    Tensor outs[2][4];
    double dots[2], sums[2];
    for (int v = 0; v < 2; ++v) {
      kernels::set_backend(v ? kernels::Backend::kAvx2 : kernels::Backend::kScalar);
      for (auto& o : outs[v]) o = Tensor({n});
      kernels::add(n, x.data(), y.data(), outs[v][0].data());
      kernels::mul(n, x.data(), y.data(), outs[v][1].data());
      kernels::relu(n, x.data(), outs[v][2].data());
      outs[v][3] = y;
      kernels::axpy(n, Real(0.5), x.data(), outs[v][3].data());
      dots[v] = kernels::dot(n, x.data(), y.data());
      sums[v] = kernels::sum(n, x.data());
    }
    for (int j = 0; j < 3; ++j) EXPECT_TRUE(outs[0][j].identical(outs[1][j])) << "op " << j << " n=" << n;
    for (std::size_t i = 0; i < outs[0][3].size(); ++i) EXPECT_NEAR(outs[0][3][i], outs[1][3][i], 1e-6);
    EXPECT_NEAR(dots[0], dots[1], 1e-4);
    EXPECT_NEAR(sums[0], sums[1], 1e-4);
  }
  kernels::set_backend(saved);
}

TEST(Kernels, ConvolutionAgreesAcrossBackends) {
  if (!kernels::avx2_supported()) GTEST_SKIP() << "no AVX2 on this machine or build";
  const kernels::Backend saved = kernels::backend();
  const Tensor x = random_tensor({2, 8, 3, 11, 11}, 18), w = random_tensor({16, 8, 3, 3, 3}, 19);
  const Tensor b = random_tensor({16}, 20);
  const ConvSpec s = ConvSpec::cube(3, 1, 1);
  kernels::set_backend(kernels::Backend::kScalar);
  const Tensor ys = conv3d_batched(x, w, b, s);
  kernels::set_backend(kernels::Backend::kAvx2);
  const Tensor yv = conv3d_batched(x, w, b, s);
  kernels::set_backend(saved);
  EXPECT_LT(max_rel_diff(yv, ys), 1e-5);
}
