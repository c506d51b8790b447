#include "mgst/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "mgst/kernels.hpp"

namespace mgst {
inline namespace MGST_ABI {
namespace {

constexpr const char* kAxisName[3] = {"time", "height", "width"};

// Column-buffer budget per chunk, in elements.
constexpr std::int64_t kColBudget = std::int64_t{1} << 21;

struct Geometry {
  std::int64_t n, ci, t, h, w;
  std::int64_t co;
  std::int64_t to, ho, wo;
  ConvSpec spec;

  std::int64_t window() const { return spec.kernel[0] * spec.kernel[1] * spec.kernel[2]; }
  std::int64_t k() const { return ci * window(); }
  std::int64_t p() const { return to * ho * wo; }
};

Geometry conv_geometry(const Tensor& x, const Tensor& w, const ConvSpec& spec) {
  require(x.rank() == 5, ErrorCode::kShapeMismatch, "conv: input must be [N,C,T,H,W], got " + shape_str(x.shape()));
  require(w.rank() == 5, ErrorCode::kShapeMismatch,
          "conv: weights must be [Cout,Cin,kt,kh,kw], got " + shape_str(w.shape()));
  spec.validate();
  require(w.dim(1) == x.dim(1), ErrorCode::kShapeMismatch,
          "conv: input channel axis has " + std::to_string(x.dim(1)) + " but weights expect " +
              std::to_string(w.dim(1)));
  for (int a = 0; a < 3; ++a)
    require(w.dim(2 + a) == spec.kernel[a], ErrorCode::kShapeMismatch,
            std::string("conv: kernel ") + kAxisName[a] + " axis of weights is " + std::to_string(w.dim(2 + a)) +
                " but spec says " + std::to_string(spec.kernel[a]));
  Geometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4), w.dim(0), 0, 0, 0, spec};
  g.to = spec.out_extent(0, g.t);
  g.ho = spec.out_extent(1, g.h);
  g.wo = spec.out_extent(2, g.w);
  return g;
}

// A run of output columns sharing (n, ot, oh).
struct Segment {
  std::int64_t n, ot, oh, ow0, ow1, col;
};

std::vector<Segment> segments(const Geometry& g, std::int64_t g0, std::int64_t g1) {
  std::vector<Segment> segs;
  const std::int64_t p = g.p();
  std::int64_t cur = g0;
  while (cur < g1) {
    const std::int64_t n = cur / p;
    const std::int64_t rem = cur % p;
    const std::int64_t row = rem / g.wo;
    const std::int64_t ow0 = rem % g.wo;
    const std::int64_t len = std::min(g.wo - ow0, g1 - cur);
    segs.push_back({n, row / g.ho, row % g.ho, ow0, ow0 + len, cur - g0});
    cur += len;
  }
  return segs;
}

void im2col(const Geometry& g, const Real* x, const std::vector<Segment>& segs, std::int64_t cols, Real* col) {
  const auto& s = g.spec;
  const std::int64_t win = g.window();
  for (std::int64_t r = 0; r < g.k(); ++r) {
    const std::int64_t c = r / win;
    const std::int64_t kr = r % win;
    const std::int64_t dt = kr / (s.kernel[1] * s.kernel[2]);
    const std::int64_t dy = (kr / s.kernel[2]) % s.kernel[1];
    const std::int64_t dx = kr % s.kernel[2];
    Real* dst = col + r * cols;
    for (const auto& sg : segs) {
      Real* out = dst + sg.col;
      const std::int64_t len = sg.ow1 - sg.ow0;
      const std::int64_t it = sg.ot * s.stride[0] - s.pad[0] + dt;
      const std::int64_t iy = sg.oh * s.stride[1] - s.pad[1] + dy;
      if (it < 0 || it >= g.t || iy < 0 || iy >= g.h) {
        std::fill(out, out + len, Real(0));
        continue;
      }
      const Real* src = x + (((sg.n * g.ci + c) * g.t + it) * g.h + iy) * g.w;
      for (std::int64_t ow = sg.ow0; ow < sg.ow1; ++ow) {
        const std::int64_t ix = ow * s.stride[2] - s.pad[2] + dx;
        out[ow - sg.ow0] = (ix >= 0 && ix < g.w) ? src[ix] : Real(0);
      }
    }
  }
}

void col2im(const Geometry& g, const Real* col, const std::vector<Segment>& segs, std::int64_t cols, Real* gx) {
  const auto& s = g.spec;
  const std::int64_t win = g.window();
  for (std::int64_t r = 0; r < g.k(); ++r) {
    const std::int64_t c = r / win;
    const std::int64_t kr = r % win;
    const std::int64_t dt = kr / (s.kernel[1] * s.kernel[2]);
    const std::int64_t dy = (kr / s.kernel[2]) % s.kernel[1];
    const std::int64_t dx = kr % s.kernel[2];
    const Real* src = col + r * cols;
    for (const auto& sg : segs) {
      const std::int64_t it = sg.ot * s.stride[0] - s.pad[0] + dt;
      const std::int64_t iy = sg.oh * s.stride[1] - s.pad[1] + dy;
      if (it < 0 || it >= g.t || iy < 0 || iy >= g.h) continue;
      Real* dst = gx + (((sg.n * g.ci + c) * g.t + it) * g.h + iy) * g.w;
      const Real* in = src + sg.col;
      for (std::int64_t ow = sg.ow0; ow < sg.ow1; ++ow) {
        const std::int64_t ix = ow * s.stride[2] - s.pad[2] + dx;
        if (ix >= 0 && ix < g.w) dst[ix] += in[ow - sg.ow0];
      }
    }
  }
}

std::int64_t chunk_columns(const Geometry& g) {
  const std::int64_t total = g.n * g.p();
  const std::int64_t by_budget = std::max<std::int64_t>(64, kColBudget / std::max<std::int64_t>(1, g.k()));
  return std::min(total, by_budget);
}

// Runs of columns inside one sample, so GEMM can address the output in place.
template <class F>
void for_each_sample_run(const Geometry& g, std::int64_t g0, std::int64_t g1, F&& f) {
  const std::int64_t p = g.p();
  std::int64_t cur = g0;
  while (cur < g1) {
    const std::int64_t n = cur / p;
    const std::int64_t p0 = cur % p;
    const std::int64_t len = std::min(p - p0, g1 - cur);
    f(n, p0, len, cur - g0);
    cur += len;
  }
}

struct PoolView {
  std::int64_t b, t, h, w;
  Shape out_shape;
  std::int64_t to, ho, wo;
};

PoolView pool_view(const Tensor& x, const ConvSpec& spec, const char* what) {
  spec.validate();
  require(x.rank() >= 1, ErrorCode::kShapeMismatch, std::string(what) + ": input must have rank >= 1");
  PoolView v{1, 1, 1, 1, {}, 0, 0, 0};
  const int r = x.rank();
  v.w = x.dim(r - 1);
  if (r >= 2) v.h = x.dim(r - 2);
  if (r >= 3) v.t = x.dim(r - 3);
  for (int i = 0; i < r - 3; ++i) v.b *= x.dim(i);
  const std::int64_t ext[3] = {v.t, v.h, v.w};
  for (int a = 0; a < 3; ++a)
    require(ext[a] + 2 * spec.pad[a] >= spec.kernel[a], ErrorCode::kInvalidArgument,
            std::string(what) + ": window larger than padded input along " + kAxisName[a] + " axis");
  v.to = spec.out_extent(0, v.t);
  v.ho = spec.out_extent(1, v.h);
  v.wo = spec.out_extent(2, v.w);
  v.out_shape.assign(x.shape().begin(), x.shape().end());
  v.out_shape[static_cast<std::size_t>(r - 1)] = v.wo;
  if (r >= 2) v.out_shape[static_cast<std::size_t>(r - 2)] = v.ho;
  if (r >= 3) v.out_shape[static_cast<std::size_t>(r - 3)] = v.to;
  return v;
}

}  // namespace

std::int64_t ConvSpec::out_extent(int axis, std::int64_t in) const {
  const std::int64_t span = in + 2 * pad[axis] - kernel[axis];
  require(span >= 0, ErrorCode::kShapeMismatch,
          std::string("window does not fit along ") + kAxisName[axis] + " axis: extent " + std::to_string(in) +
              ", pad " + std::to_string(pad[axis]) + ", kernel " + std::to_string(kernel[axis]));
  return span / stride[axis] + 1;
}

void ConvSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    require(kernel[a] >= 1, ErrorCode::kInvalidArgument, std::string("kernel extent < 1 on ") + kAxisName[a]);
    require(stride[a] >= 1, ErrorCode::kInvalidArgument, std::string("stride < 1 on ") + kAxisName[a]);
    require(pad[a] >= 0, ErrorCode::kInvalidArgument, std::string("negative padding on ") + kAxisName[a]);
  }
}

Tensor conv3d_batched(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvSpec& spec) {
  const Geometry g = conv_geometry(x, w, spec);
  require(bias.empty() || (bias.rank() == 1 && bias.dim(0) == g.co), ErrorCode::kShapeMismatch,
          "conv: bias must be [Cout]");
  Tensor y({g.n, g.co, g.to, g.ho, g.wo});
  const std::int64_t total = g.n * g.p();
  const std::int64_t chunk = chunk_columns(g);
  const std::int64_t kk = g.k();
  std::vector<Real> col(static_cast<std::size_t>(kk * chunk));
  std::vector<Real> tmp;
  for (std::int64_t g0 = 0; g0 < total; g0 += chunk) {
    const std::int64_t g1 = std::min(total, g0 + chunk);
    const std::int64_t cols = g1 - g0;
    im2col(g, x.data(), segments(g, g0, g1), cols, col.data());
    const bool single = (g0 / g.p()) == ((g1 - 1) / g.p());
    if (single) {
      const std::int64_t n = g0 / g.p();
      Real* out = y.data() + n * g.co * g.p() + (g0 % g.p());
      kernels::gemm(false, false, g.co, cols, kk, w.data(), kk, col.data(), cols, false, out, g.p());
      if (!bias.empty())
        for (std::int64_t c = 0; c < g.co; ++c) {
          Real* row = out + c * g.p();
          for (std::int64_t j = 0; j < cols; ++j) row[j] += bias[static_cast<std::size_t>(c)];
        }
      continue;
    }
    tmp.resize(static_cast<std::size_t>(g.co * cols));
    kernels::gemm(false, false, g.co, cols, kk, w.data(), kk, col.data(), cols, false, tmp.data(), cols);
    for_each_sample_run(g, g0, g1, [&](std::int64_t n, std::int64_t p0, std::int64_t len, std::int64_t off) {
      for (std::int64_t c = 0; c < g.co; ++c) {
        const Real* src = tmp.data() + c * cols + off;
        Real* dst = y.data() + (n * g.co + c) * g.p() + p0;
        const Real b = bias.empty() ? Real(0) : bias[static_cast<std::size_t>(c)];
        for (std::int64_t j = 0; j < len; ++j) dst[j] = bias.empty() ? src[j] : src[j] + b;
      }
    });
  }
  return y;
}

void conv3d_batched_backward(const Tensor& x, const Tensor& w, const ConvSpec& spec, const Tensor& gy, Tensor* gx,
                             Tensor* gw, Tensor* gb) {
  const Geometry g = conv_geometry(x, w, spec);
  require(gy.shape() == Shape({g.n, g.co, g.to, g.ho, g.wo}), ErrorCode::kShapeMismatch,
          "conv backward: output gradient shape " + shape_str(gy.shape()));
  if (gb) {
    for (std::int64_t c = 0; c < g.co; ++c) {
      double s = 0.0;
      for (std::int64_t n = 0; n < g.n; ++n) s += kernels::sum(g.p(), gy.data() + (n * g.co + c) * g.p());
      (*gb)[static_cast<std::size_t>(c)] += static_cast<Real>(s);
    }
  }
  if (!gx && !gw) return;
  const std::int64_t total = g.n * g.p();
  const std::int64_t chunk = chunk_columns(g);
  const std::int64_t kk = g.k();
  std::vector<Real> col(static_cast<std::size_t>(kk * chunk));
  std::vector<Real> gcol;
  if (gx) gcol.resize(col.size());
  std::vector<Real> gather;
  for (std::int64_t g0 = 0; g0 < total; g0 += chunk) {
    const std::int64_t g1 = std::min(total, g0 + chunk);
    const std::int64_t cols = g1 - g0;
    const auto segs = segments(g, g0, g1);
    const Real* gy_chunk = nullptr;
    std::int64_t ld_gy = cols;
    if ((g0 / g.p()) == ((g1 - 1) / g.p())) {
      gy_chunk = gy.data() + (g0 / g.p()) * g.co * g.p() + (g0 % g.p());
      ld_gy = g.p();
    } else {
      gather.resize(static_cast<std::size_t>(g.co * cols));
      for_each_sample_run(g, g0, g1, [&](std::int64_t n, std::int64_t p0, std::int64_t len, std::int64_t off) {
        for (std::int64_t c = 0; c < g.co; ++c)
          std::memcpy(gather.data() + c * cols + off, gy.data() + (n * g.co + c) * g.p() + p0,
                      static_cast<std::size_t>(len) * sizeof(Real));
      });
      gy_chunk = gather.data();
    }
    if (gw) {
      im2col(g, x.data(), segs, cols, col.data());
      kernels::gemm(false, true, g.co, kk, cols, gy_chunk, ld_gy, col.data(), cols, true, gw->data(), kk);
    }
    if (gx) {
      kernels::gemm(true, false, kk, cols, g.co, w.data(), kk, gy_chunk, ld_gy, false, gcol.data(), cols);
      col2im(g, gcol.data(), segs, cols, gx->data());
    }
  }
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec) {
  require(input.rank() == 3, ErrorCode::kShapeMismatch, "conv2d: input must be [Cin,H,W]");
  require(weights.rank() == 4, ErrorCode::kShapeMismatch, "conv2d: weights must be [Cout,Cin,kh,kw]");
  require(spec.kernel[0] == 1 && spec.stride[0] == 1 && spec.pad[0] == 0, ErrorCode::kInvalidArgument,
          "conv2d: spec must be planar (time kernel 1, stride 1, pad 0)");
  const Tensor x = input.reshaped({1, input.dim(0), 1, input.dim(1), input.dim(2)});
  const Tensor w = weights.reshaped({weights.dim(0), weights.dim(1), 1, weights.dim(2), weights.dim(3)});
  Tensor y = conv3d_batched(x, w, bias, spec);
  return std::move(y).reshaped({y.dim(1), y.dim(3), y.dim(4)});
}

Tensor conv3d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec) {
  require(input.rank() == 4, ErrorCode::kShapeMismatch, "conv3d: input must be [Cin,T,H,W]");
  const Tensor x = input.reshaped({1, input.dim(0), input.dim(1), input.dim(2), input.dim(3)});
  Tensor y = conv3d_batched(x, weights, bias, spec);
  return std::move(y).reshaped({y.dim(1), y.dim(2), y.dim(3), y.dim(4)});
}

MaxPoolResult maxpool_with_argmax(const Tensor& x, const ConvSpec& spec) {
  const PoolView v = pool_view(x, spec, "maxpool");
  for (int a = 0; a < 3; ++a)
    require(spec.pad[a] < spec.kernel[a], ErrorCode::kInvalidArgument,
            std::string("maxpool: padding must be smaller than the window on ") + kAxisName[a]);
  MaxPoolResult r{Tensor(v.out_shape), {}};
  r.argmax.resize(r.out.size());
  std::size_t o = 0;
  for (std::int64_t b = 0; b < v.b; ++b)
    for (std::int64_t ot = 0; ot < v.to; ++ot)
      for (std::int64_t oh = 0; oh < v.ho; ++oh)
        for (std::int64_t ow = 0; ow < v.wo; ++ow, ++o) {
          Real best = -std::numeric_limits<Real>::infinity();
          std::int64_t best_idx = -1;
          for (std::int64_t dt = 0; dt < spec.kernel[0]; ++dt) {
            const std::int64_t it = ot * spec.stride[0] - spec.pad[0] + dt;
            if (it < 0 || it >= v.t) continue;
            for (std::int64_t dy = 0; dy < spec.kernel[1]; ++dy) {
              const std::int64_t iy = oh * spec.stride[1] - spec.pad[1] + dy;
              if (iy < 0 || iy >= v.h) continue;
              for (std::int64_t dx = 0; dx < spec.kernel[2]; ++dx) {
                const std::int64_t ix = ow * spec.stride[2] - spec.pad[2] + dx;
                if (ix < 0 || ix >= v.w) continue;
                const std::int64_t idx = ((b * v.t + it) * v.h + iy) * v.w + ix;
                const Real val = x[static_cast<std::size_t>(idx)];
                if (best_idx < 0 || val > best) {
                  best = val;
                  best_idx = idx;
                }
              }
            }
          }
          r.out[o] = best;
          r.argmax[o] = best_idx;
        }
  return r;
}

Tensor maxpool(const Tensor& x, const ConvSpec& spec) { return maxpool_with_argmax(x, spec).out; }

void maxpool_backward(const std::vector<std::int64_t>& argmax, const Tensor& gy, Tensor& gx) {
  require(argmax.size() == gy.size(), ErrorCode::kShapeMismatch, "maxpool backward: argmax/gradient size mismatch");
  for (std::size_t i = 0; i < gy.size(); ++i) gx[static_cast<std::size_t>(argmax[i])] += gy[i];
}

Tensor avgpool(const Tensor& x, const ConvSpec& spec) {
  require(spec.pad == std::array<std::int64_t, 3>{0, 0, 0}, ErrorCode::kInvalidArgument,
          "avgpool: padding is not supported");
  const PoolView v = pool_view(x, spec, "avgpool");
  Tensor y(v.out_shape);
  const Real inv = Real(1) / static_cast<Real>(spec.kernel[0] * spec.kernel[1] * spec.kernel[2]);
  std::size_t o = 0;
  for (std::int64_t b = 0; b < v.b; ++b)
    for (std::int64_t ot = 0; ot < v.to; ++ot)
      for (std::int64_t oh = 0; oh < v.ho; ++oh)
        for (std::int64_t ow = 0; ow < v.wo; ++ow, ++o) {
          double s = 0.0;
          for (std::int64_t dt = 0; dt < spec.kernel[0]; ++dt)
            for (std::int64_t dy = 0; dy < spec.kernel[1]; ++dy)
              for (std::int64_t dx = 0; dx < spec.kernel[2]; ++dx) {
                const std::int64_t it = ot * spec.stride[0] + dt;
                const std::int64_t iy = oh * spec.stride[1] + dy;
                const std::int64_t ix = ow * spec.stride[2] + dx;
                s += x[static_cast<std::size_t>(((b * v.t + it) * v.h + iy) * v.w + ix)];
              }
          y[o] = static_cast<Real>(s) * inv;
        }
  return y;
}

void avgpool_backward(const Shape& x_shape, const ConvSpec& spec, const Tensor& gy, Tensor& gx) {
  const PoolView v = pool_view(gx, spec, "avgpool backward");
  require(gx.shape() == x_shape && gy.shape() == v.out_shape, ErrorCode::kShapeMismatch,
          "avgpool backward: shape mismatch");
  const Real inv = Real(1) / static_cast<Real>(spec.kernel[0] * spec.kernel[1] * spec.kernel[2]);
  std::size_t o = 0;
  for (std::int64_t b = 0; b < v.b; ++b)
    for (std::int64_t ot = 0; ot < v.to; ++ot)
      for (std::int64_t oh = 0; oh < v.ho; ++oh)
        for (std::int64_t ow = 0; ow < v.wo; ++ow, ++o) {
          const Real g = gy[o] * inv;
          for (std::int64_t dt = 0; dt < spec.kernel[0]; ++dt)
            for (std::int64_t dy = 0; dy < spec.kernel[1]; ++dy)
              for (std::int64_t dx = 0; dx < spec.kernel[2]; ++dx) {
                const std::int64_t it = ot * spec.stride[0] + dt;
                const std::int64_t iy = oh * spec.stride[1] + dy;
                const std::int64_t ix = ow * spec.stride[2] + dx;
                gx[static_cast<std::size_t>(((b * v.t + it) * v.h + iy) * v.w + ix)] += g;
              }
        }
}

Tensor upsample_nearest(const Tensor& x, std::int64_t h2, std::int64_t w2) {
  require(x.rank() >= 2, ErrorCode::kShapeMismatch, "upsample: input must have rank >= 2");
  const std::int64_t h = x.dim(-2), w = x.dim(-1);
  require(h2 >= h && w2 >= w, ErrorCode::kInvalidArgument,
          "upsample: target " + std::to_string(h2) + "x" + std::to_string(w2) + " is smaller than source " +
              std::to_string(h) + "x" + std::to_string(w));
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = h2;
  out_shape[out_shape.size() - 1] = w2;
  Tensor y(out_shape);
  const std::int64_t planes = static_cast<std::int64_t>(x.size()) / std::max<std::int64_t>(1, h * w);
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t dy = 0; dy < h2; ++dy) {
      const std::int64_t sy = dy * h / h2;
      for (std::int64_t dx = 0; dx < w2; ++dx) {
        const std::int64_t sx = dx * w / w2;
        y[static_cast<std::size_t>((p * h2 + dy) * w2 + dx)] = x[static_cast<std::size_t>((p * h + sy) * w + sx)];
      }
    }
  return y;
}

void upsample_nearest_backward(const Tensor& gy, Tensor& gx) {
  const std::int64_t h = gx.dim(-2), w = gx.dim(-1), h2 = gy.dim(-2), w2 = gy.dim(-1);
  const std::int64_t planes = static_cast<std::int64_t>(gx.size()) / std::max<std::int64_t>(1, h * w);
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t dy = 0; dy < h2; ++dy) {
      const std::int64_t sy = dy * h / h2;
      for (std::int64_t dx = 0; dx < w2; ++dx) {
        const std::int64_t sx = dx * w / w2;
        gx[static_cast<std::size_t>((p * h + sy) * w + sx)] += gy[static_cast<std::size_t>((p * h2 + dy) * w2 + dx)];
      }
    }
}

Real sigmoid(Real x) {
  Real s;
  if (x >= Real(0)) {
    s = Real(1) / (Real(1) + std::exp(-x));
  } else {
    const Real e = std::exp(x);
    s = e / (Real(1) + e);
  }
  constexpr Real lo = std::numeric_limits<Real>::min();
  constexpr Real hi = Real(1) - std::numeric_limits<Real>::epsilon() / Real(2);
  return std::clamp(s, lo, hi);
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

Tensor tanh(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  kernels::relu(static_cast<std::int64_t>(x.size()), x.data(), y.data());
  return y;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor y(a.shape());
  kernels::mul(static_cast<std::int64_t>(a.size()), a.data(), b.data(), y.data());
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor y(a.shape());
  kernels::add(static_cast<std::int64_t>(a.size()), a.data(), b.data(), y.data());
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] - b[i];
  return y;
}

Tensor scale(const Tensor& a, Real s) {
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * s;
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 1 && w.rank() == 2 && b.rank() == 1, ErrorCode::kShapeMismatch,
          "linear: expects x [N], W [M,N], b [M]");
  require(w.dim(1) == x.dim(0), ErrorCode::kShapeMismatch,
          "linear: weight input axis (1) has " + std::to_string(w.dim(1)) + ", x has " + std::to_string(x.dim(0)));
  require(w.dim(0) == b.dim(0), ErrorCode::kShapeMismatch, "linear: bias length differs from weight output axis (0)");
  Tensor y({w.dim(0)});
  kernels::gemm(false, false, w.dim(0), 1, w.dim(1), w.data(), w.dim(1), x.data(), 1, false, y.data(), 1);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

}  // namespace MGST_ABI
}  // namespace mgst
