#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "mgst/autodiff.hpp"
#include "mgst/kernels.hpp"

namespace mgst {
inline namespace MGST_ABI {
namespace ag {
namespace {

using Grads = std::span<Tensor* const>;

Tape& tape_of(const Var& v) {
  require(v.valid() && v.tape() != nullptr, ErrorCode::kInvalidArgument, "operation on an empty Var");
  return *v.tape();
}

std::int64_t n_of(const Tensor& t) { return static_cast<std::int64_t>(t.size()); }

void accumulate(Tensor* g, const Tensor& d) {
  if (g) kernels::axpy(n_of(d), Real(1), d.data(), g->data());
}

// Channel-axis geometry: [outer, C, inner].
struct ChannelView {
  std::int64_t outer, c, inner;
};

ChannelView channel_view(const Shape& s, const char* what) {
  require(s.size() >= 2, ErrorCode::kShapeMismatch, std::string(what) + ": needs a channel axis, got " + shape_str(s));
  ChannelView v{s[0], s[1], 1};
  for (std::size_t i = 2; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& bias, const ConvSpec& spec) {
  Tensor y = conv3d_batched(x.value(), w.value(), bias.valid() ? bias.value() : Tensor(), spec);
  std::vector<Var> in{x, w};
  if (bias.valid()) in.push_back(bias);
  return tape_of(x).push(std::move(y), std::move(in), [x, w, spec](const Tensor&, const Tensor& gy, Grads g) {
    conv3d_batched_backward(x.value(), w.value(), spec, gy, g[0], g[1], g.size() > 2 ? g[2] : nullptr);
  });
}

Var relu(const Var& x) {
  Tape& tape = tape_of(x);
  if (tape.tracking_decisions()) {
    std::uint64_t word = 0;
    const Real* v = x.value().data();
    for (std::size_t i = 0; i < x.value().size(); ++i) {
      word = (word << 1) | (v[i] > Real(0) ? 1u : 0u);
      if (i % 64 == 63) tape.note_decision(std::exchange(word, 0));
    }
    tape.note_decision(word);
  }
  return tape.push(mgst::relu(x.value()), {x}, [](const Tensor& y, const Tensor& gy, Grads g) {
    // y > 0 exactly where x > 0.
    kernels::relu_backward(n_of(y), y.data(), gy.data(), g[0]->data());
  });
}

Var maxpool(const Var& x, const ConvSpec& spec) {
  auto r = maxpool_with_argmax(x.value(), spec);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(std::move(r.argmax));
  Tape& tape = tape_of(x);
  if (tape.tracking_decisions())
    for (std::int64_t a : *argmax) tape.note_decision(static_cast<std::uint64_t>(a));
  return tape.push(std::move(r.out), {x}, [argmax](const Tensor&, const Tensor& gy, Grads g) {
    maxpool_backward(*argmax, gy, *g[0]);
  });
}

Var avgpool(const Var& x, const ConvSpec& spec) {
  Shape xs = x.shape();
  return tape_of(x).push(mgst::avgpool(x.value(), spec), {x}, [xs, spec](const Tensor&, const Tensor& gy, Grads g) {
    avgpool_backward(xs, spec, gy, *g[0]);
  });
}

Var upsample(const Var& x, std::int64_t h2, std::int64_t w2) {
  return tape_of(x).push(upsample_nearest(x.value(), h2, w2), {x},
                         [](const Tensor&, const Tensor& gy, Grads g) { upsample_nearest_backward(gy, *g[0]); });
}

Var sigmoid(const Var& x) {
  return tape_of(x).push(mgst::sigmoid(x.value()), {x}, [](const Tensor& y, const Tensor& gy, Grads g) {
    Real* gx = g[0]->data();
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gy[i] * y[i] * (Real(1) - y[i]);
  });
}

Var tanh(const Var& x) {
  return tape_of(x).push(mgst::tanh(x.value()), {x}, [](const Tensor& y, const Tensor& gy, Grads g) {
    Real* gx = g[0]->data();
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gy[i] * (Real(1) - y[i] * y[i]);
  });
}

Var add(const Var& a, const Var& b) {
  return tape_of(a).push(mgst::add(a.value(), b.value()), {a, b}, [](const Tensor&, const Tensor& gy, Grads g) {
    accumulate(g[0], gy);
    accumulate(g[1], gy);
  });
}

Var sub(const Var& a, const Var& b) {
  return tape_of(a).push(mgst::sub(a.value(), b.value()), {a, b}, [](const Tensor&, const Tensor& gy, Grads g) {
    accumulate(g[0], gy);
    if (g[1]) kernels::axpy(n_of(gy), Real(-1), gy.data(), g[1]->data());
  });
}

Var mul(const Var& a, const Var& b) {
  return tape_of(a).push(hadamard(a.value(), b.value()), {a, b}, [a, b](const Tensor&, const Tensor& gy, Grads g) {
    const std::int64_t n = n_of(gy);
    std::vector<Real> tmp(static_cast<std::size_t>(n));
    if (g[0]) {
      kernels::mul(n, gy.data(), b.value().data(), tmp.data());
      kernels::axpy(n, Real(1), tmp.data(), g[0]->data());
    }
    if (g[1]) {
      kernels::mul(n, gy.data(), a.value().data(), tmp.data());
      kernels::axpy(n, Real(1), tmp.data(), g[1]->data());
    }
  });
}

Var one_minus(const Var& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = Real(1) - x.value()[i];
  return tape_of(x).push(std::move(y), {x}, [](const Tensor&, const Tensor& gy, Grads g) {
    kernels::axpy(n_of(gy), Real(-1), gy.data(), g[0]->data());
  });
}

Var scale(const Var& x, Real s) {
  return tape_of(x).push(mgst::scale(x.value(), s), {x}, [s](const Tensor&, const Tensor& gy, Grads g) {
    kernels::axpy(n_of(gy), s, gy.data(), g[0]->data());
  });
}

Var mul_batch_broadcast(const Var& x, const Var& p) {
  const std::int64_t inner = n_of(p.value());
  require(x.value().rank() == p.value().rank() + 1 &&
              std::equal(p.shape().begin(), p.shape().end(), x.shape().begin() + 1),
          ErrorCode::kShapeMismatch,
          "mul_batch_broadcast: " + shape_str(x.shape()) + " vs per-sample " + shape_str(p.shape()));
  const std::int64_t n = x.dim(0);
  Tensor y(x.shape());
  for (std::int64_t b = 0; b < n; ++b)
    kernels::mul(inner, x.value().data() + b * inner, p.value().data(), y.data() + b * inner);
  return tape_of(x).push(std::move(y), {x, p}, [x, p, n, inner](const Tensor&, const Tensor& gy, Grads g) {
    for (std::int64_t b = 0; b < n; ++b) {
      const Real* gyb = gy.data() + b * inner;
      const Real* xb = x.value().data() + b * inner;
      if (g[0]) {
        Real* gx = g[0]->data() + b * inner;
        for (std::int64_t i = 0; i < inner; ++i) gx[i] += gyb[i] * p.value()[static_cast<std::size_t>(i)];
      }
      if (g[1]) {
        Real* gp = g[1]->data();
        for (std::int64_t i = 0; i < inner; ++i) gp[i] += gyb[i] * xb[i];
      }
    }
  });
}

Var mul_channel_broadcast(const Var& x, const Var& m) {
  const ChannelView v = channel_view(x.shape(), "mul_channel_broadcast");
  Shape ms = x.shape();
  ms[1] = 1;
  require(m.shape() == ms, ErrorCode::kShapeMismatch,
          "mul_channel_broadcast: mask must be " + shape_str(ms) + ", got " + shape_str(m.shape()));
  Tensor y(x.shape());
  for (std::int64_t o = 0; o < v.outer; ++o)
    for (std::int64_t c = 0; c < v.c; ++c)
      kernels::mul(v.inner, x.value().data() + (o * v.c + c) * v.inner, m.value().data() + o * v.inner,
                   y.data() + (o * v.c + c) * v.inner);
  return tape_of(x).push(std::move(y), {x, m}, [x, m, v](const Tensor&, const Tensor& gy, Grads g) {
    for (std::int64_t o = 0; o < v.outer; ++o)
      for (std::int64_t c = 0; c < v.c; ++c) {
        const std::int64_t off = (o * v.c + c) * v.inner;
        const Real* mm = m.value().data() + o * v.inner;
        if (g[0])
          for (std::int64_t i = 0; i < v.inner; ++i) (*g[0])[off + i] += gy[off + i] * mm[i];
        if (g[1])
          for (std::int64_t i = 0; i < v.inner; ++i) (*g[1])[o * v.inner + i] += gy[off + i] * x.value()[off + i];
      }
  });
}

Var reshape(const Var& x, Shape shape) {
  return tape_of(x).push(x.value().reshaped(std::move(shape)), {x}, [](const Tensor&, const Tensor& gy, Grads g) {
    kernels::axpy(n_of(gy), Real(1), gy.data(), g[0]->data());
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorCode::kInvalidArgument, "concat_channels: no inputs");
  Shape s = parts[0].shape();
  const ChannelView v0 = channel_view(s, "concat_channels");
  std::vector<std::int64_t> widths;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    require(ps.size() == s.size(), ErrorCode::kShapeMismatch, "concat_channels: rank mismatch");
    ps[1] = s[1];
    require(ps == s, ErrorCode::kShapeMismatch,
            "concat_channels: " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()) + " off the channel axis");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  s[1] = total;
  Tensor y(s);
  std::int64_t c0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::int64_t ck = widths[k] * v0.inner;
    for (std::int64_t o = 0; o < v0.outer; ++o)
      std::memcpy(y.data() + (o * total * v0.inner) + c0 * v0.inner, parts[k].value().data() + o * ck,
                  static_cast<std::size_t>(ck) * sizeof(Real));
    c0 += widths[k];
  }
  const std::int64_t outer = v0.outer, inner = v0.inner;
  return tape_of(parts[0]).push(std::move(y), parts,
                                [widths, total, outer, inner](const Tensor&, const Tensor& gy, Grads g) {
                                  std::int64_t c = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    const std::int64_t ck = widths[k] * inner;
                                    if (g[k])
                                      for (std::int64_t o = 0; o < outer; ++o)
                                        kernels::axpy(ck, Real(1), gy.data() + o * total * inner + c * inner,
                                                      g[k]->data() + o * ck);
                                    c += widths[k];
                                  }
                                });
}

Var slice_channels(const Var& x, std::int64_t c0, std::int64_t c1) {
  const ChannelView v = channel_view(x.shape(), "slice_channels");
  require(0 <= c0 && c0 < c1 && c1 <= v.c, ErrorCode::kInvalidArgument, "slice_channels: bad channel range");
  Shape s = x.shape();
  s[1] = c1 - c0;
  Tensor y(s);
  const std::int64_t ck = (c1 - c0) * v.inner;
  for (std::int64_t o = 0; o < v.outer; ++o)
    std::memcpy(y.data() + o * ck, x.value().data() + (o * v.c + c0) * v.inner, static_cast<std::size_t>(ck) * sizeof(Real));
  return tape_of(x).push(std::move(y), {x}, [v, c0, ck](const Tensor&, const Tensor& gy, Grads g) {
    for (std::int64_t o = 0; o < v.outer; ++o)
      kernels::axpy(ck, Real(1), gy.data() + o * ck, g[0]->data() + (o * v.c + c0) * v.inner);
  });
}

Var time_slice(const Var& x, std::int64_t t) {
  require(x.value().rank() == 5, ErrorCode::kShapeMismatch, "time_slice: input must be [N,C,T,H,W]");
  const std::int64_t nc = x.dim(0) * x.dim(1), tt = x.dim(2), hw = x.dim(3) * x.dim(4);
  require(t >= 0 && t < tt, ErrorCode::kInvalidArgument, "time_slice: frame index out of range");
  Tensor y({x.dim(0), x.dim(1), 1, x.dim(3), x.dim(4)});
  for (std::int64_t i = 0; i < nc; ++i)
    std::memcpy(y.data() + i * hw, x.value().data() + (i * tt + t) * hw, static_cast<std::size_t>(hw) * sizeof(Real));
  return tape_of(x).push(std::move(y), {x}, [nc, tt, hw, t](const Tensor&, const Tensor& gy, Grads g) {
    for (std::int64_t i = 0; i < nc; ++i) kernels::axpy(hw, Real(1), gy.data() + i * hw, g[0]->data() + (i * tt + t) * hw);
  });
}

Var time_stack(const std::vector<Var>& frames) {
  require(!frames.empty(), ErrorCode::kInvalidArgument, "time_stack: no frames");
  const Shape& f0 = frames[0].shape();
  require(f0.size() == 5 && f0[2] == 1, ErrorCode::kShapeMismatch, "time_stack: frames must be [N,C,1,H,W]");
  for (const auto& f : frames)
    require(f.shape() == f0, ErrorCode::kShapeMismatch,
            "time_stack: frame " + shape_str(f.shape()) + " differs from " + shape_str(f0));
  const std::int64_t tt = static_cast<std::int64_t>(frames.size());
  const std::int64_t nc = f0[0] * f0[1], hw = f0[3] * f0[4];
  Tensor y({f0[0], f0[1], tt, f0[3], f0[4]});
  for (std::int64_t t = 0; t < tt; ++t)
    for (std::int64_t i = 0; i < nc; ++i)
      std::memcpy(y.data() + (i * tt + t) * hw, frames[static_cast<std::size_t>(t)].value().data() + i * hw,
                  static_cast<std::size_t>(hw) * sizeof(Real));
  return tape_of(frames[0]).push(std::move(y), frames, [nc, tt, hw](const Tensor&, const Tensor& gy, Grads g) {
    for (std::int64_t t = 0; t < tt; ++t)
      if (g[static_cast<std::size_t>(t)])
        for (std::int64_t i = 0; i < nc; ++i)
          kernels::axpy(hw, Real(1), gy.data() + (i * tt + t) * hw, g[static_cast<std::size_t>(t)]->data() + i * hw);
  });
}

Var frames_to_rows(const Var& x) {
  require(x.value().rank() == 5, ErrorCode::kShapeMismatch, "frames_to_rows: input must be [N,C,T,H,W]");
  const std::int64_t n = x.dim(0), c = x.dim(1), tt = x.dim(2), hw = x.dim(3) * x.dim(4);
  Tensor y({n * tt, c * hw});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t t = 0; t < tt; ++t)
        std::memcpy(y.data() + ((b * tt + t) * c + ch) * hw, x.value().data() + ((b * c + ch) * tt + t) * hw,
                    static_cast<std::size_t>(hw) * sizeof(Real));
  return tape_of(x).push(std::move(y), {x}, [n, c, tt, hw](const Tensor&, const Tensor& gy, Grads g) {
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t t = 0; t < tt; ++t)
          kernels::axpy(hw, Real(1), gy.data() + ((b * tt + t) * c + ch) * hw,
                        g[0]->data() + ((b * c + ch) * tt + t) * hw);
  });
}

Var linear_rows(const Var& x, const Var& w, const Var& b) {
  require(x.value().rank() == 2 && w.value().rank() == 2 && b.value().rank() == 1, ErrorCode::kShapeMismatch,
          "linear_rows: expects x [R,F], W [K,F], b [K]");
  const std::int64_t r = x.dim(0), f = x.dim(1), k = w.dim(0);
  require(w.dim(1) == f, ErrorCode::kShapeMismatch,
          "linear_rows: weight feature axis (1) has " + std::to_string(w.dim(1)) + ", x has " + std::to_string(f));
  require(b.dim(0) == k, ErrorCode::kShapeMismatch, "linear_rows: bias length differs from weight axis 0");
  Tensor y({r, k});
  kernels::gemm(false, true, r, k, f, x.value().data(), f, w.value().data(), f, false, y.data(), k);
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < k; ++j) y[static_cast<std::size_t>(i * k + j)] += b.value()[static_cast<std::size_t>(j)];
  return tape_of(x).push(std::move(y), {x, w, b}, [x, w, r, f, k](const Tensor&, const Tensor& gy, Grads g) {
    if (g[0]) kernels::gemm(false, false, r, f, k, gy.data(), k, w.value().data(), f, true, g[0]->data(), f);
    if (g[1]) kernels::gemm(true, false, k, f, r, gy.data(), k, x.value().data(), f, true, g[1]->data(), f);
    if (g[2])
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < k; ++j) (*g[2])[static_cast<std::size_t>(j)] += gy[static_cast<std::size_t>(i * k + j)];
  });
}

namespace {

std::vector<std::int64_t> frame_counts(const Var& x, const std::vector<std::int64_t>& lengths, const char* what) {
  require(x.value().rank() == 3, ErrorCode::kShapeMismatch, std::string(what) + ": input must be [N,T,K]");
  const std::int64_t n = x.dim(0), t = x.dim(1);
  require(t >= 1, ErrorCode::kInvalidArgument, std::string(what) + ": T must be >= 1");
  if (lengths.empty()) return std::vector<std::int64_t>(static_cast<std::size_t>(n), t);
  require(static_cast<std::int64_t>(lengths.size()) == n, ErrorCode::kShapeMismatch,
          std::string(what) + ": one length per sample required");
  for (auto l : lengths)
    require(l >= 1 && l <= t, ErrorCode::kInvalidArgument, std::string(what) + ": length out of range");
  return lengths;
}

}  // namespace

Var mean_frames(const Var& x, const std::vector<std::int64_t>& lengths) {
  const auto len = frame_counts(x, lengths, "mean_frames");
  const std::int64_t n = x.dim(0), t = x.dim(1), k = x.dim(2);
  Tensor y({n, k});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::int64_t i = 0; i < len[static_cast<std::size_t>(b)]; ++i)
        s += x.value()[static_cast<std::size_t>((b * t + i) * k + j)];
      y[static_cast<std::size_t>(b * k + j)] = static_cast<Real>(s / static_cast<double>(len[static_cast<std::size_t>(b)]));
    }
  return tape_of(x).push(std::move(y), {x}, [len, n, t, k](const Tensor&, const Tensor& gy, Grads g) {
    for (std::int64_t b = 0; b < n; ++b) {
      const Real inv = Real(1) / static_cast<Real>(len[static_cast<std::size_t>(b)]);
      for (std::int64_t i = 0; i < len[static_cast<std::size_t>(b)]; ++i)
        for (std::int64_t j = 0; j < k; ++j)
          (*g[0])[static_cast<std::size_t>((b * t + i) * k + j)] += gy[static_cast<std::size_t>(b * k + j)] * inv;
    }
  });
}

Var log_mean_softmax_frames(const Var& x, const std::vector<std::int64_t>& lengths) {
  const auto len = frame_counts(x, lengths, "log_mean_softmax_frames");
  const std::int64_t n = x.dim(0), t = x.dim(1), k = x.dim(2);
  // Per-frame softmax probabilities, kept for backward.
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * t * k), 0.0);
  Tensor y({n, k});
  for (std::int64_t b = 0; b < n; ++b) {
    std::vector<double> mean(static_cast<std::size_t>(k), 0.0);
    for (std::int64_t i = 0; i < len[static_cast<std::size_t>(b)]; ++i) {
      const Real* row = x.value().data() + (b * t + i) * k;
      const double mx = *std::max_element(row, row + k);
      double z = 0.0;
      for (std::int64_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
      for (std::int64_t j = 0; j < k; ++j) {
        const double p = std::exp(row[j] - mx) / z;
        (*probs)[static_cast<std::size_t>((b * t + i) * k + j)] = p;
        mean[static_cast<std::size_t>(j)] += p;
      }
    }
    for (std::int64_t j = 0; j < k; ++j) {
      mean[static_cast<std::size_t>(j)] /= static_cast<double>(len[static_cast<std::size_t>(b)]);
      y[static_cast<std::size_t>(b * k + j)] = static_cast<Real>(std::log(std::max(mean[static_cast<std::size_t>(j)], 1e-300)));
    }
  }
  return tape_of(x).push(std::move(y), {x}, [probs, len, n, t, k](const Tensor& y, const Tensor& gy, Grads g) {
    // y_j = log(q_j), q_j = mean_i p_ij. dy_j/dx_il = (1/(L q_j)) p_ij (delta_jl - p_il).
    for (std::int64_t b = 0; b < n; ++b) {
      const double inv_len = 1.0 / static_cast<double>(len[static_cast<std::size_t>(b)]);
      std::vector<double> w(static_cast<std::size_t>(k));
      for (std::int64_t j = 0; j < k; ++j)
        w[static_cast<std::size_t>(j)] =
            gy[static_cast<std::size_t>(b * k + j)] * inv_len / std::exp(static_cast<double>(y[static_cast<std::size_t>(b * k + j)]));
      for (std::int64_t i = 0; i < len[static_cast<std::size_t>(b)]; ++i) {
        const double* p = probs->data() + (b * t + i) * k;
        double s = 0.0;
        for (std::int64_t j = 0; j < k; ++j) s += w[static_cast<std::size_t>(j)] * p[j];
        for (std::int64_t l = 0; l < k; ++l)
          (*g[0])[static_cast<std::size_t>((b * t + i) * k + l)] +=
              static_cast<Real>(p[l] * (w[static_cast<std::size_t>(l)] - s));
      }
    }
  });
}

Var cross_entropy(const Var& logits, const std::vector<std::int64_t>& labels) {
  require(logits.value().rank() == 2, ErrorCode::kShapeMismatch, "cross_entropy: logits must be [N,K]");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  require(static_cast<std::int64_t>(labels.size()) == n && n > 0, ErrorCode::kShapeMismatch,
          "cross_entropy: one label per row required");
  for (auto l : labels)
    require(l >= 0 && l < k, ErrorCode::kInvalidArgument, "cross_entropy: label " + std::to_string(l) + " out of range");
  auto soft = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * k));
  double loss = 0.0;
  for (std::int64_t b = 0; b < n; ++b) {
    const Real* row = logits.value().data() + b * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    loss += lse - row[labels[static_cast<std::size_t>(b)]];
    for (std::int64_t j = 0; j < k; ++j) (*soft)[static_cast<std::size_t>(b * k + j)] = std::exp(row[j] - lse);
  }
  loss /= static_cast<double>(n);
  return tape_of(logits).push(
      Tensor::scalar(static_cast<Real>(loss)), {logits},
      [soft, labels, n, k](const Tensor&, const Tensor& gy, Grads g) {
        const double s = static_cast<double>(gy[0]) / static_cast<double>(n);
        for (std::int64_t b = 0; b < n; ++b)
          for (std::int64_t j = 0; j < k; ++j) {
            const double d = (*soft)[static_cast<std::size_t>(b * k + j)] - (j == labels[static_cast<std::size_t>(b)] ? 1.0 : 0.0);
            (*g[0])[static_cast<std::size_t>(b * k + j)] += static_cast<Real>(s * d);
          }
      },
      loss);
}

Var sum(const Var& x) {
  const double s = kernels::sum(n_of(x.value()), x.value().data());
  return tape_of(x).push(
      Tensor::scalar(static_cast<Real>(s)), {x},
      [](const Tensor&, const Tensor& gy, Grads g) {
        Real* gx = g[0]->data();
        for (std::size_t i = 0; i < g[0]->size(); ++i) gx[i] += gy[0];
      },
      s);
}

Var weighted_sum(const Var& x, const Tensor& w) {
  require_same_shape(x.value(), w, "weighted_sum");
  const double s = kernels::dot(n_of(w), x.value().data(), w.data());
  auto wc = std::make_shared<const Tensor>(w);
  return tape_of(x).push(
      Tensor::scalar(static_cast<Real>(s)), {x},
      [wc](const Tensor&, const Tensor& gy, Grads g) { kernels::axpy(n_of(*wc), gy[0], wc->data(), g[0]->data()); }, s);
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormBuffers buffers, bool train, Real momentum,
              Real eps, bool update_running) {
  const ChannelView v = channel_view(x.shape(), "batchnorm");
  require(gamma.shape() == Shape{v.c} && beta.shape() == Shape{v.c}, ErrorCode::kShapeMismatch,
          "batchnorm: gamma/beta must be [" + std::to_string(v.c) + "] for channel axis 1 of " + shape_str(x.shape()));
  require(eps > Real(0), ErrorCode::kInvalidArgument, "batchnorm: eps must be positive");
  const std::int64_t m = v.outer * v.inner;
  const Tensor& xv = x.value();
  auto xhat = std::make_shared<Tensor>(x.shape());
  auto invstd = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(v.c));
  Tensor y(x.shape());
  for (std::int64_t c = 0; c < v.c; ++c) {
    double mean, var;
    if (train) {
      double s = 0.0;
      for (std::int64_t o = 0; o < v.outer; ++o) s += kernels::sum(v.inner, xv.data() + (o * v.c + c) * v.inner);
      mean = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::int64_t o = 0; o < v.outer; ++o) {
        const Real* p = xv.data() + (o * v.c + c) * v.inner;
        for (std::int64_t i = 0; i < v.inner; ++i) {
          const double d = p[i] - mean;
          ss += d * d;
        }
      }
      var = ss / static_cast<double>(m);
      if (update_running && buffers.running_mean && buffers.running_var) {
        const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
        Real& rm = (*buffers.running_mean)[static_cast<std::size_t>(c)];
        Real& rv = (*buffers.running_var)[static_cast<std::size_t>(c)];
        rm = static_cast<Real>((1.0 - momentum) * rm + momentum * mean);
        rv = static_cast<Real>((1.0 - momentum) * rv + momentum * unbiased);
      }
    } else {
      require(buffers.running_mean && buffers.running_var, ErrorCode::kInvalidArgument,
              "batchnorm: eval mode needs running statistics");
      mean = (*buffers.running_mean)[static_cast<std::size_t>(c)];
      var = (*buffers.running_var)[static_cast<std::size_t>(c)];
    }
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*invstd)[static_cast<std::size_t>(c)] = static_cast<Real>(is);
    const Real gm = gamma.value()[static_cast<std::size_t>(c)];
    const Real bt = beta.value()[static_cast<std::size_t>(c)];
    for (std::int64_t o = 0; o < v.outer; ++o) {
      const std::int64_t off = (o * v.c + c) * v.inner;
      for (std::int64_t i = 0; i < v.inner; ++i) {
        const Real xh = static_cast<Real>((xv[static_cast<std::size_t>(off + i)] - mean) * is);
        (*xhat)[static_cast<std::size_t>(off + i)] = xh;
        y[static_cast<std::size_t>(off + i)] = gm * xh + bt;
      }
    }
  }
  return tape_of(x).push(std::move(y), {x, gamma, beta},
                         [xhat, invstd, gamma, v, m, train](const Tensor&, const Tensor& gy, Grads g) {
                           for (std::int64_t c = 0; c < v.c; ++c) {
                             double sg = 0.0, sgx = 0.0;
                             for (std::int64_t o = 0; o < v.outer; ++o) {
                               const std::int64_t off = (o * v.c + c) * v.inner;
                               for (std::int64_t i = 0; i < v.inner; ++i) {
                                 sg += gy[static_cast<std::size_t>(off + i)];
                                 sgx += static_cast<double>(gy[static_cast<std::size_t>(off + i)]) *
                                        (*xhat)[static_cast<std::size_t>(off + i)];
                               }
                             }
                             if (g[1]) (*g[1])[static_cast<std::size_t>(c)] += static_cast<Real>(sgx);
                             if (g[2]) (*g[2])[static_cast<std::size_t>(c)] += static_cast<Real>(sg);
                             if (!g[0]) continue;
                             const double gm = gamma.value()[static_cast<std::size_t>(c)];
                             const double is = (*invstd)[static_cast<std::size_t>(c)];
                             const double mg = sg / static_cast<double>(m), mgx = sgx / static_cast<double>(m);
                             for (std::int64_t o = 0; o < v.outer; ++o) {
                               const std::int64_t off = (o * v.c + c) * v.inner;
                               for (std::int64_t i = 0; i < v.inner; ++i) {
                                 const std::size_t e = static_cast<std::size_t>(off + i);
                                 const double d = train ? gy[e] - mg - (*xhat)[e] * mgx : static_cast<double>(gy[e]);
                                 (*g[0])[e] += static_cast<Real>(gm * is * d);
                               }
                             }
                           }
                         });
}

}  // namespace ag
}  // namespace MGST_ABI
}  // namespace mgst
