// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "srdepth/tensor.hpp"

// Differentiable operator suite over Tensor<S>. Every operation is a pure
// free function: it computes the forward value and, when an operand is
// attached to a tape, records the reverse rule on that tape. Reductions
// accumulate in double regardless of S. All loops are single-threaded with a
// fixed order, so identical inputs give bit-identical outputs.
namespace srdepth {

namespace detail {

inline int broadcast_dim(int a, int b, const char* what) {
  require(a == b || a == 1 || b == 1, "shape-mismatch",
          std::string("cannot broadcast ") + what + " extents " + std::to_string(a) +
              " vs " + std::to_string(b));
  return std::max(a, b);
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  return Shape(broadcast_dim(a.n, b.n, "batch"), broadcast_dim(a.c, b.c, "channel"),
               broadcast_dim(a.h, b.h, "height"), broadcast_dim(a.w, b.w, "width"));
}

struct BStrides {
  long long n, c, h, w;
};

inline BStrides strides_into(const Shape& in) {
  long long sw = 1;
  long long sh = in.w;
  long long sc = static_cast<long long>(in.h) * in.w;
  long long sn = static_cast<long long>(in.c) * sc;
  return BStrides{in.n == 1 ? 0 : sn, in.c == 1 ? 0 : sc, in.h == 1 ? 0 : sh,
                  in.w == 1 ? 0 : sw};
}

template <typename S, class Fn>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, Fn&& fn) {
  const BStrides ta = strides_into(sa);
  const BStrides tb = strides_into(sb);
  long long io = 0;
  for (int n = 0; n < out.n; ++n)
    for (int c = 0; c < out.c; ++c)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x, ++io) {
          long long ia = n * ta.n + c * ta.c + y * ta.h + x * ta.w;
          long long ib = n * tb.n + c * tb.c + y * tb.h + x * tb.w;
          fn(io, ia, ib);
        }
}

// Shared binary-op engine: f(xa, xb) with partials da, db evaluated at the
// inputs. Handles NCHW broadcasting (each dim equal or 1); gradients of a
// broadcast operand are reduced over the broadcast dims by accumulation.
template <typename S, class F, class DA, class DB>
Tensor<S> binary_op(const Tensor<S>& a, const Tensor<S>& b, F f, DA da, DB db) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Buffer<S> out(out_shape.numel());
  if (a.shape() == b.shape()) {
    const Buffer<S>& xa = a.buf();
    const Buffer<S>& xb = b.buf();
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = f(xa[i], xb[i]);
  } else {
    const S* xa = a.data();
    const S* xb = b.data();
    S* o = out.data();
    for_each_broadcast<S>(out_shape, a.shape(), b.shape(),
                          [&](long long io, long long ia, long long ib) {
                            o[io] = f(xa[ia], xb[ib]);
                          });
  }
  Tensor<S> result(out_shape, std::move(out));
  Tape<S>* tape = joint_tape<S>({&a, &b});
  if (!tape) return result;
  const int na = a.requires_grad() ? a.node() : -1;
  const int nb = b.requires_grad() ? b.node() : -1;
  return tape->record(result, [a, b, na, nb, da, db, out_shape](Tape<S>& t,
                                                                const Buffer<S>& gout) {
    const S* xa = a.data();
    const S* xb = b.data();
    if (a.shape() == b.shape()) {
      if (na >= 0) {
        Buffer<S>& ga = t.grad(na);
        for (Eigen::Index i = 0; i < gout.size(); ++i) ga[i] += da(xa[i], xb[i]) * gout[i];
      }
      if (nb >= 0) {
        Buffer<S>& gb = t.grad(nb);
        for (Eigen::Index i = 0; i < gout.size(); ++i) gb[i] += db(xa[i], xb[i]) * gout[i];
      }
      return;
    }
    Buffer<S>* ga = na >= 0 ? &t.grad(na) : nullptr;
    Buffer<S>* gb = nb >= 0 ? &t.grad(nb) : nullptr;
    for_each_broadcast<S>(out_shape, a.shape(), b.shape(),
                          [&](long long io, long long ia, long long ib) {
                            if (ga) (*ga)[ia] += da(xa[ia], xb[ib]) * gout[io];
                            if (gb) (*gb)[ib] += db(xa[ia], xb[ib]) * gout[io];
                          });
  });
}

// Unary engine; the derivative sees input and output values.
template <typename S, class F, class D>
Tensor<S> unary_op(const Tensor<S>& a, F f, D dfdx) {
  Buffer<S> out(a.numel());
  const Buffer<S>& xa = a.buf();
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = f(xa[i]);
  Tensor<S> result(a.shape(), std::move(out));
  if (!a.requires_grad()) return result;
  Tape<S>* tape = a.tape();
  const int na = a.node();
  return tape->record(result, [a, result, na, dfdx](Tape<S>& t, const Buffer<S>& gout) {
    Buffer<S>& ga = t.grad(na);
    const Buffer<S>& xa = a.buf();
    const Buffer<S>& y = result.buf();
    for (Eigen::Index i = 0; i < gout.size(); ++i) ga[i] += dfdx(xa[i], y[i]) * gout[i];
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (broadcasting: each dim equal or 1)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
      [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
      [](S, S) { return S(-1); });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x * y; }, [](S, S y) { return y; },
      [](S x, S) { return x; });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      a, b, [](S x, S y) { return x / y; }, [](S, S y) { return S(1) / y; },
      [](S x, S y) { return -x / (y * y); });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S k) {
  return detail::unary_op(
      a, [k](S x) { return k * x; }, [k](S, S) { return k; });
}

template <typename S>
Tensor<S> offset(const Tensor<S>& a, S k) {
  return detail::unary_op(
      a, [k](S x) { return x + k; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S>
Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) { return div(a, b); }
template <typename S>
Tensor<S> operator*(S k, const Tensor<S>& a) { return scale(a, k); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, S k) { return scale(a, k); }
template <typename S>
Tensor<S> operator+(const Tensor<S>& a, S k) { return offset(a, k); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, S k) { return offset(a, -k); }

// ---------------------------------------------------------------------------
// Elementwise functions
// ---------------------------------------------------------------------------

// |x|; subgradient 0 at the kink.
template <typename S>
Tensor<S> abs(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::abs(x); },
      [](S x, S) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::sqrt(x); },
      [](S, S y) { return S(0.5) / y; });
}

template <typename S>
Tensor<S> sin(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::sin(x); }, [](S x, S) { return std::cos(x); });
}

template <typename S>
Tensor<S> cos(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return std::cos(x); }, [](S x, S) { return -std::sin(x); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return detail::unary_op(
      a,
      [](S x) {
        if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
        S e = std::exp(x);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

// ELU with alpha = 1.
template <typename S>
Tensor<S> elu(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return x > S(0) ? x : std::expm1(x); },
      [](S x, S y) { return x > S(0) ? S(1) : y + S(1); });
}

// Pass-through subgradient on [lo, hi], zero outside.
template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  return detail::unary_op(
      a, [lo, hi](S x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](S x, S) { return (x >= lo && x <= hi) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> clamp_min(const Tensor<S>& a, S lo) {
  return clamp(a, lo, std::numeric_limits<S>::max());
}

// ---------------------------------------------------------------------------
// Reductions (double accumulation, fixed order)
// ---------------------------------------------------------------------------

// Mean over all elements -> 1x1x1x1.
template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  require(a.numel() > 0, "bad-shape", "mean of empty tensor");
  double acc = 0.0;
  const Buffer<S>& x = a.buf();
  for (Eigen::Index i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]);
  const double inv_n = 1.0 / static_cast<double>(a.numel());
  Tensor<S> result = Tensor<S>::scalar(static_cast<S>(acc * inv_n));
  if (!a.requires_grad()) return result;
  Tape<S>* tape = a.tape();
  const int na = a.node();
  return tape->record(result, [na, inv_n](Tape<S>& t, const Buffer<S>& gout) {
    Buffer<S>& ga = t.grad(na);
    const S g = static_cast<S>(static_cast<double>(gout[0]) * inv_n);
    for (Eigen::Index i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

// Mean over the spatial dims -> n x c x 1 x 1.
template <typename S>
Tensor<S> spatial_mean(const Tensor<S>& a) {
  const Shape s = a.shape();
  require(s.h > 0 && s.w > 0, "bad-shape", "spatial_mean of empty map");
  const long long hw = static_cast<long long>(s.h) * s.w;
  const double inv = 1.0 / static_cast<double>(hw);
  Buffer<S> out(static_cast<Eigen::Index>(s.n) * s.c);
  const S* x = a.data();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      double acc = 0.0;
      const S* p = x + s.index(n, c, 0, 0);
      for (long long i = 0; i < hw; ++i) acc += static_cast<double>(p[i]);
      out[n * s.c + c] = static_cast<S>(acc * inv);
    }
  Tensor<S> result(Shape(s.n, s.c, 1, 1), std::move(out));
  if (!a.requires_grad()) return result;
  Tape<S>* tape = a.tape();
  const int na = a.node();
  return tape->record(result, [na, s, hw, inv](Tape<S>& t, const Buffer<S>& gout) {
    Buffer<S>& ga = t.grad(na);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const S g = static_cast<S>(static_cast<double>(gout[n * s.c + c]) * inv);
        S* p = ga.data() + s.index(n, c, 0, 0);
        for (long long i = 0; i < hw; ++i) p[i] += g;
      }
  });
}

// ---------------------------------------------------------------------------
// Structure: concatenation, slicing, decimation
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& parts) {
  require(!parts.empty(), "bad-shape", "concat of zero tensors");
  const Shape s0 = parts[0].shape();
  int total_c = 0;
  for (const Tensor<S>& p : parts) {
    require(p.shape().n == s0.n && p.shape().h == s0.h && p.shape().w == s0.w,
            "shape-mismatch", "concat operands differ outside the channel dim: " +
                                  s0.str() + " vs " + p.shape().str());
    total_c += p.shape().c;
  }
  const Shape out_shape(s0.n, total_c, s0.h, s0.w);
  Buffer<S> out(out_shape.numel());
  const long long plane = static_cast<long long>(s0.h) * s0.w;
  for (int n = 0; n < s0.n; ++n) {
    int co = 0;
    for (const Tensor<S>& p : parts) {
      const int pc = p.shape().c;
      std::copy_n(p.data() + p.shape().index(n, 0, 0, 0), pc * plane,
                  out.data() + out_shape.index(n, co, 0, 0));
      co += pc;
    }
  }
  Tensor<S> result(out_shape, std::move(out));
  std::vector<const Tensor<S>*> ptrs;
  for (const Tensor<S>& p : parts) ptrs.push_back(&p);
  Tape<S>* tape = nullptr;
  for (const Tensor<S>* p : ptrs)
    if (p->requires_grad()) {
      require(!tape || tape == p->tape(), "bad-graph", "concat across tapes");
      tape = p->tape();
    }
  if (!tape) return result;
  std::vector<int> nodes;
  std::vector<int> channels;
  for (const Tensor<S>& p : parts) {
    nodes.push_back(p.requires_grad() ? p.node() : -1);
    channels.push_back(p.shape().c);
  }
  return tape->record(result, [nodes, channels, out_shape, plane](Tape<S>& t,
                                                                  const Buffer<S>& gout) {
    for (int n = 0; n < out_shape.n; ++n) {
      int co = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const int pc = channels[k];
        if (nodes[k] >= 0) {
          Buffer<S>& g = t.grad(nodes[k]);
          const long long src = out_shape.index(n, co, 0, 0);
          const long long dst = (static_cast<long long>(n) * pc) * plane;
          for (long long i = 0; i < pc * plane; ++i) g[dst + i] += gout[src + i];
        }
        co += pc;
      }
    }
  });
}

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  return concat_channels(std::vector<Tensor<S>>{a, b});
}

// Channels [c0, c1).
template <typename S>
Tensor<S> slice_channels(const Tensor<S>& a, int c0, int c1) {
  const Shape s = a.shape();
  require(0 <= c0 && c0 < c1 && c1 <= s.c, "bad-shape",
          "channel slice [" + std::to_string(c0) + "," + std::to_string(c1) +
              ") out of range for " + s.str());
  const Shape out_shape(s.n, c1 - c0, s.h, s.w);
  const long long plane = static_cast<long long>(s.h) * s.w;
  Buffer<S> out(out_shape.numel());
  for (int n = 0; n < s.n; ++n)
    std::copy_n(a.data() + s.index(n, c0, 0, 0), (c1 - c0) * plane,
                out.data() + out_shape.index(n, 0, 0, 0));
  Tensor<S> result(out_shape, std::move(out));
  if (!a.requires_grad()) return result;
  Tape<S>* tape = a.tape();
  const int na = a.node();
  return tape->record(result, [na, s, c0, c1, plane, out_shape](Tape<S>& t,
                                                                const Buffer<S>& gout) {
    Buffer<S>& ga = t.grad(na);
    for (int n = 0; n < s.n; ++n) {
      const long long dst = s.index(n, c0, 0, 0);
      const long long src = out_shape.index(n, 0, 0, 0);
      for (long long i = 0; i < (c1 - c0) * plane; ++i) ga[dst + i] += gout[src + i];
    }
  });
}

// Nearest-neighbor decimation keeping the top-left sample of each block.
// Constants only (used for masks and fixture pyramids).
template <typename S>
Tensor<S> decimate(const Tensor<S>& a, int factor) {
  require(factor >= 1, "bad-argument", "decimation factor must be >= 1");
  require(!a.requires_grad(), "bad-graph", "decimate is not differentiable");
  const Shape s = a.shape();
  if (factor == 1) return a;
  require(s.h % factor == 0 && s.w % factor == 0, "bad-shape",
          "decimation factor " + std::to_string(factor) + " does not divide " + s.str());
  const Shape out_shape(s.n, s.c, s.h / factor, s.w / factor);
  Buffer<S> out(out_shape.numel());
  long long io = 0;
  for (int n = 0; n < out_shape.n; ++n)
    for (int c = 0; c < out_shape.c; ++c)
      for (int y = 0; y < out_shape.h; ++y)
        for (int x = 0; x < out_shape.w; ++x, ++io)
          out[io] = a.at(n, c, y * factor, x * factor);
  return Tensor<S>(out_shape, std::move(out));
}

// ---------------------------------------------------------------------------
// Comparisons -> constant {0,1} masks (Iverson brackets; no gradient)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> less_than_mask(const Tensor<S>& a, const Tensor<S>& b) {
  require(a.shape() == b.shape(), "shape-mismatch",
          "comparison operands differ: " + a.shape().str() + " vs " + b.shape().str());
  Buffer<S> out(a.numel());
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out[i] = a.buf()[i] < b.buf()[i] ? S(1) : S(0);
  return Tensor<S>(a.shape(), std::move(out));
}

template <typename S>
Tensor<S> greater_than_mask(const Tensor<S>& a, S threshold) {
  Buffer<S> out(a.numel());
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out[i] = a.buf()[i] > threshold ? S(1) : S(0);
  return Tensor<S>(a.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Per-pixel minimum over a set of equally shaped maps
// ---------------------------------------------------------------------------

template <typename S>
struct MinOverSet {
  Tensor<S> values;  // min where any candidate is valid, 0 elsewhere
  Tensor<S> valid;   // constant {0,1}: some candidate was valid
};

// valids may be empty (all candidates valid) or hold one {0,1} map per
// candidate; invalid candidates are excluded from the minimum. Ties go to the
// earliest candidate and the subgradient follows the winner.
template <typename S>
MinOverSet<S> min_over_set(const std::vector<Tensor<S>>& candidates,
                           const std::vector<Tensor<S>>& valids = {}) {
  require(!candidates.empty(), "bad-argument", "minimum over an empty set");
  const Shape s = candidates[0].shape();
  for (const Tensor<S>& c : candidates)
    require(c.shape() == s, "shape-mismatch", "min candidates differ in shape");
  const bool masked = !valids.empty();
  if (masked) {
    require(valids.size() == candidates.size(), "bad-argument",
            "one validity map per candidate required");
    for (const Tensor<S>& v : valids)
      require(v.shape() == s, "shape-mismatch", "validity map shape differs");
  }
  const long long count = s.numel();
  Buffer<S> out(count);
  Buffer<S> any_valid(count);
  auto winner = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(count));
  for (long long i = 0; i < count; ++i) {
    S best = S(0);
    std::int32_t best_k = -1;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      if (masked && valids[k].buf()[i] <= S(0.5)) continue;
      const S v = candidates[k].buf()[i];
      if (best_k < 0 || v < best) {
        best = v;
        best_k = static_cast<std::int32_t>(k);
      }
    }
    (*winner)[static_cast<std::size_t>(i)] = best_k;
    out[i] = best_k >= 0 ? best : S(0);
    any_valid[i] = best_k >= 0 ? S(1) : S(0);
  }
  Tensor<S> values(s, std::move(out));
  Tensor<S> valid(s, std::move(any_valid));
  std::vector<const Tensor<S>*> ptrs;
  for (const Tensor<S>& c : candidates) ptrs.push_back(&c);
  Tape<S>* tape = nullptr;
  for (const Tensor<S>* p : ptrs)
    if (p->requires_grad()) {
      require(!tape || tape == p->tape(), "bad-graph", "min candidates across tapes");
      tape = p->tape();
    }
  if (tape) {
    std::vector<int> nodes;
    for (const Tensor<S>& c : candidates)
      nodes.push_back(c.requires_grad() ? c.node() : -1);
    values = tape->record(values, [nodes, winner, count](Tape<S>& t, const Buffer<S>& gout) {
      for (long long i = 0; i < count; ++i) {
        const std::int32_t k = (*winner)[static_cast<std::size_t>(i)];
        if (k >= 0 && nodes[static_cast<std::size_t>(k)] >= 0)
          t.grad(nodes[static_cast<std::size_t>(k)])[i] += gout[i];
      }
    });
  }
  return MinOverSet<S>{values, valid};
}

// Spec-named convenience form: plain per-pixel minimum of a set.
template <typename S>
Tensor<S> spatial_min_over_set(const std::vector<Tensor<S>>& candidates) {
  return min_over_set(candidates).values;
}

// ---------------------------------------------------------------------------
// Convolution (square kernel, zero padding)
// ---------------------------------------------------------------------------

// input: N x Ci x H x W, weight: Co x Ci x K x K, bias: 1 x Co x 1 x 1 or
// empty. Output spatial size follows floor((H + 2p - K)/stride) + 1.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 int stride = 1, int padding = 0) {
  const Shape in = input.shape();
  const Shape ws = weight.shape();
  require(ws.h == ws.w, "bad-shape", "conv kernel must be square, got " + ws.str());
  require(in.c == ws.c, "shape-mismatch",
          "conv input channels " + std::to_string(in.c) + " do not match weight channels " +
              std::to_string(ws.c));
  require(stride >= 1, "bad-argument", "conv stride must be >= 1");
  require(padding >= 0, "bad-argument", "conv padding must be >= 0");
  const bool has_bias = !bias.empty();
  if (has_bias)
    require(bias.shape() == Shape(1, ws.n, 1, 1), "shape-mismatch",
            "conv bias must be 1x" + std::to_string(ws.n) + "x1x1, got " +
                bias.shape().str());
  const int k = ws.h;
  const int oh = (in.h + 2 * padding - k) / stride + 1;
  const int ow = (in.w + 2 * padding - k) / stride + 1;
  require(oh > 0 && ow > 0, "bad-shape",
          "conv output would be empty for input " + in.str());
  const Shape out_shape(in.n, ws.n, oh, ow);
  Buffer<S> out(out_shape.numel());
  const S* xi = input.data();
  const S* xw = weight.data();
  long long io = 0;
  for (int n = 0; n < in.n; ++n)
    for (int co = 0; co < ws.n; ++co) {
      const double b = has_bias ? static_cast<double>(bias.buf()[co]) : 0.0;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++io) {
          double acc = b;
          const int y0 = oy * stride - padding;
          const int x0 = ox * stride - padding;
          for (int ci = 0; ci < in.c; ++ci)
            for (int ky = 0; ky < k; ++ky) {
              const int iy = y0 + ky;
              if (iy < 0 || iy >= in.h) continue;
              const S* row = xi + in.index(n, ci, iy, 0);
              const S* wrow = xw + ws.index(co, ci, ky, 0);
              for (int kx = 0; kx < k; ++kx) {
                const int ix = x0 + kx;
                if (ix < 0 || ix >= in.w) continue;
                acc += static_cast<double>(row[ix]) * static_cast<double>(wrow[kx]);
              }
            }
          out[io] = static_cast<S>(acc);
        }
    }
  Tensor<S> result(out_shape, std::move(out));
  Tape<S>* tape = joint_tape<S>({&input, &weight, &bias});
  if (!tape) return result;
  const int ni = input.requires_grad() ? input.node() : -1;
  const int nw = weight.requires_grad() ? weight.node() : -1;
  const int nb = has_bias && bias.requires_grad() ? bias.node() : -1;
  return tape->record(result, [input, weight, ni, nw, nb, stride, padding, k, out_shape](
                                  Tape<S>& t, const Buffer<S>& gout) {
    const Shape in = input.shape();
    const Shape ws = weight.shape();
    const S* xi = input.data();
    const S* xw = weight.data();
    Buffer<S>* gi = ni >= 0 ? &t.grad(ni) : nullptr;
    Buffer<S>* gw = nw >= 0 ? &t.grad(nw) : nullptr;
    Buffer<S>* gb = nb >= 0 ? &t.grad(nb) : nullptr;
    long long io = 0;
    for (int n = 0; n < in.n; ++n)
      for (int co = 0; co < ws.n; ++co)
        for (int oy = 0; oy < out_shape.h; ++oy)
          for (int ox = 0; ox < out_shape.w; ++ox, ++io) {
            const S g = gout[io];
            if (g == S(0)) continue;
            if (gb) (*gb)[co] += g;
            const int y0 = oy * stride - padding;
            const int x0 = ox * stride - padding;
            for (int ci = 0; ci < in.c; ++ci)
              for (int ky = 0; ky < k; ++ky) {
                const int iy = y0 + ky;
                if (iy < 0 || iy >= in.h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = x0 + kx;
                  if (ix < 0 || ix >= in.w) continue;
                  const long long ii = in.index(n, ci, iy, ix);
                  const long long wi = ws.index(co, ci, ky, kx);
                  if (gi) (*gi)[ii] += xw[wi] * g;
                  if (gw) (*gw)[wi] += xi[ii] * g;
                }
              }
          }
  });
}

// ---------------------------------------------------------------------------
// Bilinear upsampling (half-pixel centers)
// ---------------------------------------------------------------------------

// Output pixel i samples the source at (i + 0.5)/factor - 0.5, clamped to the
// valid range; factor 1 is the identity.
template <typename S>
Tensor<S> upsample_bilinear(const Tensor<S>& input, int factor) {
  require(factor >= 1, "bad-argument", "upsample factor must be >= 1");
  const Shape in = input.shape();
  if (factor == 1) return input;
  const Shape out_shape(in.n, in.c, in.h * factor, in.w * factor);

  struct Taps {
    int i0, i1;
    double w1;  // weight of i1; i0 gets 1 - w1
  };
  auto make_taps = [factor](int size, int out_size) {
    std::vector<Taps> taps(static_cast<std::size_t>(out_size));
    for (int o = 0; o < out_size; ++o) {
      double src = (o + 0.5) / factor - 0.5;
      src = std::min(std::max(src, 0.0), static_cast<double>(size - 1));
      int i0 = static_cast<int>(std::floor(src));
      int i1 = std::min(i0 + 1, size - 1);
      taps[static_cast<std::size_t>(o)] = Taps{i0, i1, src - i0};
    }
    return taps;
  };
  auto ty = std::make_shared<std::vector<Taps>>(make_taps(in.h, out_shape.h));
  auto tx = std::make_shared<std::vector<Taps>>(make_taps(in.w, out_shape.w));

  // Interpolation runs in double and casts once at the store.
  Buffer<S> out(out_shape.numel());
  const S* x = input.data();
  long long io = 0;
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < in.c; ++c) {
      const S* plane = x + in.index(n, c, 0, 0);
      for (int oy = 0; oy < out_shape.h; ++oy) {
        const Taps& y = (*ty)[static_cast<std::size_t>(oy)];
        const S* r0 = plane + static_cast<long long>(y.i0) * in.w;
        const S* r1 = plane + static_cast<long long>(y.i1) * in.w;
        for (int ox = 0; ox < out_shape.w; ++ox, ++io) {
          const Taps& tpx = (*tx)[static_cast<std::size_t>(ox)];
          const double top = static_cast<double>(r0[tpx.i0]) * (1.0 - tpx.w1) +
                             static_cast<double>(r0[tpx.i1]) * tpx.w1;
          const double bot = static_cast<double>(r1[tpx.i0]) * (1.0 - tpx.w1) +
                             static_cast<double>(r1[tpx.i1]) * tpx.w1;
          out[io] = static_cast<S>(top * (1.0 - y.w1) + bot * y.w1);
        }
      }
    }
  Tensor<S> result(out_shape, std::move(out));
  if (!input.requires_grad()) return result;
  Tape<S>* tape = input.tape();
  const int ni = input.node();
  return tape->record(result, [ni, in, out_shape, ty, tx](Tape<S>& t, const Buffer<S>& gout) {
    Buffer<S>& gi = t.grad(ni);
    long long io = 0;
    for (int n = 0; n < in.n; ++n)
      for (int c = 0; c < in.c; ++c) {
        S* plane = gi.data() + in.index(n, c, 0, 0);
        for (int oy = 0; oy < out_shape.h; ++oy) {
          const auto& y = (*ty)[static_cast<std::size_t>(oy)];
          for (int ox = 0; ox < out_shape.w; ++ox, ++io) {
            const auto& tpx = (*tx)[static_cast<std::size_t>(ox)];
            const double g = static_cast<double>(gout[io]);
            plane[static_cast<long long>(y.i0) * in.w + tpx.i0] +=
                static_cast<S>(g * (1.0 - y.w1) * (1.0 - tpx.w1));
            plane[static_cast<long long>(y.i0) * in.w + tpx.i1] +=
                static_cast<S>(g * (1.0 - y.w1) * tpx.w1);
            plane[static_cast<long long>(y.i1) * in.w + tpx.i0] +=
                static_cast<S>(g * y.w1 * (1.0 - tpx.w1));
            plane[static_cast<long long>(y.i1) * in.w + tpx.i1] +=
                static_cast<S>(g * y.w1 * tpx.w1);
          }
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Grid sampling
// ---------------------------------------------------------------------------

template <typename S>
struct Sampled {
  Tensor<S> values;  // bilinear samples; 0 where invalid
  Tensor<S> mask;    // constant {0,1}: sample point inside the source
};

// grid holds absolute sampling coordinates in pixel units, channel 0 = x,
// channel 1 = y; pixel (0,0) is the top-left pixel center. A sample is valid
// iff its point lies in [0, W-1] x [0, H-1]; every neighbor that receives
// nonzero bilinear weight is then inside the source. Differentiable w.r.t.
// input values and grid coordinates; invalid samples get zero everywhere.
template <typename S>
Sampled<S> grid_sample(const Tensor<S>& input, const Tensor<S>& grid) {
  const Shape in = input.shape();
  const Shape gs = grid.shape();
  require(gs.c == 2, "bad-shape", "grid must have 2 channels, got " + gs.str());
  require(gs.n == in.n, "shape-mismatch", "grid batch differs from input batch");
  const Shape out_shape(in.n, in.c, gs.h, gs.w);
  const long long cells = static_cast<long long>(gs.n) * gs.h * gs.w;

  struct Cell {
    int x0, y0, x1, y1;
    double fx, fy;
    bool valid;
  };
  auto cellinfo = std::make_shared<std::vector<Cell>>(static_cast<std::size_t>(cells));
  {
    long long ic = 0;
    for (int n = 0; n < gs.n; ++n)
      for (int y = 0; y < gs.h; ++y)
        for (int x = 0; x < gs.w; ++x, ++ic) {
          const double sx = static_cast<double>(grid.at(n, 0, y, x));
          const double sy = static_cast<double>(grid.at(n, 1, y, x));
          Cell cell{};
          cell.valid = std::isfinite(sx) && std::isfinite(sy) && sx >= 0.0 &&
                       sx <= in.w - 1.0 && sy >= 0.0 && sy <= in.h - 1.0;
          if (cell.valid) {
            cell.x0 = static_cast<int>(std::floor(sx));
            cell.y0 = static_cast<int>(std::floor(sy));
            cell.fx = sx - cell.x0;
            cell.fy = sy - cell.y0;
            cell.x1 = std::min(cell.x0 + 1, in.w - 1);
            cell.y1 = std::min(cell.y0 + 1, in.h - 1);
          }
          (*cellinfo)[static_cast<std::size_t>(ic)] = cell;
        }
  }

  Buffer<S> out = Buffer<S>::Zero(out_shape.numel());
  Buffer<S> mask(cells);
  const S* x = input.data();
  {
    long long ic = 0;
    for (int n = 0; n < gs.n; ++n)
      for (int y = 0; y < gs.h; ++y)
        for (int gxi = 0; gxi < gs.w; ++gxi, ++ic) {
          const Cell& cell = (*cellinfo)[static_cast<std::size_t>(ic)];
          mask[ic] = cell.valid ? S(1) : S(0);
          if (!cell.valid) continue;
          for (int c = 0; c < in.c; ++c) {
            const S* plane = x + in.index(n, c, 0, 0);
            const double v00 = plane[static_cast<long long>(cell.y0) * in.w + cell.x0];
            const double v01 = plane[static_cast<long long>(cell.y0) * in.w + cell.x1];
            const double v10 = plane[static_cast<long long>(cell.y1) * in.w + cell.x0];
            const double v11 = plane[static_cast<long long>(cell.y1) * in.w + cell.x1];
            const double top = v00 * (1.0 - cell.fx) + v01 * cell.fx;
            const double bot = v10 * (1.0 - cell.fx) + v11 * cell.fx;
            out[out_shape.index(n, c, y, gxi)] =
                static_cast<S>(top * (1.0 - cell.fy) + bot * cell.fy);
          }
        }
  }
  Tensor<S> values(out_shape, std::move(out));
  Tensor<S> mask_t(Shape(gs.n, 1, gs.h, gs.w), std::move(mask));
  Tape<S>* tape = joint_tape<S>({&input, &grid});
  if (!tape) return Sampled<S>{values, mask_t};
  const int ni = input.requires_grad() ? input.node() : -1;
  const int ng = grid.requires_grad() ? grid.node() : -1;
  values = tape->record(values, [input, ni, ng, in, gs, out_shape, cellinfo](
                                    Tape<S>& t, const Buffer<S>& gout) {
    const S* x = input.data();
    Buffer<S>* gi = ni >= 0 ? &t.grad(ni) : nullptr;
    Buffer<S>* gg = ng >= 0 ? &t.grad(ng) : nullptr;
    const Shape grid_shape(gs.n, 2, gs.h, gs.w);
    long long ic = 0;
    for (int n = 0; n < gs.n; ++n)
      for (int y = 0; y < gs.h; ++y)
        for (int gxi = 0; gxi < gs.w; ++gxi, ++ic) {
          const Cell& cell = (*cellinfo)[static_cast<std::size_t>(ic)];
          if (!cell.valid) continue;
          double dldx = 0.0;
          double dldy = 0.0;
          for (int c = 0; c < in.c; ++c) {
            const double g = static_cast<double>(gout[out_shape.index(n, c, y, gxi)]);
            if (g == 0.0) continue;
            const long long base = in.index(n, c, 0, 0);
            const long long i00 = base + static_cast<long long>(cell.y0) * in.w + cell.x0;
            const long long i01 = base + static_cast<long long>(cell.y0) * in.w + cell.x1;
            const long long i10 = base + static_cast<long long>(cell.y1) * in.w + cell.x0;
            const long long i11 = base + static_cast<long long>(cell.y1) * in.w + cell.x1;
            if (gi) {
              (*gi)[i00] += static_cast<S>(g * (1.0 - cell.fx) * (1.0 - cell.fy));
              (*gi)[i01] += static_cast<S>(g * cell.fx * (1.0 - cell.fy));
              (*gi)[i10] += static_cast<S>(g * (1.0 - cell.fx) * cell.fy);
              (*gi)[i11] += static_cast<S>(g * cell.fx * cell.fy);
            }
            if (gg) {
              const double v00 = x[i00], v01 = x[i01], v10 = x[i10], v11 = x[i11];
              dldx += g * ((v01 - v00) * (1.0 - cell.fy) + (v11 - v10) * cell.fy);
              dldy += g * ((v10 - v00) * (1.0 - cell.fx) + (v11 - v01) * cell.fx);
            }
          }
          if (gg) {
            (*gg)[grid_shape.index(n, 0, y, gxi)] += static_cast<S>(dldx);
            (*gg)[grid_shape.index(n, 1, y, gxi)] += static_cast<S>(dldy);
          }
        }
  });
  return Sampled<S>{values, mask_t};
}

// Constant maps of pixel x/y coordinates, each n x 1 x h x w.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> coord_maps(int n, int h, int w) {
  const Shape s(n, 1, h, w);
  Buffer<S> xs(s.numel());
  Buffer<S> ys(s.numel());
  long long i = 0;
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x, ++i) {
        xs[i] = static_cast<S>(x);
        ys[i] = static_cast<S>(y);
      }
  return {Tensor<S>(s, std::move(xs)), Tensor<S>(s, std::move(ys))};
}

// Throws with context when non-finite values appear (validation pass for
// division blow-ups and loss diagnostics).
template <typename S>
void validate_finite(const Tensor<S>& t, const std::string& context) {
  require(t.all_finite(), "non-finite", "non-finite values in " + context);
}

}  // namespace srdepth
