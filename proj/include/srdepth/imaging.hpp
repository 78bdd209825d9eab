// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>

#include "srdepth/ops.hpp"

// Image-space primitives: forward-difference gradients, 3x3 box filtering
// with mirror padding, and per-pixel SSIM.
namespace srdepth {

// Forward differences along x; the last column is zero so the shape is kept.
template <typename S>
Tensor<S> grad_x(const Tensor<S>& a) {
  const Shape s = a.shape();
  require(s.w >= 2 && s.h >= 2, "bad-shape", "gradients need at least 2x2, got " + s.str());
  Buffer<S> out(s.numel());
  const S* x = a.data();
  long long i = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx, ++i)
          out[i] = (xx + 1 < s.w) ? x[i + 1] - x[i] : S(0);
  Tensor<S> result(s, std::move(out));
  if (!a.requires_grad()) return result;
  const int na = a.node();
  return a.tape()->record(result, [na, s](Tape<S>& t, const Buffer<S>& gout) {
    Buffer<S>& ga = t.grad(na);
    long long i = 0;
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx, ++i)
            if (xx + 1 < s.w) {
              ga[i + 1] += gout[i];
              ga[i] -= gout[i];
            }
  });
}

// Forward differences along y; the last row is zero.
template <typename S>
Tensor<S> grad_y(const Tensor<S>& a) {
  const Shape s = a.shape();
  require(s.w >= 2 && s.h >= 2, "bad-shape", "gradients need at least 2x2, got " + s.str());
  Buffer<S> out(s.numel());
  const S* x = a.data();
  long long i = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx, ++i)
          out[i] = (y + 1 < s.h) ? x[i + s.w] - x[i] : S(0);
  Tensor<S> result(s, std::move(out));
  if (!a.requires_grad()) return result;
  const int na = a.node();
  return a.tape()->record(result, [na, s](Tape<S>& t, const Buffer<S>& gout) {
    Buffer<S>& ga = t.grad(na);
    long long i = 0;
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx, ++i)
            if (y + 1 < s.h) {
              ga[i + s.w] += gout[i];
              ga[i] -= gout[i];
            }
  });
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> image_gradients(const Tensor<S>& a) {
  return {grad_x(a), grad_y(a)};
}

namespace detail {
// Mirror index without edge duplication: -1 -> 1, size -> size - 2.
// Degenerates to clamping when the extent is 1.
inline int reflect101(int i, int size) {
  if (size == 1) return 0;
  if (i < 0) i = -i;
  if (i >= size) i = 2 * size - 2 - i;
  return i;
}
}  // namespace detail

// 3x3 uniform average per channel with mirror padding.
template <typename S>
Tensor<S> box_filter3(const Tensor<S>& a) {
  const Shape s = a.shape();
  Buffer<S> out(s.numel());
  const S* x = a.data();
  const S inv9 = S(1) / S(9);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const S* plane = x + s.index(n, c, 0, 0);
      S* oplane = out.data() + s.index(n, c, 0, 0);
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          double acc = 0.0;
          for (int dy = -1; dy <= 1; ++dy) {
            const int iy = detail::reflect101(y + dy, s.h);
            for (int dx = -1; dx <= 1; ++dx)
              acc += static_cast<double>(
                  plane[static_cast<long long>(iy) * s.w + detail::reflect101(xx + dx, s.w)]);
          }
          oplane[static_cast<long long>(y) * s.w + xx] = static_cast<S>(acc) * inv9;
        }
    }
  Tensor<S> result(s, std::move(out));
  if (!a.requires_grad()) return result;
  const int na = a.node();
  return a.tape()->record(result, [na, s, inv9](Tape<S>& t, const Buffer<S>& gout) {
    Buffer<S>& ga = t.grad(na);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        S* gplane = ga.data() + s.index(n, c, 0, 0);
        const S* oplane = gout.data() + s.index(n, c, 0, 0);
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx) {
            const S g = oplane[static_cast<long long>(y) * s.w + xx] * inv9;
            if (g == S(0)) continue;
            for (int dy = -1; dy <= 1; ++dy) {
              const int iy = detail::reflect101(y + dy, s.h);
              for (int dx = -1; dx <= 1; ++dx)
                gplane[static_cast<long long>(iy) * s.w + detail::reflect101(xx + dx, s.w)] += g;
            }
          }
      }
  });
}

// Per-pixel structural similarity of two equally shaped maps in [0, 1].
// 3x3 uniform windows, stabilizers C1 = 0.01^2 and C2 = 0.03^2; computed per
// channel; output in [-1, 1] and symmetric in its arguments.
template <typename S>
Tensor<S> ssim(const Tensor<S>& a, const Tensor<S>& b) {
  require(a.shape() == b.shape(), "shape-mismatch",
          "ssim operands differ: " + a.shape().str() + " vs " + b.shape().str());
  const S c1 = S(0.01) * S(0.01);
  const S c2 = S(0.03) * S(0.03);
  Tensor<S> mu_a = box_filter3(a);
  Tensor<S> mu_b = box_filter3(b);
  Tensor<S> mu_aa = mul(mu_a, mu_a);
  Tensor<S> mu_bb = mul(mu_b, mu_b);
  Tensor<S> mu_ab = mul(mu_a, mu_b);
  Tensor<S> sigma_a = sub(box_filter3(mul(a, a)), mu_aa);
  Tensor<S> sigma_b = sub(box_filter3(mul(b, b)), mu_bb);
  Tensor<S> sigma_ab = sub(box_filter3(mul(a, b)), mu_ab);
  Tensor<S> numer = mul(offset(scale(mu_ab, S(2)), c1), offset(scale(sigma_ab, S(2)), c2));
  Tensor<S> denom = mul(offset(add(mu_aa, mu_bb), c1), offset(add(sigma_a, sigma_b), c2));
  return div(numer, denom);
}

}  // namespace srdepth
