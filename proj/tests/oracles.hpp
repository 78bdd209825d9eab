// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "srdepth/tensor.hpp"

// Scalar-loop reference implementations (test-only). Deliberately naive and
// independent of the library's operator code paths; where exact agreement is
// asserted, the accumulation order matches the documented contract (double
// accumulators over ci -> ky -> kx for convolution, row-major pixel scans).
namespace srdepth::testing {

template <typename S>
Tensor<S> conv2d_oracle(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                        int stride, int padding) {
  const Shape in = input.shape();
  const Shape ws = weight.shape();
  const int k = ws.h;
  const int oh = (in.h + 2 * padding - k) / stride + 1;
  const int ow = (in.w + 2 * padding - k) / stride + 1;
  const Shape os(in.n, ws.n, oh, ow);
  Buffer<S> out(os.numel());
  for (int n = 0; n < in.n; ++n)
    for (int co = 0; co < ws.n; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : static_cast<double>(bias.at(0, co, 0, 0));
          for (int ci = 0; ci < in.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - padding + ky;
                const int ix = ox * stride - padding + kx;
                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                acc += static_cast<double>(input.at(n, ci, iy, ix)) *
                       static_cast<double>(weight.at(co, ci, ky, kx));
              }
          out[os.index(n, co, oy, ox)] = static_cast<S>(acc);
        }
  return Tensor<S>(os, std::move(out));
}

// Scalar bilinear read with clamped corner fetch (half-open weights).
template <typename S>
double bilinear_at(const Tensor<S>& map, int n, int c, double x, double y) {
  const Shape s = map.shape();
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, s.w - 1);
  const int y1 = std::min(y0 + 1, s.h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double v00 = map.at(n, c, y0, x0);
  const double v01 = map.at(n, c, y0, x1);
  const double v10 = map.at(n, c, y1, x0);
  const double v11 = map.at(n, c, y1, x1);
  return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
}

template <typename S>
Tensor<S> upsample_oracle(const Tensor<S>& input, int factor) {
  const Shape in = input.shape();
  const Shape os(in.n, in.c, in.h * factor, in.w * factor);
  Buffer<S> out(os.numel());
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < in.c; ++c)
      for (int oy = 0; oy < os.h; ++oy)
        for (int ox = 0; ox < os.w; ++ox) {
          double sy = (oy + 0.5) / factor - 0.5;
          double sx = (ox + 0.5) / factor - 0.5;
          sy = std::min(std::max(sy, 0.0), static_cast<double>(in.h - 1));
          sx = std::min(std::max(sx, 0.0), static_cast<double>(in.w - 1));
          out[os.index(n, c, oy, ox)] = static_cast<S>(bilinear_at(input, n, c, sx, sy));
        }
  return Tensor<S>(os, std::move(out));
}

inline int reflect_oracle(int i, int size) {
  if (size == 1) return 0;
  while (i < 0 || i >= size) {
    if (i < 0) i = -i;
    if (i >= size) i = 2 * size - 2 - i;
  }
  return i;
}

// Per-pixel SSIM via direct window sums at one location.
template <typename S>
double ssim_oracle_at(const Tensor<S>& a, const Tensor<S>& b, int n, int c, int y, int x) {
  const Shape s = a.shape();
  double mu_a = 0, mu_b = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const int iy = reflect_oracle(y + dy, s.h);
      const int ix = reflect_oracle(x + dx, s.w);
      mu_a += a.at(n, c, iy, ix);
      mu_b += b.at(n, c, iy, ix);
    }
  mu_a /= 9.0;
  mu_b /= 9.0;
  double saa = 0, sbb = 0, sab = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const int iy = reflect_oracle(y + dy, s.h);
      const int ix = reflect_oracle(x + dx, s.w);
      saa += a.at(n, c, iy, ix) * a.at(n, c, iy, ix);
      sbb += b.at(n, c, iy, ix) * b.at(n, c, iy, ix);
      sab += a.at(n, c, iy, ix) * b.at(n, c, iy, ix);
    }
  const double var_a = saa / 9.0 - mu_a * mu_a;
  const double var_b = sbb / 9.0 - mu_b * mu_b;
  const double cov = sab / 9.0 - mu_a * mu_b;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
         ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

}  // namespace srdepth::testing
