// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>

#include "srdepth/geometry.hpp"
#include "srdepth/ops.hpp"

// View synthesis and disparity-offset warping: the two geometric resampling
// procedures. Everything here is built from tensor ops so gradients reach
// depth maps, offset fields, and 6-DoF pose parameters.
namespace srdepth {

template <typename S>
struct SynthesizedView {
  Tensor<S> image;     // n x C x H x W, zeros where invalid
  Tensor<S> validity;  // constant n x 1 x H x W in {0,1}
};

// Rotation coefficients as broadcastable tensors (each n x 1 x 1 x 1 or a
// shared constant), row-major r[3][3] plus translation t[3].
template <typename S>
struct PoseTensors {
  std::array<std::array<Tensor<S>, 3>, 3> r;
  std::array<Tensor<S>, 3> t;
};

// Wraps a fixed rigid transform as constant pose tensors.
template <typename S>
PoseTensors<S> pose_tensors(const RigidTransform& pose) {
  PoseTensors<S> out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j)
      out.r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          Tensor<S>::scalar(static_cast<S>(pose.rotation(i, j)));
    out.t[static_cast<std::size_t>(i)] = Tensor<S>::scalar(static_cast<S>(pose.translation[i]));
  }
  return out;
}

// Differentiable exponential map: axis_angle and translation are n x 3 x 1 x 1
// tensors. Uses R = cos(th) I + (sin(th)/th) K + ((1-cos(th))/th^2) w w^T with
// K = skew(w); the (1-cos)/th^2 factor is evaluated as 2 sin^2(th/2)/th^2 and
// th is floored through sqrt(th^2 + 1e-12) so the zero-rotation limit stays
// finite (R deviates from I by O(1e-12) there).
template <typename S>
PoseTensors<S> pose_tensors_from_6dof(const Tensor<S>& axis_angle,
                                      const Tensor<S>& translation) {
  require(axis_angle.shape().c == 3 && translation.shape().c == 3, "bad-shape",
          "6-DoF pose tensors need 3 channels each");
  Tensor<S> wx = slice_channels(axis_angle, 0, 1);
  Tensor<S> wy = slice_channels(axis_angle, 1, 2);
  Tensor<S> wz = slice_channels(axis_angle, 2, 3);
  Tensor<S> th_sq = add(add(mul(wx, wx), mul(wy, wy)), mul(wz, wz));
  Tensor<S> th = sqrt(offset(th_sq, S(1e-12)));
  Tensor<S> cos_th = cos(th);
  Tensor<S> a = div(sin(th), th);                       // sin(th)/th
  Tensor<S> sh = sin(scale(th, S(0.5)));                // sin(th/2)
  Tensor<S> b = div(scale(mul(sh, sh), S(2)), mul(th, th));  // (1-cos th)/th^2

  PoseTensors<S> out;
  auto diag = [&](const Tensor<S>& w) { return add(cos_th, mul(b, mul(w, w))); };
  auto off = [&](const Tensor<S>& wi, const Tensor<S>& wj, const Tensor<S>& wk, S sign) {
    // b * wi * wj + sign * a * wk
    return add(mul(b, mul(wi, wj)), scale(mul(a, wk), sign));
  };
  out.r[0][0] = diag(wx);
  out.r[0][1] = off(wx, wy, wz, S(-1));
  out.r[0][2] = off(wx, wz, wy, S(1));
  out.r[1][0] = off(wy, wx, wz, S(1));
  out.r[1][1] = diag(wy);
  out.r[1][2] = off(wy, wz, wx, S(-1));
  out.r[2][0] = off(wz, wx, wy, S(-1));
  out.r[2][1] = off(wz, wy, wx, S(1));
  out.r[2][2] = diag(wz);
  out.t[0] = slice_channels(translation, 0, 1);
  out.t[1] = slice_channels(translation, 1, 2);
  out.t[2] = slice_channels(translation, 2, 3);
  return out;
}

template <typename S>
struct ProjectionGrid {
  Tensor<S> grid;      // n x 2 x H x W sampling coordinates in source pixels
  Tensor<S> in_front;  // constant {0,1}: transformed point in front of the camera
};

// Backproject every target pixel with its depth, move it by the pose, and
// project into the source view. depth is n x 1 x H x W.
template <typename S>
ProjectionGrid<S> projection_grid(const Tensor<S>& depth, const PoseTensors<S>& pose,
                                  const Intrinsics& k) {
  const Shape s = depth.shape();
  require(s.c == 1, "bad-shape", "depth must be single-channel, got " + s.str());
  auto [ux, vy] = coord_maps<S>(s.n, s.h, s.w);
  Tensor<S> x = mul(scale(offset(ux, static_cast<S>(-k.u0)), static_cast<S>(1.0 / k.fx)), depth);
  Tensor<S> y = mul(scale(offset(vy, static_cast<S>(-k.v0)), static_cast<S>(1.0 / k.fy)), depth);
  const Tensor<S>& z = depth;

  auto row = [&](int i) {
    return add(add(add(mul(pose.r[static_cast<std::size_t>(i)][0], x),
                       mul(pose.r[static_cast<std::size_t>(i)][1], y)),
                   mul(pose.r[static_cast<std::size_t>(i)][2], z)),
               pose.t[static_cast<std::size_t>(i)]);
  };
  Tensor<S> xs = row(0);
  Tensor<S> ys = row(1);
  Tensor<S> zs = row(2);
  Tensor<S> in_front = greater_than_mask(zs, static_cast<S>(kBehindCameraEps));
  Tensor<S> zsafe = clamp_min(zs, static_cast<S>(kBehindCameraEps));
  Tensor<S> us = offset(scale(div(xs, zsafe), static_cast<S>(k.fx)), static_cast<S>(k.u0));
  Tensor<S> vs = offset(scale(div(ys, zsafe), static_cast<S>(k.fy)), static_cast<S>(k.v0));
  return ProjectionGrid<S>{concat_channels(us, vs), in_front};
}

// pi: reconstructs the target view by sampling the source image where the
// target's depth lands under the target->source pose. Differentiable w.r.t.
// depth and any recorded pose tensors; validity is 0 where the sample left
// the source frame or the point fell behind the camera, and such pixels are
// meant to be excluded from losses.
template <typename S>
SynthesizedView<S> synthesize_view(const Tensor<S>& source, const Tensor<S>& depth,
                                   const PoseTensors<S>& pose, const Intrinsics& k) {
  require(source.shape().n == depth.shape().n, "shape-mismatch",
          "source batch differs from depth batch");
  ProjectionGrid<S> pg = projection_grid(depth, pose, k);
  Sampled<S> sampled = grid_sample(source, pg.grid);
  return SynthesizedView<S>{sampled.values, mul(sampled.mask, pg.in_front)};
}

template <typename S>
SynthesizedView<S> synthesize_view(const Tensor<S>& source, const Tensor<S>& depth,
                                   const RigidTransform& pose, const Intrinsics& k) {
  return synthesize_view(source, depth, pose_tensors<S>(pose), k);
}

template <typename S>
struct WarpedDisparity {
  Tensor<S> values;
  Tensor<S> validity;  // constant {0,1}
};

// Resamples an (already upsampled) disparity map at p + offset(p). The offset
// field is 2-channel (dx, dy) in pixels of the disparity's own resolution and
// the two inputs must match spatially; out-of-range samples yield 0 with
// validity 0.
template <typename S>
WarpedDisparity<S> warp_disparity_with_offset(const Tensor<S>& disparity,
                                              const Tensor<S>& offset_field) {
  const Shape ds = disparity.shape();
  const Shape os = offset_field.shape();
  require(os.c == 2, "bad-shape", "offset field must have 2 channels, got " + os.str());
  require(ds.n == os.n && ds.h == os.h && ds.w == os.w, "shape-mismatch",
          "offset resolution " + os.str() + " does not match disparity " + ds.str());
  auto [ux, vy] = coord_maps<S>(ds.n, ds.h, ds.w);
  Tensor<S> grid = concat_channels(add(ux, slice_channels(offset_field, 0, 1)),
                                   add(vy, slice_channels(offset_field, 1, 2)));
  Sampled<S> sampled = grid_sample(disparity, grid);
  return WarpedDisparity<S>{sampled.values, sampled.mask};
}

}  // namespace srdepth
