// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>

#include "srdepth/common.hpp"
#include "srdepth/tensor.hpp"

// Pinhole camera model and rigid motion. Coordinate convention: x right,
// y down, z forward; pixel (0,0) sits at the top-left pixel center. All
// geometry runs in double; image-like payloads stay in the tensor scalar.
namespace srdepth {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Guard against division blow-up when projecting points at or behind the
// camera plane.
inline constexpr double kBehindCameraEps = 1e-6;

struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double u0 = 0.0;
  double v0 = 0.0;

  Intrinsics() = default;
  Intrinsics(double fx_, double fy_, double u0_, double v0_)
      : fx(fx_), fy(fy_), u0(u0_), v0(v0_) {
    require(fx > 0.0 && fy > 0.0, "bad-intrinsics", "focal lengths must be positive");
  }

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0, u0, 0, fy, v0, 0, 0, 1;
    return k;
  }
};

// Rigid motion p' = R p + t. Construction validates orthonormality and
// orientation to 1e-6.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  RigidTransform() = default;
  RigidTransform(const Mat3& r, const Vec3& t) : rotation(r), translation(t) {
    validate();
  }

  void validate() const {
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).norm();
    require(ortho < 1e-6, "bad-transform", "rotation is not orthonormal");
    require(std::abs(rotation.determinant() - 1.0) < 1e-6, "bad-transform",
            "rotation determinant is not +1");
  }

  static RigidTransform identity() { return RigidTransform(); }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(rotation.transpose() * translation);
    return inv;
  }

  // Composition: (a.compose(b))(p) = a(b(p)).
  RigidTransform compose(const RigidTransform& b) const {
    RigidTransform out;
    out.rotation = rotation * b.rotation;
    out.translation = rotation * b.translation + translation;
    return out;
  }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

// Exponential map of an axis-angle vector plus translation.
inline RigidTransform pose_from_6dof(const Vec3& axis_angle, const Vec3& translation) {
  const double angle = axis_angle.norm();
  Mat3 r = Mat3::Identity();
  if (angle > 0.0) {
    r = Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
  }
  RigidTransform out;
  out.rotation = r;
  out.translation = translation;
  return out;
}

// Pixel (u, v) with positive depth Z to camera-frame (X, Y, Z).
inline Vec3 backproject(double u, double v, double depth, const Intrinsics& k) {
  return Vec3((u - k.u0) / k.fx * depth, (v - k.v0) / k.fy * depth, depth);
}

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // Z of the input point, unchanged
  bool valid = false;  // false when the point is at or behind the camera
};

inline Projection project(const Vec3& p, const Intrinsics& k) {
  Projection out;
  out.depth = p.z();
  if (p.z() <= kBehindCameraEps) return out;
  out.u = k.fx * p.x() / p.z() + k.u0;
  out.v = k.fy * p.y() / p.z() + k.v0;
  out.valid = true;
  return out;
}

// Disparity <-> depth: affine in inverse depth over [min_depth, max_depth].
// disparity 0 maps to max_depth, disparity 1 to min_depth.
struct DepthRange {
  double min_depth = 0.1;
  double max_depth = 100.0;

  double depth_from_disparity(double d) const {
    const double inv = 1.0 / max_depth + (1.0 / min_depth - 1.0 / max_depth) * d;
    return 1.0 / inv;
  }

  double disparity_from_depth(double z) const {
    return (1.0 / z - 1.0 / max_depth) / (1.0 / min_depth - 1.0 / max_depth);
  }
};

// Tensor forms (differentiable, per element).
template <typename S>
Tensor<S> disparity_to_depth(const Tensor<S>& d, const DepthRange& range = {}) {
  const S a = static_cast<S>(1.0 / range.max_depth);
  const S b = static_cast<S>(1.0 / range.min_depth - 1.0 / range.max_depth);
  return div(Tensor<S>::scalar(S(1)), offset(scale(d, b), a));
}

template <typename S>
Tensor<S> depth_to_disparity(const Tensor<S>& z, const DepthRange& range = {}) {
  const S b = static_cast<S>(1.0 / range.min_depth - 1.0 / range.max_depth);
  const S a = static_cast<S>(1.0 / range.max_depth);
  return scale(offset(div(Tensor<S>::scalar(S(1)), z), -a), S(1) / b);
}

}  // namespace srdepth
