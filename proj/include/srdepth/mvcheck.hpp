// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "srdepth/geometry.hpp"
#include "srdepth/ops.hpp"

// Multiview consistency filter: forward-project each target pixel into a
// source view, remap the source depth there, reproject back, and score the
// round trip with a reprojection error (pixels) and a relative depth error.
// Thresholding the errors against per-image means yields the filter mask used
// to reject unreliable pseudo-labels. Pure value computation, no gradients.
namespace srdepth {

// Which depths the relative error compares. The reprojected-depth form checks
// the round-tripped depth against the target depth at the starting pixel (the
// standard consistency check). The literal variant instead resamples the
// original target depth map at the reprojected pixel.
enum class GeoErrorMode { reprojected_depth, target_resample };

template <typename S>
struct ConsistencyReport {
  Tensor<S> e_reproj;  // n x 1 x H x W, >= 0 where valid, 0 elsewhere
  Tensor<S> e_geo;     // n x 1 x H x W, >= 0 where valid, 0 elsewhere
  Tensor<S> valid;     // {0,1}: round trip stayed in-frame with positive depths
  double coverage = 0.0;  // fraction of pixels with valid round trips
};

namespace detail {

// Bilinear read of a single-channel plane at clamped continuous coordinates.
template <typename S>
double bilinear_plane(const S* plane, int h, int w, double x, double y) {
  x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = static_cast<double>(plane[y0 * w + x0]) * (1.0 - fx) +
                     static_cast<double>(plane[y0 * w + x1]) * fx;
  const double bot = static_cast<double>(plane[y1 * w + x0]) * (1.0 - fx) +
                     static_cast<double>(plane[y1 * w + x1]) * fx;
  return top * (1.0 - fy) + bot * fy;
}

}  // namespace detail

// Round-trips every target pixel through one source view. poses maps the
// target camera to the source camera, one entry per batch element (or a
// single entry shared by all).
template <typename S>
ConsistencyReport<S> check_pair(const Tensor<S>& d_target, const Tensor<S>& d_source,
                                const std::vector<RigidTransform>& poses,
                                const Intrinsics& k,
                                GeoErrorMode mode = GeoErrorMode::reprojected_depth) {
  const Shape s = d_target.shape();
  require(s.c == 1 && d_source.shape() == s, "shape-mismatch",
          "consistency check expects matching 1-channel depth maps");
  require(poses.size() == 1 || poses.size() == static_cast<std::size_t>(s.n),
          "bad-argument", "one pose per batch element (or a single shared pose) required");
  Buffer<S> e_reproj = Buffer<S>::Zero(s.numel());
  Buffer<S> e_geo = Buffer<S>::Zero(s.numel());
  Buffer<S> valid = Buffer<S>::Zero(s.numel());
  long long n_valid = 0;
  const double w_max = s.w - 1.0;
  const double h_max = s.h - 1.0;
  for (int b = 0; b < s.n; ++b) {
    const RigidTransform& pose = poses[poses.size() == 1 ? 0 : static_cast<std::size_t>(b)];
    const RigidTransform pose_inv = pose.inverse();
    const S* tgt = d_target.data() + s.index(b, 0, 0, 0);
    const S* src = d_source.data() + s.index(b, 0, 0, 0);
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const long long i = s.index(b, 0, y, x);
        const double depth0 = static_cast<double>(tgt[y * s.w + x]);
        if (!(depth0 > 0.0) || !std::isfinite(depth0)) continue;
        const Vec3 p0 = backproject(x, y, depth0, k);
        const Projection proj1 = project(pose.apply(p0), k);
        if (!proj1.valid || proj1.u < 0.0 || proj1.u > w_max || proj1.v < 0.0 ||
            proj1.v > h_max)
          continue;
        const double source_depth = detail::bilinear_plane(src, s.h, s.w, proj1.u, proj1.v);
        if (!(source_depth > 0.0) || !std::isfinite(source_depth)) continue;
        const Vec3 p1 = backproject(proj1.u, proj1.v, source_depth, k);
        const Projection proj0 = project(pose_inv.apply(p1), k);
        if (!proj0.valid || proj0.u < 0.0 || proj0.u > w_max || proj0.v < 0.0 ||
            proj0.v > h_max)
          continue;
        const double du = proj0.u - x;
        const double dv = proj0.v - y;
        double depth_back = proj0.depth;
        if (mode == GeoErrorMode::target_resample)
          depth_back = detail::bilinear_plane(tgt, s.h, s.w, proj0.u, proj0.v);
        e_reproj[i] = static_cast<S>(std::sqrt(du * du + dv * dv));
        e_geo[i] = static_cast<S>(std::abs(depth0 - depth_back) / depth0);
        valid[i] = S(1);
        ++n_valid;
      }
  }
  ConsistencyReport<S> report;
  report.e_reproj = Tensor<S>(s, std::move(e_reproj));
  report.e_geo = Tensor<S>(s, std::move(e_geo));
  report.valid = Tensor<S>(s, std::move(valid));
  report.coverage = static_cast<double>(n_valid) / static_cast<double>(s.numel());
  return report;
}

template <typename S>
struct FilterMask {
  Tensor<S> mask;           // {0,1}
  bool degenerate = false;  // some report had zero valid pixels
};

namespace detail {

// Per-image mean of values over valid pixels; zero when nothing is valid.
template <typename S>
std::vector<double> valid_means(const Tensor<S>& values, const Tensor<S>& valid) {
  const Shape s = values.shape();
  std::vector<double> means(static_cast<std::size_t>(s.n), 0.0);
  for (int b = 0; b < s.n; ++b) {
    double acc = 0.0;
    long long count = 0;
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const long long i = s.index(b, 0, y, x);
        if (valid.buf()[i] > S(0.5)) {
          acc += static_cast<double>(values.buf()[i]);
          ++count;
        }
      }
    means[static_cast<std::size_t>(b)] = count > 0 ? acc / static_cast<double>(count) : 0.0;
  }
  return means;
}

// Relative thresholds get a tiny absolute floor so exactly-zero error maps
// (perfectly consistent inputs) pass rather than failing the strict
// comparison against a zero mean.
inline constexpr double kThresholdFloor = 1e-12;

}  // namespace detail

// Pass iff, in every report, the pixel's round trip is valid and both errors
// sit strictly below alpha/beta times their per-image valid means. The final
// mask is the intersection across all source views.
template <typename S>
FilterMask<S> filter_mask(const std::vector<ConsistencyReport<S>>& reports, double alpha,
                          double beta) {
  require(!reports.empty(), "bad-argument", "filter mask over zero reports");
  require(alpha > 0.0 && beta > 0.0, "bad-argument", "thresholds must be positive");
  const Shape s = reports[0].e_reproj.shape();
  Buffer<S> mask = Buffer<S>::Constant(s.numel(), S(1));
  bool degenerate = false;
  for (const ConsistencyReport<S>& r : reports) {
    require(r.e_reproj.shape() == s, "shape-mismatch", "reports differ in shape");
    if (r.coverage == 0.0) degenerate = true;
    const std::vector<double> mean_r = detail::valid_means(r.e_reproj, r.valid);
    const std::vector<double> mean_g = detail::valid_means(r.e_geo, r.valid);
    for (int b = 0; b < s.n; ++b) {
      const double thr_r = alpha * std::max(mean_r[static_cast<std::size_t>(b)],
                                            detail::kThresholdFloor);
      const double thr_g = beta * std::max(mean_g[static_cast<std::size_t>(b)],
                                           detail::kThresholdFloor);
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const long long i = s.index(b, 0, y, x);
          const bool pass = r.valid.buf()[i] > S(0.5) &&
                            static_cast<double>(r.e_reproj.buf()[i]) < thr_r &&
                            static_cast<double>(r.e_geo.buf()[i]) < thr_g;
          if (!pass) mask[i] = S(0);
        }
    }
  }
  return FilterMask<S>{Tensor<S>(s, std::move(mask)), degenerate};
}

// Continuous alternative: per view exp(-e_geo / mean(e_geo)) on valid pixels
// (0 on invalid ones), averaged across views, then rescaled per image so the
// largest weight is 1.
template <typename S>
FilterMask<S> soft_mask(const std::vector<ConsistencyReport<S>>& reports) {
  require(!reports.empty(), "bad-argument", "soft mask over zero reports");
  const Shape s = reports[0].e_reproj.shape();
  Buffer<S> acc = Buffer<S>::Zero(s.numel());
  bool degenerate = false;
  for (const ConsistencyReport<S>& r : reports) {
    require(r.e_geo.shape() == s, "shape-mismatch", "reports differ in shape");
    if (r.coverage == 0.0) degenerate = true;
    const std::vector<double> mean_g = detail::valid_means(r.e_geo, r.valid);
    for (int b = 0; b < s.n; ++b) {
      const double m = std::max(mean_g[static_cast<std::size_t>(b)], detail::kThresholdFloor);
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const long long i = s.index(b, 0, y, x);
          if (r.valid.buf()[i] > S(0.5))
            acc[i] += static_cast<S>(std::exp(-static_cast<double>(r.e_geo.buf()[i]) / m));
        }
    }
  }
  const S inv_views = S(1) / static_cast<S>(reports.size());
  for (Eigen::Index i = 0; i < acc.size(); ++i) acc[i] *= inv_views;
  for (int b = 0; b < s.n; ++b) {
    S peak = S(0);
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) peak = std::max(peak, acc[s.index(b, 0, y, x)]);
    if (peak > S(0))
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) acc[s.index(b, 0, y, x)] /= peak;
  }
  return FilterMask<S>{Tensor<S>(s, std::move(acc)), degenerate};
}

// Nearest-neighbor decimation of a mask to a coarser scale; stays binary.
template <typename S>
Tensor<S> downsample_mask(const Tensor<S>& mask, int factor) {
  require(factor == 1 || factor == 2 || factor == 4 || factor == 8, "bad-argument",
          "mask decimation factor must be one of {1,2,4,8}");
  return decimate(mask, factor);
}

}  // namespace srdepth
