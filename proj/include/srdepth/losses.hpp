// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "srdepth/imaging.hpp"
#include "srdepth/warp.hpp"

// Training objectives: photometric reconstruction, edge-aware smoothness,
// masked depth distillation, automasking, and the weighted total.
namespace srdepth {

// The photometric L1 coefficient has two published conventions: the
// paper-literal weighting uses 2*alpha, the conventional one (1 - alpha).
// Both are implemented; which one a run optimized is recorded in its config.
enum class L1WeightMode { paper_literal, conventional };

inline const char* to_string(L1WeightMode m) {
  return m == L1WeightMode::paper_literal ? "paper" : "conventional";
}

struct LossWeights {
  double alpha = 0.85;    // SSIM/L1 mix
  double lambda_s = 1e-3; // smoothness weight
  double gamma_d = 0.1;   // distillation weight
  L1WeightMode l1_mode = L1WeightMode::paper_literal;

  double l1_weight() const {
    return l1_mode == L1WeightMode::paper_literal ? 2.0 * alpha : 1.0 - alpha;
  }
};

// Mean over the channel dim -> n x 1 x h x w.
template <typename S>
Tensor<S> channel_mean(const Tensor<S>& t) {
  const int c = t.shape().c;
  if (c == 1) return t;
  Tensor<S> acc = slice_channels(t, 0, 1);
  for (int i = 1; i < c; ++i) acc = add(acc, slice_channels(t, i, i + 1));
  return scale(acc, S(1) / S(c));
}

// Per-pixel photometric discrepancy F between the target image and one
// synthesized view: alpha*(1-SSIM)/2 + w_l1*|diff|, channel-averaged.
// Validity handling happens in the minimum over views.
template <typename S>
Tensor<S> photometric_pair(const Tensor<S>& target, const Tensor<S>& synth,
                           const LossWeights& w) {
  require(target.shape() == synth.shape(), "shape-mismatch",
          "photometric operands differ: " + target.shape().str() + " vs " +
              synth.shape().str());
  Tensor<S> ssim_term = scale(offset(scale(ssim(target, synth), S(-1)), S(1)),
                              static_cast<S>(0.5 * w.alpha));
  Tensor<S> l1_term = scale(abs(sub(target, synth)), static_cast<S>(w.l1_weight()));
  return channel_mean(add(ssim_term, l1_term));
}

// Occlusion-robust reduction: per-pixel minimum of F over the synthesized
// views. A view's invalid pixels are excluded from its candidacy; pixels
// invalid in every view carry value 0 with valid = 0.
template <typename S>
MinOverSet<S> min_reprojection(const Tensor<S>& target,
                               const std::vector<SynthesizedView<S>>& synths,
                               const LossWeights& w) {
  require(!synths.empty(), "bad-argument", "min reprojection over zero views");
  std::vector<Tensor<S>> losses;
  std::vector<Tensor<S>> valids;
  losses.reserve(synths.size());
  for (const SynthesizedView<S>& sv : synths) {
    losses.push_back(photometric_pair(target, sv.image, w));
    valids.push_back(sv.validity);
  }
  return min_over_set(losses, valids);
}

// Binary automask: keep a pixel iff warping beats copying a raw source
// (strict inequality, so exact ties are masked out). Pixels with no valid
// synthesized candidate are masked out as well. Constant output.
template <typename S>
Tensor<S> automask(const Tensor<S>& target, const std::vector<SynthesizedView<S>>& synths,
                   const std::vector<Tensor<S>>& sources, const LossWeights& w) {
  require(synths.size() == sources.size(), "bad-argument",
          "automask needs pairwise synths and sources");
  MinOverSet<S> reproj = min_reprojection(target, synths, w);
  std::vector<Tensor<S>> identity_losses;
  for (const Tensor<S>& src : sources)
    identity_losses.push_back(photometric_pair(target, src, w));
  MinOverSet<S> identity = min_over_set(identity_losses);
  return mul(less_than_mask(reproj.values, identity.values), reproj.valid);
}

// Edge-aware smoothness of the mean-normalized disparity; the image gradient
// is channel-averaged before the exponent.
template <typename S>
Tensor<S> smoothness(const Tensor<S>& disparity, const Tensor<S>& image) {
  require(disparity.shape().c == 1, "bad-shape", "smoothness expects 1-channel disparity");
  require(disparity.shape().h == image.shape().h && disparity.shape().w == image.shape().w,
          "shape-mismatch", "smoothness disparity/image sizes differ");
  Tensor<S> d_mean = mean(disparity);
  require(static_cast<double>(d_mean.value()) > 1e-7, "degenerate-disparity",
          "disparity mean below 1e-7");
  Tensor<S> d_star = div(disparity, d_mean);
  Tensor<S> wx = exp(scale(channel_mean(abs(grad_x(image))), S(-1)));
  Tensor<S> wy = exp(scale(channel_mean(abs(grad_y(image))), S(-1)));
  Tensor<S> term = add(mul(abs(grad_x(d_star)), wx), mul(abs(grad_y(d_star)), wy));
  return mean(term);
}

// Mean of values over mask > 0.5 entries; zero unmasked pixels contribute a
// zero scalar. The denominator is the unmasked-pixel count so the magnitude
// is independent of mask sparsity. Mask entries may be fractional weights
// (soft masking); the count then is the total weight.
template <typename S>
Tensor<S> masked_mean(const Tensor<S>& values, const Tensor<S>& mask) {
  require(values.shape() == mask.shape(), "shape-mismatch",
          "masked_mean operands differ in shape");
  double weight = 0.0;
  for (Eigen::Index i = 0; i < mask.buf().size(); ++i)
    weight += static_cast<double>(mask.buf()[i]);
  if (weight <= 0.0) return Tensor<S>::scalar(S(0));
  const double rescale = static_cast<double>(values.numel()) / weight;
  return scale(mean(mul(mask, values)), static_cast<S>(rescale));
}

// Multiscale L1 distillation of student depth toward constant teacher depth,
// restricted by per-scale masks: (1/4) sum_i maskedmean(M |Dt - Ds|)_i.
// With all-ones masks this is exactly the unmasked multiscale L1 mean.
template <typename S>
Tensor<S> distillation(const std::vector<Tensor<S>>& student_depths,
                       const std::vector<Tensor<S>>& teacher_depths,
                       const std::vector<Tensor<S>>& masks) {
  require(student_depths.size() == teacher_depths.size() &&
              student_depths.size() == masks.size() && !student_depths.empty(),
          "bad-argument", "distillation needs matching per-scale inputs");
  Tensor<S> total = Tensor<S>::scalar(S(0));
  for (std::size_t i = 0; i < student_depths.size(); ++i) {
    require(!teacher_depths[i].requires_grad(), "bad-graph",
            "teacher depths must be constants");
    require(student_depths[i].shape() == teacher_depths[i].shape(), "shape-mismatch",
            "student/teacher depth scale " + std::to_string(i) + " differs");
    Tensor<S> diff = abs(sub(student_depths[i], teacher_depths[i]));
    total = add(total, masked_mean(diff, masks[i]));
  }
  return scale(total, S(1) / S(static_cast<double>(student_depths.size())));
}

// One scale's contributions to the total objective.
template <typename S>
struct ScaleLossParts {
  Tensor<S> photometric;  // per-pixel min-reprojection map, n x 1 x H x W
  Tensor<S> automask;     // constant {0,1} map of the same shape
  Tensor<S> smooth;       // scalar
  Tensor<S> distill;      // scalar
};

// (1/4) sum_i ( mean(mu * L_pe) + lambda * L_s + gamma * L_d )_i.
template <typename S>
Tensor<S> total_loss(const std::vector<ScaleLossParts<S>>& scales, const LossWeights& w) {
  require(!scales.empty(), "bad-argument", "total loss over zero scales");
  Tensor<S> total = Tensor<S>::scalar(S(0));
  for (const ScaleLossParts<S>& p : scales) {
    Tensor<S> photo = mean(mul(p.automask, p.photometric));
    Tensor<S> term = add(photo, add(scale(p.smooth, static_cast<S>(w.lambda_s)),
                                    scale(p.distill, static_cast<S>(w.gamma_d))));
    total = add(total, term);
  }
  return scale(total, S(1) / S(static_cast<double>(scales.size())));
}

}  // namespace srdepth
