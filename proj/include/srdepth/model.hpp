// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "srdepth/rng.hpp"
#include "srdepth/snapshot.hpp"
#include "srdepth/warp.hpp"

// Toy-scale depth and pose networks. The depth decoder carries the
// offset-aligned multiscale refinement: at each scale an offset field is
// predicted from adjacent-scale features; the upsampled coarser disparity is
// resampled through it before the scale's disparity head.
namespace srdepth {

template <typename S>
struct ConvLayer {
  Parameter<S> weight;  // out_c x in_c x k x k
  Parameter<S> bias;    // 1 x out_c x 1 x 1
  int stride = 1;
  int padding = 1;

  ConvLayer() = default;
  ConvLayer(const std::string& name, int in_c, int out_c, int k, int stride_, int padding_)
      : weight(name + ".weight", Shape(out_c, in_c, k, k)),
        bias(name + ".bias", Shape(1, out_c, 1, 1)),
        stride(stride_),
        padding(padding_) {}

  // Scaled normal init; scale 0 keeps the layer exactly zero.
  void init(Rng& rng, double gain) {
    const Shape ws = weight.shape;
    const double fan_in = static_cast<double>(ws.c) * ws.h * ws.w;
    const double stddev = gain > 0.0 ? gain / std::sqrt(fan_in) : 0.0;
    for (Eigen::Index i = 0; i < weight.value.size(); ++i)
      weight.value[i] = static_cast<S>(stddev > 0.0 ? rng.normal(0.0, stddev) : 0.0);
    bias.value.setZero();
  }

  Tensor<S> apply(const Tensor<S>& x, Tape<S>* tape) {
    Tensor<S> w = tape ? tape->leaf(weight) : weight.constant();
    Tensor<S> b = tape ? tape->leaf(bias) : bias.constant();
    return conv2d(x, w, b, stride, padding);
  }

  void collect(std::vector<Parameter<S>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

struct DepthNetConfig {
  int height = 32;
  int width = 96;
  std::array<int, 3> encoder_widths{8, 16, 32};  // channels of the 1/2, 1/4, 1/8 features
  bool use_offsets = true;                       // offset-aligned refinement on/off

  void validate() const {
    require(height % 8 == 0 && width % 8 == 0, "bad-argument",
            "input size must be divisible by 8, got " + std::to_string(height) + "x" +
                std::to_string(width));
  }
};

template <typename S>
struct DepthNetOutput {
  // disparities[i] at 1/2^i resolution, sigmoid-bounded in (0,1)
  std::array<Tensor<S>, 4> disparities;
  // offsets[i] aligns the upsampled disparities[i+1] at scale i
  std::array<Tensor<S>, 3> offsets;
};

// Encoder features: F0 full res (stem), F1..F3 at 1/2, 1/4, 1/8 with the
// configured widths. Decoder, coarse to fine: the coarsest disparity comes
// from a plain head on F3; each finer scale predicts an offset field from
// cat(F_i, upsample(F_{i+1})), warps the upsampled coarser disparity through
// it, and decodes disparity from cat(F_i, refined).
template <typename S>
class DepthNet {
 public:
  explicit DepthNet(DepthNetConfig config = {}) : config_(config) {
    config_.validate();
    const int c0 = config_.encoder_widths[0];
    const int c1 = config_.encoder_widths[1];
    const int c2 = config_.encoder_widths[2];
    channels_ = {c0, c0, c1, c2};
    enc_[0] = ConvLayer<S>("depth.enc0", 3, c0, 3, 1, 1);
    enc_[1] = ConvLayer<S>("depth.enc1", c0, c0, 3, 2, 1);
    enc_[2] = ConvLayer<S>("depth.enc2", c0, c1, 3, 2, 1);
    enc_[3] = ConvLayer<S>("depth.enc3", c1, c2, 3, 2, 1);
    for (int i = 0; i < 3; ++i) {
      const std::string tag = std::to_string(i);
      offset_[static_cast<std::size_t>(i)] = ConvLayer<S>(
          "depth.offset" + tag, channels_[static_cast<std::size_t>(i)] +
                                    channels_[static_cast<std::size_t>(i + 1)],
          2, 3, 1, 1);
      head_[static_cast<std::size_t>(i)] =
          ConvLayer<S>("depth.head" + tag, channels_[static_cast<std::size_t>(i)] + 1, 1, 3, 1, 1);
    }
    head_[3] = ConvLayer<S>("depth.head3", c2, 1, 3, 1, 1);
  }

  const DepthNetConfig& config() const { return config_; }

  // Offset heads start at exactly zero so training begins from the plain
  // upsample-then-decode baseline.
  void init(Rng& rng) {
    for (auto& l : enc_) l.init(rng, std::sqrt(2.0));
    for (auto& l : head_) l.init(rng, 1.0);
    for (auto& l : offset_) l.init(rng, 0.0);
  }

  DepthNetOutput<S> forward(const Tensor<S>& image, Tape<S>* tape) {
    const Shape s = image.shape();
    require(s.c == 3 && s.h == config_.height && s.w == config_.width, "shape-mismatch",
            "depth net expects nx3x" + std::to_string(config_.height) + "x" +
                std::to_string(config_.width) + ", got " + s.str());
    std::array<Tensor<S>, 4> f;
    f[0] = elu(enc_[0].apply(image, tape));
    f[1] = elu(enc_[1].apply(f[0], tape));
    f[2] = elu(enc_[2].apply(f[1], tape));
    f[3] = elu(enc_[3].apply(f[2], tape));

    DepthNetOutput<S> out;
    out.disparities[3] = sigmoid(head_[3].apply(f[3], tape));
    for (int i = 2; i >= 0; --i) {
      const auto si = static_cast<std::size_t>(i);
      Tensor<S> up_d = upsample_bilinear(out.disparities[si + 1], 2);
      Tensor<S> refined = up_d;
      if (config_.use_offsets) {
        Tensor<S> up_f = upsample_bilinear(f[si + 1], 2);
        out.offsets[si] = offset_[si].apply(concat_channels(f[si], up_f), tape);
        refined = warp_disparity_with_offset(up_d, out.offsets[si]).values;
      } else {
        out.offsets[si] = Tensor<S>::zeros(Shape(s.n, 2, up_d.shape().h, up_d.shape().w));
      }
      out.disparities[si] = sigmoid(head_[si].apply(concat_channels(f[si], refined), tape));
    }
    return out;
  }

  void collect(std::vector<Parameter<S>*>& out) {
    for (auto& l : enc_) l.collect(out);
    for (auto& l : offset_) l.collect(out);
    for (auto& l : head_) l.collect(out);
  }

 private:
  DepthNetConfig config_;
  std::array<int, 4> channels_{};
  std::array<ConvLayer<S>, 4> enc_;
  std::array<ConvLayer<S>, 3> offset_;
  std::array<ConvLayer<S>, 4> head_;
};

template <typename S>
struct Pose6Dof {
  Tensor<S> axis_angle;   // n x 3 x 1 x 1
  Tensor<S> translation;  // n x 3 x 1 x 1
};

// Shared-weight pairwise pose head: the same network scores (target, source)
// for each source, so swapping the two sources swaps the two outputs. The
// 6-DoF head output is scaled by 0.01 to keep initial warps near identity.
template <typename S>
class PoseNet {
 public:
  PoseNet() {
    conv_[0] = ConvLayer<S>("pose.conv0", 6, 16, 3, 2, 1);
    conv_[1] = ConvLayer<S>("pose.conv1", 16, 32, 3, 2, 1);
    conv_[2] = ConvLayer<S>("pose.conv2", 32, 32, 3, 2, 1);
    head_ = ConvLayer<S>("pose.head", 32, 6, 1, 1, 0);
  }

  void init(Rng& rng) {
    for (auto& l : conv_) l.init(rng, std::sqrt(2.0));
    head_.init(rng, 1.0);
  }

  Pose6Dof<S> forward_pair(const Tensor<S>& target, const Tensor<S>& source, Tape<S>* tape) {
    require(target.shape() == source.shape() && target.shape().c == 3, "shape-mismatch",
            "pose net expects two equally sized 3-channel frames");
    Tensor<S> x = concat_channels(target, source);
    for (auto& l : conv_) x = elu(l.apply(x, tape));
    Tensor<S> pooled = spatial_mean(x);
    Tensor<S> dof = scale(head_.apply(pooled, tape), S(0.01));
    return Pose6Dof<S>{slice_channels(dof, 0, 3), slice_channels(dof, 3, 6)};
  }

  // frames = (t-1, t, t+1); returns poses t->t-1 and t->t+1.
  std::array<Pose6Dof<S>, 2> forward(const std::array<Tensor<S>, 3>& frames, Tape<S>* tape) {
    return {forward_pair(frames[1], frames[0], tape),
            forward_pair(frames[1], frames[2], tape)};
  }

  void collect(std::vector<Parameter<S>*>& out) {
    for (auto& l : conv_) l.collect(out);
    head_.collect(out);
  }

 private:
  std::array<ConvLayer<S>, 3> conv_;
  ConvLayer<S> head_;
};

// Reads one batch element of a 6-DoF output as a rigid transform.
template <typename S>
RigidTransform pose_to_transform(const Pose6Dof<S>& p, int batch_index) {
  Vec3 aa(p.axis_angle.at(batch_index, 0, 0, 0), p.axis_angle.at(batch_index, 1, 0, 0),
          p.axis_angle.at(batch_index, 2, 0, 0));
  Vec3 t(p.translation.at(batch_index, 0, 0, 0), p.translation.at(batch_index, 1, 0, 0),
         p.translation.at(batch_index, 2, 0, 0));
  return pose_from_6dof(aa, t);
}

// Student/teacher model bundle: the depth net plus the pose net, with
// snapshot round trips over all named parameters.
template <typename S>
class Models {
 public:
  explicit Models(DepthNetConfig config = {}) : depth(config) {}

  DepthNet<S> depth;
  PoseNet<S> pose;

  std::vector<Parameter<S>*> parameters() {
    std::vector<Parameter<S>*> out;
    depth.collect(out);
    pose.collect(out);
    return out;
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    depth.init(rng);
    pose.init(rng);
  }

  WeightSnapshot snapshot(int epoch) {
    WeightSnapshot snap;
    snap.epoch = epoch;
    for (Parameter<S>* p : parameters()) {
      Buffer<float> values(p->value.size());
      for (Eigen::Index i = 0; i < values.size(); ++i)
        values[i] = static_cast<float>(p->value[i]);
      snap.entries.emplace_back(p->name, Tensor<float>(p->shape, std::move(values)));
    }
    return snap;
  }

  // Strict by-name restore: every snapshot entry must match a parameter and
  // every parameter must be covered.
  void restore(const WeightSnapshot& snap) {
    std::vector<Parameter<S>*> params = parameters();
    std::vector<bool> seen(params.size(), false);
    for (const auto& [name, tensor] : snap.entries) {
      bool found = false;
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->name != name) continue;
        require(params[i]->shape == tensor.shape(), "bad-snapshot",
                "shape mismatch for parameter '" + name + "': model " +
                    params[i]->shape.str() + " vs snapshot " + tensor.shape().str());
        for (Eigen::Index j = 0; j < params[i]->value.size(); ++j)
          params[i]->value[j] = static_cast<S>(tensor.buf()[j]);
        seen[i] = true;
        found = true;
        break;
      }
      require(found, "bad-snapshot", "snapshot names unknown parameter '" + name + "'");
    }
    for (std::size_t i = 0; i < params.size(); ++i)
      require(seen[i], "bad-snapshot", "snapshot missing parameter '" + params[i]->name + "'");
  }
};

}  // namespace srdepth
