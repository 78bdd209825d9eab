// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "srdepth/dataset.hpp"
#include "srdepth/losses.hpp"
#include "srdepth/metrics.hpp"
#include "srdepth/model.hpp"
#include "srdepth/mvcheck.hpp"
#include "srdepth/snapshot.hpp"

// Single-stage online self-distillation trainer. Epoch 1 is pure
// self-supervision; from epoch 2 on, the previous epoch's weight snapshot is
// loaded as a frozen teacher whose depth pseudo-labels - filtered by the
// multiview check - add a distillation term. The teacher is replaced only at
// epoch boundaries.
namespace srdepth {

enum class MaskMode { hard, soft, none };

inline const char* to_string(MaskMode m) {
  switch (m) {
    case MaskMode::hard: return "hard";
    case MaskMode::soft: return "soft";
    case MaskMode::none: return "none";
  }
  return "unknown";
}

inline MaskMode mask_mode_from_string(const std::string& name) {
  if (name == "hard") return MaskMode::hard;
  if (name == "soft") return MaskMode::soft;
  if (name == "none") return MaskMode::none;
  fail("bad-argument", "unknown mask mode '" + name + "'");
}

struct TrainConfig {
  int epochs = 20;
  int batch_size = 2;
  double learning_rate = 1e-4;
  LossWeights weights;  // gamma_d applies from epoch 2; epoch 1 runs with 0
  MaskMode mask_mode = MaskMode::hard;
  double mvc_alpha = 4.0;
  double mvc_beta = 4.0;
  GeoErrorMode geo_mode = GeoErrorMode::reprojected_depth;
  // The consistency check runs on the teacher snapshot's own pose output so
  // pseudo-labels are filtered self-consistently.
  std::uint64_t seed = 1;
  DepthRange depth_range;
  bool use_offsets = true;
  int val_stride = 5;      // every val_stride-th triplet is held out; 0 = none
  double eval_cap = 80.0;  // depth cap for validation metrics
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled-weight-decay adaptive-moment optimizer; moments kept in double.
template <typename S>
class AdamW {
 public:
  AdamW(std::vector<Parameter<S>*> params, const TrainConfig& cfg)
      : params_(std::move(params)),
        lr_(cfg.learning_rate),
        beta1_(cfg.adam_beta1),
        beta2_(cfg.adam_beta2),
        eps_(cfg.adam_eps),
        weight_decay_(cfg.weight_decay) {
    for (Parameter<S>* p : params_) {
      m_.emplace_back(Buffer<double>::Zero(p->value.size()));
      v_.emplace_back(Buffer<double>::Zero(p->value.size()));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter<S>* p = params_[i];
      for (Eigen::Index j = 0; j < p->value.size(); ++j) {
        const double g = static_cast<double>(p->grad[j]);
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        const double x = static_cast<double>(p->value[j]);
        p->value[j] =
            static_cast<S>(x - lr_ * mhat / (std::sqrt(vhat) + eps_) - lr_ * weight_decay_ * x);
      }
    }
  }

 private:
  std::vector<Parameter<S>*> params_;
  std::vector<Buffer<double>> m_;
  std::vector<Buffer<double>> v_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  long long t_ = 0;
};

// Batched frames: stacks 1xCxHxW constants along the batch dim.
template <typename S>
Tensor<S> stack_batch(const std::vector<Tensor<S>>& items) {
  require(!items.empty(), "bad-argument", "empty batch");
  const Shape s0 = items[0].shape();
  Buffer<S> out(static_cast<long long>(items.size()) * s0.numel());
  long long at = 0;
  for (const Tensor<S>& t : items) {
    require(t.shape() == s0, "shape-mismatch", "batch items differ in shape");
    require(!t.requires_grad(), "bad-graph", "batch items must be constants");
    std::copy_n(t.data(), t.numel(), out.data() + at);
    at += t.numel();
  }
  return Tensor<S>(Shape(static_cast<int>(items.size()) * s0.n, s0.c, s0.h, s0.w),
                   std::move(out));
}

// Frozen-teacher inference: no differentiation records anywhere. Produces the
// 4-scale target depths, full-scale source depths for the consistency check,
// and the teacher's own relative poses per batch element.
template <typename S>
struct TeacherInference {
  std::array<Tensor<S>, 4> target_depths;              // native scales
  std::array<Tensor<S>, 2> source_depths;              // full res: prev, next
  std::array<std::vector<RigidTransform>, 2> poses;    // t->prev, t->next per element
};

template <typename S>
TeacherInference<S> teacher_infer(Models<S>& teacher, const std::array<Tensor<S>, 3>& frames,
                                  const DepthRange& range) {
  TeacherInference<S> out;
  DepthNetOutput<S> target = teacher.depth.forward(frames[1], nullptr);
  for (int i = 0; i < 4; ++i)
    out.target_depths[static_cast<std::size_t>(i)] =
        disparity_to_depth(target.disparities[static_cast<std::size_t>(i)], range);
  out.source_depths[0] =
      disparity_to_depth(teacher.depth.forward(frames[0], nullptr).disparities[0], range);
  out.source_depths[1] =
      disparity_to_depth(teacher.depth.forward(frames[2], nullptr).disparities[0], range);
  const auto poses = teacher.pose.forward(frames, nullptr);
  const int batch = frames[1].shape().n;
  for (int side = 0; side < 2; ++side)
    for (int b = 0; b < batch; ++b)
      out.poses[static_cast<std::size_t>(side)].push_back(
          pose_to_transform(poses[static_cast<std::size_t>(side)], b));
  return out;
}

// Teacher pseudo-label package for one batch: per-scale depths and the
// per-scale supervision masks derived from the multiview check.
template <typename S>
struct TeacherSupervision {
  std::array<Tensor<S>, 4> target_depths;
  std::array<Tensor<S>, 4> masks;
  double mask_coverage = 1.0;  // mean of the full-resolution mask
};

// Builds the per-scale masks from consistency reports according to the mask
// mode. Exposed separately so corruption fixtures can probe mask behavior.
template <typename S>
std::pair<std::array<Tensor<S>, 4>, double> build_distillation_masks(
    const std::vector<ConsistencyReport<S>>& reports, MaskMode mode, double alpha,
    double beta, const Shape& full_shape) {
  Tensor<S> full;
  if (mode == MaskMode::none || reports.empty()) {
    full = Tensor<S>::full(full_shape, S(1));
  } else if (mode == MaskMode::hard) {
    full = filter_mask(reports, alpha, beta).mask;
  } else {
    full = soft_mask(reports).mask;
  }
  std::array<Tensor<S>, 4> masks;
  for (int i = 0; i < 4; ++i) masks[static_cast<std::size_t>(i)] = decimate(full, 1 << i);
  double coverage = 0.0;
  for (Eigen::Index i = 0; i < full.buf().size(); ++i)
    coverage += static_cast<double>(full.buf()[i]);
  coverage /= static_cast<double>(full.numel());
  return {masks, coverage};
}

template <typename S>
TeacherSupervision<S> teacher_supervision(Models<S>& teacher,
                                          const std::array<Tensor<S>, 3>& frames,
                                          const Intrinsics& k, const TrainConfig& cfg) {
  TeacherInference<S> inferred = teacher_infer(teacher, frames, cfg.depth_range);
  TeacherSupervision<S> out;
  out.target_depths = inferred.target_depths;
  std::vector<ConsistencyReport<S>> reports;
  if (cfg.mask_mode != MaskMode::none) {
    for (int side = 0; side < 2; ++side)
      reports.push_back(check_pair(inferred.target_depths[0],
                                   inferred.source_depths[static_cast<std::size_t>(side)],
                                   inferred.poses[static_cast<std::size_t>(side)], k,
                                   cfg.geo_mode));
  }
  auto [masks, coverage] = build_distillation_masks(reports, cfg.mask_mode, cfg.mvc_alpha,
                                                    cfg.mvc_beta,
                                                    inferred.target_depths[0].shape());
  out.masks = masks;
  out.mask_coverage = coverage;
  return out;
}

template <typename S>
struct StepResult {
  Tensor<S> loss;  // recorded scalar
  double total = 0.0;
  double photometric = 0.0;
  double smooth = 0.0;
  double distill = 0.0;
  double mask_coverage = 1.0;
};

// Full training objective for one batch of triplets. Every scale's disparity
// is upsampled to full resolution for the photometric and smoothness terms;
// distillation compares depths at each native scale. `weights.gamma_d` must
// already reflect the epoch schedule (0 in epoch 1).
template <typename S>
StepResult<S> training_loss(Models<S>& models, Tape<S>& tape,
                            const std::array<Tensor<S>, 3>& frames, const Intrinsics& k,
                            const TeacherSupervision<S>* teacher, const LossWeights& weights,
                            const DepthRange& range) {
  const Tensor<S>& target = frames[1];
  DepthNetOutput<S> net = models.depth.forward(target, &tape);
  const auto pose6 = models.pose.forward(frames, &tape);
  const PoseTensors<S> pose_prev = pose_tensors_from_6dof(pose6[0].axis_angle,
                                                          pose6[0].translation);
  const PoseTensors<S> pose_next = pose_tensors_from_6dof(pose6[1].axis_angle,
                                                          pose6[1].translation);

  // Identity photometric losses (target vs raw sources) for the automask.
  MinOverSet<S> identity = min_over_set(std::vector<Tensor<S>>{
      photometric_pair(target, frames[0], weights), photometric_pair(target, frames[2], weights)});

  std::vector<ScaleLossParts<S>> parts;
  StepResult<S> result;
  for (int i = 0; i < 4; ++i) {
    const auto si = static_cast<std::size_t>(i);
    Tensor<S> disp_full = upsample_bilinear(net.disparities[si], 1 << i);
    Tensor<S> depth_full = disparity_to_depth(disp_full, range);
    std::vector<SynthesizedView<S>> synths{
        synthesize_view(frames[0], depth_full, pose_prev, k),
        synthesize_view(frames[2], depth_full, pose_next, k)};
    MinOverSet<S> reproj = min_reprojection(target, synths, weights);
    ScaleLossParts<S> part;
    part.photometric = reproj.values;
    part.automask = mul(less_than_mask(reproj.values, identity.values), reproj.valid);
    part.smooth = smoothness(disp_full, target);
    if (teacher) {
      Tensor<S> student_depth = disparity_to_depth(net.disparities[si], range);
      part.distill = masked_mean(abs(sub(student_depth, teacher->target_depths[si])),
                                 teacher->masks[si]);
    } else {
      part.distill = Tensor<S>::scalar(S(0));
    }
    result.photometric += static_cast<double>(mean(mul(part.automask, part.photometric)).value());
    result.smooth += static_cast<double>(part.smooth.value());
    result.distill += static_cast<double>(part.distill.value());
    parts.push_back(std::move(part));
  }
  result.photometric /= 4.0;
  result.smooth /= 4.0;
  result.distill /= 4.0;
  result.mask_coverage = teacher ? teacher->mask_coverage : 1.0;
  result.loss = total_loss(parts, weights);
  result.total = static_cast<double>(result.loss.value());
  if (!std::isfinite(result.total)) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "non-finite training loss (photometric %.6g, smooth %.6g, distill %.6g)",
                  result.photometric, result.smooth, result.distill);
    fail("non-finite", buf);
  }
  return result;
}

// One optimizer update on one batch.
template <typename S>
StepResult<S> train_step(Models<S>& models, AdamW<S>& opt,
                         const std::array<Tensor<S>, 3>& frames, const Intrinsics& k,
                         const TeacherSupervision<S>* teacher, const LossWeights& weights,
                         const DepthRange& range) {
  Tape<S> tape;
  StepResult<S> result = training_loss(models, tape, frames, k, teacher, weights, range);
  tape.backward(result.loss);
  opt.step();
  return result;
}

struct EpochLog {
  int epoch = 0;
  double photometric = 0.0;
  double smooth = 0.0;
  double distill = 0.0;
  double total = 0.0;
  double mask_coverage = 1.0;
  bool has_val = false;
  EvalResult val;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::string csv;
};

namespace detail {

inline void csv_step_row(std::ostringstream& out, int epoch, int step,
                         double pe, double ls, double ld, double total, double coverage) {
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,,,,,\n", epoch, step, pe,
                ls, ld, total, coverage);
  out << buf;
}

inline void csv_epoch_row(std::ostringstream& out, const EpochLog& log) {
  char buf[320];
  if (log.has_val) {
    std::snprintf(buf, sizeof(buf), "%d,-1,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  log.epoch, log.photometric, log.smooth, log.distill, log.total,
                  log.mask_coverage, log.val.abs_rel, log.val.sq_rel, log.val.rmse,
                  log.val.rmse_log, log.val.delta1);
  } else {
    std::snprintf(buf, sizeof(buf), "%d,-1,%.9g,%.9g,%.9g,%.9g,%.9g,,,,,\n", log.epoch,
                  log.photometric, log.smooth, log.distill, log.total, log.mask_coverage);
  }
  out << buf;
}

}  // namespace detail

// Predicts full-resolution depth for one triplet's target frame (no recording).
template <typename S>
Tensor<S> predict_depth(Models<S>& models, const Tensor<S>& image, const DepthRange& range) {
  return disparity_to_depth(models.depth.forward(image, nullptr).disparities[0], range);
}

// Runs the full schedule. Deterministic given config and seed: identical runs
// produce identical CSV bytes and snapshots. When out_dir is nonempty, one
// snapshot per epoch lands in <out_dir>/epoch_###.snap.
template <typename S>
TrainResult train(Models<S>& models, const TripletDataset& data, const TrainConfig& cfg,
                  const std::string& out_dir = "") {
  require(!data.triplets.empty(), "bad-argument", "training dataset is empty");
  require(cfg.epochs >= 1 && cfg.batch_size >= 1, "bad-argument",
          "epochs and batch size must be positive");

  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  for (std::size_t i = 0; i < data.triplets.size(); ++i) {
    if (cfg.val_stride > 0 && (i % static_cast<std::size_t>(cfg.val_stride)) ==
                                  static_cast<std::size_t>(cfg.val_stride) - 1)
      val_idx.push_back(i);
    else
      train_idx.push_back(i);
  }
  require(!train_idx.empty(), "bad-argument", "no training triplets after validation split");

  std::vector<Parameter<S>*> params = models.parameters();
  AdamW<S> opt(params, cfg);
  Models<S> teacher(models.depth.config());
  std::optional<WeightSnapshot> teacher_snap;

  Rng shuffle_rng = Rng(cfg.seed).fork(0xD5);
  std::ostringstream csv;
  csv << "epoch,step,L_pe,L_s,L_d,total,mask_coverage,abs_rel,sq_rel,rmse,rmse_log,delta1\n";
  TrainResult result;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Teacher exists exactly from epoch 2 on and is the previous epoch's student.
    const bool with_teacher = epoch >= 2;
    if (with_teacher) {
      require(teacher_snap.has_value() && teacher_snap->epoch == epoch - 1, "bad-state",
              "teacher snapshot out of schedule");
      teacher.restore(*teacher_snap);
    }
    LossWeights weights = cfg.weights;
    if (!with_teacher) weights.gamma_d = 0.0;

    std::vector<std::size_t> order = train_idx;
    shuffle_rng.shuffle(order);

    EpochLog log;
    log.epoch = epoch;
    int steps = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Tensor<S>> prev, target, next;
      for (std::size_t i = at; i < end; ++i) {
        const Triplet& t = data.triplets[order[i]];
        prev.push_back(cast<float, S>(t.images[0]));
        target.push_back(cast<float, S>(t.images[1]));
        next.push_back(cast<float, S>(t.images[2]));
      }
      const std::array<Tensor<S>, 3> frames{stack_batch(prev), stack_batch(target),
                                            stack_batch(next)};
      std::optional<TeacherSupervision<S>> supervision;
      if (with_teacher)
        supervision = teacher_supervision(teacher, frames, data.intrinsics, cfg);
      StepResult<S> step = train_step(models, opt, frames, data.intrinsics,
                                      supervision ? &*supervision : nullptr, weights,
                                      cfg.depth_range);
      detail::csv_step_row(csv, epoch, steps, step.photometric, step.smooth, step.distill,
                           step.total, step.mask_coverage);
      log.photometric += step.photometric;
      log.smooth += step.smooth;
      log.distill += step.distill;
      log.total += step.total;
      log.mask_coverage += step.mask_coverage;
      ++steps;
    }
    const double inv = 1.0 / static_cast<double>(steps);
    log.photometric *= inv;
    log.smooth *= inv;
    log.distill *= inv;
    log.total *= inv;
    log.mask_coverage *= inv;

    if (!val_idx.empty()) {
      std::vector<Tensor<float>> preds;
      std::vector<Tensor<float>> gts;
      for (std::size_t i : val_idx) {
        const Triplet& t = data.triplets[i];
        Tensor<S> depth = predict_depth(models, cast<float, S>(t.images[1]), cfg.depth_range);
        preds.push_back(cast<S, float>(depth));
        gts.push_back(t.gt_depths[1]);
      }
      EvalResult mean_val{};
      for (std::size_t i = 0; i < preds.size(); ++i) {
        const EvalResult r = evaluate(preds[i], gts[i], true, cfg.eval_cap);
        mean_val.abs_rel += r.abs_rel;
        mean_val.sq_rel += r.sq_rel;
        mean_val.rmse += r.rmse;
        mean_val.rmse_log += r.rmse_log;
        mean_val.delta1 += r.delta1;
        mean_val.delta2 += r.delta2;
        mean_val.delta3 += r.delta3;
        mean_val.n_valid += r.n_valid;
      }
      const double vinv = 1.0 / static_cast<double>(preds.size());
      mean_val.abs_rel *= vinv;
      mean_val.sq_rel *= vinv;
      mean_val.rmse *= vinv;
      mean_val.rmse_log *= vinv;
      mean_val.delta1 *= vinv;
      mean_val.delta2 *= vinv;
      mean_val.delta3 *= vinv;
      log.has_val = true;
      log.val = mean_val;
    }
    detail::csv_epoch_row(csv, log);
    result.epochs.push_back(log);

    teacher_snap = models.snapshot(epoch);
    if (!out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "/epoch_%03d.snap", epoch);
      save_snapshot(out_dir + name, *teacher_snap);
    }
  }
  result.csv = csv.str();
  return result;
}

}  // namespace srdepth
