// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "srdepth/tensor.hpp"

// Standard depth-evaluation metrics with optional per-image median scaling
// and a depth cap.
namespace srdepth {

struct EvalResult {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;  // base-10 logarithm
  double delta1 = 0.0;    // fraction with max(pred/gt, gt/pred) < 1.25  (strict)
  double delta2 = 0.0;    // ... < 1.25^2
  double delta3 = 0.0;    // ... < 1.25^3
  long long n_valid = 0;
  double scale_applied = 1.0;
};

// Valid pixels are gt > 0. With median scaling the prediction is rescaled by
// median(gt)/median(pred) over valid pixels (median = average of the two
// middle order statistics for even counts). Predictions are then clamped to
// [1e-3, cap] and gt is capped at cap. Throws "no-valid-pixels" when nothing
// is valid. Accumulation runs in double over valid pixels in row-major order.
EvalResult evaluate(const Tensor<float>& pred, const Tensor<float>& gt,
                    bool median_scaling, double cap);

std::string eval_csv_header();
std::string eval_csv_row(const std::string& label, const EvalResult& r);

// Per-image rows plus a final mean row (label "mean").
std::string evaluate_batch_csv(const std::vector<Tensor<float>>& preds,
                               const std::vector<Tensor<float>>& gts,
                               bool median_scaling, double cap);

}  // namespace srdepth
