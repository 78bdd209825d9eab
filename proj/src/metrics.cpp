// SPDX-License-Identifier: Apache-2.0
#include "srdepth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace srdepth {

namespace {

double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

EvalResult evaluate(const Tensor<float>& pred, const Tensor<float>& gt,
                    bool median_scaling, double cap) {
  require(pred.shape() == gt.shape(), "shape-mismatch",
          "evaluate needs equal shapes, got " + pred.shape().str() + " vs " +
              gt.shape().str());
  require(cap > 0.0, "bad-argument", "depth cap must be positive");
  const long long n = pred.numel();
  std::vector<double> pred_valid;
  std::vector<double> gt_valid;
  for (long long i = 0; i < n; ++i) {
    const double g = static_cast<double>(gt[i]);
    if (g > 0.0) {
      gt_valid.push_back(g);
      pred_valid.push_back(static_cast<double>(pred[i]));
    }
  }
  require(!gt_valid.empty(), "no-valid-pixels", "ground truth has no positive pixels");

  EvalResult r;
  r.n_valid = static_cast<long long>(gt_valid.size());
  r.scale_applied = 1.0;
  if (median_scaling) {
    const double pred_median = median_of(pred_valid);
    require(pred_median > 0.0, "bad-argument",
            "median scaling requires a positive prediction median");
    r.scale_applied = median_of(gt_valid) / pred_median;
  }

  double sum_abs_rel = 0.0, sum_sq_rel = 0.0, sum_sq = 0.0, sum_sq_log = 0.0;
  long long hits1 = 0, hits2 = 0, hits3 = 0;
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  for (std::size_t i = 0; i < gt_valid.size(); ++i) {
    const double g = std::min(gt_valid[i], cap);
    const double p = std::min(std::max(pred_valid[i] * r.scale_applied, 1e-3), cap);
    const double diff = p - g;
    sum_abs_rel += std::abs(diff) / g;
    sum_sq_rel += diff * diff / g;
    sum_sq += diff * diff;
    const double dlog = std::log10(p) - std::log10(g);
    sum_sq_log += dlog * dlog;
    const double ratio = std::max(p / g, g / p);
    if (ratio < t1) ++hits1;
    if (ratio < t2) ++hits2;
    if (ratio < t3) ++hits3;
  }
  const double inv = 1.0 / static_cast<double>(r.n_valid);
  r.abs_rel = sum_abs_rel * inv;
  r.sq_rel = sum_sq_rel * inv;
  r.rmse = std::sqrt(sum_sq * inv);
  r.rmse_log = std::sqrt(sum_sq_log * inv);
  r.delta1 = static_cast<double>(hits1) * inv;
  r.delta2 = static_cast<double>(hits2) * inv;
  r.delta3 = static_cast<double>(hits3) * inv;
  return r;
}

std::string eval_csv_header() {
  return "image,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,n_valid,scale";
}

std::string eval_csv_row(const std::string& label, const EvalResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%lld,%.9g",
                label.c_str(), r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.delta1,
                r.delta2, r.delta3, r.n_valid, r.scale_applied);
  return buf;
}

std::string evaluate_batch_csv(const std::vector<Tensor<float>>& preds,
                               const std::vector<Tensor<float>>& gts,
                               bool median_scaling, double cap) {
  require(preds.size() == gts.size() && !preds.empty(), "bad-argument",
          "batch evaluation needs matching non-empty prediction/gt lists");
  std::ostringstream out;
  out << eval_csv_header() << "\n";
  EvalResult mean;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const EvalResult r = evaluate(preds[i], gts[i], median_scaling, cap);
    out << eval_csv_row(std::to_string(i), r) << "\n";
    mean.abs_rel += r.abs_rel;
    mean.sq_rel += r.sq_rel;
    mean.rmse += r.rmse;
    mean.rmse_log += r.rmse_log;
    mean.delta1 += r.delta1;
    mean.delta2 += r.delta2;
    mean.delta3 += r.delta3;
    mean.n_valid += r.n_valid;
    mean.scale_applied += r.scale_applied;
  }
  const double inv = 1.0 / static_cast<double>(preds.size());
  mean.abs_rel *= inv;
  mean.sq_rel *= inv;
  mean.rmse *= inv;
  mean.rmse_log *= inv;
  mean.delta1 *= inv;
  mean.delta2 *= inv;
  mean.delta3 *= inv;
  mean.scale_applied *= inv;
  out << eval_csv_row("mean", mean) << "\n";
  return out.str();
}

}  // namespace srdepth
