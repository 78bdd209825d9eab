// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "srdepth/tensor.hpp"

// Central finite-difference gradient checker (test-only). Builds the graph
// through `loss_fn` on a fresh tape per evaluation; compares every analytic
// parameter gradient against (f(x+h) - f(x-h)) / 2h in double precision.
namespace srdepth::testing {

struct GradCheck {
  double max_err = 0.0;       // worst combined error over all entries
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::string worst_param;

  // err = |a - n| / max(|a|, |n|) unless |a - n| falls under the absolute
  // floor. Passing means every entry satisfied rel < tol or abs < floor.
  bool pass(double rel_tol = 1e-4) const { return max_err < rel_tol; }
};

using LossFn = std::function<Tensor<double>(Tape<double>&)>;

inline GradCheck gradcheck(const LossFn& loss_fn, std::vector<Parameter<double>*> params,
                           double h = 1e-4, double abs_floor = 1e-7) {
  GradCheck result;
  std::vector<Buffer<double>> analytic;
  {
    Tape<double> tape;
    Tensor<double> loss = loss_fn(tape);
    tape.backward(loss);
    for (Parameter<double>* p : params) analytic.push_back(p->grad);
  }
  auto eval = [&]() {
    Tape<double> tape;
    return loss_fn(tape).value();
  };
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<double>* p = params[pi];
    for (Eigen::Index j = 0; j < p->value.size(); ++j) {
      const double saved = p->value[j];
      p->value[j] = saved + h;
      const double up = eval();
      p->value[j] = saved - h;
      const double down = eval();
      p->value[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][j];
      const double diff = std::abs(a - numeric);
      if (diff < abs_floor) continue;
      const double err = diff / std::max(std::abs(a), std::abs(numeric));
      if (err > result.max_err) {
        result.max_err = err;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
        result.worst_param = p->name;
      }
    }
  }
  return result;
}

// Seeded random fill helpers for test inputs.
inline void randomize(Parameter<double>& p, Rng& rng, double lo, double hi) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value[i] = rng.uniform(lo, hi);
}

inline Tensor<double> random_tensor(const Shape& s, Rng& rng, double lo, double hi) {
  Buffer<double> data(s.numel());
  for (Eigen::Index i = 0; i < data.size(); ++i) data[i] = rng.uniform(lo, hi);
  return Tensor<double>(s, std::move(data));
}

inline Tensor<float> random_tensor_f(const Shape& s, Rng& rng, float lo, float hi) {
  Buffer<float> data(s.numel());
  for (Eigen::Index i = 0; i < data.size(); ++i)
    data[i] = static_cast<float>(rng.uniform(lo, hi));
  return Tensor<float>(s, std::move(data));
}

}  // namespace srdepth::testing
