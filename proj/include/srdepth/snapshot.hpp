// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "srdepth/tensor.hpp"

// Weight snapshot container and its binary file format.
//
// Layout (all integers little-endian uint32, values little-endian float32):
//   magic "SRDW" | version (=1) | epoch | count
//   then per parameter, in stored order:
//   name_len | name bytes | n c h w | n*c*h*w values
//
// Round trips are bit-exact; restore matches parameters by name and is
// order-independent.
namespace srdepth {

struct WeightSnapshot {
  int epoch = 0;
  std::vector<std::pair<std::string, Tensor<float>>> entries;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }
};

void save_snapshot(const std::string& path, const WeightSnapshot& snap);
WeightSnapshot load_snapshot(const std::string& path);

}  // namespace srdepth
