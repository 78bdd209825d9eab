// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "srdepth/tensor.hpp"

// Float-map and image file formats.
//
// PFM: grayscale "Pf" header, rows stored bottom-up, binary float32 payload.
// The scale field's sign encodes endianness (-1.0 = little-endian, which is
// what the writer emits); big-endian files are byte-swapped on load.
//
// PPM: binary "P6" with maxval 255, mapped linearly to [0, 1]. Other maxvals
// are rejected.
namespace srdepth {

// Single-channel float map, shape 1x1xHxW.
Tensor<float> read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Tensor<float>& map);

// Three-channel image in [0, 1], shape 1x3xHxW.
Tensor<float> read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor<float>& image);

}  // namespace srdepth
