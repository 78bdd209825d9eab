// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "srdepth/geometry.hpp"
#include "srdepth/synthscene.hpp"
#include "srdepth/tensor.hpp"

// Frame-triplet dataset: the training input. Ground-truth depths and poses
// ride along for validation and fixtures; training itself only consumes the
// images and intrinsics.
namespace srdepth {

struct Triplet {
  std::array<Tensor<float>, 3> images;     // t-1, t, t+1
  std::array<Tensor<float>, 3> gt_depths;  // exact depths of the three frames
  RigidTransform to_prev;                  // T_{t -> t-1}
  RigidTransform to_next;                  // T_{t -> t+1}
};

struct TripletDataset {
  Intrinsics intrinsics;
  int height = 0;
  int width = 0;
  std::vector<Triplet> triplets;
};

// Loads the generated on-disk layout; missing or malformed files surface as
// errors naming the offending path.
TripletDataset load_dataset(const std::string& dir);

// Standalone JSON readers for the CLI: a pose file holds one
// {rotation: [9 row-major], translation: [3]} object, a list of them, or
// {"poses": [...]}; intrinsics files hold {fx, fy, u0, v0}.
std::vector<RigidTransform> read_poses_json(const std::string& path);
Intrinsics read_intrinsics_json(const std::string& path);

// In-memory view of a generated dataset (overlapping windows of 3 frames).
TripletDataset to_triplets(const SynthDataset& dataset);

}  // namespace srdepth
