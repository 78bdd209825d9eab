// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "srdepth/geometry.hpp"
#include "srdepth/rng.hpp"
#include "srdepth/tensor.hpp"

// Analytic textured-plane scenes with exact per-view images, depths, and
// trajectories. Rays intersect planes in closed form and textures are
// evaluated at the exact hit point, so rendered images and depth maps carry
// no resampling error; they are the ground truth every geometric and loss
// property is verified against.
namespace srdepth {

enum class TextureKind { sinusoid, checkerboard, noise };

struct TextureComponent {
  double fu = 0.0;  // cycles per scene unit along the plane's u tangent
  double fv = 0.0;
  double phase = 0.0;
  double amplitude = 0.0;
};

// Band-limited procedural color: base + per-channel sinusoid sums with total
// amplitude below 0.5, so values stay inside [0,1] without clamping and
// bilinear resampling error stays provably small. Checkerboards are square
// waves, kept for mask/visibility tests only.
struct PlaneTexture {
  TextureKind kind = TextureKind::sinusoid;
  std::array<double, 3> base{0.5, 0.5, 0.5};
  std::array<double, 3> alt{0.15, 0.15, 0.15};  // checkerboard second color
  double cell = 1.0;                            // checkerboard cell size
  std::array<std::vector<TextureComponent>, 3> waves;

  std::array<double, 3> color(double u, double v) const;
};

struct ScenePlane {
  Vec3 normal = Vec3(0, 0, 1);  // unit
  double dist = 1.0;            // plane: normal . X = dist (world frame)
  Vec3 tangent_u = Vec3(1, 0, 0);
  Vec3 tangent_v = Vec3(0, 1, 0);
  double extent_u = std::numeric_limits<double>::infinity();  // half extents
  double extent_v = std::numeric_limits<double>::infinity();
  PlaneTexture texture;
};

// Planes are checked front to back per ray (nearest positive hit wins). The
// last plane is conventionally the unbounded background; rendering fails if
// any ray escapes everything.
struct SceneSpec {
  std::vector<ScenePlane> planes;
};

// Deterministic orthonormal tangents for a plane normal.
std::pair<Vec3, Vec3> plane_tangents(const Vec3& normal);

struct RenderedView {
  Tensor<float> image;  // 1 x 3 x H x W in [0,1]
  Tensor<float> depth;  // 1 x 1 x H x W, camera-frame Z
};

RenderedView render_view(const SceneSpec& scene, const RigidTransform& world_to_cam,
                         const Intrinsics& k, int height, int width);

enum class TrajectoryStyle { forward, lateral, rotate };

const char* to_string(TrajectoryStyle s);
TrajectoryStyle trajectory_from_string(const std::string& name);

struct DatasetGenSpec {
  int scenes = 4;
  int triplets_per_scene = 12;
  int height = 32;
  int width = 96;
  TrajectoryStyle style = TrajectoryStyle::lateral;
  std::uint64_t seed = 1;
};

struct SceneRender {
  SceneSpec scene;
  std::vector<RigidTransform> world_to_cam;  // one per frame
  std::vector<Tensor<float>> images;
  std::vector<Tensor<float>> depths;
};

struct SynthDataset {
  DatasetGenSpec spec;
  Intrinsics intrinsics;
  std::vector<SceneRender> scenes;  // triplet t of a scene = frames (t, t+1, t+2)
};

Intrinsics default_intrinsics(int height, int width);
SceneSpec make_random_scene(Rng& rng, TrajectoryStyle style);
std::vector<RigidTransform> make_trajectory(Rng& rng, TrajectoryStyle style, int frames);

// Relative pose T_{a->b} between two frames of one trajectory.
RigidTransform relative_pose(const RigidTransform& world_to_a, const RigidTransform& world_to_b);

SynthDataset generate_dataset(const DatasetGenSpec& spec);

// On-disk layout:
//   <dir>/manifest.json, <dir>/intrinsics.json
//   <dir>/scene_###/frame_##.ppm, frame_##_depth.pfm, poses.json
// poses.json holds consecutive-pair transforms T_{i->i+1} (row-major rotation
// plus translation).
void write_dataset(const SynthDataset& dataset, const std::string& dir);

// Multiplies depth by `factor` at floor(fraction * pixels) seeded random
// pixels; returns the corrupted map and the exact {0,1} corruption mask.
std::pair<Tensor<float>, Tensor<float>> corrupt_depth(const Tensor<float>& depth,
                                                      double fraction, double factor,
                                                      std::uint64_t seed);

}  // namespace srdepth
