// SPDX-License-Identifier: Apache-2.0
#include "srdepth/synthscene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "srdepth/image_io.hpp"

namespace srdepth {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

std::array<double, 3> PlaneTexture::color(double u, double v) const {
  std::array<double, 3> out{};
  if (kind == TextureKind::checkerboard) {
    const long long cu = static_cast<long long>(std::floor(u / cell));
    const long long cv = static_cast<long long>(std::floor(v / cell));
    const bool odd = ((cu + cv) & 1) != 0;
    for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c)] = odd ? alt[static_cast<std::size_t>(c)] : base[static_cast<std::size_t>(c)];
    return out;
  }
  for (int c = 0; c < 3; ++c) {
    double acc = base[static_cast<std::size_t>(c)];
    for (const TextureComponent& w : waves[static_cast<std::size_t>(c)])
      acc += w.amplitude * std::sin(kTwoPi * (w.fu * u + w.fv * v) + w.phase);
    out[static_cast<std::size_t>(c)] = std::min(std::max(acc, 0.0), 1.0);
  }
  return out;
}

std::pair<Vec3, Vec3> plane_tangents(const Vec3& normal) {
  Vec3 seed = std::abs(normal.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0);
  Vec3 tu = normal.cross(seed).normalized();
  Vec3 tv = normal.cross(tu).normalized();
  return {tu, tv};
}

RenderedView render_view(const SceneSpec& scene, const RigidTransform& world_to_cam,
                         const Intrinsics& k, int height, int width) {
  require(!scene.planes.empty(), "bad-scene", "scene has no planes");
  const RigidTransform cam_to_world = world_to_cam.inverse();
  const Vec3 origin = cam_to_world.translation;  // camera center in world coords
  const Shape img_shape(1, 3, height, width);
  const Shape depth_shape(1, 1, height, width);
  Buffer<float> image(img_shape.numel());
  Buffer<float> depth(depth_shape.numel());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Vec3 dir_cam((x - k.u0) / k.fx, (y - k.v0) / k.fy, 1.0);
      const Vec3 dir = cam_to_world.rotation * dir_cam;
      double best_s = std::numeric_limits<double>::infinity();
      const ScenePlane* hit = nullptr;
      Vec3 hit_point = Vec3::Zero();
      for (const ScenePlane& plane : scene.planes) {
        const double denom = plane.normal.dot(dir);
        if (std::abs(denom) < 1e-12) continue;
        const double s = (plane.dist - plane.normal.dot(origin)) / denom;
        if (s <= 1e-9 || s >= best_s) continue;
        const Vec3 p = origin + s * dir;
        if (std::isfinite(plane.extent_u)) {
          const Vec3 local = p - plane.dist * plane.normal;
          if (std::abs(plane.tangent_u.dot(local)) > plane.extent_u ||
              std::abs(plane.tangent_v.dot(local)) > plane.extent_v)
            continue;
        }
        best_s = s;
        hit = &plane;
        hit_point = p;
      }
      require(hit != nullptr, "bad-scene",
              "ray through pixel (" + std::to_string(x) + "," + std::to_string(y) +
                  ") escapes the scene");
      // dir_cam has unit z, so the ray parameter equals camera-frame depth
      depth[depth_shape.index(0, 0, y, x)] = static_cast<float>(best_s);
      const Vec3 local = hit_point - hit->dist * hit->normal;
      const std::array<double, 3> rgb =
          hit->texture.color(hit->tangent_u.dot(local), hit->tangent_v.dot(local));
      for (int c = 0; c < 3; ++c)
        image[img_shape.index(0, c, y, x)] = static_cast<float>(rgb[static_cast<std::size_t>(c)]);
    }
  return RenderedView{Tensor<float>(img_shape, std::move(image)),
                      Tensor<float>(depth_shape, std::move(depth))};
}

const char* to_string(TrajectoryStyle s) {
  switch (s) {
    case TrajectoryStyle::forward: return "forward";
    case TrajectoryStyle::lateral: return "lateral";
    case TrajectoryStyle::rotate: return "rotate";
  }
  return "unknown";
}

TrajectoryStyle trajectory_from_string(const std::string& name) {
  if (name == "forward") return TrajectoryStyle::forward;
  if (name == "lateral") return TrajectoryStyle::lateral;
  if (name == "rotate") return TrajectoryStyle::rotate;
  fail("bad-argument", "unknown trajectory style '" + name + "'");
}

Intrinsics default_intrinsics(int height, int width) {
  return Intrinsics(0.8 * width, 0.8 * width, (width - 1) / 2.0, (height - 1) / 2.0);
}

namespace {

PlaneTexture make_texture(Rng& rng, TextureKind kind) {
  PlaneTexture tex;
  tex.kind = kind;
  if (kind == TextureKind::checkerboard) {
    tex.cell = rng.uniform(0.8, 2.0);
    for (int c = 0; c < 3; ++c) {
      tex.base[static_cast<std::size_t>(c)] = rng.uniform(0.6, 0.95);
      tex.alt[static_cast<std::size_t>(c)] = rng.uniform(0.05, 0.35);
    }
    return tex;
  }
  const int components = kind == TextureKind::sinusoid ? 2 : 5;
  const double budget = 0.45;
  for (int c = 0; c < 3; ++c) {
    tex.base[static_cast<std::size_t>(c)] = rng.uniform(0.4, 0.6);
    for (int j = 0; j < components; ++j) {
      TextureComponent w;
      if (kind == TextureKind::sinusoid) {
        w.fu = rng.uniform(0.15, 0.7);
        w.fv = rng.uniform(0.15, 0.7);
      } else {
        w.fu = rng.uniform(-0.8, 0.8);
        w.fv = rng.uniform(-0.8, 0.8);
      }
      w.phase = rng.uniform(0.0, kTwoPi);
      w.amplitude = budget / components;
      tex.waves[static_cast<std::size_t>(c)].push_back(w);
    }
  }
  return tex;
}

}  // namespace

SceneSpec make_random_scene(Rng& rng, TrajectoryStyle style) {
  SceneSpec scene;
  const Intrinsics k = default_intrinsics(32, 96);  // placement frame only
  // Forward trajectories advance up to ~4 units; keep foreground clear of the path.
  const double depth_shift = style == TrajectoryStyle::forward ? 4.5 : 0.0;
  const int count = 2 + static_cast<int>(rng.index(2));
  for (int i = 0; i < count; ++i) {
    ScenePlane plane;
    const double z0 = rng.uniform(2.5, 9.0) + depth_shift;
    const double px = rng.uniform(8.0, 88.0);
    const double py = rng.uniform(4.0, 28.0);
    const Vec3 anchor = backproject(px, py, z0, k);
    Vec3 n(rng.uniform(-0.35, 0.35), rng.uniform(-0.35, 0.35), 1.0);
    plane.normal = n.normalized();
    plane.dist = plane.normal.dot(anchor);
    std::tie(plane.tangent_u, plane.tangent_v) = plane_tangents(plane.normal);
    plane.extent_u = z0 * rng.uniform(0.2, 0.55);
    plane.extent_v = z0 * rng.uniform(0.15, 0.4);
    plane.texture = make_texture(
        rng, rng.uniform() < 0.5 ? TextureKind::sinusoid : TextureKind::noise);
    scene.planes.push_back(plane);
  }
  ScenePlane background;
  background.normal = Vec3(0, 0, 1);
  background.dist = rng.uniform(18.0, 28.0) + depth_shift;
  std::tie(background.tangent_u, background.tangent_v) = plane_tangents(background.normal);
  background.texture = make_texture(rng, TextureKind::noise);
  scene.planes.push_back(background);
  return scene;
}

std::vector<RigidTransform> make_trajectory(Rng& rng, TrajectoryStyle style, int frames) {
  std::vector<RigidTransform> poses;
  poses.reserve(static_cast<std::size_t>(frames));
  for (int f = 0; f < frames; ++f) {
    // Oscillating paths with a small drift keep every frame inside the scene
    // regardless of sequence length.
    const double t = static_cast<double>(f);
    Vec3 center = Vec3::Zero();
    double yaw = 0.0;
    switch (style) {
      case TrajectoryStyle::forward:
        center = Vec3(0.0, 0.0, 0.8 * std::sin(kTwoPi * t / 24.0) + 0.02 * t);
        break;
      case TrajectoryStyle::lateral:
        center = Vec3(0.5 * std::sin(kTwoPi * t / 16.0) + 0.02 * t, 0.0, 0.0);
        break;
      case TrajectoryStyle::rotate:
        yaw = 0.04 * std::sin(kTwoPi * t / 20.0);
        center = Vec3(0.15 * std::sin(kTwoPi * t / 16.0) + 0.01 * t, 0.0, 0.0);
        break;
    }
    center += Vec3(rng.normal(0.0, 0.008), rng.normal(0.0, 0.006), rng.normal(0.0, 0.008));
    yaw += rng.normal(0.0, 0.002);
    const Mat3 r = Eigen::AngleAxisd(yaw, Vec3::UnitY()).toRotationMatrix();
    // world_to_cam: X_c = R^T (X_w - center)
    RigidTransform pose;
    pose.rotation = r.transpose();
    pose.translation = -(r.transpose() * center);
    poses.push_back(pose);
  }
  return poses;
}

RigidTransform relative_pose(const RigidTransform& world_to_a, const RigidTransform& world_to_b) {
  return world_to_b.compose(world_to_a.inverse());
}

SynthDataset generate_dataset(const DatasetGenSpec& spec) {
  require(spec.scenes >= 1 && spec.triplets_per_scene >= 1, "bad-argument",
          "dataset needs at least one scene and one triplet");
  require(spec.height % 8 == 0 && spec.width % 8 == 0, "bad-argument",
          "frame size must be divisible by 8, got " + std::to_string(spec.height) + "x" +
              std::to_string(spec.width));
  SynthDataset dataset;
  dataset.spec = spec;
  dataset.intrinsics = default_intrinsics(spec.height, spec.width);
  Rng rng(spec.seed);
  const int frames = spec.triplets_per_scene + 2;
  for (int s = 0; s < spec.scenes; ++s) {
    Rng scene_rng = rng.fork(static_cast<std::uint64_t>(s) + 1);
    SceneRender render;
    render.scene = make_random_scene(scene_rng, spec.style);
    render.world_to_cam = make_trajectory(scene_rng, spec.style, frames);
    for (const RigidTransform& pose : render.world_to_cam) {
      RenderedView view =
          render_view(render.scene, pose, dataset.intrinsics, spec.height, spec.width);
      render.images.push_back(view.image);
      render.depths.push_back(view.depth);
    }
    dataset.scenes.push_back(std::move(render));
  }
  return dataset;
}

namespace {

std::string index_name(const char* prefix, int i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, i);
  return buf;
}

nlohmann::json pose_json(const RigidTransform& t) {
  nlohmann::json j;
  std::vector<double> r(9);
  for (int i = 0; i < 3; ++i)
    for (int jj = 0; jj < 3; ++jj) r[static_cast<std::size_t>(i * 3 + jj)] = t.rotation(i, jj);
  j["rotation"] = r;
  j["translation"] = {t.translation.x(), t.translation.y(), t.translation.z()};
  return j;
}

}  // namespace

void write_dataset(const SynthDataset& dataset, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, "io-error", "cannot create directory " + dir);
  const DatasetGenSpec& spec = dataset.spec;

  nlohmann::json manifest;
  manifest["seed"] = spec.seed;
  manifest["height"] = spec.height;
  manifest["width"] = spec.width;
  manifest["scenes"] = spec.scenes;
  manifest["triplets_per_scene"] = spec.triplets_per_scene;
  manifest["triplet_count"] = spec.scenes * spec.triplets_per_scene;
  manifest["frames_per_scene"] = spec.triplets_per_scene + 2;
  manifest["trajectory"] = to_string(spec.style);
  std::ofstream(dir + "/manifest.json") << manifest.dump(2) << "\n";

  nlohmann::json intr;
  intr["fx"] = dataset.intrinsics.fx;
  intr["fy"] = dataset.intrinsics.fy;
  intr["u0"] = dataset.intrinsics.u0;
  intr["v0"] = dataset.intrinsics.v0;
  std::ofstream(dir + "/intrinsics.json") << intr.dump(2) << "\n";

  for (int s = 0; s < spec.scenes; ++s) {
    const SceneRender& scene = dataset.scenes[static_cast<std::size_t>(s)];
    const std::string scene_dir = dir + "/" + index_name("scene_", s, 3);
    fs::create_directories(scene_dir, ec);
    require(!ec, "io-error", "cannot create directory " + scene_dir);
    const int frames = static_cast<int>(scene.images.size());
    for (int f = 0; f < frames; ++f) {
      const std::string stem = scene_dir + "/" + index_name("frame_", f, 2);
      write_ppm(stem + ".ppm", scene.images[static_cast<std::size_t>(f)]);
      write_pfm(stem + "_depth.pfm", scene.depths[static_cast<std::size_t>(f)]);
    }
    nlohmann::json poses;
    poses["pairs"] = nlohmann::json::array();
    for (int f = 0; f + 1 < frames; ++f) {
      nlohmann::json pair = pose_json(relative_pose(scene.world_to_cam[static_cast<std::size_t>(f)],
                                                    scene.world_to_cam[static_cast<std::size_t>(f) + 1]));
      pair["from"] = f;
      pair["to"] = f + 1;
      poses["pairs"].push_back(pair);
    }
    std::ofstream(scene_dir + "/poses.json") << poses.dump(2) << "\n";
  }
}

std::pair<Tensor<float>, Tensor<float>> corrupt_depth(const Tensor<float>& depth,
                                                      double fraction, double factor,
                                                      std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, "bad-argument",
          "corruption fraction must be in (0,1)");
  require(factor > 0.0 && factor != 1.0, "bad-argument",
          "corruption factor must be positive and != 1");
  const long long n = depth.numel();
  const long long count = static_cast<long long>(fraction * static_cast<double>(n));
  std::vector<long long> order(static_cast<std::size_t>(n));
  for (long long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);
  Buffer<float> corrupted = depth.buf();
  Buffer<float> mask = Buffer<float>::Zero(n);
  for (long long i = 0; i < count; ++i) {
    const long long idx = order[static_cast<std::size_t>(i)];
    corrupted[idx] *= static_cast<float>(factor);
    mask[idx] = 1.0f;
  }
  return {Tensor<float>(depth.shape(), std::move(corrupted)),
          Tensor<float>(depth.shape(), std::move(mask))};
}

}  // namespace srdepth
