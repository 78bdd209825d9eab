// SPDX-License-Identifier: Apache-2.0
#include "srdepth/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "srdepth/image_io.hpp"

namespace srdepth {

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "missing-file", "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail("bad-format", path + ": " + e.what());
  }
  return j;
}

RigidTransform transform_from_json(const nlohmann::json& j, const std::string& path) {
  require(j.contains("rotation") && j.contains("translation"), "bad-format",
          path + ": pose entry lacks rotation/translation");
  const auto r = j["rotation"].get<std::vector<double>>();
  const auto t = j["translation"].get<std::vector<double>>();
  require(r.size() == 9 && t.size() == 3, "bad-format",
          path + ": pose entry has wrong element counts");
  Mat3 rot;
  for (int i = 0; i < 3; ++i)
    for (int jj = 0; jj < 3; ++jj) rot(i, jj) = r[static_cast<std::size_t>(i * 3 + jj)];
  return RigidTransform(rot, Vec3(t[0], t[1], t[2]));
}

std::string index_name(const char* prefix, int i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, i);
  return buf;
}

}  // namespace

TripletDataset load_dataset(const std::string& dir) {
  const nlohmann::json manifest = read_json(dir + "/manifest.json");
  const nlohmann::json intr = read_json(dir + "/intrinsics.json");
  TripletDataset out;
  out.intrinsics = Intrinsics(intr.at("fx").get<double>(), intr.at("fy").get<double>(),
                              intr.at("u0").get<double>(), intr.at("v0").get<double>());
  out.height = manifest.at("height").get<int>();
  out.width = manifest.at("width").get<int>();
  const int scenes = manifest.at("scenes").get<int>();
  const int frames = manifest.at("frames_per_scene").get<int>();
  for (int s = 0; s < scenes; ++s) {
    const std::string scene_dir = dir + "/" + index_name("scene_", s, 3);
    std::vector<Tensor<float>> images;
    std::vector<Tensor<float>> depths;
    for (int f = 0; f < frames; ++f) {
      const std::string stem = scene_dir + "/" + index_name("frame_", f, 2);
      images.push_back(read_ppm(stem + ".ppm"));
      depths.push_back(read_pfm(stem + "_depth.pfm"));
    }
    const nlohmann::json poses = read_json(scene_dir + "/poses.json");
    require(poses.contains("pairs"), "bad-format", scene_dir + "/poses.json: missing pairs");
    std::vector<RigidTransform> step;  // T_{i -> i+1}
    for (const auto& pair : poses["pairs"])
      step.push_back(transform_from_json(pair, scene_dir + "/poses.json"));
    require(static_cast<int>(step.size()) == frames - 1, "bad-format",
            scene_dir + "/poses.json: expected " + std::to_string(frames - 1) + " pairs");
    for (int t = 1; t + 1 < frames; ++t) {
      Triplet triplet;
      triplet.images = {images[static_cast<std::size_t>(t - 1)], images[static_cast<std::size_t>(t)],
                        images[static_cast<std::size_t>(t + 1)]};
      triplet.gt_depths = {depths[static_cast<std::size_t>(t - 1)], depths[static_cast<std::size_t>(t)],
                           depths[static_cast<std::size_t>(t + 1)]};
      triplet.to_prev = step[static_cast<std::size_t>(t - 1)].inverse();
      triplet.to_next = step[static_cast<std::size_t>(t)];
      out.triplets.push_back(std::move(triplet));
    }
  }
  return out;
}

std::vector<RigidTransform> read_poses_json(const std::string& path) {
  const nlohmann::json j = read_json(path);
  std::vector<RigidTransform> out;
  if (j.is_object() && j.contains("rotation")) {
    out.push_back(transform_from_json(j, path));
  } else if (j.is_array()) {
    for (const auto& entry : j) out.push_back(transform_from_json(entry, path));
  } else if (j.is_object() && j.contains("poses")) {
    for (const auto& entry : j["poses"]) out.push_back(transform_from_json(entry, path));
  } else {
    fail("bad-format", path + ": expected a pose object, a pose array, or {\"poses\": [...]}");
  }
  require(!out.empty(), "bad-format", path + ": contains no poses");
  return out;
}

Intrinsics read_intrinsics_json(const std::string& path) {
  const nlohmann::json j = read_json(path);
  try {
    return Intrinsics(j.at("fx").get<double>(), j.at("fy").get<double>(),
                      j.at("u0").get<double>(), j.at("v0").get<double>());
  } catch (const nlohmann::json::exception& e) {
    fail("bad-format", path + ": " + e.what());
  }
}

TripletDataset to_triplets(const SynthDataset& dataset) {
  TripletDataset out;
  out.intrinsics = dataset.intrinsics;
  out.height = dataset.spec.height;
  out.width = dataset.spec.width;
  for (const SceneRender& scene : dataset.scenes) {
    const int frames = static_cast<int>(scene.images.size());
    for (int t = 1; t + 1 < frames; ++t) {
      Triplet triplet;
      triplet.images = {scene.images[static_cast<std::size_t>(t - 1)],
                        scene.images[static_cast<std::size_t>(t)],
                        scene.images[static_cast<std::size_t>(t + 1)]};
      triplet.gt_depths = {scene.depths[static_cast<std::size_t>(t - 1)],
                           scene.depths[static_cast<std::size_t>(t)],
                           scene.depths[static_cast<std::size_t>(t + 1)]};
      triplet.to_prev = relative_pose(scene.world_to_cam[static_cast<std::size_t>(t)],
                                      scene.world_to_cam[static_cast<std::size_t>(t - 1)]);
      triplet.to_next = relative_pose(scene.world_to_cam[static_cast<std::size_t>(t)],
                                      scene.world_to_cam[static_cast<std::size_t>(t + 1)]);
      out.triplets.push_back(std::move(triplet));
    }
  }
  return out;
}

}  // namespace srdepth
