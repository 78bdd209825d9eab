// SPDX-License-Identifier: Apache-2.0
//
// srdepth command-line tool: synthetic dataset generation, training,
// evaluation, multiview consistency checking, and view synthesis. Every
// command is deterministic given its flags and seed, and every output
// directory receives a config.json describing the run that produced it.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "srdepth/dataset.hpp"
#include "srdepth/distill.hpp"
#include "srdepth/image_io.hpp"
#include "srdepth/metrics.hpp"
#include "srdepth/mvcheck.hpp"
#include "srdepth/synthscene.hpp"
#include "srdepth/warp.hpp"

namespace fs = std::filesystem;
using namespace srdepth;

namespace {

std::pair<int, int> parse_size(const std::string& size) {
  const std::size_t x = size.find('x');
  require(x != std::string::npos && x > 0 && x + 1 < size.size(), "bad-argument",
          "--size expects HxW, got '" + size + "'");
  try {
    return {std::stoi(size.substr(0, x)), std::stoi(size.substr(x + 1))};
  } catch (...) {
    fail("bad-argument", "--size expects HxW, got '" + size + "'");
  }
}

void ensure_output_dir(const std::string& dir, bool force) {
  if (fs::exists(dir)) {
    const bool empty = fs::is_directory(dir) && fs::is_empty(dir);
    require(empty || force, "output-exists",
            dir + " exists and is not empty (use --force to overwrite)");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec || fs::is_directory(dir), "io-error", "cannot create " + dir);
}

void write_config(const std::string& dir, const nlohmann::json& config) {
  std::ofstream out(dir + "/config.json");
  require(out.good(), "io-error", "cannot write " + dir + "/config.json");
  out << config.dump(2) << "\n";
}

std::vector<std::string> sorted_pfms(const std::string& dir) {
  require(fs::is_directory(dir), "missing-file", dir + " is not a directory");
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".pfm") files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  require(!files.empty(), "missing-file", "no .pfm files in " + dir);
  return files;
}

int run_synth(const std::string& out_dir, int scenes, int triplets, const std::string& size,
              std::uint64_t seed, const std::string& trajectory, bool force) {
  const auto [h, w] = parse_size(size);
  DatasetGenSpec spec;
  spec.scenes = scenes;
  spec.triplets_per_scene = triplets;
  spec.height = h;
  spec.width = w;
  spec.seed = seed;
  spec.style = trajectory_from_string(trajectory);
  ensure_output_dir(out_dir, force);
  SynthDataset dataset = generate_dataset(spec);
  write_dataset(dataset, out_dir);
  nlohmann::json config;
  config["command"] = "synth";
  config["scenes"] = scenes;
  config["triplets"] = triplets;
  config["size"] = size;
  config["seed"] = seed;
  config["trajectory"] = trajectory;
  write_config(out_dir, config);
  std::printf("synth: %d scenes x %d triplets (%dx%d, %s) -> %s\n", scenes, triplets, h, w,
              trajectory.c_str(), out_dir.c_str());
  std::printf("triplet_count %d\n", scenes * triplets);
  return 0;
}

int run_train(const std::string& data_dir, const std::string& out_dir, int epochs,
              double gamma, const std::string& mask, const std::string& l1_mode,
              std::uint64_t seed, double lr, int batch, bool offsets, bool force) {
  TripletDataset data = load_dataset(data_dir);
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch;
  cfg.learning_rate = lr;
  cfg.weights.gamma_d = gamma;
  cfg.weights.l1_mode =
      l1_mode == "conventional" ? L1WeightMode::conventional : L1WeightMode::paper_literal;
  require(l1_mode == "paper" || l1_mode == "conventional", "bad-argument",
          "--l1-mode must be 'paper' or 'conventional'");
  cfg.mask_mode = mask_mode_from_string(mask);
  cfg.seed = seed;
  cfg.use_offsets = offsets;
  ensure_output_dir(out_dir, force);

  DepthNetConfig net_cfg;
  net_cfg.height = data.height;
  net_cfg.width = data.width;
  net_cfg.use_offsets = offsets;
  Models<float> models(net_cfg);
  models.init(seed);
  TrainResult result = train(models, data, cfg, out_dir);

  std::ofstream csv(out_dir + "/metrics.csv");
  require(csv.good(), "io-error", "cannot write " + out_dir + "/metrics.csv");
  csv << result.csv;

  nlohmann::json config;
  config["command"] = "train";
  config["data"] = data_dir;
  config["epochs"] = epochs;
  config["gamma"] = gamma;
  config["mask"] = mask;
  config["l1_mode"] = to_string(cfg.weights.l1_mode);
  config["alpha"] = cfg.weights.alpha;
  config["lambda_s"] = cfg.weights.lambda_s;
  config["seed"] = seed;
  config["lr"] = lr;
  config["batch"] = batch;
  config["offsets"] = offsets;
  config["mvc_alpha"] = cfg.mvc_alpha;
  config["mvc_beta"] = cfg.mvc_beta;
  config["teacher_pose"] = "teacher";  // consistency check uses the teacher's pose output
  config["geo_error"] = cfg.geo_mode == GeoErrorMode::reprojected_depth ? "reprojected_depth"
                                                                        : "target_resample";
  write_config(out_dir, config);

  for (const EpochLog& log : result.epochs) {
    if (log.has_val)
      std::printf("epoch %d: total %.5f abs_rel %.4f rmse %.4f\n", log.epoch, log.total,
                  log.val.abs_rel, log.val.rmse);
    else
      std::printf("epoch %d: total %.5f\n", log.epoch, log.total);
  }
  return 0;
}

int run_eval(const std::string& pred_dir, const std::string& gt_dir, bool median_scaling,
             double cap, const std::string& out_file) {
  const std::vector<std::string> pred_files = sorted_pfms(pred_dir);
  const std::vector<std::string> gt_files = sorted_pfms(gt_dir);
  require(pred_files.size() == gt_files.size(), "bad-argument",
          "prediction and ground-truth counts differ");
  std::vector<Tensor<float>> preds, gts;
  for (std::size_t i = 0; i < pred_files.size(); ++i) {
    preds.push_back(read_pfm(pred_files[i]));
    gts.push_back(read_pfm(gt_files[i]));
  }
  const std::string csv = evaluate_batch_csv(preds, gts, median_scaling, cap);
  if (out_file.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::ofstream out(out_file);
    require(out.good(), "io-error", "cannot write " + out_file);
    out << csv;
  }
  return 0;
}

int run_mvc(const std::string& target_depth, const std::vector<std::string>& source_depths,
            const std::string& pose_json, const std::string& intrinsics_json, double alpha,
            double beta, const std::string& out_dir, bool force) {
  Tensor<float> target = read_pfm(target_depth);
  const std::vector<RigidTransform> poses = read_poses_json(pose_json);
  require(poses.size() == source_depths.size(), "bad-argument",
          "need one pose per source depth map");
  const Intrinsics k = read_intrinsics_json(intrinsics_json);
  ensure_output_dir(out_dir, force);

  std::vector<ConsistencyReport<float>> reports;
  double coverage = 0.0;
  for (std::size_t i = 0; i < source_depths.size(); ++i) {
    Tensor<float> source = read_pfm(source_depths[i]);
    ConsistencyReport<float> report = check_pair(target, source, {poses[i]}, k);
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "_%zu.pfm", i);
    write_pfm(out_dir + "/e_reproj" + suffix, report.e_reproj);
    write_pfm(out_dir + "/e_geo" + suffix, report.e_geo);
    coverage += report.coverage;
    reports.push_back(std::move(report));
  }
  coverage /= static_cast<double>(reports.size());
  FilterMask<float> mask = filter_mask(reports, alpha, beta);
  write_pfm(out_dir + "/mask.pfm", mask.mask);
  double pass = 0.0;
  for (Eigen::Index i = 0; i < mask.mask.buf().size(); ++i)
    pass += static_cast<double>(mask.mask.buf()[i]);
  pass /= static_cast<double>(mask.mask.numel());

  nlohmann::json config;
  config["command"] = "mvc";
  config["target_depth"] = target_depth;
  config["source_depths"] = source_depths;
  config["pose_json"] = pose_json;
  config["intrinsics_json"] = intrinsics_json;
  config["alpha"] = alpha;
  config["beta"] = beta;
  write_config(out_dir, config);

  std::printf("coverage %.3f\n", coverage);
  std::printf("pass_rate %.3f\n", pass);
  if (mask.degenerate)
    std::fprintf(stderr, "warning: a source view had no valid round trips\n");
  return 0;
}

int run_warp(const std::string& source_path, const std::string& depth_path,
             const std::string& pose_json, const std::string& intrinsics_json,
             const std::string& out_path) {
  Tensor<float> source = read_ppm(source_path);
  Tensor<float> depth = read_pfm(depth_path);
  const std::vector<RigidTransform> poses = read_poses_json(pose_json);
  require(poses.size() == 1, "bad-argument", "warp expects exactly one pose");
  const Intrinsics k = read_intrinsics_json(intrinsics_json);
  SynthesizedView<float> view = synthesize_view(source, depth, poses[0], k);
  write_ppm(out_path, view.image);
  const std::string stem = out_path.substr(0, out_path.find_last_of('.'));
  write_pfm(stem + "_validity.pfm", view.validity);
  double valid = 0.0;
  for (Eigen::Index i = 0; i < view.validity.buf().size(); ++i)
    valid += static_cast<double>(view.validity.buf()[i]);
  std::printf("validity %.3f\n", valid / static_cast<double>(view.validity.numel()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised monocular depth at desk scale: synthetic scenes, "
               "self-distilled training, consistency filtering, evaluation"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate an analytic plane-scene dataset");
  std::string synth_out, synth_size = "32x96", synth_traj = "lateral";
  int synth_scenes = 4, synth_triplets = 12;
  std::uint64_t synth_seed = 1;
  bool synth_force = false;
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--scenes", synth_scenes);
  synth->add_option("--triplets", synth_triplets, "triplets per scene");
  synth->add_option("--size", synth_size, "HxW, both divisible by 8");
  synth->add_option("--seed", synth_seed);
  synth->add_option("--trajectory", synth_traj)
      ->check(CLI::IsMember({"forward", "lateral", "rotate"}));
  synth->add_flag("--force", synth_force, "overwrite a non-empty output directory");

  auto* train_cmd = app.add_subcommand("train", "Train with self-reference distillation");
  std::string train_data, train_out, train_mask = "hard", train_l1 = "paper";
  int train_epochs = 20, train_batch = 2;
  double train_gamma = 0.1, train_lr = 1e-4;
  std::uint64_t train_seed = 1;
  bool train_offsets = true, train_force = false;
  train_cmd->add_option("--data", train_data)->required();
  train_cmd->add_option("--out", train_out)->required();
  train_cmd->add_option("--epochs", train_epochs);
  train_cmd->add_option("--gamma", train_gamma, "distillation weight from epoch 2 on");
  train_cmd->add_option("--mask", train_mask)->check(CLI::IsMember({"hard", "soft", "none"}));
  train_cmd->add_option("--l1-mode", train_l1)->check(CLI::IsMember({"paper", "conventional"}));
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_option("--lr", train_lr);
  train_cmd->add_option("--batch", train_batch);
  train_cmd->add_flag("--offsets,!--no-offsets", train_offsets,
                      "offset-aligned disparity refinement");
  train_cmd->add_flag("--force", train_force);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate predicted depth maps against GT");
  std::string eval_pred, eval_gt, eval_out;
  bool eval_median = false;
  double eval_cap = 80.0;
  eval_cmd->add_option("--pred", eval_pred, "directory of predicted .pfm maps")->required();
  eval_cmd->add_option("--gt", eval_gt, "directory of ground-truth .pfm maps")->required();
  eval_cmd->add_flag("--median-scaling", eval_median);
  eval_cmd->add_option("--cap", eval_cap);
  eval_cmd->add_option("--out", eval_out, "CSV output path (default stdout)");

  auto* mvc_cmd = app.add_subcommand("mvc", "Multiview consistency check and filter mask");
  std::string mvc_target, mvc_pose, mvc_intr, mvc_out;
  std::vector<std::string> mvc_sources;
  double mvc_alpha = 4.0, mvc_beta = 4.0;
  bool mvc_force = false;
  mvc_cmd->add_option("--target-depth", mvc_target)->required();
  mvc_cmd->add_option("--source-depth", mvc_sources)->required();
  mvc_cmd->add_option("--pose-json", mvc_pose)->required();
  mvc_cmd->add_option("--intrinsics-json", mvc_intr)->required();
  mvc_cmd->add_option("--alpha", mvc_alpha);
  mvc_cmd->add_option("--beta", mvc_beta);
  mvc_cmd->add_option("--out", mvc_out)->required();
  mvc_cmd->add_flag("--force", mvc_force);

  auto* warp_cmd = app.add_subcommand("warp", "Synthesize a view from image + depth + pose");
  std::string warp_src, warp_depth, warp_pose, warp_intr, warp_out;
  warp_cmd->add_option("--source", warp_src, "source image (.ppm)")->required();
  warp_cmd->add_option("--depth", warp_depth, "target-view depth (.pfm)")->required();
  warp_cmd->add_option("--pose-json", warp_pose, "target->source pose")->required();
  warp_cmd->add_option("--intrinsics-json", warp_intr)->required();
  warp_cmd->add_option("--out", warp_out, "output image (.ppm)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return run_synth(synth_out, synth_scenes, synth_triplets, synth_size, synth_seed,
                       synth_traj, synth_force);
    if (train_cmd->parsed())
      return run_train(train_data, train_out, train_epochs, train_gamma, train_mask, train_l1,
                       train_seed, train_lr, train_batch, train_offsets, train_force);
    if (eval_cmd->parsed())
      return run_eval(eval_pred, eval_gt, eval_median, eval_cap, eval_out);
    if (mvc_cmd->parsed())
      return run_mvc(mvc_target, mvc_sources, mvc_pose, mvc_intr, mvc_alpha, mvc_beta, mvc_out,
                     mvc_force);
    if (warp_cmd->parsed())
      return run_warp(warp_src, warp_depth, warp_pose, warp_intr, warp_out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.code().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
