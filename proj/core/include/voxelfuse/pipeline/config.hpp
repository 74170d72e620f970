#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "voxelfuse/detector/detector.hpp"
#include "voxelfuse/geom/calibration.hpp"
#include "voxelfuse/geom/depth_bins.hpp"
#include "voxelfuse/geom/grid.hpp"
#include "voxelfuse/losses/losses.hpp"
#include "voxelfuse/qfm/qfm.hpp"

namespace voxelfuse::pipeline {

struct CameraSpec {
  std::size_t width_px = 1242;
  std::size_t height_px = 375;
  std::size_t stride = 4;

  std::size_t feature_width() const { return width_px / stride; }
  std::size_t feature_height() const { return height_px / stride; }
};

struct SceneParams {
  std::size_t min_boxes = 1;
  std::size_t max_boxes = 5;
  double point_density = 30.0;  // surface returns per m²
  double noise_sigma = 0.02;    // m
  double ground_z = -1.73;
  double feature_noise = 0.05;
  double count_norm = 8.0;  // voxel count channel = count / count_norm
};

struct OptimParams {
  double lr = 0.02;
  std::size_t steps = 200;
  std::uint64_t seed = 0;
};

struct DetectorParams {
  detector::AnchorTemplate anchor;
  std::size_t top_k = 64;
  double nms_iou = 0.7;
  double anchor_pos_iou = 0.6;
  double anchor_neg_iou = 0.45;
};

struct VfimParams {
  std::size_t samples = 32;
  double pos_iou = 0.55;
  std::size_t pool = 6;
  std::size_t width = 256;
};

struct RunConfig {
  std::string profile = "toy";
  geom::GridSpec lidar_grid;
  geom::GridSpec image_grid;
  geom::DepthBinSpec bins;
  std::size_t channels = 16;  // C_F
  CameraSpec camera;
  geom::Calibration calib;
  qfm::AttentionConfig attention;
  losses::LossWeights weights;
  losses::FocalParams focal;
  DetectorParams detector;
  VfimParams vfim;
  OptimParams optim;
  SceneParams scene;

  static RunConfig toy();
  static RunConfig kitti();

  // Throws ConfigError. Checks that the image grid covers the LiDAR grid and
  // that C_F can hold the five voxel statistics.
  void validate() const;

  // One `key=value` assignment; unknown keys and malformed values throw
  // ConfigError. `profile` resets every other field to that profile.
  void set(std::string_view key, std::string_view value);

  // Flat text: one assignment per line, `#` starts a comment. A `profile`
  // line, if present, must come first.
  static RunConfig parse(std::string_view text, const std::string& origin = "<config>");
  static RunConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

// Camera of the bundled KITTI sample, LiDAR -> image-2 pixels.
geom::Calibration default_calibration();

}  // namespace voxelfuse::pipeline
