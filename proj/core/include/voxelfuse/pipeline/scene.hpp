#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "voxelfuse/geom/box3d.hpp"
#include "voxelfuse/geom/calibration.hpp"
#include "voxelfuse/geom/grid.hpp"
#include "voxelfuse/ivlm/ivlm.hpp"
#include "voxelfuse/pipeline/config.hpp"

namespace voxelfuse::pipeline {

struct LidarPoint {
  geom::Vec3 xyz;
  double intensity = 0.0;

  bool operator==(const LidarPoint&) const = default;
};

struct SyntheticScene {
  std::vector<LidarPoint> points;
  ivlm::ImageFeatureMap image_features;
  std::vector<geom::Box3D> gt_boxes;
  geom::Calibration calib;
  std::uint64_t seed = 0;

  std::vector<geom::Vec3> xyz() const;
};

// Cars on a flat ground, surface returns with Gaussian noise, and an image
// feature map of noise where each box's projected footprint carries a
// per-box signature laid out like the voxel statistics below: channel 3 the
// box's return intensity, channel 4 one, channels 5+ a random appearance
// code (nearest box wins per pixel). Box count is drawn from
// [scene.min_boxes, scene.max_boxes]; boxes without an interior point are
// re-drawn. Same config and seed give a bit-identical scene.
SyntheticScene gen_scene(const RunConfig& cfg, std::uint64_t seed);

// Per-voxel [mean offset from voxel center (3), mean intensity, count / count_norm,
// zeros up to `channels`]. Points outside the grid are dropped.
geom::DenseGrid voxelize_points(std::span<const LidarPoint> points, const geom::GridSpec& grid,
                                std::size_t channels, double count_norm = 8.0);

// scene.json text: seed, calibration, boxes, point count.
std::string scene_json(const SyntheticScene& scene);
// points.csv text: x,y,z,intensity
std::string points_csv(std::span<const LidarPoint> points);
std::vector<LidarPoint> parse_points_csv(const std::string& text);

// scene.json, points.csv, calib.txt, image_features.vxf, lidar_voxels.vxf.
void write_scene(const SyntheticScene& scene, const RunConfig& cfg,
                 const std::filesystem::path& dir);

}  // namespace voxelfuse::pipeline
