#include "voxelfuse/pipeline/scene.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <json.hpp>

#include "voxelfuse/error.hpp"
#include "voxelfuse/numgrad/linear.hpp"
#include "voxelfuse/numgrad/vxf.hpp"
#include "voxelfuse/pipeline/kitti.hpp"

namespace voxelfuse::pipeline {
namespace {

using geom::Box3D;
using geom::Vec3;

constexpr int kPlacementAttempts = 200;

double uniform(ng::Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Surface samples on the top and the four sides (no returns from below).
std::vector<LidarPoint> sample_surface(const Box3D& box, double intensity, const SceneParams& p,
                                       ng::Rng& rng) {
  const auto& s = box.size();
  const double hx = 0.5 * s[0], hy = 0.5 * s[1], hz = 0.5 * s[2];
  struct Face {
    int fixed_axis;
    double fixed_value;
    double area;
  };
  const Face faces[] = {{2, hz, s[0] * s[1]},  {0, hx, s[1] * s[2]}, {0, -hx, s[1] * s[2]},
                        {1, hy, s[0] * s[2]},  {1, -hy, s[0] * s[2]}};
  std::normal_distribution<double> noise(0.0, p.noise_sigma);
  std::normal_distribution<double> jitter(0.0, 0.02);
  std::vector<LidarPoint> out;
  for (const auto& f : faces) {
    const auto n = static_cast<std::size_t>(std::lround(p.point_density * f.area));
    for (std::size_t i = 0; i < n; ++i) {
      Vec3 local{uniform(rng, -hx, hx), uniform(rng, -hy, hy), uniform(rng, -hz, hz)};
      local[static_cast<std::size_t>(f.fixed_axis)] = f.fixed_value;
      Vec3 w = box.to_world(local);
      if (p.noise_sigma > 0.0) {
        for (auto& c : w) c += noise(rng);
      }
      out.push_back({w, std::clamp(intensity + jitter(rng), 0.0, 1.0)});
    }
  }
  return out;
}

Box3D draw_box(const RunConfig& cfg, ng::Rng& rng) {
  const auto& g = cfg.lidar_grid;
  const double x_hi = std::min(50.0, g.extent_max()[0] - 3.0);
  const double x = uniform(rng, std::min(8.0, x_hi), x_hi);
  const double y_lim = std::min({0.55 * x, -g.origin[1] - 3.0, g.extent_max()[1] - 3.0});
  const double y = uniform(rng, -std::max(y_lim, 0.0), std::max(y_lim, 0.0) + 1e-12);
  const double l = uniform(rng, 3.4, 4.6);
  const double w = uniform(rng, 1.5, 1.9);
  const double h = uniform(rng, 1.4, 1.7);
  const double yaw = uniform(rng, -std::numbers::pi, std::numbers::pi);
  return Box3D({x, y, cfg.scene.ground_z + 0.5 * h}, {l, w, h}, yaw);
}

bool overlaps(const Box3D& b, const std::vector<Box3D>& placed) {
  const Box3D grown(b.center(), {b.size()[0] + 1.0, b.size()[1] + 1.0, b.size()[2]}, b.yaw());
  return std::any_of(placed.begin(), placed.end(),
                     [&](const Box3D& o) { return geom::iou_bev(grown, o) > 0.0; });
}

// Per-box image signature in the LiDAR channel layout: zero mean offset,
// the box's return intensity, unit occupancy, then a random appearance code.
std::vector<double> signature(std::size_t channels, ng::Rng& rng, double intensity) {
  std::vector<double> s(channels, 0.0);
  s[3] = intensity;
  s[4] = 1.0;
  for (std::size_t ch = 5; ch < channels; ++ch) s[ch] = uniform(rng, -1.0, 1.0);
  return s;
}

// Feature-pixel rectangle of the projected box corners, clipped to the map.
struct PixelRect {
  std::size_t u0, u1, v0, v1;  // half-open
  double depth;
};

std::optional<PixelRect> footprint(const Box3D& box, const geom::Calibration& calib,
                                   std::size_t width, std::size_t height, std::size_t stride) {
  double umin = std::numeric_limits<double>::infinity(), umax = -umin;
  double vmin = umin, vmax = -umin;
  for (const auto& c : box.corners()) {
    const auto p = calib.project(c);
    if (!p) return std::nullopt;
    umin = std::min(umin, p->u);
    umax = std::max(umax, p->u);
    vmin = std::min(vmin, p->v);
    vmax = std::max(vmax, p->v);
  }
  const auto depth = calib.project(box.center());
  if (!depth) return std::nullopt;
  const double s = static_cast<double>(stride);
  auto clip = [](double x, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(x, 0.0, static_cast<double>(n)));
  };
  PixelRect r{clip(std::floor(umin / s), width), clip(std::floor(umax / s) + 1.0, width),
              clip(std::floor(vmin / s), height), clip(std::floor(vmax / s) + 1.0, height),
              depth->depth};
  if (r.u0 >= r.u1 || r.v0 >= r.v1) return std::nullopt;
  return r;
}

}  // namespace

std::vector<geom::Vec3> SyntheticScene::xyz() const {
  std::vector<geom::Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.xyz);
  return out;
}

SyntheticScene gen_scene(const RunConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ng::Rng rng(seed);
  SyntheticScene scene;
  scene.seed = seed;
  scene.calib = cfg.calib;

  const auto n_boxes = std::uniform_int_distribution<std::size_t>(cfg.scene.min_boxes,
                                                                  cfg.scene.max_boxes)(rng);
  std::vector<double> intensities;
  for (std::size_t k = 0; k < n_boxes; ++k) {
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
      const Box3D box = draw_box(cfg, rng);
      const double intensity = uniform(rng, 0.2, 0.9);
      if (overlaps(box, scene.gt_boxes)) continue;
      auto pts = sample_surface(box, intensity, cfg.scene, rng);
      const bool has_interior = std::any_of(pts.begin(), pts.end(), [&](const LidarPoint& p) {
        return box.contains(p.xyz);
      });
      if (!has_interior) continue;
      scene.gt_boxes.push_back(box);
      intensities.push_back(intensity);
      scene.points.insert(scene.points.end(), pts.begin(), pts.end());
      break;
    }
  }
  if (scene.gt_boxes.size() < cfg.scene.min_boxes) {
    throw ConfigError("gen_scene: could not place " + std::to_string(cfg.scene.min_boxes) +
                      " boxes without overlap in the LiDAR grid");
  }

  const std::size_t w = cfg.camera.feature_width();
  const std::size_t h = cfg.camera.feature_height();
  const std::size_t c = cfg.channels;
  ng::Tensor features(ng::Shape{w, h, c});
  std::normal_distribution<double> noise(0.0, cfg.scene.feature_noise);
  if (cfg.scene.feature_noise > 0.0)
    for (std::size_t i = 0; i < w * h * c; ++i) features[i] = noise(rng);
  std::vector<double> zbuf(w * h, std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < scene.gt_boxes.size(); ++k) {
    auto sig = signature(c, rng, intensities[k]);
    const auto rect = footprint(scene.gt_boxes[k], cfg.calib, w, h, cfg.camera.stride);
    if (!rect) continue;
    for (std::size_t u = rect->u0; u < rect->u1; ++u)
      for (std::size_t v = rect->v0; v < rect->v1; ++v) {
        const std::size_t px = u * h + v;
        if (rect->depth >= zbuf[px]) continue;
        zbuf[px] = rect->depth;
        for (std::size_t ch = 0; ch < c; ++ch) {
          features[px * c + ch] = sig[ch] + (cfg.scene.feature_noise > 0.0 ? noise(rng) : 0.0);
        }
      }
  }
  scene.image_features = {std::move(features), cfg.camera.stride};
  return scene;
}

geom::DenseGrid voxelize_points(std::span<const LidarPoint> points, const geom::GridSpec& grid,
                                std::size_t channels, double count_norm) {
  if (channels < 5) throw ContractError("voxelize_points: need at least 5 channels");
  if (!(count_norm > 0.0)) throw ContractError("voxelize_points: count_norm must be positive");
  geom::DenseGrid out(grid, channels);
  for (const auto& p : points) {
    const auto idx = grid.locate(p.xyz);
    if (!idx) continue;
    const auto center = geom::voxel_center(grid, *idx);
    auto row = out.at(*idx);
    for (int a = 0; a < 3; ++a) row[a] += p.xyz[a] - center[a];
    row[3] += p.intensity;
    row[4] += 1.0;
  }
  for (std::size_t r = 0; r < grid.voxel_count(); ++r) {
    auto row = out.features.row(r);
    const double n = row[4];
    if (n == 0.0) continue;
    for (int a = 0; a < 4; ++a) row[a] /= n;
    row[4] = n / count_norm;
  }
  return out;
}

std::string scene_json(const SyntheticScene& scene) {
  nlohmann::ordered_json j;
  j["seed"] = scene.seed;
  j["calib"] = scene.calib.projection();
  auto& boxes = j["boxes"] = nlohmann::ordered_json::array();
  for (const auto& b : scene.gt_boxes) {
    boxes.push_back({{"center", b.center()}, {"size", b.size()}, {"yaw", b.yaw()}});
  }
  j["points"] = scene.points.size();
  j["image_features"] = {{"width", scene.image_features.width()},
                         {"height", scene.image_features.height()},
                         {"channels", scene.image_features.channels()},
                         {"stride", scene.image_features.stride}};
  return j.dump(2) + "\n";
}

std::string points_csv(std::span<const LidarPoint> points) {
  std::string out = "x,y,z,intensity\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", p.xyz[0], p.xyz[1], p.xyz[2],
                  p.intensity);
    out += buf;
  }
  return out;
}

std::vector<LidarPoint> parse_points_csv(const std::string& text) {
  std::vector<LidarPoint> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || (line_no == 1 && line.rfind("x,", 0) == 0)) continue;
    double v[4] = {0.0, 0.0, 0.0, 0.0};
    std::size_t n = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (n < 4) {
      const auto r = std::from_chars(p, end, v[n]);
      if (r.ec != std::errc{}) break;
      ++n;
      p = r.ptr;
      if (p == end || *p != ',') break;
      ++p;
    }
    if ((n != 3 && n != 4) || p != end) {
      throw ParseError("points.csv:" + std::to_string(line_no) +
                       ": expected x,y,z[,intensity]");
    }
    out.push_back({{v[0], v[1], v[2]}, v[3]});
  }
  return out;
}

void write_scene(const SyntheticScene& scene, const RunConfig& cfg,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write_text = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    out << text;
  };
  write_text("scene.json", scene_json(scene));
  write_text("points.csv", points_csv(scene.points));
  write_text("calib.txt", format_kitti_calib(scene.calib));
  ng::save_vxf(dir / "image_features.vxf", scene.image_features.data);
  ng::save_vxf(dir / "lidar_voxels.vxf",
               voxelize_points(scene.points, cfg.lidar_grid, cfg.channels, cfg.scene.count_norm)
                   .to_tensor4());
}

}  // namespace voxelfuse::pipeline
