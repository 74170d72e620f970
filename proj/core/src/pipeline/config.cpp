#include "voxelfuse/pipeline/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "voxelfuse/error.hpp"
#include "voxelfuse/pipeline/kitti.hpp"

namespace voxelfuse::pipeline {
namespace {

constexpr std::string_view kSampleCalib =
    "P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 "
    "1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03\n"
    "R0_rect: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 "
    "-4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01\n"
    "Tr_velo_to_cam: 7.533745e-03 -9.999714e-01 -6.166020e-04 -4.069766e-03 1.480249e-02 "
    "7.280733e-04 -9.998902e-01 -7.631618e-02 9.998621e-01 7.523790e-03 1.480755e-02 "
    "-2.717806e-01\n";

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto c = s.find(',');
    out.push_back(trim(s.substr(0, c)));
    if (c == std::string_view::npos) break;
    s = s.substr(c + 1);
  }
  return out;
}

double to_double(std::string_view key, std::string_view s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError(std::string(key) + ": '" + std::string(s) + "' is not a finite number");
  }
  return v;
}

std::uint64_t to_u64(std::string_view key, std::string_view s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw ConfigError(std::string(key) + ": '" + std::string(s) +
                      "' is not a nonnegative integer");
  }
  return v;
}

template <std::size_t N, class T, class Parse>
std::array<T, N> to_array(std::string_view key, std::string_view s, Parse parse) {
  const auto parts = split_commas(s);
  if (parts.size() != N) {
    throw ConfigError(std::string(key) + ": expected " + std::to_string(N) +
                      " comma-separated values, got " + std::to_string(parts.size()));
  }
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = static_cast<T>(parse(key, parts[i]));
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class A>
std::string join(const A& a) {
  std::string out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<typename A::value_type>) {
      out += fmt(a[i]);
    } else {
      out += std::to_string(a[i]);
    }
  }
  return out;
}

using Setter = std::function<void(RunConfig&, std::string_view key, std::string_view value)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

template <class M>
Field real(M member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) { member(c) = to_double(k, v); },
          [member](const RunConfig& c) { return fmt(member(c)); }};
}

template <class M>
Field count(M member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            member(c) = static_cast<std::size_t>(to_u64(k, v));
          },
          [member](const RunConfig& c) {
            return std::to_string(member(c));
          }};
}

template <class M>
Field vec3(M member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            member(c) = to_array<3, double>(k, v, to_double);
          },
          [member](const RunConfig& c) { return join(member(c)); }};
}

template <class M>
Field idx3(M member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            member(c) = to_array<3, std::size_t>(k, v, to_u64);
          },
          [member](const RunConfig& c) { return join(member(c)); }};
}

#define VF_REF(expr) [](auto& c) -> auto& { return expr; }

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> table{
      {"lidar.origin", vec3(VF_REF(c.lidar_grid.origin))},
      {"lidar.voxel", vec3(VF_REF(c.lidar_grid.voxel_size))},
      {"lidar.dims", idx3(VF_REF(c.lidar_grid.dims))},
      {"image.origin", vec3(VF_REF(c.image_grid.origin))},
      {"image.voxel", vec3(VF_REF(c.image_grid.voxel_size))},
      {"image.dims", idx3(VF_REF(c.image_grid.dims))},
      {"depth.min", real(VF_REF(c.bins.d_min))},
      {"depth.max", real(VF_REF(c.bins.d_max))},
      {"depth.bins", count(VF_REF(c.bins.bins))},
      {"channels", count(VF_REF(c.channels))},
      {"camera.width", count(VF_REF(c.camera.width_px))},
      {"camera.height", count(VF_REF(c.camera.height_px))},
      {"camera.stride", count(VF_REF(c.camera.stride))},
      {"qfm.heads", count(VF_REF(c.attention.heads))},
      {"qfm.d_k", count(VF_REF(c.attention.d_k))},
      {"qfm.d_v", count(VF_REF(c.attention.d_v))},
      {"qfm.lambda", count(VF_REF(c.attention.lambda))},
      {"loss.gamma", real(VF_REF(c.weights.gamma_vfim))},
      {"loss.omega1", real(VF_REF(c.weights.omega1))},
      {"loss.omega2", real(VF_REF(c.weights.omega2))},
      {"focal.alpha", real(VF_REF(c.focal.alpha))},
      {"focal.gamma", real(VF_REF(c.focal.gamma))},
      {"detector.top_k", count(VF_REF(c.detector.top_k))},
      {"detector.nms_iou", real(VF_REF(c.detector.nms_iou))},
      {"detector.pos_iou", real(VF_REF(c.detector.anchor_pos_iou))},
      {"detector.neg_iou", real(VF_REF(c.detector.anchor_neg_iou))},
      {"anchor.length", real(VF_REF(c.detector.anchor.length))},
      {"anchor.width", real(VF_REF(c.detector.anchor.width))},
      {"anchor.height", real(VF_REF(c.detector.anchor.height))},
      {"anchor.z", real(VF_REF(c.detector.anchor.z_center))},
      {"vfim.samples", count(VF_REF(c.vfim.samples))},
      {"vfim.pos_iou", real(VF_REF(c.vfim.pos_iou))},
      {"vfim.pool", count(VF_REF(c.vfim.pool))},
      {"vfim.width", count(VF_REF(c.vfim.width))},
      {"optim.lr", real(VF_REF(c.optim.lr))},
      {"optim.steps", count(VF_REF(c.optim.steps))},
      {"scene.min_boxes", count(VF_REF(c.scene.min_boxes))},
      {"scene.max_boxes", count(VF_REF(c.scene.max_boxes))},
      {"scene.density", real(VF_REF(c.scene.point_density))},
      {"scene.noise", real(VF_REF(c.scene.noise_sigma))},
      {"scene.ground_z", real(VF_REF(c.scene.ground_z))},
      {"scene.feature_noise", real(VF_REF(c.scene.feature_noise))},
      {"scene.count_norm", real(VF_REF(c.scene.count_norm))},
      {"optim.seed",
       {[](RunConfig& c, std::string_view k, std::string_view v) { c.optim.seed = to_u64(k, v); },
        [](const RunConfig& c) { return std::to_string(c.optim.seed); }}},
      {"calib.projection",
       {[](RunConfig& c, std::string_view k, std::string_view v) {
          c.calib = geom::Calibration(to_array<12, double>(k, v, to_double));
        },
        [](const RunConfig& c) { return join(c.calib.projection()); }}},
      {"calib.file",
       {[](RunConfig& c, std::string_view, std::string_view v) {
          c.calib = parse_kitti_calib(std::filesystem::path(std::string(v)));
        },
        nullptr}},
  };
  return table;
}

#undef VF_REF

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

geom::Calibration default_calibration() {
  static const geom::Calibration calib = parse_kitti_calib_text(kSampleCalib, "<builtin>");
  return calib;
}

RunConfig RunConfig::toy() {
  RunConfig c;
  c.profile = "toy";
  c.lidar_grid = {{0.0, -40.0, -3.0}, {0.8, 0.8, 0.1}, {88, 100, 40}};
  c.image_grid = {{0.0, -40.0, -3.0}, {3.2, 3.2, 0.4}, {22, 25, 10}};
  c.bins = {0.0, 70.4, 20};
  c.channels = 16;
  c.calib = default_calibration();
  c.vfim.samples = 32;
  return c;
}

RunConfig RunConfig::kitti() {
  RunConfig c;
  c.profile = "kitti";
  c.lidar_grid = {{0.0, -40.0, -3.0}, {0.05, 0.05, 0.1}, {1408, 1600, 40}};
  c.image_grid = {{0.0, -40.0, -3.0}, {0.2, 0.2, 0.4}, {352, 400, 10}};
  c.bins = {0.0, 70.4, 80};
  c.channels = 64;
  c.calib = default_calibration();
  c.vfim.samples = 128;
  c.detector.top_k = 512;
  return c;
}

void RunConfig::validate() const {
  try {
    lidar_grid.validate();
    image_grid.validate();
    bins.validate();
    attention.validate();
    weights.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const double tol = 1e-9;
  const auto lmax = lidar_grid.extent_max();
  const auto imax = image_grid.extent_max();
  for (int a = 0; a < 3; ++a) {
    check(image_grid.origin[a] <= lidar_grid.origin[a] + tol && imax[a] >= lmax[a] - tol,
          "image grid must cover the LiDAR grid extent (axis " + std::to_string(a) + ")");
  }
  check(channels >= 5, "channels must be >= 5 to hold the voxel statistics");
  check(camera.stride >= 1 && camera.feature_width() >= 1 && camera.feature_height() >= 1,
        "camera: stride must be >= 1 and no larger than the image");
  check(detector.top_k >= 1, "detector.top_k must be >= 1");
  check(detector.nms_iou > 0.0 && detector.nms_iou <= 1.0, "detector.nms_iou must be in (0, 1]");
  check(detector.anchor_neg_iou >= 0.0 && detector.anchor_neg_iou <= detector.anchor_pos_iou &&
            detector.anchor_pos_iou <= 1.0,
        "detector: need 0 <= neg_iou <= pos_iou <= 1");
  check(detector.anchor.length > 0.0 && detector.anchor.width > 0.0 &&
            detector.anchor.height > 0.0,
        "anchor sizes must be positive");
  check(vfim.samples >= 2 && vfim.samples % 2 == 0, "vfim.samples must be even and >= 2");
  check(vfim.pool >= 1 && vfim.width >= 1, "vfim.pool and vfim.width must be >= 1");
  check(vfim.pos_iou >= 0.0 && vfim.pos_iou < 1.0, "vfim.pos_iou must be in [0, 1)");
  check(focal.alpha >= 0.0 && focal.alpha <= 1.0 && focal.gamma >= 0.0,
        "focal: alpha in [0, 1], gamma >= 0");
  check(optim.lr >= 0.0, "optim.lr must be >= 0");
  check(scene.min_boxes <= scene.max_boxes, "scene.min_boxes must not exceed scene.max_boxes");
  check(scene.point_density > 0.0, "scene.density must be positive");
  check(scene.noise_sigma >= 0.0 && scene.feature_noise >= 0.0, "scene noise must be >= 0");
  check(scene.count_norm > 0.0, "scene.count_norm must be positive");
}

void RunConfig::set(std::string_view key, std::string_view value) {
  if (key == "profile") {
    if (value == "toy") {
      *this = toy();
    } else if (value == "kitti") {
      *this = kitti();
    } else {
      throw ConfigError("profile: unknown profile '" + std::string(value) + "'");
    }
    return;
  }
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown key '" + std::string(key) + "'");
  it->second.set(*this, key, value);
}

RunConfig RunConfig::parse(std::string_view text, const std::string& origin) {
  RunConfig cfg = toy();
  std::size_t line_no = 0;
  bool seen_other = false;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key=value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "profile" && seen_other) throw ConfigError(where + "profile must come first");
    seen_other = true;
    try {
      cfg.set(key, value);
    } catch (const Error& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

std::string RunConfig::to_text() const {
  std::string out = "profile=" + profile + "\n";
  for (const auto& [key, field] : fields()) {
    if (field.get) out += key + "=" + field.get(*this) + "\n";
  }
  return out;
}

}  // namespace voxelfuse::pipeline
