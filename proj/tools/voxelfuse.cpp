// voxelfuse: command-line front end.
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 numeric failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "voxelfuse/error.hpp"
#include "voxelfuse/ivlm/ivlm.hpp"
#include "voxelfuse/numgrad/vxf.hpp"
#include "voxelfuse/pipeline/config.hpp"
#include "voxelfuse/pipeline/grad_suite.hpp"
#include "voxelfuse/pipeline/kitti.hpp"
#include "voxelfuse/pipeline/scene.hpp"
#include "voxelfuse/pipeline/train.hpp"
#include "voxelfuse/qfm/qfm.hpp"

namespace fs = std::filesystem;
using namespace voxelfuse;

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitNumeric = 3;

struct Globals {
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = ".";
};

pipeline::RunConfig load_config(const Globals& g) {
  auto cfg = g.config.empty() ? pipeline::RunConfig::toy() : pipeline::RunConfig::load(g.config);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed_set) cfg.optim.seed = g.seed;
  cfg.validate();
  return cfg;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

geom::GridSpec grid_from_tensor4(const ng::Tensor& t, const geom::GridSpec& like) {
  if (t.rank() != 4) throw ShapeError("expected a rank-4 grid tensor, got " + ng::to_string(t.shape()));
  geom::GridSpec g = like;
  g.dims = {t.dim(0), t.dim(1), t.dim(2)};
  return g;
}

int cmd_gen_scene(const Globals& g) {
  const auto cfg = load_config(g);
  const auto scene = pipeline::gen_scene(cfg, cfg.optim.seed);
  pipeline::write_scene(scene, cfg, g.out);
  std::printf("scene seed=%llu boxes=%zu points=%zu -> %s\n",
              static_cast<unsigned long long>(scene.seed), scene.gt_boxes.size(),
              scene.points.size(), g.out.c_str());
  return 0;
}

int cmd_train(const Globals& g, std::size_t every) {
  const auto cfg = load_config(g);
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = pipeline::train_demo(cfg, [&](const pipeline::LossRow& r) {
    if (every > 0 && (r.step % every == 0 || r.step + 1 == cfg.optim.steps)) {
      std::printf("step %4zu  L_total %.6f  L_rpn %.6f  L_rcnn %.6f  L_vfim %.6f\n", r.step,
                  r.total, r.rpn, r.rcnn, r.vfim);
      std::fflush(stdout);
    }
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path out(g.out);
  write_file(out / "losses.csv", pipeline::losses_csv(result.curve));
  fs::create_directories(out / "params");
  result.model.save(out / "params");
  write_file(out / "config.txt", cfg.to_text());
  if (!result.curve.empty()) {
    std::printf("initial L_total %.6f  final L_total %.6f  ratio %.4f\n",
                result.curve.front().total, result.curve.back().total,
                result.curve.back().total / result.curve.front().total);
  }
  std::printf("final paired-RoI cosine %.6f over %zu pairs, %.1f s\n", result.final_cosine,
              result.final_pairs, secs);
  return 0;
}

int cmd_check_grads(std::size_t seeds) {
  const auto report = pipeline::run_grad_suite(seeds, 1e-4, 1e-5, [](const auto& c) {
    std::printf("%-28s seeds=%zu max_rel_err=%.3e %s\n", c.name.c_str(), c.seeds, c.max_error,
                c.passed ? "ok" : "FAIL");
    std::fflush(stdout);
  });
  std::printf("%zu cases, %.2f s, %s\n", report.cases.size(), report.seconds,
              report.passed() ? "all passed" : "FAILED");
  return report.passed() ? 0 : kExitNumeric;
}

int cmd_lift(const Globals& g, const std::string& calib_path, const std::string& features,
             const std::string& points, const std::string& grid_cfg, const std::string& out) {
  auto cfg = load_config(g);
  if (!grid_cfg.empty()) {
    const auto grid = pipeline::RunConfig::load(grid_cfg);
    grid.validate();
    cfg.image_grid = grid.image_grid;
    cfg.bins = grid.bins;
  }
  const auto calib = pipeline::parse_kitti_calib(calib_path);
  ivlm::ImageFeatureMap fmap{ng::load_vxf(features), cfg.camera.stride};
  if (fmap.data.rank() != 3) {
    throw ShapeError("features must be rank 3 (W, H, C), got " + ng::to_string(fmap.data.shape()));
  }
  const auto cloud = pipeline::parse_points_csv(read_file(points));
  std::vector<geom::Vec3> xyz;
  for (const auto& p : cloud) xyz.push_back(p.xyz);
  const auto depth = ivlm::depth_bins_from_points(xyz, calib, fmap.width(), fmap.height(),
                                                  fmap.stride, cfg.bins);
  const auto grid = ivlm::lift(ivlm::build_frustum(fmap, depth, cfg.bins), calib,
                               cfg.image_grid, fmap.stride);
  ng::save_vxf(out, grid.to_tensor4());
  std::printf("lifted %zux%zu feature map onto %zux%zux%zu voxels -> %s\n", fmap.width(),
              fmap.height(), grid.spec.dims[0], grid.spec.dims[1], grid.spec.dims[2], out.c_str());
  return 0;
}

int cmd_fuse(const Globals& g, const std::string& lidar_path, const std::string& image_path,
             const std::string& params_dir, const std::string& out) {
  const auto cfg = load_config(g);
  const auto lt = ng::load_vxf(lidar_path);
  const auto it = ng::load_vxf(image_path);
  const auto lidar = geom::DenseGrid::from_tensor4(grid_from_tensor4(lt, cfg.lidar_grid), lt);
  const auto image = geom::DenseGrid::from_tensor4(grid_from_tensor4(it, cfg.image_grid), it);
  const auto params = qfm::QfmParams::load(params_dir);
  const auto fused = qfm::run(lidar, image, params, cfg.attention.lambda);
  ng::save_vxf(out, fused.to_tensor4());
  std::printf("fused %zu channels -> %zu channels -> %s\n", lidar.channels(), fused.channels(),
              out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxelfuse: camera-LiDAR voxel fusion toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "override one config key (key=value), repeatable");
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; }, "run seed");
  app.add_option("--out", g.out, "output directory (file for lift and fuse)");

  auto* gen = app.add_subcommand("gen-scene", "write a synthetic scene");
  std::size_t every = 10;
  auto* train = app.add_subcommand("train-demo", "train the toy network, write losses.csv and params/");
  train->add_option("--print-every", every, "progress line interval (0 = quiet)");
  std::size_t grad_seeds = 20;
  auto* grads = app.add_subcommand("check-grads", "finite-difference gradient suite");
  grads->add_option("--seeds", grad_seeds, "random seeds per op")->check(CLI::PositiveNumber);

  std::string calib, features, points, grid_cfg, lidar, image, params;
  auto* lift = app.add_subcommand("lift", "lift an image feature map onto the image voxel grid");
  lift->add_option("--calib", calib, "KITTI calib file")->required()->check(CLI::ExistingFile);
  lift->add_option("--features", features, "rank-3 VXF1 feature map")->required()->check(CLI::ExistingFile);
  lift->add_option("--points", points, "points.csv for depth bins")->required()->check(CLI::ExistingFile);
  lift->add_option("--grid", grid_cfg, "config file whose image grid and depth bins are used")
      ->check(CLI::ExistingFile);

  auto* fuse = app.add_subcommand("fuse", "attention fusion of LiDAR and image voxel grids");
  fuse->add_option("--lidar", lidar, "rank-4 VXF1 LiDAR grid")->required()->check(CLI::ExistingFile);
  fuse->add_option("--image", image, "rank-4 VXF1 image grid")->required()->check(CLI::ExistingFile);
  fuse->add_option("--params", params, "parameter directory")->required()->check(CLI::ExistingDirectory);

  for (auto* sub : {gen, train, grads, lift, fuse}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }

  try {
    if (*gen) return cmd_gen_scene(g);
    if (*train) return cmd_train(g, every);
    if (*grads) return cmd_check_grads(grad_seeds);
    if (*lift) return cmd_lift(g, calib, features, points, grid_cfg, g.out);
    if (*fuse) return cmd_fuse(g, lidar, image, params, g.out);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  return 0;
}
