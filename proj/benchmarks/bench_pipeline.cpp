#include <benchmark/benchmark.h>

#include "voxelfuse/ivlm/ivlm.hpp"
#include "voxelfuse/pipeline/train.hpp"
#include "voxelfuse/qfm/qfm.hpp"

using namespace voxelfuse;

namespace {

const pipeline::Prepared& toy_inputs() {
  static const pipeline::Prepared prep = pipeline::prepare(pipeline::RunConfig::toy(), 0);
  return prep;
}

void BM_PlanLift(benchmark::State& state) {
  const auto cfg = pipeline::RunConfig::toy();
  const auto& fmap = toy_inputs().scene.image_features;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ivlm::plan_lift(cfg.calib, cfg.image_grid,
                                             {fmap.width(), fmap.height(), fmap.stride, cfg.bins}));
  }
}
BENCHMARK(BM_PlanLift)->Unit(benchmark::kMillisecond);

void BM_Lift(benchmark::State& state) {
  const auto cfg = pipeline::RunConfig::toy();
  const auto& prep = toy_inputs();
  std::vector<geom::Vec3> xyz = prep.scene.xyz();
  const auto& fmap = prep.scene.image_features;
  const auto depth = ivlm::depth_bins_from_points(xyz, cfg.calib, fmap.width(), fmap.height(),
                                                  fmap.stride, cfg.bins);
  const auto frustum = ivlm::build_frustum(fmap, depth, cfg.bins);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ivlm::lift(frustum, cfg.calib, cfg.image_grid, fmap.stride));
  }
}
BENCHMARK(BM_Lift)->Unit(benchmark::kMillisecond);

void BM_Fuse(benchmark::State& state) {
  const auto cfg = pipeline::RunConfig::toy();
  const auto& prep = toy_inputs();
  const auto model = pipeline::Model::init(cfg, 0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(qfm::run(prep.lidar, prep.image, model.qfm, cfg.attention.lambda));
  }
  state.counters["voxels"] = static_cast<double>(prep.voxels.size());
}
BENCHMARK(BM_Fuse)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  auto cfg = pipeline::RunConfig::toy();
  cfg.optim.steps = 1;
  const auto& prep = toy_inputs();
  for (auto _ : state) benchmark::DoNotOptimize(pipeline::train_demo(cfg, prep));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
