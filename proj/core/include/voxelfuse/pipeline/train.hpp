#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "voxelfuse/detector/detector.hpp"
#include "voxelfuse/pipeline/config.hpp"
#include "voxelfuse/pipeline/scene.hpp"
#include "voxelfuse/qfm/qfm.hpp"
#include "voxelfuse/vfim/vfim.hpp"

namespace voxelfuse::pipeline {

// Every learnable piece of the demo network.
struct Model {
  qfm::QfmParams qfm;
  detector::ProposalHead head;
  detector::RefineHead refine;
  vfim::InteractionHeads heads;

  static Model init(const RunConfig& cfg, std::uint64_t seed);
  std::vector<ng::Value> parameters() const;
  // QFM bundle plus head_*.vxf, refine_*.vxf, omega_*.vxf, psi_*.vxf.
  void save(const std::filesystem::path& dir) const;
};

// Inputs that stay fixed across steps: the scene, P, I, F_P, F_I and the
// anchor assignment.
struct Prepared {
  SyntheticScene scene;
  geom::DenseGrid lidar;
  geom::DenseGrid image;
  qfm::SparseVoxelSet voxels;
  ng::Tensor pooled_image;
  std::vector<geom::Box3D> anchors;
  std::vector<int> anchor_label;  // 1 positive, 0 negative, -1 ignored
  std::vector<std::ptrdiff_t> anchor_gt;
};

// BEV IoU against every gt box: >= pos_iou positive, < neg_iou negative,
// otherwise ignored; each gt box's best anchor is forced positive.
void assign_anchors(Prepared& prep, double pos_iou, double neg_iou);

// gen_scene -> voxelize -> depth bins -> frustum -> lift -> pool.
Prepared prepare(const RunConfig& cfg, std::uint64_t seed);

struct LossRow {
  std::size_t step = 0;
  double total = 0.0;
  double rpn = 0.0;
  double rcnn = 0.0;
  double vfim = 0.0;

  bool operator==(const LossRow&) const = default;
};

struct TrainResult {
  std::vector<LossRow> curve;
  // Mean cos(Ω(P_B), Ω(I_B)) over the last step's sampled pairs, after the
  // final update.
  double final_cosine = 0.0;
  std::size_t final_pairs = 0;
  Model model;
};

using StepCallback = std::function<void(const LossRow&)>;

// SGD on L_total for cfg.optim.steps steps, scene and init from
// cfg.optim.seed. Throws NumericError naming the term when a loss turns
// non-finite.
TrainResult train_demo(const RunConfig& cfg, const StepCallback& on_step = {});
TrainResult train_demo(const RunConfig& cfg, const Prepared& prep,
                       const StepCallback& on_step = {});

// Header `step,L_total,L_rpn,L_rcnn,L_vfim`, values at full precision.
std::string losses_csv(std::span<const LossRow> curve);

struct AblationSeed {
  std::uint64_t seed = 0;
  double cosine_with = 0.0;     // γ = gamma
  double cosine_without = 0.0;  // γ = 0
};

struct AblationReport {
  std::vector<AblationSeed> seeds;
  std::size_t wins = 0;  // seeds where cosine_with > cosine_without
  double p_value = 1.0;  // one-sided sign test
};

// Paired runs per seed with γ = gamma and γ = 0; everything else equal.
AblationReport run_ablation(const RunConfig& base, std::span<const std::uint64_t> seeds,
                            double gamma);

// P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(std::size_t wins, std::size_t n);

}  // namespace voxelfuse::pipeline
