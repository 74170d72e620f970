#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "voxelfuse/geom/box3d.hpp"
#include "voxelfuse/geom/grid.hpp"
#include "voxelfuse/numgrad/linear.hpp"

namespace voxelfuse::vfim {

using geom::Box3D;
using geom::DenseGrid;
using geom::GridSpec;

// Fixed-length descriptor of one box: pool³ sub-cells × C channels.
struct RoIFeature {
  ng::Tensor data;  // [pool³ · C]
  Box3D source_box;
};

// Stack of LinearMaps with ReLU between consecutive layers. No layers means
// the identity map.
struct Mlp {
  std::vector<ng::LinearMap> layers;

  static Mlp init(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, ng::Rng& rng);
  ng::Value operator()(const ng::Value& x) const;
  void collect(std::vector<ng::Value>& params) const;
  bool is_identity() const { return layers.empty(); }
};

// Encoder Ω and predictor Ψ; Ω's output width equals Ψ's input and output.
struct InteractionHeads {
  Mlp encoder;
  Mlp predictor;

  static InteractionHeads init(std::size_t in_dim, std::size_t width, ng::Rng& rng);
  static InteractionHeads identity() { return {}; }
  std::vector<ng::Value> parameters() const;
  void validate() const;
};

struct ProposalSample {
  std::vector<Box3D> boxes;
  std::vector<char> positive;
  std::vector<double> max_iou;            // best 3D IoU against any gt box
  std::vector<std::ptrdiff_t> gt_index;   // argmax gt, -1 when there is none

  std::size_t positives() const;
};

// Up to N/2 proposals with max-gt IoU > pos_iou, the remainder negatives.
// Shortfalls return what exists. Deterministic in `seed`.
ProposalSample sample_proposals(std::span<const geom::ScoredBox> proposals,
                                std::span<const Box3D> gt, std::size_t n, double pos_iou,
                                std::uint64_t seed);

// Sub-cell centers of each box (rotated frame) as trilinear stencils over the
// grid's voxel rows: K·pool³ output rows, out-of-grid corners read zero.
std::shared_ptr<ng::SparseRowMap> roi_pool_plan(const GridSpec& grid, std::span<const Box3D> boxes,
                                                std::size_t pool);
// grid rows [V × C] -> [K × pool³·C]
ng::Value roi_pool(const ng::Value& grid_rows, std::shared_ptr<const ng::SparseRowMap> plan,
                   std::size_t boxes);
RoIFeature voxel_roi_pool(const DenseGrid& grid, const Box3D& box, std::size_t pool);

// -p̂ · ê for plain vectors.
double cos_sim(std::span<const double> p, std::span<const double> e);
// Row-wise -p̂ · ê: [K × D], [K × D] -> [K].
ng::Value neg_cosine_rows(const ng::Value& p, const ng::Value& e);

// mean_k ½·CosSim(Ψ(Ω(P_k)), sg(Ω(I_k))) + ½·CosSim(Ψ(Ω(I_k)), sg(Ω(P_k))).
// Inputs are [K × D] stacks; K = 0 gives 0.
ng::Value vfim_loss(const ng::Value& lidar_rois, const ng::Value& image_rois,
                    const InteractionHeads& heads);
double vfim_loss(std::span<const RoIFeature> lidar_rois, std::span<const RoIFeature> image_rois,
                 const InteractionHeads& heads);

// Mean raw cosine similarity between Ω(P_k) and Ω(I_k).
double mean_encoded_cosine(const ng::Value& lidar_rois, const ng::Value& image_rois,
                           const InteractionHeads& heads);

}  // namespace voxelfuse::vfim
