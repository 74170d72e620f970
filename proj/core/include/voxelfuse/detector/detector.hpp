#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "voxelfuse/geom/box3d.hpp"
#include "voxelfuse/geom/grid.hpp"
#include "voxelfuse/numgrad/linear.hpp"

namespace voxelfuse::detector {

using geom::Box3D;
using geom::GridSpec;
using geom::Index3;
using geom::ScoredBox;

// Single yaw-0 anchor, KITTI car prior.
struct AnchorTemplate {
  double length = 3.9;
  double width = 1.6;
  double height = 1.56;
  double z_center = -1.0;
};

// Per-BEV-cell score and 7 box residuals against the cell's anchor.
struct ProposalHead {
  ng::LinearMap cls;  // C -> 1
  ng::LinearMap reg;  // C -> 7
  AnchorTemplate anchor;

  static ProposalHead init(std::size_t channels, const AnchorTemplate& anchor, ng::Rng& rng);
  std::vector<ng::Value> parameters() const;
};

// Second-stage stand-in: reads the BEV feature under a proposal center and
// predicts an IoU confidence logit plus 7 refinement residuals.
struct RefineHead {
  ng::LinearMap map;  // C -> 8

  static RefineHead init(std::size_t channels, ng::Rng& rng);
  std::vector<ng::Value> parameters() const { return {map.weight, *map.bias}; }
};

// Max over z of a dense [X·Y·Z × C] grid -> [X·Y × C]. Ties go to the lowest z.
ng::Value bev_collapse(const ng::Value& dense_rows, const Index3& dims);
// Same result from occupied rows only; empty voxels count as zeros.
ng::Value bev_collapse_sparse(const ng::Value& rows, std::span<const Index3> indices,
                              const Index3& dims);

// One anchor per BEV cell, cell-major (x, then y).
std::vector<Box3D> make_anchors(const GridSpec& grid, const AnchorTemplate& anchor);

struct HeadOutput {
  ng::Value logits;     // [cells]
  ng::Value residuals;  // [cells × 7]
};
HeadOutput run_head(const ng::Value& bev, const ProposalHead& head);

// Decodes every cell; score = sigmoid(logit).
std::vector<ScoredBox> decode_all(const HeadOutput& out, std::span<const Box3D> anchors);

// Greedy suppression using the axis-aligned BEV IoU of each footprint's
// bounding rectangle. Candidates are visited by descending score, ties by
// input index. Returns kept indices, at most max_keep.
std::vector<std::size_t> nms(std::span<const ScoredBox> boxes, double iou_threshold,
                             std::size_t max_keep);

// BEV collapse -> head -> decode -> NMS -> top_k.
std::vector<ScoredBox> propose(const geom::DenseGrid& fused, const ProposalHead& head,
                               std::size_t top_k, double nms_iou = 0.7);

// Bilinear BEV-cell weights at each box center: [boxes] rows over X·Y cells.
std::shared_ptr<ng::SparseRowMap> bev_sample_plan(const GridSpec& grid,
                                                  std::span<const Box3D> boxes);

}  // namespace voxelfuse::detector
