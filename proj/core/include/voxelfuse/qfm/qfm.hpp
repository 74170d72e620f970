#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "voxelfuse/geom/grid.hpp"
#include "voxelfuse/numgrad/linear.hpp"

namespace voxelfuse::qfm {

using geom::DenseGrid;
using geom::GridSpec;
using geom::Index3;

struct AttentionConfig {
  std::size_t heads = 4;
  std::size_t d_k = 64;
  std::size_t d_v = 64;
  std::size_t lambda = 4;  // max-pool scale on the image voxel grid

  void validate() const;
};

// Occupied LiDAR voxels, lexicographic (x, y, z) order.
struct SparseVoxelSet {
  std::vector<Index3> indices;
  ng::Tensor features;  // [M × C]
  GridSpec grid;

  std::size_t size() const { return indices.size(); }
  std::vector<std::size_t> flat_rows() const;
  void validate() const;
};

// Voxels with any nonzero channel. M = 0 is allowed.
SparseVoxelSet select_nonempty(const DenseGrid& grid);

// Channelwise max over each λ³ block, flattened in lexicographic block order:
// L = ceil(X/λ)·ceil(Y/λ)·ceil(Z/λ) rows. Partial edge blocks only consider
// voxels that exist. Ties send the gradient to the first voxel in
// lexicographic order.
ng::Value max_pool_rows(const ng::Value& grid_rows, const Index3& dims, std::size_t lambda);
ng::Tensor pool_and_flatten(const DenseGrid& grid, std::size_t lambda);
Index3 pooled_dims(const Index3& dims, std::size_t lambda);

// Per-head W^Q, W^K, W^V (no bias) and the output map W^O (with bias).
struct QfmParams {
  std::vector<ng::LinearMap> wq, wk, wv;
  ng::LinearMap wo;

  static QfmParams init(std::size_t channels, const AttentionConfig& cfg, ng::Rng& rng);
  std::size_t heads() const { return wq.size(); }
  std::size_t channels() const { return wo.out_dim(); }
  std::vector<ng::Value> parameters() const;

  // Directory bundle of VXF1 files: wq_i, wk_i, wv_i, wo (+ wo_bias).
  void save(const std::filesystem::path& dir) const;
  static QfmParams load(const std::filesystem::path& dir);
};

struct FuseTrace {
  ng::Value output;                  // A_M [M × C]
  std::vector<ng::Value> logits;     // per head, Q Kᵀ / sqrt(d_k)  [M × L]
  std::vector<ng::Value> attention;  // per head, softmax of logits [M × L]
};

// Multi-head attention: LiDAR voxel features query pooled image voxels.
// M = 0 yields an empty [0 × C] result; L = 0 throws ContractError.
ng::Value fuse(const ng::Value& lidar_rows, const ng::Value& image_rows, const QfmParams& params);
FuseTrace fuse_traced(const ng::Value& lidar_rows, const ng::Value& image_rows,
                      const QfmParams& params);

// [F_P | A_M] scattered back onto the LiDAR grid; empty voxels stay zero.
ng::Value concat_restore(const ng::Value& attended, const ng::Value& lidar_rows,
                         const SparseVoxelSet& voxels);
DenseGrid concat_restore(const ng::Tensor& attended, const SparseVoxelSet& voxels);

// select -> pool -> fuse -> restore on concrete grids.
DenseGrid run(const DenseGrid& lidar, const DenseGrid& image, const QfmParams& params,
              std::size_t lambda);

}  // namespace voxelfuse::qfm
