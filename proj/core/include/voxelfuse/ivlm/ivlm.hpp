#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "voxelfuse/geom/calibration.hpp"
#include "voxelfuse/geom/depth_bins.hpp"
#include "voxelfuse/geom/grid.hpp"
#include "voxelfuse/numgrad/ops.hpp"

namespace voxelfuse::ivlm {

using geom::Vec3;

// W_F × H_F × C_F image features. `stride` is image pixels per feature cell.
struct ImageFeatureMap {
  ng::Tensor data;  // rank 3, (u, v, channel)
  std::size_t stride = 4;

  std::size_t width() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t channels() const { return data.dim(2); }
  // [W·H × C] view, pixel (m, n) at row m * H + n.
  ng::Tensor rows() const { return data.reshaped({width() * height(), channels()}); }
};

// W_F × H_F × R × C_F frustum features.
struct FrustumTensor {
  ng::Tensor data;  // rank 4, (u, v, depth bin, channel)
  geom::DepthBinSpec bins;

  std::size_t width() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t depth_bins() const { return data.dim(2); }
  std::size_t channels() const { return data.dim(3); }
};

// W_F × H_F × R one-hot depth field from a LiDAR sweep. Each point lands in
// feature pixel (floor(u / stride), floor(v / stride)); the nearest point per
// pixel picks the bin. Pixels without a point (or whose nearest depth is out of
// range) stay zero.
ng::Tensor depth_bins_from_points(std::span<const Vec3> points, const geom::Calibration& calib,
                                  std::size_t width, std::size_t height, std::size_t stride,
                                  const geom::DepthBinSpec& bins);

// G[m][n] = outer(F[m][n], D[m][n]).
FrustumTensor build_frustum(const ImageFeatureMap& features, const ng::Tensor& depth,
                            const geom::DepthBinSpec& bins);

// Differentiable form: features [W·H × C], depth [W·H × R] (constant)
// -> frustum rows [W·H·R × C] in (pixel, bin) order.
ng::Value build_frustum(const ng::Value& feature_rows, const ng::Tensor& depth_rows);

// Precomputed gather from frustum rows into image-voxel rows.
struct LiftPlan {
  std::shared_ptr<ng::SparseRowMap> map;
  // Total trilinear weight per voxel, counting corners that fall outside the
  // frustum lattice. 1 for in-view voxels, 0 otherwise.
  std::vector<double> weight_sum;
  std::vector<char> in_view;
  std::size_t max_neighbourhood = 0;

  std::size_t in_view_count() const;
};

struct FrustumLayout {
  std::size_t width;
  std::size_t height;
  std::size_t stride;
  geom::DepthBinSpec bins;
};

// For every voxel center: project, map depth to a continuous bin coordinate
// and pixel to (u / stride - 0.5, v / stride - 0.5), then record the trilinear
// stencil into the frustum. Behind-camera or out-of-frustum voxels read nothing.
LiftPlan plan_lift(const geom::Calibration& calib, const geom::GridSpec& image_grid,
                   const FrustumLayout& layout);

ng::Value lift(const ng::Value& frustum_rows, const LiftPlan& plan);
geom::DenseGrid lift(const FrustumTensor& frustum, const geom::Calibration& calib,
                     const geom::GridSpec& image_grid, std::size_t stride);

}  // namespace voxelfuse::ivlm
