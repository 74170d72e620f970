#pragma once

#include <array>
#include <cstddef>
#include <optional>

#include "voxelfuse/numgrad/tensor.hpp"

namespace voxelfuse::geom {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<std::size_t, 3>;

// Axis-aligned voxel lattice in the LiDAR frame (x forward, y left, z up).
struct GridSpec {
  Vec3 origin{0.0, 0.0, 0.0};
  Vec3 voxel_size{1.0, 1.0, 1.0};
  Index3 dims{1, 1, 1};

  // Throws SpecError on non-positive sizes/dims or a non-finite extent.
  void validate() const;

  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  Vec3 extent_max() const;
  // Row-major (x, y, z) flattening used by every dense grid in the library.
  std::size_t flat_index(const Index3& idx) const {
    return (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2];
  }
  Index3 unflatten(std::size_t flat) const;

  // Continuous lattice coordinates: voxel centers sit on integers.
  Vec3 lattice_coords(const Vec3& p) const;
  // Voxel containing p (half-open cells), nullopt outside the grid.
  std::optional<Index3> locate(const Vec3& p) const;

  bool operator==(const GridSpec&) const = default;
};

// origin + (idx + 0.5) * voxel_size; IndexError when idx is out of range.
Vec3 voxel_center(const GridSpec& spec, const Index3& idx);

// X×Y×Z×C feature grid stored as a [voxels × C] matrix in flat_index order.
struct DenseGrid {
  GridSpec spec;
  ng::Tensor features;

  DenseGrid() = default;
  DenseGrid(GridSpec s, std::size_t channels);
  DenseGrid(GridSpec s, ng::Tensor rows);

  std::size_t channels() const { return features.cols(); }
  std::span<double> at(const Index3& idx) { return features.row(spec.flat_index(idx)); }
  std::span<const double> at(const Index3& idx) const {
    return features.row(spec.flat_index(idx));
  }

  // Rank-4 X×Y×Z×C view for VXF1 files, and back.
  ng::Tensor to_tensor4() const;
  static DenseGrid from_tensor4(const GridSpec& spec, const ng::Tensor& t);
};

}  // namespace voxelfuse::geom
