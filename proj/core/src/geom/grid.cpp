#include "voxelfuse/geom/grid.hpp"

#include <cmath>

#include "voxelfuse/error.hpp"

namespace voxelfuse::geom {

void GridSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(voxel_size[a] > 0.0) || !std::isfinite(voxel_size[a])) {
      throw SpecError("GridSpec: voxel_size must be positive on every axis");
    }
    if (dims[a] == 0) throw SpecError("GridSpec: dims must be positive");
    if (!std::isfinite(origin[a])) throw SpecError("GridSpec: origin must be finite");
  }
  for (double e : extent_max()) {
    if (!std::isfinite(e)) throw SpecError("GridSpec: extent is not finite");
  }
}

Vec3 GridSpec::extent_max() const {
  return {origin[0] + static_cast<double>(dims[0]) * voxel_size[0],
          origin[1] + static_cast<double>(dims[1]) * voxel_size[1],
          origin[2] + static_cast<double>(dims[2]) * voxel_size[2]};
}

Index3 GridSpec::unflatten(std::size_t flat) const {
  const std::size_t z = flat % dims[2];
  const std::size_t y = (flat / dims[2]) % dims[1];
  const std::size_t x = flat / (dims[2] * dims[1]);
  return {x, y, z};
}

Vec3 GridSpec::lattice_coords(const Vec3& p) const {
  return {(p[0] - origin[0]) / voxel_size[0] - 0.5, (p[1] - origin[1]) / voxel_size[1] - 0.5,
          (p[2] - origin[2]) / voxel_size[2] - 0.5};
}

std::optional<Index3> GridSpec::locate(const Vec3& p) const {
  Index3 idx{};
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor((p[a] - origin[a]) / voxel_size[a]);
    if (!(f >= 0.0) || f >= static_cast<double>(dims[a])) return std::nullopt;
    idx[a] = static_cast<std::size_t>(f);
  }
  return idx;
}

Vec3 voxel_center(const GridSpec& spec, const Index3& idx) {
  for (int a = 0; a < 3; ++a) {
    if (idx[a] >= spec.dims[a]) {
      throw IndexError("voxel index (" + std::to_string(idx[0]) + ", " +
                       std::to_string(idx[1]) + ", " + std::to_string(idx[2]) +
                       ") outside grid dims");
    }
  }
  Vec3 c{};
  for (int a = 0; a < 3; ++a) {
    c[a] = spec.origin[a] + (static_cast<double>(idx[a]) + 0.5) * spec.voxel_size[a];
  }
  return c;
}

DenseGrid::DenseGrid(GridSpec s, std::size_t channels)
    : spec(s), features(ng::Shape{s.voxel_count(), channels}, 0.0) {}

DenseGrid::DenseGrid(GridSpec s, ng::Tensor rows) : spec(s), features(std::move(rows)) {
  if (features.rank() != 2 || features.rows() != spec.voxel_count()) {
    throw ShapeError("DenseGrid: feature rows " + ng::to_string(features.shape()) +
                     " do not match grid with " + std::to_string(spec.voxel_count()) +
                     " voxels");
  }
}

ng::Tensor DenseGrid::to_tensor4() const {
  return features.reshaped({spec.dims[0], spec.dims[1], spec.dims[2], channels()});
}

DenseGrid DenseGrid::from_tensor4(const GridSpec& spec, const ng::Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != spec.dims[0] || t.dim(1) != spec.dims[1] ||
      t.dim(2) != spec.dims[2]) {
    throw ShapeError("DenseGrid: tensor " + ng::to_string(t.shape()) +
                     " does not match grid dims");
  }
  return DenseGrid(spec, t.reshaped({spec.voxel_count(), t.dim(3)}));
}

}  // namespace voxelfuse::geom
