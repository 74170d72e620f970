#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "voxelfuse/geom/grid.hpp"

namespace voxelfuse::geom {

// Read-only view of a 3-axis lattice with C channels per node, row-major
// (axis 0 slowest, channels fastest).
struct LatticeView {
  std::span<const double> data;
  Index3 dims;
  std::size_t channels;
};

// The 8 lattice corners around a continuous coordinate and their weights.
// Weights always sum to 1; corners outside the lattice are marked invalid and
// contribute a zero feature while keeping their weight.
struct TrilinearStencil {
  std::array<std::size_t, 8> flat{};  // valid only where inside[k]
  std::array<double, 8> weight{};
  std::array<bool, 8> inside{};
};

// nullopt when any coordinate lies outside [-0.5, dim - 0.5]. NaN -> NumericError.
std::optional<TrilinearStencil> trilinear_stencil(const Vec3& coord, const Index3& dims);

// Weighted sum of the 8 enclosing nodes; zero vector outside the lattice.
std::vector<double> trilinear_sample(const LatticeView& lattice, const Vec3& coord);

}  // namespace voxelfuse::geom
