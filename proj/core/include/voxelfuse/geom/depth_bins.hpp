#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace voxelfuse::geom {

// Linear-increasing depth discretization over [d_min, d_max] with `bins` bins.
struct DepthBinSpec {
  double d_min = 0.0;
  double d_max = 70.4;
  std::size_t bins = 80;

  void validate() const;
  bool operator==(const DepthBinSpec&) const = default;
};

// edge[i] = d_min + (d_max - d_min) * i(i+1) / (R(R+1)); widths grow linearly.
std::vector<double> lid_edges(const DepthBinSpec& spec);

// Bin containing depth: half-open [edge[i], edge[i+1]), with d_max itself in
// the last bin. nullopt outside [d_min, d_max].
std::optional<std::size_t> depth_bin(double depth, const std::vector<double>& edges);

// One-hot of depth_bin, or all zeros when out of range.
std::vector<double> depth_to_onehot(double depth, const DepthBinSpec& spec);

// Continuous depth-axis lattice coordinate: i + (d - edge[i]) / width_i - 0.5,
// so bin centers (in the piecewise-linear parametrization) land on integers.
std::optional<double> continuous_bin_coord(double depth, const std::vector<double>& edges);

}  // namespace voxelfuse::geom
