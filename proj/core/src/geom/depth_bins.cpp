#include "voxelfuse/geom/depth_bins.hpp"

#include <algorithm>
#include <cmath>

#include "voxelfuse/error.hpp"

namespace voxelfuse::geom {

void DepthBinSpec::validate() const {
  if (bins == 0) throw SpecError("DepthBinSpec: bin count must be >= 1");
  if (!(d_min >= 0.0) || !(d_max > d_min) || !std::isfinite(d_max)) {
    throw SpecError("DepthBinSpec: need 0 <= d_min < d_max");
  }
}

std::vector<double> lid_edges(const DepthBinSpec& spec) {
  spec.validate();
  const double r = static_cast<double>(spec.bins);
  const double span = spec.d_max - spec.d_min;
  std::vector<double> edges(spec.bins + 1);
  for (std::size_t i = 0; i <= spec.bins; ++i) {
    const double di = static_cast<double>(i);
    edges[i] = spec.d_min + span * (di * (di + 1.0)) / (r * (r + 1.0));
  }
  edges.back() = spec.d_max;
  return edges;
}

std::optional<std::size_t> depth_bin(double depth, const std::vector<double>& edges) {
  if (!std::isfinite(depth) || depth < edges.front() || depth > edges.back()) {
    return std::nullopt;
  }
  const std::size_t bins = edges.size() - 1;
  if (depth == edges.back()) return bins - 1;
  // First edge strictly greater than depth closes the containing bin.
  const auto it = std::upper_bound(edges.begin(), edges.end(), depth);
  return static_cast<std::size_t>(it - edges.begin()) - 1;
}

std::vector<double> depth_to_onehot(double depth, const DepthBinSpec& spec) {
  const auto edges = lid_edges(spec);
  std::vector<double> out(spec.bins, 0.0);
  if (auto b = depth_bin(depth, edges)) out[*b] = 1.0;
  return out;
}

std::optional<double> continuous_bin_coord(double depth, const std::vector<double>& edges) {
  const auto b = depth_bin(depth, edges);
  if (!b) return std::nullopt;
  const double lo = edges[*b], hi = edges[*b + 1];
  return static_cast<double>(*b) + (depth - lo) / (hi - lo) - 0.5;
}

}  // namespace voxelfuse::geom
