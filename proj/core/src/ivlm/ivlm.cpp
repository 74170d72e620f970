#include "voxelfuse/ivlm/ivlm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "voxelfuse/error.hpp"
#include "voxelfuse/geom/trilinear.hpp"

namespace voxelfuse::ivlm {

ng::Tensor depth_bins_from_points(std::span<const Vec3> points, const geom::Calibration& calib,
                                  std::size_t width, std::size_t height, std::size_t stride,
                                  const geom::DepthBinSpec& bins) {
  if (stride == 0) throw ContractError("depth_bins_from_points: stride must be positive");
  const auto edges = geom::lid_edges(bins);
  const std::size_t pixels = width * height;
  std::vector<double> nearest(pixels, std::numeric_limits<double>::infinity());
  const double su = static_cast<double>(stride);
  for (const auto& p : points) {
    const auto proj = calib.project(p);
    if (!proj) continue;
    const double fu = std::floor(proj->u / su);
    const double fv = std::floor(proj->v / su);
    if (!(fu >= 0.0) || !(fv >= 0.0) || fu >= static_cast<double>(width) ||
        fv >= static_cast<double>(height)) {
      continue;
    }
    const std::size_t pix = static_cast<std::size_t>(fu) * height + static_cast<std::size_t>(fv);
    nearest[pix] = std::min(nearest[pix], proj->depth);
  }
  ng::Tensor d(ng::Shape{width, height, bins.bins}, 0.0);
  for (std::size_t pix = 0; pix < pixels; ++pix) {
    if (!std::isfinite(nearest[pix])) continue;
    if (auto b = geom::depth_bin(nearest[pix], edges)) d[pix * bins.bins + *b] = 1.0;
  }
  return d;
}

FrustumTensor build_frustum(const ImageFeatureMap& features, const ng::Tensor& depth,
                            const geom::DepthBinSpec& bins) {
  if (depth.rank() != 3 || depth.dim(0) != features.width() ||
      depth.dim(1) != features.height() || depth.dim(2) != bins.bins) {
    throw ShapeError("build_frustum: depth field " + ng::to_string(depth.shape()) +
                     " does not match features " + ng::to_string(features.data.shape()) +
                     " with " + std::to_string(bins.bins) + " bins");
  }
  const std::size_t pixels = features.width() * features.height();
  const std::size_t r = bins.bins, c = features.channels();
  FrustumTensor g{ng::Tensor(ng::Shape{features.width(), features.height(), r, c}, 0.0), bins};
  for (std::size_t pix = 0; pix < pixels; ++pix) {
    const double* f = features.data.data() + pix * c;
    for (std::size_t b = 0; b < r; ++b) {
      const double w = depth[pix * r + b];
      if (w == 0.0) continue;
      double* out = g.data.data() + (pix * r + b) * c;
      for (std::size_t ch = 0; ch < c; ++ch) out[ch] = w * f[ch];
    }
  }
  return g;
}

ng::Value build_frustum(const ng::Value& feature_rows, const ng::Tensor& depth_rows) {
  const auto& f = feature_rows.data();
  if (f.rank() != 2 || depth_rows.rank() != 2 || f.rows() != depth_rows.rows()) {
    throw ShapeError("build_frustum: features " + ng::to_string(f.shape()) +
                     " and depth " + ng::to_string(depth_rows.shape()) +
                     " disagree on pixel count");
  }
  // Each frustum row is depth weight × feature row: a sparse row map.
  const std::size_t pixels = f.rows(), r = depth_rows.cols();
  auto map = std::make_shared<ng::SparseRowMap>();
  map->in_rows = pixels;
  map->offsets.reserve(pixels * r + 1);
  for (std::size_t pix = 0; pix < pixels; ++pix) {
    for (std::size_t b = 0; b < r; ++b) {
      const double w = depth_rows[pix * r + b];
      if (w != 0.0) map->push(pix, w);
      map->finish_row();
    }
  }
  return ng::apply_rows(std::move(map), feature_rows);
}

std::size_t LiftPlan::in_view_count() const {
  return static_cast<std::size_t>(std::count(in_view.begin(), in_view.end(), 1));
}

LiftPlan plan_lift(const geom::Calibration& calib, const geom::GridSpec& image_grid,
                   const FrustumLayout& layout) {
  image_grid.validate();
  if (layout.stride == 0) throw ContractError("plan_lift: stride must be positive");
  const auto edges = geom::lid_edges(layout.bins);
  const geom::Index3 fdims{layout.width, layout.height, layout.bins.bins};
  const std::size_t voxels = image_grid.voxel_count();
  const double su = static_cast<double>(layout.stride);

  LiftPlan plan;
  plan.map = std::make_shared<ng::SparseRowMap>();
  plan.map->in_rows = layout.width * layout.height * layout.bins.bins;
  plan.map->offsets.reserve(voxels + 1);
  plan.weight_sum.assign(voxels, 0.0);
  plan.in_view.assign(voxels, 0);

  for (std::size_t v = 0; v < voxels; ++v) {
    const auto center = geom::voxel_center(image_grid, image_grid.unflatten(v));
    const auto proj = calib.project(center);
    std::optional<geom::TrilinearStencil> stencil;
    if (proj) {
      if (auto bin = geom::continuous_bin_coord(proj->depth, edges)) {
        stencil = geom::trilinear_stencil({proj->u / su - 0.5, proj->v / su - 0.5, *bin}, fdims);
      }
    }
    if (stencil) {
      std::size_t used = 0;
      double total = 0.0;
      for (int k = 0; k < 8; ++k) {
        total += stencil->weight[k];
        if (stencil->inside[k] && stencil->weight[k] != 0.0) {
          plan.map->push(stencil->flat[k], stencil->weight[k]);
          ++used;
        }
      }
      plan.weight_sum[v] = total;
      plan.in_view[v] = 1;
      plan.max_neighbourhood = std::max(plan.max_neighbourhood, used);
    }
    plan.map->finish_row();
  }
  return plan;
}

ng::Value lift(const ng::Value& frustum_rows, const LiftPlan& plan) {
  return ng::apply_rows(plan.map, frustum_rows);
}

geom::DenseGrid lift(const FrustumTensor& frustum, const geom::Calibration& calib,
                     const geom::GridSpec& image_grid, std::size_t stride) {
  const auto plan = plan_lift(calib, image_grid,
                              {frustum.width(), frustum.height(), stride, frustum.bins});
  const std::size_t rows = frustum.width() * frustum.height() * frustum.depth_bins();
  ng::Value g = ng::Value::constant(frustum.data.reshaped({rows, frustum.channels()}));
  return geom::DenseGrid(image_grid, lift(g, plan).data());
}

}  // namespace voxelfuse::ivlm
