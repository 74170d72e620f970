#include "voxelfuse/qfm/qfm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "voxelfuse/error.hpp"
#include "voxelfuse/numgrad/vxf.hpp"

namespace voxelfuse::qfm {

void AttentionConfig::validate() const {
  if (heads == 0) throw SpecError("AttentionConfig: heads must be >= 1");
  if (d_k == 0 || d_v == 0) throw SpecError("AttentionConfig: d_k and d_v must be >= 1");
  if (lambda == 0) throw SpecError("AttentionConfig: lambda must be >= 1");
}

std::vector<std::size_t> SparseVoxelSet::flat_rows() const {
  std::vector<std::size_t> rows;
  rows.reserve(indices.size());
  for (const auto& idx : indices) rows.push_back(grid.flat_index(idx));
  return rows;
}

void SparseVoxelSet::validate() const {
  if (features.rank() != 2 || features.rows() != indices.size()) {
    throw ShapeError("SparseVoxelSet: " + std::to_string(indices.size()) + " indices but features " +
                     ng::to_string(features.shape()));
  }
  std::set<std::size_t> seen;
  for (const auto& idx : indices) {
    for (int a = 0; a < 3; ++a) {
      if (idx[a] >= grid.dims[a]) throw IndexError("SparseVoxelSet: index out of range");
    }
    if (!seen.insert(grid.flat_index(idx)).second) {
      throw ContractError("SparseVoxelSet: duplicate voxel index");
    }
  }
}

SparseVoxelSet select_nonempty(const DenseGrid& grid) {
  SparseVoxelSet out;
  out.grid = grid.spec;
  const std::size_t c = grid.channels();
  std::vector<double> rows;
  for (std::size_t v = 0; v < grid.spec.voxel_count(); ++v) {
    const auto f = grid.features.row(v);
    if (std::any_of(f.begin(), f.end(), [](double x) { return x != 0.0; })) {
      out.indices.push_back(grid.spec.unflatten(v));
      rows.insert(rows.end(), f.begin(), f.end());
    }
  }
  out.features = ng::Tensor(ng::Shape{out.indices.size(), c}, std::move(rows));
  return out;
}

Index3 pooled_dims(const Index3& dims, std::size_t lambda) {
  if (lambda == 0) throw SpecError("max pool: lambda must be >= 1");
  return {(dims[0] + lambda - 1) / lambda, (dims[1] + lambda - 1) / lambda,
          (dims[2] + lambda - 1) / lambda};
}

ng::Value max_pool_rows(const ng::Value& grid_rows, const Index3& dims, std::size_t lambda) {
  const auto& in = grid_rows.data();
  const std::size_t voxels = dims[0] * dims[1] * dims[2];
  if (in.rank() != 2 || in.rows() != voxels) {
    throw ShapeError("max_pool_rows: rows " + ng::to_string(in.shape()) + " do not match dims");
  }
  const std::size_t c = in.cols();
  const Index3 pd = pooled_dims(dims, lambda);
  const std::size_t blocks = pd[0] * pd[1] * pd[2];
  ng::Tensor out(ng::Shape{blocks, c}, 0.0);
  std::vector<std::size_t> argmax(blocks * c, 0);

  std::size_t b = 0;
  for (std::size_t bx = 0; bx < pd[0]; ++bx)
    for (std::size_t by = 0; by < pd[1]; ++by)
      for (std::size_t bz = 0; bz < pd[2]; ++bz, ++b) {
        std::vector<double> best(c, -std::numeric_limits<double>::infinity());
        const std::size_t x1 = std::min(dims[0], (bx + 1) * lambda);
        const std::size_t y1 = std::min(dims[1], (by + 1) * lambda);
        const std::size_t z1 = std::min(dims[2], (bz + 1) * lambda);
        for (std::size_t x = bx * lambda; x < x1; ++x)
          for (std::size_t y = by * lambda; y < y1; ++y)
            for (std::size_t z = bz * lambda; z < z1; ++z) {
              const std::size_t v = (x * dims[1] + y) * dims[2] + z;
              const double* f = in.data() + v * c;
              for (std::size_t ch = 0; ch < c; ++ch) {
                // Strict '>' keeps the lexicographically first voxel on ties.
                if (f[ch] > best[ch]) {
                  best[ch] = f[ch];
                  argmax[b * c + ch] = v;
                }
              }
            }
        for (std::size_t ch = 0; ch < c; ++ch) out[b * c + ch] = best[ch];
      }
  return ng::make_result(std::move(out), {grid_rows},
                         [c, argmax = std::move(argmax)](ng::Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           for (std::size_t i = 0; i < argmax.size(); ++i) {
                             g[argmax[i] * c + i % c] += self.grad[i];
                           }
                         });
}

ng::Tensor pool_and_flatten(const DenseGrid& grid, std::size_t lambda) {
  return max_pool_rows(ng::Value::constant(grid.features), grid.spec.dims, lambda).data();
}

QfmParams QfmParams::init(std::size_t channels, const AttentionConfig& cfg, ng::Rng& rng) {
  cfg.validate();
  QfmParams p;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    p.wq.push_back(ng::LinearMap::init(channels, cfg.d_k, false, rng));
    p.wk.push_back(ng::LinearMap::init(channels, cfg.d_k, false, rng));
    p.wv.push_back(ng::LinearMap::init(channels, cfg.d_v, false, rng));
  }
  p.wo = ng::LinearMap::init(cfg.heads * cfg.d_v, channels, true, rng);
  return p;
}

std::vector<ng::Value> QfmParams::parameters() const {
  std::vector<ng::Value> out;
  for (std::size_t h = 0; h < heads(); ++h) {
    wq[h].collect(out);
    wk[h].collect(out);
    wv[h].collect(out);
  }
  wo.collect(out);
  return out;
}

void QfmParams::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (std::size_t h = 0; h < heads(); ++h) {
    const auto i = std::to_string(h);
    ng::save_vxf(dir / ("wq_" + i + ".vxf"), wq[h].weight.data());
    ng::save_vxf(dir / ("wk_" + i + ".vxf"), wk[h].weight.data());
    ng::save_vxf(dir / ("wv_" + i + ".vxf"), wv[h].weight.data());
  }
  ng::save_vxf(dir / "wo.vxf", wo.weight.data());
  if (wo.bias) ng::save_vxf(dir / "wo_bias.vxf", wo.bias->data());
}

QfmParams QfmParams::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("parameter bundle " + dir.string() + " is not a directory");
  }
  QfmParams p;
  for (std::size_t h = 0;; ++h) {
    const auto i = std::to_string(h);
    if (!std::filesystem::exists(dir / ("wq_" + i + ".vxf"))) break;
    p.wq.push_back(ng::LinearMap::from(ng::load_vxf(dir / ("wq_" + i + ".vxf"))));
    p.wk.push_back(ng::LinearMap::from(ng::load_vxf(dir / ("wk_" + i + ".vxf"))));
    p.wv.push_back(ng::LinearMap::from(ng::load_vxf(dir / ("wv_" + i + ".vxf"))));
  }
  if (p.wq.empty()) throw ConfigError("parameter bundle " + dir.string() + " has no wq_0.vxf");
  std::optional<ng::Tensor> bias;
  if (std::filesystem::exists(dir / "wo_bias.vxf")) bias = ng::load_vxf(dir / "wo_bias.vxf");
  p.wo = ng::LinearMap::from(ng::load_vxf(dir / "wo.vxf"), std::move(bias));
  std::size_t concat = 0;
  for (std::size_t h = 0; h < p.heads(); ++h) {
    if (p.wq[h].in_dim() != p.wo.out_dim() || p.wk[h].in_dim() != p.wo.out_dim() ||
        p.wv[h].in_dim() != p.wo.out_dim() || p.wq[h].out_dim() != p.wk[h].out_dim()) {
      throw ShapeError("parameter bundle: inconsistent widths in head " + std::to_string(h));
    }
    concat += p.wv[h].out_dim();
  }
  if (concat != p.wo.in_dim()) {
    throw ShapeError("parameter bundle: wo expects " + std::to_string(p.wo.in_dim()) +
                     " inputs, heads provide " + std::to_string(concat));
  }
  return p;
}

FuseTrace fuse_traced(const ng::Value& lidar_rows, const ng::Value& image_rows,
                      const QfmParams& params) {
  const auto& fp = lidar_rows.data();
  const auto& fi = image_rows.data();
  if (fp.rank() != 2 || fi.rank() != 2) throw ShapeError("fuse: inputs must be matrices");
  const std::size_t c = params.channels();
  if (fp.cols() != c || fi.cols() != c) {
    throw ShapeError("fuse: channel widths " + ng::to_string(fp.shape()) + " / " +
                     ng::to_string(fi.shape()) + " do not match parameters (C=" +
                     std::to_string(c) + ")");
  }
  if (fi.rows() == 0) throw ContractError("fuse: no image voxels to attend over (L = 0)");
  FuseTrace trace;
  if (fp.rows() == 0) {
    trace.output = ng::Value::constant(ng::Tensor(ng::Shape{0, c}));
    return trace;
  }
  std::vector<ng::Value> heads;
  for (std::size_t h = 0; h < params.heads(); ++h) {
    const ng::Value q = params.wq[h](lidar_rows);
    const ng::Value k = params.wk[h](image_rows);
    const ng::Value v = params.wv[h](image_rows);
    const double inv = 1.0 / std::sqrt(static_cast<double>(params.wq[h].out_dim()));
    ng::Value logits = ng::scale(ng::matmul(q, ng::transpose(k)), inv);
    ng::Value attn = ng::softmax_rows(logits);
    heads.push_back(ng::matmul(attn, v));
    trace.logits.push_back(std::move(logits));
    trace.attention.push_back(std::move(attn));
  }
  trace.output = params.wo(heads.size() == 1 ? heads[0] : ng::concat_cols(heads));
  return trace;
}

ng::Value fuse(const ng::Value& lidar_rows, const ng::Value& image_rows, const QfmParams& params) {
  return fuse_traced(lidar_rows, image_rows, params).output;
}

ng::Value concat_restore(const ng::Value& attended, const ng::Value& lidar_rows,
                         const SparseVoxelSet& voxels) {
  if (attended.data().rank() != 2 || lidar_rows.data().rank() != 2 ||
      attended.data().rows() != lidar_rows.data().rows() ||
      attended.data().rows() != voxels.size()) {
    throw ShapeError("concat_restore: row counts differ (" + ng::to_string(attended.shape()) +
                     ", " + ng::to_string(lidar_rows.shape()) + ", " +
                     std::to_string(voxels.size()) + " voxels)");
  }
  const auto rows = voxels.flat_rows();
  const std::size_t width = lidar_rows.data().cols() + attended.data().cols();
  if (voxels.size() == 0) {
    return ng::Value::constant(ng::Tensor(ng::Shape{voxels.grid.voxel_count(), width}, 0.0));
  }
  return ng::scatter_rows(ng::concat_cols({lidar_rows, attended}), rows,
                          voxels.grid.voxel_count());
}

DenseGrid concat_restore(const ng::Tensor& attended, const SparseVoxelSet& voxels) {
  const auto out = concat_restore(ng::Value::constant(attended),
                                  ng::Value::constant(voxels.features), voxels);
  return DenseGrid(voxels.grid, out.data());
}

DenseGrid run(const DenseGrid& lidar, const DenseGrid& image, const QfmParams& params,
              std::size_t lambda) {
  const auto voxels = select_nonempty(lidar);
  const ng::Value fi = max_pool_rows(ng::Value::constant(image.features), image.spec.dims, lambda);
  const ng::Value fp = ng::Value::constant(voxels.features);
  const ng::Value am = fuse(fp, fi, params);
  return DenseGrid(lidar.spec, concat_restore(am, fp, voxels).data());
}

}  // namespace voxelfuse::qfm
