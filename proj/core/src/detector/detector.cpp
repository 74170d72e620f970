#include "voxelfuse/detector/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "voxelfuse/error.hpp"
#include "voxelfuse/geom/trilinear.hpp"
#include "voxelfuse/losses/losses.hpp"

namespace voxelfuse::detector {
namespace {

// Shared backward for both collapse variants: argmax[i] is the source row of
// output element i, or npos when the max came from an empty voxel.
constexpr std::size_t kNoSource = std::numeric_limits<std::size_t>::max();

ng::Value collapse_result(ng::Tensor out, const ng::Value& input, std::vector<std::size_t> argmax,
                          std::size_t c) {
  return ng::make_result(std::move(out), {input},
                         [c, argmax = std::move(argmax)](ng::Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           for (std::size_t i = 0; i < argmax.size(); ++i) {
                             if (argmax[i] != kNoSource) g[argmax[i] * c + i % c] += self.grad[i];
                           }
                         });
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

ProposalHead ProposalHead::init(std::size_t channels, const AnchorTemplate& anchor, ng::Rng& rng) {
  return {ng::LinearMap::init(channels, 1, true, rng), ng::LinearMap::init(channels, 7, true, rng),
          anchor};
}

std::vector<ng::Value> ProposalHead::parameters() const {
  std::vector<ng::Value> out;
  cls.collect(out);
  reg.collect(out);
  return out;
}

RefineHead RefineHead::init(std::size_t channels, ng::Rng& rng) {
  return {ng::LinearMap::init(channels, 8, true, rng)};
}

ng::Value bev_collapse(const ng::Value& dense_rows, const Index3& dims) {
  const auto& in = dense_rows.data();
  const std::size_t cells = dims[0] * dims[1];
  if (in.rank() != 2 || in.rows() != cells * dims[2]) {
    throw ShapeError("bev_collapse: rows " + ng::to_string(in.shape()) + " do not match dims");
  }
  const std::size_t c = in.cols();
  ng::Tensor out(ng::Shape{cells, c});
  std::vector<std::size_t> argmax(cells * c);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t z = 0; z < dims[2]; ++z) {
        const std::size_t row = cell * dims[2] + z;
        if (in[row * c + ch] > best) {
          best = in[row * c + ch];
          arg = row;
        }
      }
      out[cell * c + ch] = best;
      argmax[cell * c + ch] = arg;
    }
  }
  return collapse_result(std::move(out), dense_rows, std::move(argmax), c);
}

ng::Value bev_collapse_sparse(const ng::Value& rows, std::span<const Index3> indices,
                              const Index3& dims) {
  const auto& in = rows.data();
  if (in.rank() != 2 || in.rows() != indices.size()) {
    throw ShapeError("bev_collapse_sparse: " + std::to_string(indices.size()) +
                     " indices for rows " + ng::to_string(in.shape()));
  }
  const std::size_t c = in.cols();
  const std::size_t cells = dims[0] * dims[1];
  // Group occupied rows by column, z ascending.
  std::vector<std::size_t> order(indices.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto key = [&](std::size_t r) {
    return (indices[r][0] * dims[1] + indices[r][1]) * dims[2] + indices[r][2];
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });

  ng::Tensor out(ng::Shape{cells, c}, 0.0);
  std::vector<std::size_t> argmax(cells * c, kNoSource);
  std::size_t k = 0;
  std::vector<double> best(c);
  while (k < order.size()) {
    const std::size_t cell = indices[order[k]][0] * dims[1] + indices[order[k]][1];
    std::size_t end = k;
    while (end < order.size() &&
           indices[order[end]][0] * dims[1] + indices[order[end]][1] == cell) {
      ++end;
    }
    // First empty z in this column acts as a zero-valued candidate.
    std::size_t first_empty = dims[2];
    {
      std::size_t expect = 0;
      for (std::size_t j = k; j < end; ++j, ++expect) {
        if (indices[order[j]][2] != expect) break;
      }
      if (expect < dims[2] && (k + expect == end || indices[order[k + expect]][2] != expect)) {
        first_empty = expect;
      }
    }
    std::fill(best.begin(), best.end(), -std::numeric_limits<double>::infinity());
    std::size_t* arg = argmax.data() + cell * c;
    bool zero_seen = false;
    for (std::size_t j = k; j <= end; ++j) {
      const std::size_t z = j < end ? indices[order[j]][2] : dims[2];
      if (!zero_seen && first_empty < z) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          if (0.0 > best[ch]) {
            best[ch] = 0.0;
            arg[ch] = kNoSource;
          }
        }
        zero_seen = true;
      }
      if (j == end) break;
      const double* f = in.data() + order[j] * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        if (f[ch] > best[ch]) {
          best[ch] = f[ch];
          arg[ch] = order[j];
        }
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) out[cell * c + ch] = best[ch];
    k = end;
  }
  return collapse_result(std::move(out), rows, std::move(argmax), c);
}

std::vector<Box3D> make_anchors(const GridSpec& grid, const AnchorTemplate& anchor) {
  std::vector<Box3D> out;
  out.reserve(grid.dims[0] * grid.dims[1]);
  for (std::size_t x = 0; x < grid.dims[0]; ++x)
    for (std::size_t y = 0; y < grid.dims[1]; ++y) {
      out.emplace_back(
          geom::Vec3{grid.origin[0] + (static_cast<double>(x) + 0.5) * grid.voxel_size[0],
                     grid.origin[1] + (static_cast<double>(y) + 0.5) * grid.voxel_size[1],
                     anchor.z_center},
          geom::Vec3{anchor.length, anchor.width, anchor.height}, 0.0);
    }
  return out;
}

HeadOutput run_head(const ng::Value& bev, const ProposalHead& head) {
  const std::size_t cells = bev.data().rows();
  return {ng::reshape(head.cls(bev), {cells}), head.reg(bev)};
}

std::vector<ScoredBox> decode_all(const HeadOutput& out, std::span<const Box3D> anchors) {
  const std::size_t cells = out.logits.size();
  if (anchors.size() != cells) throw ShapeError("decode_all: anchor count differs from cells");
  std::vector<ScoredBox> boxes;
  boxes.reserve(cells);
  const auto& res = out.residuals.data();
  for (std::size_t i = 0; i < cells; ++i) {
    losses::BoxCode code{};
    for (std::size_t j = 0; j < 7; ++j) code[j] = res[i * 7 + j];
    boxes.push_back({losses::decode_box(anchors[i], code), sigmoid(out.logits.data()[i])});
  }
  return boxes;
}

std::vector<std::size_t> nms(std::span<const ScoredBox> boxes, double iou_threshold,
                             std::size_t max_keep) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return boxes[a].score > boxes[b].score;
  });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    if (kept.size() >= max_keep) break;
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (geom::iou_bev_axis_aligned(boxes[i].box, boxes[k].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

std::vector<ScoredBox> propose(const geom::DenseGrid& fused, const ProposalHead& head,
                               std::size_t top_k, double nms_iou) {
  if (top_k == 0) throw ContractError("propose: top_k must be >= 1");
  const auto bev = bev_collapse(ng::Value::constant(fused.features), fused.spec.dims);
  const auto anchors = make_anchors(fused.spec, head.anchor);
  const auto all = decode_all(run_head(bev, head), anchors);
  std::vector<ScoredBox> out;
  for (auto i : nms(all, nms_iou, top_k)) out.push_back(all[i]);
  return out;
}

std::shared_ptr<ng::SparseRowMap> bev_sample_plan(const GridSpec& grid,
                                                  std::span<const Box3D> boxes) {
  auto map = std::make_shared<ng::SparseRowMap>();
  const Index3 dims{grid.dims[0], grid.dims[1], 1};
  map->in_rows = dims[0] * dims[1];
  for (const auto& b : boxes) {
    const auto lc = grid.lattice_coords(b.center());
    if (auto s = geom::trilinear_stencil({lc[0], lc[1], 0.0}, dims)) {
      for (int k = 0; k < 8; ++k) {
        if (s->inside[k] && s->weight[k] != 0.0) map->push(s->flat[k], s->weight[k]);
      }
    }
    map->finish_row();
  }
  return map;
}

}  // namespace voxelfuse::detector
