#include "voxelfuse/vfim/vfim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "voxelfuse/error.hpp"
#include "voxelfuse/geom/trilinear.hpp"

namespace voxelfuse::vfim {

Mlp Mlp::init(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, ng::Rng& rng) {
  Mlp m;
  m.layers.push_back(ng::LinearMap::init(in_dim, hidden, true, rng));
  m.layers.push_back(ng::LinearMap::init(hidden, out_dim, true, rng));
  return m;
}

ng::Value Mlp::operator()(const ng::Value& x) const {
  ng::Value h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = ng::relu(h);
  }
  return h;
}

void Mlp::collect(std::vector<ng::Value>& params) const {
  for (const auto& l : layers) l.collect(params);
}

InteractionHeads InteractionHeads::init(std::size_t in_dim, std::size_t width, ng::Rng& rng) {
  InteractionHeads h;
  h.encoder = Mlp::init(in_dim, width, width, rng);
  h.predictor = Mlp::init(width, width, width, rng);
  return h;
}

std::vector<ng::Value> InteractionHeads::parameters() const {
  std::vector<ng::Value> out;
  encoder.collect(out);
  predictor.collect(out);
  return out;
}

void InteractionHeads::validate() const {
  if (encoder.is_identity() || predictor.is_identity()) return;
  const std::size_t enc_out = encoder.layers.back().out_dim();
  if (predictor.layers.front().in_dim() != enc_out || predictor.layers.back().out_dim() != enc_out) {
    throw ShapeError("InteractionHeads: encoder output " + std::to_string(enc_out) +
                     " must equal predictor input and output widths");
  }
}

std::size_t ProposalSample::positives() const {
  return static_cast<std::size_t>(std::count(positive.begin(), positive.end(), 1));
}

ProposalSample sample_proposals(std::span<const geom::ScoredBox> proposals,
                                std::span<const Box3D> gt, std::size_t n, double pos_iou,
                                std::uint64_t seed) {
  if (n % 2 != 0) throw ContractError("sample_proposals: N must be even");
  std::vector<std::size_t> pos, neg;
  std::vector<double> best(proposals.size(), 0.0);
  std::vector<std::ptrdiff_t> arg(proposals.size(), -1);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double iou = geom::iou_3d(proposals[i].box, gt[g]);
      if (arg[i] < 0 || iou > best[i]) {
        best[i] = iou;
        arg[i] = static_cast<std::ptrdiff_t>(g);
      }
    }
    (best[i] > pos_iou ? pos : neg).push_back(i);
  }
  ng::Rng rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const std::size_t take_pos = std::min(pos.size(), n / 2);
  const std::size_t take_neg = std::min(neg.size(), n - take_pos);

  ProposalSample s;
  auto emit = [&](std::size_t i, bool positive) {
    s.boxes.push_back(proposals[i].box);
    s.positive.push_back(positive ? 1 : 0);
    s.max_iou.push_back(best[i]);
    s.gt_index.push_back(arg[i]);
  };
  for (std::size_t k = 0; k < take_pos; ++k) emit(pos[k], true);
  for (std::size_t k = 0; k < take_neg; ++k) emit(neg[k], false);
  return s;
}

std::shared_ptr<ng::SparseRowMap> roi_pool_plan(const GridSpec& grid, std::span<const Box3D> boxes,
                                                std::size_t pool) {
  if (pool == 0) throw ContractError("roi_pool_plan: pool resolution must be >= 1");
  auto map = std::make_shared<ng::SparseRowMap>();
  map->in_rows = grid.voxel_count();
  map->offsets.reserve(boxes.size() * pool * pool * pool + 1);
  const double g = static_cast<double>(pool);
  for (const auto& box : boxes) {
    const auto& size = box.size();
    for (std::size_t i = 0; i < pool; ++i)
      for (std::size_t j = 0; j < pool; ++j)
        for (std::size_t k = 0; k < pool; ++k) {
          const geom::Vec3 local{((static_cast<double>(i) + 0.5) / g - 0.5) * size[0],
                                 ((static_cast<double>(j) + 0.5) / g - 0.5) * size[1],
                                 ((static_cast<double>(k) + 0.5) / g - 0.5) * size[2]};
          const auto coord = grid.lattice_coords(box.to_world(local));
          if (auto s = geom::trilinear_stencil(coord, grid.dims)) {
            for (int c = 0; c < 8; ++c) {
              if (s->inside[c] && s->weight[c] != 0.0) map->push(s->flat[c], s->weight[c]);
            }
          }
          map->finish_row();
        }
  }
  return map;
}

ng::Value roi_pool(const ng::Value& grid_rows, std::shared_ptr<const ng::SparseRowMap> plan,
                   std::size_t boxes) {
  if (boxes == 0 || plan->out_rows() % boxes != 0) {
    throw ContractError("roi_pool: plan rows do not split into " + std::to_string(boxes) +
                        " boxes");
  }
  const std::size_t cells = plan->out_rows() / boxes;
  const std::size_t c = grid_rows.data().cols();
  return ng::reshape(ng::apply_rows(std::move(plan), grid_rows), {boxes, cells * c});
}

RoIFeature voxel_roi_pool(const DenseGrid& grid, const Box3D& box, std::size_t pool) {
  const Box3D boxes[1] = {box};
  const auto pooled = roi_pool(ng::Value::constant(grid.features),
                               roi_pool_plan(grid.spec, boxes, pool), 1);
  return {pooled.data().reshaped({pooled.size()}), box};
}

double cos_sim(std::span<const double> p, std::span<const double> e) {
  if (p.size() != e.size()) throw ShapeError("cos_sim: length mismatch");
  double pp = 0.0, ee = 0.0, pe = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    pp += p[i] * p[i];
    ee += e[i] * e[i];
    pe += p[i] * e[i];
  }
  const double np = std::sqrt(pp), ne = std::sqrt(ee);
  if (!(np > ng::kNormEpsilon) || !(ne > ng::kNormEpsilon)) {
    throw NumericError("cos_sim: degenerate vector");
  }
  return -pe / (np * ne);
}

ng::Value neg_cosine_rows(const ng::Value& p, const ng::Value& e) {
  return ng::scale(ng::sum_rows(ng::mul(ng::l2_normalize(p), ng::l2_normalize(e))), -1.0);
}

ng::Value vfim_loss(const ng::Value& lidar_rois, const ng::Value& image_rois,
                    const InteractionHeads& heads) {
  if (lidar_rois.shape() != image_rois.shape()) {
    throw ContractError("vfim_loss: RoI stacks differ, " + ng::to_string(lidar_rois.shape()) +
                        " vs " + ng::to_string(image_rois.shape()));
  }
  if (lidar_rois.data().rows() == 0) return ng::Value::constant(ng::Tensor::scalar(0.0));
  heads.validate();
  const ng::Value e_p = heads.encoder(lidar_rois);
  const ng::Value e_i = heads.encoder(image_rois);
  const ng::Value p_p = heads.predictor(e_p);
  const ng::Value p_i = heads.predictor(e_i);
  const ng::Value a = neg_cosine_rows(p_p, ng::stop_grad(e_i));
  const ng::Value b = neg_cosine_rows(p_i, ng::stop_grad(e_p));
  return ng::mean(ng::add(ng::scale(a, 0.5), ng::scale(b, 0.5)));
}

double vfim_loss(std::span<const RoIFeature> lidar_rois, std::span<const RoIFeature> image_rois,
                 const InteractionHeads& heads) {
  if (lidar_rois.size() != image_rois.size()) {
    throw ContractError("vfim_loss: " + std::to_string(lidar_rois.size()) + " LiDAR RoIs vs " +
                        std::to_string(image_rois.size()) + " image RoIs");
  }
  if (lidar_rois.empty()) return 0.0;
  auto stack = [](std::span<const RoIFeature> rois) {
    const std::size_t d = rois.front().data.size();
    std::vector<double> rows;
    rows.reserve(rois.size() * d);
    for (const auto& r : rois) {
      if (r.data.size() != d) throw ShapeError("vfim_loss: RoI descriptors differ in length");
      rows.insert(rows.end(), r.data.values().begin(), r.data.values().end());
    }
    return ng::Value::constant(ng::Tensor::matrix(rois.size(), d, std::move(rows)));
  };
  return vfim_loss(stack(lidar_rois), stack(image_rois), heads).item();
}

double mean_encoded_cosine(const ng::Value& lidar_rois, const ng::Value& image_rois,
                           const InteractionHeads& heads) {
  if (lidar_rois.data().rows() == 0) return 0.0;
  const auto e_p = heads.encoder(ng::stop_grad(lidar_rois));
  const auto e_i = heads.encoder(ng::stop_grad(image_rois));
  return -ng::mean(neg_cosine_rows(e_p, e_i)).item();
}

}  // namespace voxelfuse::vfim
