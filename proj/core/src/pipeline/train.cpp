#include "voxelfuse/pipeline/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "voxelfuse/error.hpp"
#include "voxelfuse/ivlm/ivlm.hpp"
#include "voxelfuse/losses/losses.hpp"
#include "voxelfuse/numgrad/vxf.hpp"

namespace voxelfuse::pipeline {
namespace {

using geom::Box3D;
using ng::Value;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Value gather_vector(const Value& v, std::span<const std::size_t> idx) {
  return ng::reshape(ng::gather_rows(ng::reshape(v, {v.size(), 1}), idx), {idx.size()});
}

Value constant_rows(std::size_t cols, std::vector<double> values) {
  const std::size_t rows = cols == 0 ? 0 : values.size() / cols;
  return Value::constant(ng::Tensor::matrix(rows, cols, std::move(values)));
}

void require_finite(double v, const char* term, std::size_t step) {
  if (!std::isfinite(v)) {
    throw NumericError("train_demo: step " + std::to_string(step) + ": " + term +
                       " is not finite");
  }
}

struct ProposalTargets {
  std::vector<double> max_iou;
  std::vector<std::ptrdiff_t> gt;
};

ProposalTargets match(std::span<const geom::ScoredBox> proposals, std::span<const Box3D> gt) {
  ProposalTargets t{std::vector<double>(proposals.size(), 0.0),
                    std::vector<std::ptrdiff_t>(proposals.size(), -1)};
  for (std::size_t i = 0; i < proposals.size(); ++i)
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double iou = geom::iou_3d(proposals[i].box, gt[g]);
      if (t.gt[i] < 0 || iou > t.max_iou[i]) {
        t.max_iou[i] = iou;
        t.gt[i] = static_cast<std::ptrdiff_t>(g);
      }
    }
  return t;
}

// Jittered copies of the gt boxes, enough to fill n/2 positive slots. Center
// shifts of up to 5% of the box extent, size scales within ±5% and yaw
// within ±0.05 rad keep every copy above an IoU of 0.7 with its source.
std::vector<geom::ScoredBox> jittered_gt(std::span<const Box3D> gt, std::size_t n,
                                         std::uint64_t seed) {
  std::vector<geom::ScoredBox> out;
  if (gt.empty()) return out;
  ng::Rng rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const std::size_t copies = (n / 2 + gt.size() - 1) / gt.size();
  for (const auto& b : gt)
    for (std::size_t c = 0; c < copies; ++c) {
      geom::Vec3 center = b.center(), size = b.size();
      for (int a = 0; a < 3; ++a) {
        center[a] += 0.05 * b.size()[a] * unit(rng);
        size[a] *= 1.0 + 0.05 * unit(rng);
      }
      out.push_back({Box3D(center, size, b.yaw() + 0.05 * unit(rng)), 1.0});
    }
  return out;
}

struct VfimBatch {
  Value lidar;
  Value image;
};

// RoI descriptors of the sampled boxes on P and I. Pairs where either side
// pools to an all-zero descriptor carry no direction and are dropped.
VfimBatch vfim_batch(const Prepared& prep, const VfimBatch& grids, std::span<const Box3D> boxes,
                     std::size_t pool) {
  const std::size_t k = boxes.size();
  if (k == 0) return {constant_rows(1, {}), constant_rows(1, {})};
  const auto pl = vfim::roi_pool(grids.lidar, vfim::roi_pool_plan(prep.lidar.spec, boxes, pool), k);
  const auto pi = vfim::roi_pool(grids.image, vfim::roi_pool_plan(prep.image.spec, boxes, pool), k);
  const std::size_t d = pl.data().cols();
  std::vector<double> lv, iv;
  auto nonzero = [d](const ng::Tensor& t, std::size_t r) {
    const auto row = t.row(r);
    return std::any_of(row.begin(), row.end(), [](double x) { return x != 0.0; });
  };
  for (std::size_t r = 0; r < k; ++r) {
    if (!nonzero(pl.data(), r) || !nonzero(pi.data(), r)) continue;
    const auto a = pl.data().row(r);
    const auto b = pi.data().row(r);
    lv.insert(lv.end(), a.begin(), a.end());
    iv.insert(iv.end(), b.begin(), b.end());
  }
  return {constant_rows(d, std::move(lv)), constant_rows(d, std::move(iv))};
}

void save_linear(const ng::LinearMap& m, const std::filesystem::path& base) {
  ng::save_vxf(base.string() + "_w.vxf", m.weight.data());
  if (m.bias) ng::save_vxf(base.string() + "_b.vxf", m.bias->data());
}

}  // namespace

Model Model::init(const RunConfig& cfg, std::uint64_t seed) {
  ng::Rng rng(mix(seed ^ 0x5eedULL));
  Model m;
  m.qfm = qfm::QfmParams::init(cfg.channels, cfg.attention, rng);
  m.head = detector::ProposalHead::init(2 * cfg.channels, cfg.detector.anchor, rng);
  m.refine = detector::RefineHead::init(2 * cfg.channels, rng);
  const std::size_t pool = cfg.vfim.pool;
  m.heads = vfim::InteractionHeads::init(pool * pool * pool * cfg.channels, cfg.vfim.width, rng);
  return m;
}

std::vector<Value> Model::parameters() const {
  auto out = qfm.parameters();
  for (const auto& p : head.parameters()) out.push_back(p);
  for (const auto& p : refine.parameters()) out.push_back(p);
  for (const auto& p : heads.parameters()) out.push_back(p);
  return out;
}

void Model::save(const std::filesystem::path& dir) const {
  qfm.save(dir);
  save_linear(head.cls, dir / "head_cls");
  save_linear(head.reg, dir / "head_reg");
  save_linear(refine.map, dir / "refine");
  for (std::size_t i = 0; i < heads.encoder.layers.size(); ++i) {
    save_linear(heads.encoder.layers[i], dir / ("omega_" + std::to_string(i)));
  }
  for (std::size_t i = 0; i < heads.predictor.layers.size(); ++i) {
    save_linear(heads.predictor.layers[i], dir / ("psi_" + std::to_string(i)));
  }
}

void assign_anchors(Prepared& prep, double pos_iou, double neg_iou) {
  const auto& gt = prep.scene.gt_boxes;
  const std::size_t n = prep.anchors.size();
  prep.anchor_label.assign(n, 0);
  prep.anchor_gt.assign(n, -1);
  std::vector<double> best(n, 0.0);
  std::vector<double> gt_best(gt.size(), 0.0);
  std::vector<std::ptrdiff_t> gt_arg(gt.size(), -1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = prep.anchors[i];
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double reach = 0.5 * (std::hypot(a.size()[0], a.size()[1]) +
                                  std::hypot(gt[g].size()[0], gt[g].size()[1]));
      if (std::hypot(a.center()[0] - gt[g].center()[0], a.center()[1] - gt[g].center()[1]) >
          reach) {
        continue;
      }
      const double iou = geom::iou_bev(a, gt[g]);
      if (iou > best[i]) {
        best[i] = iou;
        prep.anchor_gt[i] = static_cast<std::ptrdiff_t>(g);
      }
      if (iou > gt_best[g]) {
        gt_best[g] = iou;
        gt_arg[g] = static_cast<std::ptrdiff_t>(i);
      }
    }
    prep.anchor_label[i] = best[i] >= pos_iou ? 1 : (best[i] < neg_iou ? 0 : -1);
  }
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (gt_arg[g] < 0) continue;
    const auto i = static_cast<std::size_t>(gt_arg[g]);
    prep.anchor_label[i] = 1;
    prep.anchor_gt[i] = static_cast<std::ptrdiff_t>(g);
  }
}

Prepared prepare(const RunConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Prepared p;
  p.scene = gen_scene(cfg, seed);
  p.lidar = voxelize_points(p.scene.points, cfg.lidar_grid, cfg.channels, cfg.scene.count_norm);

  const auto& fmap = p.scene.image_features;
  const auto depth = ivlm::depth_bins_from_points(p.scene.xyz(), p.scene.calib, fmap.width(),
                                                  fmap.height(), fmap.stride, cfg.bins);
  const auto frustum = ivlm::build_frustum(fmap, depth, cfg.bins);
  p.image = ivlm::lift(frustum, p.scene.calib, cfg.image_grid, fmap.stride);

  p.voxels = qfm::select_nonempty(p.lidar);
  p.pooled_image = qfm::pool_and_flatten(p.image, cfg.attention.lambda);
  p.anchors = detector::make_anchors(cfg.lidar_grid, cfg.detector.anchor);
  assign_anchors(p, cfg.detector.anchor_pos_iou, cfg.detector.anchor_neg_iou);
  return p;
}

TrainResult train_demo(const RunConfig& cfg, const StepCallback& on_step) {
  return train_demo(cfg, prepare(cfg, cfg.optim.seed), on_step);
}

TrainResult train_demo(const RunConfig& cfg, const Prepared& prep, const StepCallback& on_step) {
  cfg.validate();
  TrainResult result;
  result.model = Model::init(cfg, cfg.optim.seed);
  Model& model = result.model;
  auto params = model.parameters();
  const auto& gt = prep.scene.gt_boxes;
  const double gamma = cfg.weights.gamma_vfim;

  std::vector<std::size_t> labeled, positives;
  std::vector<int> labels;
  std::vector<losses::BoxCode> anchor_codes;
  for (std::size_t i = 0; i < prep.anchor_label.size(); ++i) {
    if (prep.anchor_label[i] < 0) continue;
    labeled.push_back(i);
    labels.push_back(prep.anchor_label[i]);
    if (prep.anchor_label[i] == 1) {
      positives.push_back(i);
      anchor_codes.push_back(losses::encode_box(
          prep.anchors[i], gt[static_cast<std::size_t>(prep.anchor_gt[i])]));
    }
  }

  const Value fp = Value::constant(prep.voxels.features);
  const Value fi = Value::constant(prep.pooled_image);
  const VfimBatch grids{Value::constant(prep.lidar.features), Value::constant(prep.image.features)};
  VfimBatch last_batch{constant_rows(1, {}), constant_rows(1, {})};

  for (std::size_t step = 0; step < cfg.optim.steps; ++step) {
    // Fusion and BEV.
    Value bev;
    if (prep.voxels.size() > 0) {
      const Value am = qfm::fuse(fp, fi, model.qfm);
      bev = detector::bev_collapse_sparse(ng::concat_cols({fp, am}), prep.voxels.indices,
                                          cfg.lidar_grid.dims);
    } else {
      const auto& d = cfg.lidar_grid.dims;
      bev = Value::constant(ng::Tensor(ng::Shape{d[0] * d[1], 2 * cfg.channels}, 0.0));
    }
    const auto head_out = detector::run_head(bev, model.head);

    // RPN.
    const Value cls = losses::focal_terms(gather_vector(head_out.logits, labeled), labels,
                                          cfg.focal);
    const Value reg = ng::sum_rows(losses::smooth_l1(
        losses::box_residual(ng::gather_rows(head_out.residuals, positives), anchor_codes),
        losses::kRpnBeta));
    const Value rpn = losses::rpn_loss(cls, reg, cfg.weights);

    // Proposals and the refinement stand-in.
    const auto all = detector::decode_all(head_out, prep.anchors);
    std::vector<geom::ScoredBox> proposals;
    for (auto i : detector::nms(all, cfg.detector.nms_iou, cfg.detector.top_k)) {
      proposals.push_back(all[i]);
    }
    std::vector<Box3D> proposal_boxes;
    for (const auto& p : proposals) proposal_boxes.push_back(p.box);
    const auto targets = match(proposals, gt);
    const Value refined =
        model.refine.map(ng::apply_rows(detector::bev_sample_plan(cfg.lidar_grid, proposal_boxes), bev));
    std::vector<double> conf_targets;
    std::vector<std::size_t> refine_rows;
    std::vector<losses::BoxCode> refine_codes;
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      conf_targets.push_back(losses::iou_target(targets.max_iou[i]));
      if (targets.gt[i] >= 0 && targets.max_iou[i] > cfg.vfim.pos_iou) {
        refine_rows.push_back(i);
        refine_codes.push_back(
            losses::encode_box(proposals[i].box, gt[static_cast<std::size_t>(targets.gt[i])]));
      }
    }
    const Value conf = losses::bce_terms(
        ng::reshape(ng::slice_cols(refined, 0, 1), {proposals.size()}), conf_targets);
    const Value refine = ng::sum_rows(losses::smooth_l1(
        losses::box_residual(ng::gather_rows(ng::slice_cols(refined, 1, 8), refine_rows),
                             refine_codes),
        losses::kRefineBeta));
    const Value rcnn = losses::rcnn_loss(conf, refine);

    // VFIM. Jittered gt boxes join the candidate pool so half of the sample
    // is positive even before the detector localizes anything.
    const std::uint64_t step_seed = mix(cfg.optim.seed * 0x100000001b3ULL + step);
    std::vector<geom::ScoredBox> candidates = proposals;
    for (const auto& b : jittered_gt(gt, cfg.vfim.samples, step_seed ^ 0x6a177e5ULL)) {
      candidates.push_back(b);
    }
    const auto sample = vfim::sample_proposals(candidates, gt, cfg.vfim.samples, cfg.vfim.pos_iou,
                                               step_seed);
    last_batch = vfim_batch(prep, grids, sample.boxes, cfg.vfim.pool);
    const Value vfim = vfim::vfim_loss(last_batch.lidar, last_batch.image, model.heads);

    LossRow row{step, 0.0, rpn.item(), rcnn.item(), vfim.item(), };
    require_finite(row.rpn, "L_rpn", step);
    require_finite(row.rcnn, "L_rcnn", step);
    require_finite(row.vfim, "L_vfim", step);
    row.total = losses::total_loss(row.rpn, row.rcnn, row.vfim, gamma);
    require_finite(row.total, "L_total", step);
    result.curve.push_back(row);
    if (on_step) on_step(row);

    // With γ = 0 the VFIM branch is forward-only: its gradient would be
    // scaled to zero anyway.
    Value total = gamma == 0.0 ? ng::add(rpn, rcnn)
                                     : losses::total_loss(rpn, rcnn, vfim, gamma);
    ng::zero_grads(params);
    total.backward();
    ng::sgd_step(params, cfg.optim.lr);
  }

  result.final_pairs = last_batch.lidar.data().rows();
  result.final_cosine =
      vfim::mean_encoded_cosine(last_batch.lidar, last_batch.image, model.heads);
  return result;
}

std::string losses_csv(std::span<const LossRow> curve) {
  std::string out = "step,L_total,L_rpn,L_rcnn,L_vfim\n";
  char buf[160];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.step, r.total, r.rpn,
                  r.rcnn, r.vfim);
    out += buf;
  }
  return out;
}

double sign_test_p(std::size_t wins, std::size_t n) {
  if (wins > n) throw ContractError("sign_test_p: wins exceed trials");
  if (n <= 1000) {
    // Binomial coefficients up to n = 1000 stay finite; small n are exact.
    double tail = 0.0;
    double c = 1.0;
    for (std::size_t k = 0; k <= n; ++k) {
      if (k >= wins) tail += c;
      c = c * static_cast<double>(n - k) / static_cast<double>(k + 1);
    }
    return std::min(std::ldexp(tail, -static_cast<int>(n)), 1.0);
  }
  double p = 0.0;
  for (std::size_t k = wins; k <= n; ++k) {
    p += std::exp(std::lgamma(static_cast<double>(n) + 1.0) -
                  std::lgamma(static_cast<double>(k) + 1.0) -
                  std::lgamma(static_cast<double>(n - k) + 1.0) -
                  static_cast<double>(n) * std::log(2.0));
  }
  return std::min(p, 1.0);
}

AblationReport run_ablation(const RunConfig& base, std::span<const std::uint64_t> seeds,
                            double gamma) {
  AblationReport report;
  for (const auto seed : seeds) {
    RunConfig cfg = base;
    cfg.optim.seed = seed;
    const Prepared prep = prepare(cfg, seed);
    AblationSeed s{seed, 0.0, 0.0};
    cfg.weights.gamma_vfim = gamma;
    s.cosine_with = train_demo(cfg, prep).final_cosine;
    cfg.weights.gamma_vfim = 0.0;
    s.cosine_without = train_demo(cfg, prep).final_cosine;
    if (s.cosine_with > s.cosine_without) ++report.wins;
    report.seeds.push_back(s);
  }
  report.p_value = sign_test_p(report.wins, report.seeds.size());
  return report;
}

}  // namespace voxelfuse::pipeline
