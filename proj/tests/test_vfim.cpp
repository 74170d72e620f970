#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <numbers>
#include <random>

#include "support.hpp"
#include "voxelfuse/error.hpp"
#include "voxelfuse/numgrad/grad_check.hpp"
#include "voxelfuse/vfim/vfim.hpp"

using namespace voxelfuse;
using namespace voxelfuse::vfim;
using geom::ScoredBox;
using geom::Vec3;
using ng::Rng;
using ng::Tensor;
using ng::Value;

namespace {

ScoredBox scored(const Box3D& b, double s = 0.5) { return {b, s}; }

GridSpec test_grid() { return GridSpec{{-4.0, -4.0, -2.0}, {0.5, 0.5, 0.5}, {16, 16, 8}}; }

// Rows e_k = z_k + noise, p_k = rho·z_k + sqrt(1 - rho²)·n_k: a batch where the
// two modalities share a latent component.
std::pair<Tensor, Tensor> correlated_batch(Rng& rng, std::size_t k, std::size_t d, double rho) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor p({k, d}), e({k, d});
  const double q = std::sqrt(1.0 - rho * rho);
  for (std::size_t i = 0; i < k * d; ++i) {
    const double z = n(rng);
    p[i] = z;
    e[i] = rho * z + q * n(rng);
  }
  return {p, e};
}

}  // namespace

TEST(SampleProposals, AllMatchingGtArePositive) {
  const Box3D gt({5, 0, -1}, {3.9, 1.6, 1.56}, 0.2);
  const std::vector<ScoredBox> props(10, scored(gt));
  const Box3D gts[] = {gt};
  const auto s = sample_proposals(props, gts, 8, 0.55, 1);
  EXPECT_EQ(s.boxes.size(), 4u);
  EXPECT_EQ(s.positives(), 4u);
  for (double iou : s.max_iou) EXPECT_NEAR(iou, 1.0, 1e-12);
}

TEST(SampleProposals, NoGtMeansNegatives) {
  Rng rng(1);
  std::vector<ScoredBox> props;
  for (int i = 0; i < 12; ++i) props.push_back(scored(vftest::random_box(rng)));
  const auto s = sample_proposals(props, {}, 8, 0.55, 2);
  EXPECT_EQ(s.boxes.size(), 8u);
  EXPECT_EQ(s.positives(), 0u);
  for (auto g : s.gt_index) EXPECT_EQ(g, -1);
}

TEST(SampleProposals, EmptyInputEmptyResult) {
  const auto s = sample_proposals({}, {}, 8, 0.55, 3);
  EXPECT_TRUE(s.boxes.empty());
}

TEST(SampleProposals, PartitionMatchesIouLabeling) {
  Rng rng(4);
  const std::vector<Box3D> gt{Box3D({0, 0, 0}, {4, 2, 1.5}, 0.1), Box3D({8, 3, 0}, {4, 2, 1.5}, -0.3)};
  std::vector<ScoredBox> props;
  for (int i = 0; i < 60; ++i) {
    // Jittered copies of each gt land on both sides of 0.55.
    const auto& g = gt[i % 2];
    const double s = vftest::uniform(rng, 0.0, 1.2);
    props.push_back(scored(Box3D({g.center()[0] + s * vftest::uniform(rng, -1, 1),
                                  g.center()[1] + s * vftest::uniform(rng, -1, 1), g.center()[2]},
                                 g.size(), g.yaw() + 0.3 * s * vftest::uniform(rng, -1, 1))));
  }
  std::size_t pos_avail = 0;
  for (const auto& p : props) {
    pos_avail += std::max(geom::iou_3d(p.box, gt[0]), geom::iou_3d(p.box, gt[1])) > 0.55;
  }
  ASSERT_GT(pos_avail, 4u);
  ASSERT_LT(pos_avail, 56u);
  const auto s = sample_proposals(props, gt, 40, 0.55, 5);
  EXPECT_EQ(s.positives(), std::min<std::size_t>(pos_avail, 20));
  EXPECT_EQ(s.boxes.size(), std::min<std::size_t>(40, s.positives() + (60 - pos_avail)));
  for (std::size_t i = 0; i < s.boxes.size(); ++i) {
    const double a = geom::iou_3d(s.boxes[i], gt[0]), b = geom::iou_3d(s.boxes[i], gt[1]);
    EXPECT_EQ(s.max_iou[i], std::max(a, b));
    EXPECT_EQ(s.positive[i] != 0, std::max(a, b) > 0.55);
    EXPECT_EQ(s.gt_index[i], b > a ? 1 : 0);
  }
  const auto again = sample_proposals(props, gt, 40, 0.55, 5);
  EXPECT_EQ(again.boxes, s.boxes);
}

TEST(SampleProposals, OddCountThrows) {
  EXPECT_THROW(sample_proposals({}, {}, 7, 0.55, 0), ContractError);
}

TEST(RoiPool, ConstantGrid) {
  DenseGrid g(test_grid(), 3);
  for (std::size_t v = 0; v < g.spec.voxel_count(); ++v) {
    g.features.at(v, 0) = 1.5;
    g.features.at(v, 1) = -2.0;
    g.features.at(v, 2) = 0.25;
  }
  const auto r = voxel_roi_pool(g, Box3D({0.3, -0.2, 0}, {3, 2, 1.5}, 0.6), 6);
  ASSERT_EQ(r.data.size(), 216u * 3u);
  for (std::size_t i = 0; i < 216; ++i) {
    EXPECT_NEAR(r.data[i * 3 + 0], 1.5, 1e-14);
    EXPECT_NEAR(r.data[i * 3 + 1], -2.0, 1e-14);
    EXPECT_NEAR(r.data[i * 3 + 2], 0.25, 1e-14);
  }
}

TEST(RoiPool, TranslationByOneVoxel) {
  Rng rng(6);
  DenseGrid g(test_grid(), 2);
  for (auto& v : g.features.values()) v = vftest::uniform(rng, -1, 1);
  DenseGrid shifted = g;
  shifted.spec.origin = {g.spec.origin[0] + 0.5, g.spec.origin[1] - 0.5, g.spec.origin[2] + 0.5};
  for (int trial = 0; trial < 10; ++trial) {
    const auto box = vftest::random_box(rng, 1.5);
    const auto c = box.center();
    const Box3D moved({c[0] + 0.5, c[1] - 0.5, c[2] + 0.5}, box.size(), box.yaw());
    const auto a = voxel_roi_pool(g, box, 4);
    const auto b = voxel_roi_pool(shifted, moved, 4);
    ASSERT_LT(vftest::max_abs_diff(a.data, b.data), 1e-12);
  }
}

TEST(RoiPool, LinearFieldAtSubcellCenters) {
  const auto spec = test_grid();
  DenseGrid g(spec, 1);
  auto field = [](const Vec3& p) { return 0.7 * p[0] - 1.3 * p[1] + 2.1 * p[2] + 0.4; };
  for (std::size_t v = 0; v < spec.voxel_count(); ++v) {
    g.features.at(v, 0) = field(geom::voxel_center(spec, spec.unflatten(v)));
  }
  const Box3D box({0.2, 0.6, -0.1}, {3.0, 2.0, 1.2}, 0.0);
  const std::size_t pool = 6;
  const auto r = voxel_roi_pool(g, box, pool);
  std::size_t i = 0;
  for (std::size_t a = 0; a < pool; ++a)
    for (std::size_t b = 0; b < pool; ++b)
      for (std::size_t c = 0; c < pool; ++c, ++i) {
        const Vec3 p{0.2 + ((a + 0.5) / pool - 0.5) * 3.0, 0.6 + ((b + 0.5) / pool - 0.5) * 2.0,
                     -0.1 + ((c + 0.5) / pool - 0.5) * 1.2};
        ASSERT_NEAR(r.data[i], field(p), 1e-10);
      }
}

TEST(RoiPool, OutsideGridReadsZero) {
  Rng rng(7);
  DenseGrid g(test_grid(), 2);
  for (auto& v : g.features.values()) v = vftest::uniform(rng, 0.5, 1);
  const auto r = voxel_roi_pool(g, Box3D({40, 40, 0}, {2, 2, 1}, 0.3), 3);
  EXPECT_EQ(vftest::max_abs(r.data.values()), 0.0);
}

TEST(RoiPool, FixedLengthRegardlessOfBoxSize) {
  DenseGrid g(test_grid(), 5);
  for (double s : {0.3, 1.0, 7.5}) {
    EXPECT_EQ(voxel_roi_pool(g, Box3D({0, 0, 0}, {s, s, s}, 0), 6).data.size(), 216u * 5u);
  }
}

TEST(VfimLoss, IdenticalPairsGiveMinusOne) {
  Rng rng(8);
  const auto heads = InteractionHeads::identity();
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = vftest::random_tensor({5, 7}, rng);
    EXPECT_NEAR(vfim_loss(Value::constant(p), Value::constant(p), heads).item(), -1.0, 1e-12);
  }
}

TEST(VfimLoss, OrthogonalPairsGiveZero) {
  const RoIFeature p[] = {{Tensor::vector({1, 0, 0}), {}}, {Tensor::vector({0, 2, 0}), {}}};
  const RoIFeature i[] = {{Tensor::vector({0, 3, 0}), {}}, {Tensor::vector({0, 0, -1}), {}}};
  EXPECT_EQ(vfim_loss(p, i, InteractionHeads::identity()), 0.0);
}

TEST(VfimLoss, IdentityHeadValue) {
  const RoIFeature p[] = {{Tensor::vector({1, 2, 0}), {}}};
  const RoIFeature i[] = {{Tensor::vector({0, 1, 1}), {}}};
  EXPECT_NEAR(vfim_loss(p, i, InteractionHeads::identity()), -0.63245553203367588, 1e-15);
}

TEST(VfimLoss, EmptyIsZeroAndMismatchThrows) {
  EXPECT_EQ(vfim_loss(std::span<const RoIFeature>{}, std::span<const RoIFeature>{},
                      InteractionHeads::identity()),
            0.0);
  const RoIFeature one[] = {{Tensor::vector({1, 0}), {}}};
  EXPECT_THROW(vfim_loss(one, std::span<const RoIFeature>{}, InteractionHeads::identity()),
               ContractError);
}

TEST(VfimLoss, SwapSymmetryIsBitIdentical) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto heads = InteractionHeads::init(12, 16, rng);
    const auto p = Value::constant(vftest::random_tensor({6, 12}, rng));
    const auto i = Value::constant(vftest::random_tensor({6, 12}, rng));
    const double a = vfim_loss(p, i, heads).item();
    const double b = vfim_loss(i, p, heads).item();
    ASSERT_EQ(std::bit_cast<std::uint64_t>(a), std::bit_cast<std::uint64_t>(b));
  }
}

TEST(VfimLoss, CosineScaleInvariance) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = vftest::random_tensor({9}, rng);
    const auto e = vftest::random_tensor({9}, rng);
    auto scaled = p;
    const double s = std::pow(10.0, vftest::uniform(rng, -3, 3));
    for (auto& v : scaled.values()) v *= s;
    ASSERT_NEAR(cos_sim(scaled.values(), e.values()), cos_sim(p.values(), e.values()), 1e-14);
  }
  EXPECT_THROW(cos_sim(std::vector<double>{0, 0}, std::vector<double>{1, 0}), NumericError);
}

TEST(VfimLoss, DetachedTargetReceivesNoGradient) {
  Rng rng(11);
  const auto heads = InteractionHeads::init(6, 8, rng);
  auto target_in = vftest::random_param({4, 6}, rng);
  const auto query = Value::constant(vftest::random_tensor({4, 6}, rng));
  auto loss = ng::mean(
      neg_cosine_rows(heads.predictor(heads.encoder(query)), ng::stop_grad(heads.encoder(target_in))));
  loss.backward();
  const auto g = target_in.grad();
  for (double v : g.values()) ASSERT_EQ(v, 0.0);
}

TEST(VfimLoss, EncoderGradientsComeOnlyThroughPredictorPath) {
  Rng rng(12);
  const auto heads = InteractionHeads::init(6, 8, rng);
  auto params = heads.parameters();
  auto p = vftest::random_param({5, 6}, rng);
  auto i = vftest::random_param({5, 6}, rng);
  ng::zero_grads(params);
  vfim_loss(p, i, heads).backward();
  std::vector<Tensor> full;
  for (const auto& v : params) full.push_back(v.grad());
  const auto gp = p.grad();

  // Same objective with the targets materialized as constants.
  ng::zero_grads(params);
  auto p2 = Value::parameter(p.data());
  auto i2 = Value::parameter(i.data());
  const auto ep = Value::constant(heads.encoder(p2).data());
  const auto ei = Value::constant(heads.encoder(i2).data());
  const auto a = neg_cosine_rows(heads.predictor(heads.encoder(p2)), ei);
  const auto b = neg_cosine_rows(heads.predictor(heads.encoder(i2)), ep);
  ng::mean(ng::add(ng::scale(a, 0.5), ng::scale(b, 0.5))).backward();
  for (std::size_t k = 0; k < params.size(); ++k) EXPECT_EQ(params[k].grad(), full[k]) << k;
  EXPECT_EQ(p2.grad(), gp);
}

TEST(VfimLoss, PredictorBranchMatchesFiniteDifferences) {
  Rng rng(13);
  const auto heads = InteractionHeads::init(6, 8, rng);
  auto p = vftest::random_param({4, 6}, rng);
  const auto i = Value::constant(vftest::random_tensor({4, 6}, rng));
  // With the target side frozen, the objective is an ordinary function of p.
  const auto frozen_ep = Value::constant(heads.encoder(p).data());
  const auto ei = Value::constant(heads.encoder(i).data());
  auto f = [&](const Value& x) {
    const auto a = neg_cosine_rows(heads.predictor(heads.encoder(x)), ei);
    const auto b = neg_cosine_rows(heads.predictor(heads.encoder(i)), frozen_ep);
    return ng::mean(ng::add(ng::scale(a, 0.5), ng::scale(b, 0.5)));
  };
  EXPECT_LT(ng::grad_check(f, p), 1e-4);
  p.zero_grad();
  vfim_loss(p, i, heads).backward();
  const auto full = p.grad();
  p.zero_grad();
  f(p).backward();
  EXPECT_LT(vftest::max_abs_diff(p.grad(), full), 1e-14);
}

TEST(VfimLoss, TrainingAlignsCorrelatedBatch) {
  Rng rng(2024);
  const auto [pt, et] = correlated_batch(rng, 8, 32, 0.7);
  const auto p = Value::constant(pt);
  const auto e = Value::constant(et);
  const auto heads = InteractionHeads::init(32, 32, rng);
  auto params = heads.parameters();
  const double loss0 = vfim_loss(p, e, heads).item();
  const double cos0 = mean_encoded_cosine(p, e, heads);
  double loss = loss0;
  for (int step = 0; step < 500; ++step) {
    ng::zero_grads(params);
    auto l = vfim_loss(p, e, heads);
    loss = l.item();
    l.backward();
    ng::sgd_step(params, 0.01);
  }
  const double cos1 = mean_encoded_cosine(p, e, heads);
  EXPECT_LT(loss, loss0);
  EXPECT_GT(cos1, cos0);
}

TEST(InteractionHeads, WidthMismatchThrows) {
  Rng rng(14);
  InteractionHeads h = InteractionHeads::init(4, 8, rng);
  h.predictor = Mlp::init(8, 8, 6, rng);
  EXPECT_THROW(h.validate(), ShapeError);
}

TEST(RoiPool, GradientReachesGrid) {
  Rng rng(15);
  const GridSpec spec{{-2, -2, -1}, {0.5, 0.5, 0.5}, {8, 8, 4}};
  auto rows = vftest::random_param({spec.voxel_count(), 3}, rng);
  const std::vector<Box3D> boxes{vftest::random_box(rng, 1.0), vftest::random_box(rng, 1.0)};
  const auto plan = roi_pool_plan(spec, boxes, 3);
  const auto w = Value::constant(vftest::random_tensor({2, 27 * 3}, rng));
  EXPECT_LT(ng::grad_check([&](const Value& x) { return ng::sum(ng::mul(roi_pool(x, plan, 2), w)); },
                           rows),
            1e-6);
}
