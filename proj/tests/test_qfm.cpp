#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "oracles.hpp"
#include "support.hpp"
#include "voxelfuse/error.hpp"
#include "voxelfuse/numgrad/grad_check.hpp"
#include "voxelfuse/qfm/qfm.hpp"

using namespace voxelfuse;
using namespace voxelfuse::qfm;
using ng::LinearMap;
using ng::Rng;
using ng::Tensor;
using ng::Value;

namespace {

// Sparse random grid: each voxel occupied with probability `fill`.
DenseGrid sparse_grid(Rng& rng, const Index3& dims, std::size_t c, double fill) {
  DenseGrid g(GridSpec{{0, 0, 0}, {1, 1, 1}, dims}, c);
  for (std::size_t v = 0; v < g.spec.voxel_count(); ++v) {
    if (vftest::uniform(rng, 0, 1) >= fill) continue;
    for (auto& x : g.features.row(v)) x = vftest::uniform(rng, -1, 1);
  }
  return g;
}

QfmParams random_params(Rng& rng, std::size_t c, std::size_t heads, std::size_t dk) {
  auto p = QfmParams::init(c, {heads, dk, dk, 2}, rng);
  // Nonzero output bias so fused rows are never exactly zero.
  for (auto& b : p.wo.bias->mutable_data().values()) b = vftest::uniform(rng, 0.1, 0.5);
  return p;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy(t.row(perm[i]).begin(), t.row(perm[i]).end(), out.row(i).begin());
  }
  return out;
}

std::vector<std::size_t> random_perm(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace

TEST(SelectNonempty, ZeroGridIsEmpty) {
  const DenseGrid g(GridSpec{{0, 0, 0}, {1, 1, 1}, {3, 4, 5}}, 2);
  const auto s = select_nonempty(g);
  EXPECT_EQ(s.size(), 0u);
  EXPECT_EQ(s.features.shape(), (ng::Shape{0, 2}));
}

TEST(SelectNonempty, SingleVoxel) {
  DenseGrid g(GridSpec{{0, 0, 0}, {1, 1, 1}, {3, 4, 5}}, 2);
  g.at({1, 2, 3})[1] = -0.5;
  const auto s = select_nonempty(g);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.indices[0], (Index3{1, 2, 3}));
  EXPECT_EQ(s.features, Tensor::matrix({{0.0, -0.5}}));
}

TEST(SelectNonempty, MatchesFullScan) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = sparse_grid(rng, {5, 4, 6}, 3, 0.3);
    const auto s = select_nonempty(g);
    s.validate();
    std::size_t k = 0;
    for (std::size_t x = 0; x < 5; ++x)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t z = 0; z < 6; ++z) {
          const auto f = g.at({x, y, z});
          if (std::all_of(f.begin(), f.end(), [](double v) { return v == 0.0; })) continue;
          ASSERT_LT(k, s.size());
          ASSERT_EQ(s.indices[k], (Index3{x, y, z}));
          for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(s.features.at(k, c), f[c]);
          ++k;
        }
    ASSERT_EQ(k, s.size());
  }
}

TEST(SparseVoxelSet, ValidateCatchesDuplicates) {
  SparseVoxelSet s;
  s.grid = GridSpec{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}};
  s.indices = {{0, 1, 1}, {0, 1, 1}};
  s.features = Tensor({2, 1});
  EXPECT_THROW(s.validate(), ContractError);
  s.indices = {{0, 1, 2}};
  s.features = Tensor({1, 1});
  EXPECT_THROW(s.validate(), IndexError);
}

TEST(Pool, LambdaOneIsIdentity) {
  Rng rng(2);
  const auto g = sparse_grid(rng, {3, 4, 2}, 5, 0.7);
  EXPECT_EQ(pool_and_flatten(g, 1), g.features);
}

TEST(Pool, ConstantGrid) {
  DenseGrid g(GridSpec{{0, 0, 0}, {1, 1, 1}, {5, 6, 7}}, 2);
  g.features.fill(-3.25);
  const auto p = pool_and_flatten(g, 4);
  EXPECT_EQ(p.rows(), 2u * 2u * 2u);
  for (double v : p.values()) EXPECT_EQ(v, -3.25);
}

TEST(Pool, OneHotVoxelPerBlockGivesChannelwiseMax) {
  DenseGrid g(GridSpec{{0, 0, 0}, {1, 1, 1}, {4, 4, 4}}, 3);
  g.at({0, 1, 2})[0] = 5.0;
  g.at({3, 3, 3})[1] = 2.0;
  g.at({2, 0, 1})[2] = 7.0;
  g.at({1, 1, 1})[0] = 4.0;
  const auto p = pool_and_flatten(g, 4);
  EXPECT_EQ(p, Tensor::matrix({{5.0, 2.0, 7.0}}));
}

TEST(Pool, PartialBlocksIgnoreMissingVoxels) {
  // All-negative features: padding with zeros would wrongly return 0.
  DenseGrid g(GridSpec{{0, 0, 0}, {1, 1, 1}, {5, 1, 1}}, 1);
  for (std::size_t x = 0; x < 5; ++x) g.at({x, 0, 0})[0] = -1.0 - x;
  EXPECT_EQ(pool_and_flatten(g, 4), Tensor::matrix({{-1.0}, {-5.0}}));
  EXPECT_EQ(pooled_dims({5, 9, 4}, 4), (Index3{2, 3, 1}));
}

TEST(Pool, MatchesBlockScan) {
  Rng rng(3);
  const Index3 dims{7, 5, 6};
  const auto g = sparse_grid(rng, dims, 2, 1.0);
  const std::size_t lambda = 3;
  const auto p = pool_and_flatten(g, lambda);
  const auto pd = pooled_dims(dims, lambda);
  std::size_t b = 0;
  for (std::size_t bx = 0; bx < pd[0]; ++bx)
    for (std::size_t by = 0; by < pd[1]; ++by)
      for (std::size_t bz = 0; bz < pd[2]; ++bz, ++b)
        for (std::size_t c = 0; c < 2; ++c) {
          double best = -INFINITY;
          for (std::size_t x = bx * lambda; x < std::min(dims[0], bx * lambda + lambda); ++x)
            for (std::size_t y = by * lambda; y < std::min(dims[1], by * lambda + lambda); ++y)
              for (std::size_t z = bz * lambda; z < std::min(dims[2], bz * lambda + lambda); ++z)
                best = std::max(best, g.at({x, y, z})[c]);
          ASSERT_EQ(p.at(b, c), best);
        }
}

TEST(Pool, TieSendsGradientToFirstVoxel) {
  auto x = Value::parameter(Tensor::matrix({{1.0}, {1.0}, {0.5}, {1.0}}));
  ng::sum(max_pool_rows(x, {2, 2, 1}, 2)).backward();
  EXPECT_EQ(x.grad(), Tensor::matrix({{1.0}, {0.0}, {0.0}, {0.0}}));
}

TEST(Fuse, SingleKeyReturnsProjectedValue) {
  Rng rng(4);
  const auto params = random_params(rng, 4, 1, 4);
  const auto fp = vftest::random_tensor({6, 4}, rng);
  const auto fi = vftest::random_tensor({1, 4}, rng);
  const auto out = fuse(Value::constant(fp), Value::constant(fi), params).data();
  const auto v = params.wo(params.wv[0](Value::constant(fi))).data();
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.at(i, c), v.at(0, c), 1e-14);
}

TEST(Fuse, DuplicateKeysAreIndependentOfL) {
  Rng rng(5);
  const auto params = random_params(rng, 3, 2, 3);
  const auto fp = Value::constant(vftest::random_tensor({4, 3}, rng));
  const auto row = vftest::random_tensor({1, 3}, rng);
  const auto one = fuse(fp, Value::constant(row), params).data();
  for (std::size_t l : {2u, 5u, 17u}) {
    Tensor many({l, 3});
    for (std::size_t j = 0; j < l; ++j) std::copy(row.values().begin(), row.values().end(), many.row(j).begin());
    EXPECT_LT(vftest::max_abs_diff(fuse(fp, Value::constant(many), params).data(), one), 1e-14);
  }
}

TEST(Fuse, HandWeightedSingleHead) {
  QfmParams p;
  p.wq.push_back(LinearMap::from(Tensor::matrix({{.6, -.2}, {.1, .8}})));
  p.wk.push_back(LinearMap::from(Tensor::matrix({{-.5, .3}, {.9, .2}})));
  p.wv.push_back(LinearMap::from(Tensor::matrix({{.4, 1.1}, {-.6, .3}})));
  p.wo = LinearMap::from(Tensor::matrix({{.7, -.4}, {.2, .5}}), Tensor::vector({.05, -.1}));
  const auto out = fuse(Value::constant(Tensor::matrix({{1, .5}, {-.3, 2}})),
                        Value::constant(Tensor::matrix({{.2, -1}, {1.5, .4}, {-.7, .9}})), p)
                       .data();
  const double expect[] = {-0.047306617937446435, 0.088614579555173073, 0.28049926356245897,
                           0.22374939987650086};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(out[i], expect[i], 1e-15);
}

TEST(Fuse, MatchesDenseOracle) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t c = vftest::pick(rng, 2, 8);
    const std::size_t heads = trial < 5 ? 1 : vftest::pick(rng, 2, 4);
    const auto params = random_params(rng, c, heads, heads == 1 ? c : vftest::pick(rng, 1, 6));
    const auto fp = vftest::random_tensor({3, c}, rng);
    const auto fi = vftest::random_tensor({5, c}, rng);
    const auto out = fuse(Value::constant(fp), Value::constant(fi), params).data();
    ASSERT_LT(vftest::max_abs_diff(out, vftest::dense_attention(fp, fi, params)), 1e-10);
  }
}

TEST(Fuse, AttentionRowsAreStochastic) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = vftest::pick(rng, 2, 8);
    const auto params = random_params(rng, c, vftest::pick(rng, 1, 4), vftest::pick(rng, 1, 8));
    const auto trace = fuse_traced(Value::constant(vftest::random_tensor({7, c}, rng, -3, 3)),
                                   Value::constant(vftest::random_tensor({11, c}, rng, -3, 3)),
                                   params);
    for (const auto& a : trace.attention)
      for (std::size_t i = 0; i < 7; ++i) {
        double s = 0.0;
        for (double v : a.data().row(i)) s += v;
        ASSERT_NEAR(s, 1.0, 1e-12);
      }
  }
}

TEST(Fuse, KeyPermutationInvariance) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto params = random_params(rng, 5, 3, 4);
    const auto fp = Value::constant(vftest::random_tensor({6, 5}, rng));
    const auto fi = vftest::random_tensor({9, 5}, rng);
    const auto a = fuse(fp, Value::constant(fi), params).data();
    const auto b = fuse(fp, Value::constant(permute_rows(fi, random_perm(rng, 9))), params).data();
    ASSERT_LT(vftest::max_abs_diff(a, b), 1e-10);
  }
}

TEST(Fuse, QueryPermutationEquivariance) {
  Rng rng(9);
  const auto params = random_params(rng, 5, 2, 3);
  const auto fi = Value::constant(vftest::random_tensor({8, 5}, rng));
  const auto fp = vftest::random_tensor({7, 5}, rng);
  const auto perm = random_perm(rng, 7);
  const auto a = fuse(Value::constant(fp), fi, params).data();
  const auto b = fuse(Value::constant(permute_rows(fp, perm)), fi, params).data();
  EXPECT_LT(vftest::max_abs_diff(permute_rows(a, perm), b), 1e-12);
}

TEST(Fuse, ScalingQueriesAndKeysScalesLogitsQuadratically) {
  Rng rng(10);
  auto params = random_params(rng, 4, 2, 3);
  const auto fp = Value::constant(vftest::random_tensor({3, 4}, rng));
  const auto fi = Value::constant(vftest::random_tensor({5, 4}, rng));
  const auto before = fuse_traced(fp, fi, params);
  const double c = 1.7;
  for (std::size_t h = 0; h < params.heads(); ++h) {
    for (auto& w : params.wq[h].weight.mutable_data().values()) w *= c;
    for (auto& w : params.wk[h].weight.mutable_data().values()) w *= c;
  }
  const auto after = fuse_traced(fp, fi, params);
  for (std::size_t h = 0; h < params.heads(); ++h) {
    const auto& l0 = before.logits[h].data();
    const auto& l1 = after.logits[h].data();
    for (std::size_t i = 0; i < l0.size(); ++i) ASSERT_NEAR(l1[i], c * c * l0[i], 1e-12);
  }
}

TEST(Fuse, EdgeCases) {
  Rng rng(11);
  const auto params = random_params(rng, 3, 2, 2);
  const auto empty = fuse(Value::constant(Tensor({0, 3})),
                          Value::constant(vftest::random_tensor({4, 3}, rng)), params);
  EXPECT_EQ(empty.shape(), (ng::Shape{0, 3}));
  EXPECT_THROW(fuse(Value::constant(vftest::random_tensor({2, 3}, rng)),
                    Value::constant(Tensor({0, 3})), params),
               ContractError);
  EXPECT_THROW(fuse(Value::constant(Tensor({2, 4})), Value::constant(Tensor({2, 3})), params),
               ShapeError);
}

TEST(Fuse, ZeroImageDependsOnlyOnBias) {
  Rng rng(12);
  const auto params = random_params(rng, 4, 2, 3);
  const auto out = fuse(Value::constant(vftest::random_tensor({5, 4}, rng)),
                        Value::constant(Tensor({6, 4})), params)
                       .data();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 4; ++c) ASSERT_EQ(out.at(i, c), params.wo.bias->data()[c]);
}

TEST(Restore, EmptySetGivesZeroGridOfDoubleWidth) {
  const SparseVoxelSet s{{}, Tensor({0, 3}), GridSpec{{0, 0, 0}, {1, 1, 1}, {2, 3, 4}}};
  const auto g = concat_restore(Tensor({0, 3}), s);
  EXPECT_EQ(g.features.shape(), (ng::Shape{24, 6}));
  EXPECT_EQ(vftest::max_abs(g.features.values()), 0.0);
}

TEST(Restore, LayoutAndOccupancyArePreserved) {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const auto lidar = sparse_grid(rng, {6, 5, 4}, 4, 0.2);
    const auto image = sparse_grid(rng, {6, 5, 4}, 4, 0.8);
    const auto params = random_params(rng, 4, 2, 3);
    const auto fused = run(lidar, image, params, 2);
    ASSERT_EQ(fused.channels(), 8u);
    const auto before = select_nonempty(lidar);
    const auto after = select_nonempty(fused);
    ASSERT_EQ(before.indices, after.indices);
    for (std::size_t k = 0; k < before.size(); ++k)
      for (std::size_t c = 0; c < 4; ++c) ASSERT_EQ(after.features.at(k, c), before.features.at(k, c));
  }
}

TEST(Qfm, EndToEndGradient) {
  Rng rng(14);
  const Index3 dims{6, 6, 6};
  const auto lidar = sparse_grid(rng, dims, 8, 0.15);
  const auto voxels = select_nonempty(lidar);
  const auto params = random_params(rng, 8, 2, 4);
  auto image = vftest::random_param({216, 8}, rng);
  const auto weights = Value::constant(vftest::random_tensor({216, 16}, rng));
  const auto fp = Value::constant(voxels.features);
  auto f = [&](const Value& img) {
    const auto fi = max_pool_rows(img, dims, 2);
    return ng::sum(ng::mul(concat_restore(fuse(fp, fi, params), fp, voxels), weights));
  };
  // Distinct uniform draws make every block argmax unique.
  EXPECT_LT(ng::grad_check(f, image), 1e-4);
  // wq shares its node with params, so probing it perturbs the forward pass.
  auto wq = params.wq[1].weight;
  EXPECT_LT(ng::grad_check([&](const Value&) { return f(image); }, wq), 1e-4);
}

TEST(QfmParams, SaveLoadRoundTrip) {
  Rng rng(15);
  const auto params = random_params(rng, 5, 3, 2);
  const auto dir = std::filesystem::temp_directory_path() / "voxelfuse_qfm_params";
  std::filesystem::remove_all(dir);
  params.save(dir);
  const auto back = QfmParams::load(dir);
  ASSERT_EQ(back.heads(), 3u);
  for (std::size_t h = 0; h < 3; ++h) {
    EXPECT_EQ(back.wq[h].weight.data(), params.wq[h].weight.data());
    EXPECT_EQ(back.wk[h].weight.data(), params.wk[h].weight.data());
    EXPECT_EQ(back.wv[h].weight.data(), params.wv[h].weight.data());
  }
  EXPECT_EQ(back.wo.weight.data(), params.wo.weight.data());
  EXPECT_EQ(back.wo.bias->data(), params.wo.bias->data());
  std::filesystem::remove_all(dir);
}
