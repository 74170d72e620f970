#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "support.hpp"
#include "voxelfuse/error.hpp"
#include "voxelfuse/numgrad/grad_check.hpp"
#include "voxelfuse/numgrad/ops.hpp"
#include "voxelfuse/numgrad/vxf.hpp"
#include "voxelfuse/pipeline/grad_suite.hpp"

using namespace voxelfuse;
using namespace voxelfuse::ng;
using vftest::random_param;
using vftest::random_tensor;

namespace {

Value param(Tensor t) { return Value::parameter(std::move(t)); }

}  // namespace

TEST(Matmul, IdentityTimesColumn) {
  const auto y = matmul(Value::constant(Tensor::matrix({{1, 0}, {0, 1}})),
                        Value::constant(Tensor::matrix({{3}, {4}})));
  EXPECT_EQ(y.data(), Tensor::matrix({{3}, {4}}));
}

TEST(Matmul, RowTimesColumn) {
  const auto y = matmul(Value::constant(Tensor::matrix({{1, 2}})),
                        Value::constant(Tensor::matrix({{3}, {4}})));
  EXPECT_EQ(y.data(), Tensor::matrix({{11}}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  const auto a = Value::constant(Tensor(Shape{2, 3}));
  const auto b = Value::constant(Tensor(Shape{4, 5}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(to_string(a.shape())), std::string::npos) << msg;
    EXPECT_NE(msg.find(to_string(b.shape())), std::string::npos) << msg;
  }
}

TEST(Matmul, GradOfSumIsOnesTimesBTransposed) {
  Rng rng(7);
  auto a = random_param({3, 4}, rng);
  const auto b = Value::constant(random_tensor({4, 5}, rng));
  sum(matmul(a, b)).backward();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 4; ++p) {
      double expect = 0.0;
      for (std::size_t j = 0; j < 5; ++j) expect += b.data().at(p, j);
      EXPECT_NEAR(a.grad().at(i, p), expect, 1e-12);
    }
  EXPECT_LT(grad_check([&](const Value& x) { return sum(matmul(x, b)); }, a), 1e-4);
}

TEST(Softmax, EqualLogitsAreUniform) {
  const auto y = softmax_rows(Value::constant(Tensor::matrix({{0, 0}})));
  EXPECT_EQ(y.data(), Tensor::matrix({{0.5, 0.5}}));
}

TEST(Softmax, SingleLogitIsOne) {
  for (double x : {-1e300, -3.0, 0.0, 42.0, 1e300}) {
    EXPECT_EQ(softmax_rows(Value::constant(Tensor::matrix({{x}}))).data()[0], 1.0);
  }
}

TEST(Softmax, MatchesDirectFormula) {
  const auto y = softmax_rows(Value::constant(Tensor::matrix({{1, 2, 3}})));
  const double expect[] = {0.090030573170380462, 0.24472847105479764, 0.66524095577482178};
  double total = 0.0;
  for (int j = 0; j < 3; ++j) {
    EXPECT_NEAR(y.data()[j], expect[j], 1e-15);
    total += y.data()[j];
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Softmax, RowsSumToOneForRandomInputs) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = vftest::pick(rng, 1, 6), n = vftest::pick(rng, 1, 40);
    const double scale = std::pow(10.0, vftest::uniform(rng, -3.0, 3.0));
    const auto y = softmax_rows(Value::constant(random_tensor({m, n}, rng, -scale, scale)));
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (double v : y.data().row(i)) {
        ASSERT_GE(v, 0.0);
        s += v;
      }
      ASSERT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, NanThrows) {
  const auto x = Value::constant(Tensor::matrix({{0.0, std::numeric_limits<double>::quiet_NaN()}}));
  EXPECT_THROW(softmax_rows(x), NumericError);
}

TEST(Outer, OneHotSelectsRow) {
  const auto g = outer(Value::constant(Tensor::vector({1, 2})),
                       Value::constant(Tensor::vector({0, 1, 0})));
  EXPECT_EQ(g.data(), Tensor::matrix({{0, 0}, {1, 2}, {0, 0}}));
}

TEST(Outer, ZeroSelectorAnnihilates) {
  Rng rng(3);
  const auto g = outer(Value::constant(random_tensor({5}, rng)),
                       Value::constant(Tensor(Shape{4}, 0.0)));
  EXPECT_EQ(vftest::max_abs(g.data().values()), 0.0);
}

TEST(Outer, NonVectorThrows) {
  EXPECT_THROW(outer(Value::constant(Tensor(Shape{2, 2})), Value::constant(Tensor(Shape{2}))),
               ShapeError);
}

TEST(Outer, BackwardOfSum) {
  Rng rng(5);
  auto u = random_param({3}, rng);
  auto v = random_param({4}, rng);
  sum(outer(u, v)).backward();
  double su = 0.0, sv = 0.0;
  for (double x : u.data().values()) su += x;
  for (double x : v.data().values()) sv += x;
  const auto gu = u.grad();
  const auto gv = v.grad();
  for (double g : gu.values()) EXPECT_NEAR(g, sv, 1e-12);
  for (double g : gv.values()) EXPECT_NEAR(g, su, 1e-12);
  EXPECT_LT(grad_check([&](const Value& x) { return sum(outer(x, v)); }, u), 1e-6);
  EXPECT_LT(grad_check([&](const Value& x) { return sum(outer(u, x)); }, v), 1e-6);
}

TEST(L2Normalize, ThreeFourFive) {
  const auto y = l2_normalize(Value::constant(Tensor::vector({3, 4})));
  EXPECT_NEAR(y.data()[0], 0.6, 1e-15);
  EXPECT_NEAR(y.data()[1], 0.8, 1e-15);
}

TEST(L2Normalize, UnitVectorIsFixed) {
  const auto y = l2_normalize(Value::constant(Tensor::vector({0, 1, 0})));
  EXPECT_EQ(y.data(), Tensor::vector({0, 1, 0}));
}

TEST(L2Normalize, DegenerateThrows) {
  EXPECT_THROW(l2_normalize(Value::constant(Tensor::vector({0, 0, 0}))), NumericError);
  EXPECT_THROW(l2_normalize(Value::constant(Tensor::vector({1e-13, 0}))), NumericError);
}

TEST(L2Normalize, GradientIsOrthogonalToOutput) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_param({6}, rng);
    const auto w = Value::constant(random_tensor({6}, rng));
    const auto y = l2_normalize(x);
    sum(mul(y, w)).backward();
    double dot = 0.0;
    for (std::size_t i = 0; i < 6; ++i) dot += x.grad()[i] * y.data()[i];
    EXPECT_NEAR(dot, 0.0, 1e-8);
    EXPECT_LT(grad_check([&](const Value& z) { return sum(mul(l2_normalize(z), w)); }, x), 1e-4);
  }
}

TEST(StopGrad, ForwardIdentity) {
  const auto x = Value::constant(Tensor::vector({1, 2, 3}));
  EXPECT_EQ(stop_grad(x).data(), x.data());
}

TEST(StopGrad, BackwardIsZero) {
  auto x = param(Tensor::vector({1, 2, 3}));
  auto y = scale(stop_grad(x), 2.0);
  auto z = add(sum(y), sum(scale(x, 0.0)));
  z.backward();
  const auto gx = x.grad();
  for (double g : gx.values()) EXPECT_EQ(g, 0.0);
}

TEST(StopGrad, DetachedFactorActsAsConstant) {
  auto x = param(Tensor::vector({1.5, -2.0, 0.25}));
  sum(mul(x, stop_grad(x))).backward();
  EXPECT_EQ(x.grad(), x.data());
  // Finite differences with the detached factor frozen at x0.
  const auto frozen = Value::constant(x.data());
  EXPECT_LT(grad_check([&](const Value& z) { return sum(mul(z, frozen)); }, x), 1e-9);
}

TEST(StopGrad, DetachedPathLeavesUpstreamGradsBitIdentical) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x0 = random_tensor({4, 3}, rng);
    const auto w0 = random_tensor({3, 3}, rng);
    auto run = [&](bool detach) {
      auto x = param(x0);
      auto w = param(w0);
      const auto h = matmul(x, w);
      const auto target = detach ? stop_grad(relu(h)) : Value::constant(relu(h).data());
      sum(mul(h, target)).backward();
      return std::pair{x.grad(), w.grad()};
    };
    const auto [gx1, gw1] = run(true);
    const auto [gx2, gw2] = run(false);
    EXPECT_EQ(gx1, gx2);
    EXPECT_EQ(gw1, gw2);
  }
}

TEST(GradCheck, SumIsExact) {
  Rng rng(1);
  EXPECT_LT(grad_check([](const Value& x) { return sum(x); }, random_param({3, 5}, rng)), 1e-10);
}

TEST(GradCheck, SoftmaxSumIsConserved) {
  Rng rng(2);
  auto x = random_param({4, 6}, rng);
  EXPECT_LT(grad_check([](const Value& z) { return sum(softmax_rows(z)); }, x), 1e-6);
  sum(softmax_rows(x)).backward();
  const auto gx = x.grad();
  EXPECT_LT(vftest::max_abs(gx.values()), 1e-12);
}

TEST(GradCheck, NonScalarOutputThrows) {
  Rng rng(3);
  EXPECT_THROW(grad_check([](const Value& x) { return x; }, random_param({2}, rng)),
               ContractError);
}

TEST(GradCheck, ParameterVariantRestoresData) {
  Rng rng(4);
  auto w = random_param({3, 2}, rng);
  const auto before = w.data();
  const auto x = Value::constant(random_tensor({5, 3}, rng));
  EXPECT_LT(grad_check_param([&] { return sum(softmax_rows(matmul(x, w))); }, w), 1e-6);
  EXPECT_EQ(w.data(), before);
}

TEST(GradSuite, EveryCasePassesOverTwentySeeds) {
  const auto report = pipeline::run_grad_suite(20);
  ASSERT_FALSE(report.cases.empty());
  for (const auto& c : report.cases) {
    EXPECT_TRUE(c.passed) << c.name << " max error " << c.max_error;
    EXPECT_GE(c.seeds, 20u) << c.name;
  }
}

TEST(Value, BackwardPopulatesEveryReachableParameter) {
  Rng rng(8);
  auto a = random_param({2, 3}, rng);
  auto b = random_param({3, 2}, rng);
  auto bias = random_param({2}, rng);
  auto unused = random_param({2}, rng);
  auto y = sum(relu(add_bias(matmul(a, b), bias)));
  y.backward();
  EXPECT_TRUE(a.has_grad());
  EXPECT_TRUE(b.has_grad());
  EXPECT_TRUE(bias.has_grad());
  EXPECT_FALSE(unused.has_grad());
  EXPECT_EQ(a.grad().shape(), a.data().shape());
  EXPECT_EQ(b.grad().shape(), b.data().shape());
}

TEST(Value, BackwardAccumulatesUntilZeroed) {
  auto x = param(Tensor::vector({1, 2}));
  sum(x).backward();
  sum(x).backward();
  EXPECT_EQ(x.grad(), Tensor::vector({2, 2}));
  x.zero_grad();
  sum(x).backward();
  EXPECT_EQ(x.grad(), Tensor::vector({1, 1}));
}

TEST(Value, BackwardNeedsScalarRoot) {
  auto x = param(Tensor::vector({1, 2}));
  EXPECT_THROW(scale(x, 2.0).backward(), ContractError);
}

TEST(Value, ConstantOpsAreDetached) {
  const auto y = matmul(Value::constant(Tensor::matrix({{1}})), Value::constant(Tensor::matrix({{2}})));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Value, SgdStepSkipsParamsWithoutGrad) {
  auto a = param(Tensor::vector({1, 1}));
  auto b = param(Tensor::vector({5, 5}));
  sum(scale(a, 3.0)).backward();
  std::vector<Value> params{a, b};
  sgd_step(params, 0.5);
  EXPECT_EQ(a.data(), Tensor::vector({-0.5, -0.5}));
  EXPECT_EQ(b.data(), Tensor::vector({5, 5}));
  zero_grads(params);
  EXPECT_EQ(a.grad(), Tensor::vector({0, 0}));
}

TEST(Value, EvaluationIsDeterministic) {
  auto run = [] {
    Rng rng(99);
    auto w = random_param({16, 8}, rng);
    const auto x = Value::constant(random_tensor({64, 16}, rng));
    auto y = sum(softmax_rows(matmul(x, w)));
    y.backward();
    return std::pair{y.item(), w.grad()};
  };
  const auto [y1, g1] = run();
  const auto [y2, g2] = run();
  EXPECT_EQ(std::bit_cast<std::uint64_t>(y1), std::bit_cast<std::uint64_t>(y2));
  EXPECT_EQ(g1, g2);
}

TEST(Ops, ShapesAreExplicit) {
  const auto a = Value::constant(Tensor(Shape{2, 3}));
  EXPECT_THROW(add(a, Value::constant(Tensor(Shape{3, 2}))), ShapeError);
  EXPECT_THROW(add_bias(a, Value::constant(Tensor(Shape{2}))), ShapeError);
  EXPECT_THROW(slice_cols(a, 2, 4), ShapeError);
  EXPECT_THROW(reshape(a, {4}), ShapeError);
}

TEST(Ops, ScatterThenGatherRoundTrips) {
  Rng rng(12);
  const auto x = Value::constant(random_tensor({3, 4}, rng));
  const std::vector<std::size_t> rows{5, 0, 2};
  const auto s = scatter_rows(x, rows, 7);
  EXPECT_EQ(gather_rows(s, rows).data(), x.data());
  for (std::size_t r : {1u, 3u, 4u, 6u}) {
    EXPECT_EQ(vftest::max_abs(s.data().row(r)), 0.0);
  }
}

TEST(Tensor, PairwiseSumIsAccurate) {
  std::vector<double> xs(1 << 20, 0.1);
  EXPECT_NEAR(pairwise_sum(xs), 0.1 * static_cast<double>(xs.size()), 1e-8);
  EXPECT_EQ(pairwise_sum({}), 0.0);
}

TEST(Vxf, RoundTripIsBitExact) {
  Rng rng(13);
  for (const Shape& shape : {Shape{}, Shape{0}, Shape{7}, Shape{3, 4}, Shape{2, 3, 4, 5}}) {
    auto t = random_tensor(shape, rng, -1e6, 1e6);
    if (t.size() >= 4) {
      t[0] = -0.0;
      t[1] = std::numeric_limits<double>::denorm_min();
      t[2] = std::numeric_limits<double>::infinity();
      t[3] = std::numeric_limits<double>::quiet_NaN();
    }
    std::stringstream buf;
    write_vxf(buf, t);
    const auto back = read_vxf(buf);
    ASSERT_EQ(back.shape(), t.shape());
    ASSERT_EQ(std::memcmp(back.data(), t.data(), t.size() * sizeof(double)), 0);
  }
}

TEST(Vxf, HeaderLayout) {
  std::stringstream buf;
  write_vxf(buf, Tensor::matrix({{1.5, -2.0}}));
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.size(), 4u + 4u + 2 * 8u + 2 * 8u);
  EXPECT_EQ(bytes.substr(0, 4), "VXF1");
  std::uint32_t rank = 0;
  std::memcpy(&rank, bytes.data() + 4, 4);
  EXPECT_EQ(rank, 2u);
  std::uint64_t d0 = 0, d1 = 0;
  std::memcpy(&d0, bytes.data() + 8, 8);
  std::memcpy(&d1, bytes.data() + 16, 8);
  EXPECT_EQ(d0, 1u);
  EXPECT_EQ(d1, 2u);
  double v = 0.0;
  std::memcpy(&v, bytes.data() + 24, 8);
  EXPECT_EQ(v, 1.5);
}

TEST(Vxf, MalformedInputThrows) {
  std::stringstream bad_magic("VXF2\0\0\0\0");
  EXPECT_THROW(read_vxf(bad_magic), ParseError);
  std::stringstream buf;
  write_vxf(buf, Tensor::matrix({{1, 2}, {3, 4}}));
  std::stringstream truncated(buf.str().substr(0, buf.str().size() - 3));
  EXPECT_THROW(read_vxf(truncated), ParseError);
  EXPECT_THROW(load_vxf("/nonexistent/dir/file.vxf"), IoError);
}
