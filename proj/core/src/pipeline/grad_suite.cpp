#include "voxelfuse/pipeline/grad_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "voxelfuse/detector/detector.hpp"
#include "voxelfuse/error.hpp"
#include "voxelfuse/ivlm/ivlm.hpp"
#include "voxelfuse/losses/losses.hpp"
#include "voxelfuse/numgrad/grad_check.hpp"
#include "voxelfuse/numgrad/linear.hpp"
#include "voxelfuse/qfm/qfm.hpp"
#include "voxelfuse/vfim/vfim.hpp"

namespace voxelfuse::pipeline {
namespace {

using ng::Rng;
using ng::Shape;
using ng::Tensor;
using ng::Value;

constexpr double kMargin = 1e-3;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

Tensor rand_t(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return ng::uniform(std::move(s), lo, hi, rng);
}

Value param(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Value::parameter(rand_t(std::move(s), rng, lo, hi));
}

// Redraws entries closer than kMargin to any kink.
Value param_away(Shape s, std::initializer_list<double> kinks, Rng& rng, double lo, double hi) {
  Tensor t = rand_t(std::move(s), rng, lo, hi);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : t.values()) {
    while (std::any_of(kinks.begin(), kinks.end(),
                       [&](double k) { return std::abs(x - k) < kMargin; })) {
      x = u(rng);
    }
  }
  return Value::parameter(std::move(t));
}

// Shuffled lattice in [-1, 1] with spacing >= 4e-3, no entry within
// kMargin of zero. Max-type ops then have no near-ties.
Value param_distinct(Shape s, Rng& rng) {
  Tensor t(s);
  const std::size_t n = t.size();
  std::vector<double> vals(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = -1.0 + 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    vals[i] = std::abs(x) < 2.0 * kMargin ? x + std::copysign(2.0 * kMargin, x) : x;
  }
  std::shuffle(vals.begin(), vals.end(), rng);
  for (std::size_t i = 0; i < n; ++i) t[i] = vals[i];
  return Value::parameter(std::move(t));
}

Value wsum(const Value& y, const Tensor& w) {
  return ng::sum(ng::mul(y, Value::constant(w)));
}

double check(const std::function<Value()>& f, const Value& p, double eps) {
  return ng::grad_check_param(f, p, eps);
}

// Analytic gradient from `analytic`, central differences of `numeric`. Used
// where stop-gradient branches must be frozen at the base point for the
// numeric side.
double check_frozen(const std::function<Value()>& analytic, const std::function<double()>& numeric,
                    Value p, double eps) {
  p.zero_grad();
  Value y = analytic();
  y.backward();
  const Tensor a = p.grad();
  if (std::abs(numeric() - y.item()) > 1e-12 * std::max(1.0, std::abs(y.item()))) {
    throw ContractError("check_frozen: frozen surrogate disagrees at the base point");
  }
  double worst = 0.0;
  auto& data = p.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + eps;
    const double up = numeric();
    data[i] = orig - eps;
    const double down = numeric();
    data[i] = orig;
    const double n = (up - down) / (2.0 * eps);
    const double err = std::abs(a[i] - n) / std::max({1.0, std::abs(a[i]), std::abs(n)});
    if (std::isnan(err)) return err;
    worst = std::max(worst, err);
  }
  return worst;
}

template <class... F>
double worst(F... errs) {
  return std::max({errs...});
}

// VFIM loss with the stop-gradient targets replaced by constants.
double frozen_vfim(const Value& lidar, const Value& image, const vfim::InteractionHeads& heads,
                   const Tensor& target_p, const Tensor& target_i) {
  const auto a = vfim::neg_cosine_rows(heads.predictor(heads.encoder(lidar)),
                                       Value::constant(target_i));
  const auto b = vfim::neg_cosine_rows(heads.predictor(heads.encoder(image)),
                                       Value::constant(target_p));
  return ng::mean(ng::add(ng::scale(a, 0.5), ng::scale(b, 0.5))).item();
}

double check_vfim(const std::function<std::pair<Value, Value>()>& rois,
                  const vfim::InteractionHeads& heads, const std::vector<Value>& params,
                  double eps) {
  const auto [p0, i0] = rois();
  const Tensor tp = heads.encoder(p0).data();
  const Tensor ti = heads.encoder(i0).data();
  auto analytic = [&] {
    const auto [p, i] = rois();
    return vfim::vfim_loss(p, i, heads);
  };
  auto numeric = [&] {
    const auto [p, i] = rois();
    return frozen_vfim(p, i, heads, tp, ti);
  };
  double w = 0.0;
  for (const auto& p : params) w = std::max(w, check_frozen(analytic, numeric, p, eps));
  return w;
}

// Random biases keep tiny ReLU heads from emitting all-zero rows.
vfim::InteractionHeads random_heads(std::size_t in_dim, std::size_t width, Rng& rng) {
  auto heads = vfim::InteractionHeads::init(in_dim, width, rng);
  for (auto* mlp : {&heads.encoder, &heads.predictor})
    for (auto& layer : mlp->layers) layer.bias->mutable_data() = rand_t({layer.out_dim()}, rng);
  return heads;
}

std::shared_ptr<ng::SparseRowMap> random_map(std::size_t in_rows, std::size_t out_rows, Rng& rng) {
  auto m = std::make_shared<ng::SparseRowMap>();
  m->in_rows = in_rows;
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  for (std::size_t r = 0; r < out_rows; ++r) {
    const std::size_t k = pick(rng, 0, 3);
    for (std::size_t j = 0; j < k; ++j) m->push(pick(rng, 0, in_rows - 1), w(rng));
    m->finish_row();
  }
  return m;
}

// Small camera/grid pair where every voxel center projects inside the
// frustum lattice.
struct LiftFixture {
  geom::Calibration calib = geom::Calibration::pinhole(4.0, 3.0, 3.0);
  geom::GridSpec grid{{-1.0, -1.0, 2.0}, {0.5, 0.5, 0.5}, {4, 4, 4}};
  ivlm::FrustumLayout layout{6, 6, 1, {1.0, 5.0, 4}};
  std::size_t pixels() const { return layout.width * layout.height; }
};

std::vector<geom::Box3D> random_boxes(const geom::GridSpec& g, std::size_t n, Rng& rng) {
  std::vector<geom::Box3D> out;
  const auto hi = g.extent_max();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < n; ++k) {
    geom::Vec3 c, s;
    for (int a = 0; a < 3; ++a) {
      const double ext = hi[a] - g.origin[a];
      c[a] = g.origin[a] + ext * (0.35 + 0.3 * u(rng));
      s[a] = ext * (0.4 + 0.3 * u(rng));
    }
    out.emplace_back(c, s, (u(rng) - 0.5) * 3.0);
  }
  return out;
}

qfm::SparseVoxelSet random_voxels(const geom::GridSpec& g, std::size_t m, std::size_t c, Rng& rng) {
  std::vector<std::size_t> flat(g.voxel_count());
  std::iota(flat.begin(), flat.end(), std::size_t{0});
  std::shuffle(flat.begin(), flat.end(), rng);
  flat.resize(m);
  std::sort(flat.begin(), flat.end());
  qfm::SparseVoxelSet s;
  s.grid = g;
  for (auto f : flat) s.indices.push_back(g.unflatten(f));
  s.features = rand_t({m, c}, rng);
  return s;
}

struct Case {
  const char* name;
  std::function<double(Rng&, double)> run;
};

std::vector<Case> cases() {
  std::vector<Case> cs;
  cs.push_back({"matmul", [](Rng& rng, double eps) {
    const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
    auto a = param({m, k}, rng), b = param({k, n}, rng);
    const auto w = rand_t({m, n}, rng);
    auto f = [&] { return wsum(ng::matmul(a, b), w); };
    return worst(check(f, a, eps), check(f, b, eps));
  }});
  cs.push_back({"transpose", [](Rng& rng, double eps) {
    auto a = param({pick(rng, 1, 4), pick(rng, 1, 4)}, rng);
    const auto w = rand_t({a.shape()[1], a.shape()[0]}, rng);
    return check([&] { return wsum(ng::transpose(a), w); }, a, eps);
  }});
  cs.push_back({"add_sub_mul_scale", [](Rng& rng, double eps) {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
    auto a = param(s, rng), b = param(s, rng);
    const auto w = rand_t(s, rng);
    auto f = [&] {
      return wsum(ng::scale(ng::add(ng::mul(a, b), ng::sub(a, ng::scale(b, 0.3))), 1.7), w);
    };
    return worst(check(f, a, eps), check(f, b, eps));
  }});
  cs.push_back({"add_bias", [](Rng& rng, double eps) {
    const std::size_t m = pick(rng, 1, 4), n = pick(rng, 1, 4);
    auto x = param({m, n}, rng), b = param({n}, rng);
    const auto w = rand_t({m, n}, rng);
    auto f = [&] { return wsum(ng::add_bias(x, b), w); };
    return worst(check(f, x, eps), check(f, b, eps));
  }});
  cs.push_back({"relu", [](Rng& rng, double eps) {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 5)};
    auto x = param_away(s, {0.0}, rng, -1.0, 1.0);
    const auto w = rand_t(s, rng);
    return check([&] { return wsum(ng::relu(x), w); }, x, eps);
  }});
  cs.push_back({"sin", [](Rng& rng, double eps) {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
    auto x = param(s, rng, -3.0, 3.0);
    const auto w = rand_t(s, rng);
    return check([&] { return wsum(ng::sin(x), w); }, x, eps);
  }});
  cs.push_back({"softmax_rows", [](Rng& rng, double eps) {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 6)};
    auto x = param(s, rng, -2.0, 2.0);
    const auto w = rand_t(s, rng);
    return check([&] { return wsum(ng::softmax_rows(x), w); }, x, eps);
  }});
  cs.push_back({"outer", [](Rng& rng, double eps) {
    const std::size_t c = pick(rng, 1, 5), r = pick(rng, 1, 5);
    auto u = param({c}, rng), v = param({r}, rng);
    const auto w = rand_t({r, c}, rng);
    auto f = [&] { return wsum(ng::outer(u, v), w); };
    return worst(check(f, u, eps), check(f, v, eps));
  }});
  cs.push_back({"l2_normalize", [](Rng& rng, double eps) {
    auto v = param({pick(rng, 2, 6)}, rng, 0.2, 1.0);
    auto m = param({pick(rng, 1, 4), pick(rng, 2, 5)}, rng, 0.2, 1.0);
    const auto wv = rand_t(v.shape(), rng), wm = rand_t(m.shape(), rng);
    return worst(check([&] { return wsum(ng::l2_normalize(v), wv); }, v, eps),
                 check([&] { return wsum(ng::l2_normalize(m), wm); }, m, eps));
  }});
  cs.push_back({"sum_mean_sum_rows", [](Rng& rng, double eps) {
    const std::size_t m = pick(rng, 1, 4), n = pick(rng, 1, 4);
    auto x = param({m, n}, rng);
    const auto w = rand_t({m}, rng);
    auto f = [&] {
      return ng::add(ng::add(ng::sum(x), ng::scale(ng::mean(x), 2.0)), wsum(ng::sum_rows(x), w));
    };
    return check(f, x, eps);
  }});
  cs.push_back({"concat_slice_reshape", [](Rng& rng, double eps) {
    const std::size_t m = pick(rng, 2, 4);
    auto a = param({m, 2}, rng), b = param({m, 3}, rng);
    const auto w = rand_t({3, m}, rng);
    auto f = [&] {
      return wsum(ng::reshape(ng::slice_cols(ng::concat_cols({a, b}), 1, 4), {3, m}), w);
    };
    return worst(check(f, a, eps), check(f, b, eps));
  }});
  cs.push_back({"gather_scatter_apply_rows", [](Rng& rng, double eps) {
    const std::size_t in = pick(rng, 3, 6), c = pick(rng, 1, 3);
    auto x = param({in, c}, rng);
    std::vector<std::size_t> g{in - 1, 0, in - 1, 1};
    std::vector<std::size_t> targets(in);
    std::iota(targets.begin(), targets.end(), std::size_t{0});
    std::shuffle(targets.begin(), targets.end(), rng);
    for (auto& t : targets) t += 2;
    const auto map = random_map(in, pick(rng, 2, 5), rng);
    const auto wg = rand_t({g.size(), c}, rng);
    const auto ws = rand_t({in + 2, c}, rng);
    const auto wa = rand_t({map->out_rows(), c}, rng);
    auto f = [&] {
      return ng::add(ng::add(wsum(ng::gather_rows(x, g), wg),
                             wsum(ng::scatter_rows(x, targets, in + 2), ws)),
                     wsum(ng::apply_rows(map, x), wa));
    };
    return check(f, x, eps);
  }});
  cs.push_back({"linear_map", [](Rng& rng, double eps) {
    const std::size_t in = pick(rng, 1, 4), out = pick(rng, 1, 4), m = pick(rng, 1, 4);
    auto lin = ng::LinearMap::init(in, out, true, rng);
    lin.bias->mutable_data() = rand_t({out}, rng);
    auto x = param({m, in}, rng);
    const auto w = rand_t({m, out}, rng);
    auto f = [&] { return wsum(lin(x), w); };
    return worst(check(f, x, eps), check(f, lin.weight, eps), check(f, *lin.bias, eps));
  }});
  cs.push_back({"max_pool_rows", [](Rng& rng, double eps) {
    const geom::Index3 dims{pick(rng, 2, 5), pick(rng, 2, 4), pick(rng, 2, 4)};
    const std::size_t lambda = pick(rng, 2, 3), c = 2;
    auto x = param_distinct({dims[0] * dims[1] * dims[2], c}, rng);
    const auto pd = qfm::pooled_dims(dims, lambda);
    const auto w = rand_t({pd[0] * pd[1] * pd[2], c}, rng);
    return check([&] { return wsum(qfm::max_pool_rows(x, dims, lambda), w); }, x, eps);
  }});
  cs.push_back({"bev_collapse", [](Rng& rng, double eps) {
    const geom::Index3 dims{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 2, 4)};
    auto x = param_distinct({dims[0] * dims[1] * dims[2], 2}, rng);
    const auto w = rand_t({dims[0] * dims[1], 2}, rng);
    return check([&] { return wsum(detector::bev_collapse(x, dims), w); }, x, eps);
  }});
  cs.push_back({"bev_collapse_sparse", [](Rng& rng, double eps) {
    const geom::GridSpec g{{0, 0, 0}, {1, 1, 1}, {3, 3, 3}};
    const auto vox = random_voxels(g, pick(rng, 4, 20), 2, rng);
    auto x = param_distinct({vox.size(), 2}, rng);
    const auto w = rand_t({9, 2}, rng);
    return check(
        [&] { return wsum(detector::bev_collapse_sparse(x, vox.indices, g.dims), w); }, x, eps);
  }});
  cs.push_back({"focal_terms", [](Rng& rng, double eps) {
    const std::size_t n = pick(rng, 1, 8);
    auto z = param({n}, rng, -3.0, 3.0);
    std::vector<int> y(n);
    for (auto& l : y) l = static_cast<int>(rng() % 2);
    const losses::FocalParams fp{0.25, (rng() % 2) ? 2.0 : 0.0};
    const auto w = rand_t({n}, rng);
    return check([&] { return wsum(losses::focal_terms(z, y, fp), w); }, z, eps);
  }});
  cs.push_back({"smooth_l1", [](Rng& rng, double eps) {
    const Shape s{pick(rng, 1, 4), 7};
    auto a = param_away(s, {-losses::kRpnBeta, losses::kRpnBeta}, rng, -0.5, 0.5);
    auto b = param_away(s, {-1.0, 1.0}, rng, -3.0, 3.0);
    const auto w = rand_t(s, rng);
    return worst(
        check([&] { return wsum(losses::smooth_l1(a, losses::kRpnBeta), w); }, a, eps),
        check([&] { return wsum(losses::smooth_l1(b, losses::kRefineBeta), w); }, b, eps));
  }});
  cs.push_back({"bce_terms", [](Rng& rng, double eps) {
    const std::size_t n = pick(rng, 1, 8);
    auto z = param({n}, rng, -3.0, 3.0);
    const auto t = rand_t({n}, rng, 0.0, 1.0);
    const auto w = rand_t({n}, rng);
    return check([&] { return wsum(losses::bce_terms(z, t.values()), w); }, z, eps);
  }});
  cs.push_back({"box_residual", [](Rng& rng, double eps) {
    const std::size_t n = pick(rng, 1, 4);
    auto p = param({n, 7}, rng, -2.0, 2.0);
    std::vector<losses::BoxCode> t(n);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (auto& code : t)
      for (auto& v : code) v = u(rng);
    const auto w = rand_t({n, 7}, rng);
    return check([&] { return wsum(losses::box_residual(p, t), w); }, p, eps);
  }});
  cs.push_back({"build_frustum", [](Rng& rng, double eps) {
    const std::size_t px = pick(rng, 1, 6), c = pick(rng, 1, 3), r = pick(rng, 2, 5);
    auto f = param({px, c}, rng);
    Tensor d(Shape{px, r}, 0.0);
    for (std::size_t i = 0; i < px; ++i) {
      if (rng() % 4 != 0) d[i * r + rng() % r] = 1.0;
    }
    const auto w = rand_t({px * r, c}, rng);
    return check([&] { return wsum(ivlm::build_frustum(f, d), w); }, f, eps);
  }});
  cs.push_back({"lift", [](Rng& rng, double eps) {
    const LiftFixture fx;
    const auto plan = ivlm::plan_lift(fx.calib, fx.grid, fx.layout);
    const std::size_t c = pick(rng, 1, 3);
    auto g = param({fx.pixels() * fx.layout.bins.bins, c}, rng);
    const auto w = rand_t({fx.grid.voxel_count(), c}, rng);
    return check([&] { return wsum(ivlm::lift(g, plan), w); }, g, eps);
  }});
  cs.push_back({"fuse", [](Rng& rng, double eps) {
    const std::size_t m = pick(rng, 1, 5), l = pick(rng, 1, 6), c = 3;
    qfm::AttentionConfig cfg{pick(rng, 1, 3), 4, 4, 2};
    auto params = qfm::QfmParams::init(c, cfg, rng);
    params.wo.bias->mutable_data() = rand_t({c}, rng);
    auto fp = param({m, c}, rng), fi = param({l, c}, rng);
    const auto w = rand_t({m, c}, rng);
    auto f = [&] { return wsum(qfm::fuse(fp, fi, params), w); };
    double e = worst(check(f, fp, eps), check(f, fi, eps));
    for (auto& p : params.parameters()) e = std::max(e, check(f, p, eps));
    return e;
  }});
  cs.push_back({"concat_restore", [](Rng& rng, double eps) {
    const geom::GridSpec g{{0, 0, 0}, {1, 1, 1}, {2, 3, 2}};
    auto vox = random_voxels(g, pick(rng, 1, 8), 2, rng);
    auto am = param({vox.size(), 2}, rng), fp = param({vox.size(), 2}, rng);
    const auto w = rand_t({g.voxel_count(), 4}, rng);
    auto f = [&] { return wsum(qfm::concat_restore(am, fp, vox), w); };
    return worst(check(f, am, eps), check(f, fp, eps));
  }});
  cs.push_back({"roi_pool", [](Rng& rng, double eps) {
    const geom::GridSpec g{{0, 0, 0}, {0.5, 0.5, 0.5}, {4, 4, 3}};
    const auto boxes = random_boxes(g, pick(rng, 1, 3), rng);
    const std::size_t pool = pick(rng, 1, 3), c = 2;
    const auto plan = vfim::roi_pool_plan(g, boxes, pool);
    auto x = param({g.voxel_count(), c}, rng);
    const auto w = rand_t({boxes.size(), pool * pool * pool * c}, rng);
    return check([&] { return wsum(vfim::roi_pool(x, plan, boxes.size()), w); }, x, eps);
  }});
  cs.push_back({"neg_cosine_rows", [](Rng& rng, double eps) {
    const Shape s{pick(rng, 1, 4), pick(rng, 2, 5)};
    auto p = param(s, rng, 0.1, 1.0), e = param(s, rng, -1.0, 1.0);
    for (auto& v : e.mutable_data().values()) v += std::copysign(0.2, v);
    const auto w = rand_t({s[0]}, rng);
    auto f = [&] { return wsum(vfim::neg_cosine_rows(p, e), w); };
    return worst(check(f, p, eps), check(f, e, eps));
  }});
  cs.push_back({"vfim_loss", [](Rng& rng, double eps) {
    const std::size_t k = pick(rng, 1, 4), d = pick(rng, 3, 6);
    auto heads = random_heads(d, 5, rng);
    auto lp = param({k, d}, rng), li = param({k, d}, rng);
    std::vector<Value> ps{lp, li};
    for (const auto& p : heads.parameters()) ps.push_back(p);
    return check_vfim([&] { return std::pair{lp, li}; }, heads, ps, eps);
  }});
  cs.push_back({"composed_lift_fuse_vfim", [](Rng& rng, double eps) {
    const LiftFixture fx;
    const std::size_t c = 3, pool = 2;
    const auto plan = ivlm::plan_lift(fx.calib, fx.grid, fx.layout);
    const std::size_t r = fx.layout.bins.bins;
    const Tensor depth = rand_t({fx.pixels(), r}, rng, 0.5, 1.0);
    auto features = param({fx.pixels(), c}, rng);
    auto vox = random_voxels(fx.grid, 24, c, rng);
    auto fp = Value::parameter(vox.features);
    qfm::AttentionConfig acfg{2, 4, 4, 2};
    auto qp = qfm::QfmParams::init(c, acfg, rng);
    qp.wo.bias->mutable_data() = rand_t({c}, rng);
    const auto boxes = random_boxes(fx.grid, 3, rng);
    const auto roi = vfim::roi_pool_plan(fx.grid, boxes, pool);
    auto heads = random_heads(pool * pool * pool * c, 6, rng);

    auto rois = [&] {
      const Value image = ivlm::lift(ivlm::build_frustum(features, depth), plan);
      const Value pooled = qfm::max_pool_rows(image, fx.grid.dims, acfg.lambda);
      const Value fused = qfm::concat_restore(qfm::fuse(fp, pooled, qp), fp, vox);
      return std::pair{vfim::roi_pool(ng::slice_cols(fused, c, 2 * c), roi, boxes.size()),
                       vfim::roi_pool(image, roi, boxes.size())};
    };
    std::vector<Value> ps{features, fp, qp.wq[0].weight, qp.wk[1].weight, qp.wv[0].weight,
                          qp.wo.weight, *qp.wo.bias};
    for (const auto& p : heads.parameters()) ps.push_back(p);
    return check_vfim(rois, heads, ps, eps);
  }});
  return cs;
}

}  // namespace

bool GradSuiteReport::passed() const {
  return !cases.empty() &&
         std::all_of(cases.begin(), cases.end(), [](const GradCaseResult& c) { return c.passed; });
}

GradSuiteReport run_grad_suite(std::size_t seeds, double tolerance, double eps,
                               const std::function<void(const GradCaseResult&)>& on_case) {
  const auto start = std::chrono::steady_clock::now();
  GradSuiteReport report;
  report.tolerance = tolerance;
  std::uint64_t case_index = 0;
  for (const auto& c : cases()) {
    GradCaseResult r{c.name, seeds, 0.0, true};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(case_index * 1000003ULL + s);
      const double e = c.run(rng, eps);
      r.max_error = std::isnan(e) ? e : std::max(r.max_error, e);
      if (!(e < tolerance)) r.passed = false;
    }
    ++case_index;
    if (on_case) on_case(r);
    report.cases.push_back(std::move(r));
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace voxelfuse::pipeline
