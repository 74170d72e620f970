#include "voxelfuse/losses/losses.hpp"

#include <algorithm>
#include <cmath>

#include "voxelfuse/error.hpp"
#include "voxelfuse/numgrad/ops.hpp"

namespace voxelfuse::losses {
namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

bool clamped(double p) { return p < kProbClamp || p > 1.0 - kProbClamp; }

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double mean_or_zero(std::span<const double> xs) {
  return xs.empty() ? 0.0 : ng::pairwise_sum(xs) / static_cast<double>(xs.size());
}

ng::Value mean_or_zero(const ng::Value& x) {
  return x.size() == 0 ? ng::Value::constant(ng::Tensor::scalar(0.0)) : ng::mean(x);
}

}  // namespace

void LossWeights::validate() const {
  if (gamma_vfim < 0.0 || omega1 < 0.0 || omega2 < 0.0) {
    throw ConfigError("LossWeights: weights must be nonnegative");
  }
}

double focal_loss(double p, int y, const FocalParams& params) {
  const double pc = clamp_prob(p);
  const double pt = y == 1 ? pc : 1.0 - pc;
  const double at = y == 1 ? params.alpha : 1.0 - params.alpha;
  return -at * std::pow(1.0 - pt, params.gamma) * std::log(pt);
}

double smooth_l1(double d, double beta) {
  if (!(beta > 0.0)) throw ContractError("smooth_l1: beta must be positive");
  const double a = std::abs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

double binary_cross_entropy(double p, double t) {
  const double pc = clamp_prob(p);
  return -(t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc));
}

double iou_target(double iou) { return std::clamp(2.0 * iou - 0.5, 0.0, 1.0); }

double rpn_loss(std::span<const double> cls_terms, std::span<const double> reg_terms,
                const LossWeights& weights) {
  return weights.omega1 * mean_or_zero(cls_terms) + weights.omega2 * mean_or_zero(reg_terms);
}

double rcnn_loss(std::span<const double> iou_terms, std::span<const double> refine_terms) {
  return mean_or_zero(iou_terms) + mean_or_zero(refine_terms);
}

double total_loss(double rpn, double rcnn, double vfim, double gamma) {
  return rpn + rcnn + gamma * vfim;
}

ng::Value focal_terms(const ng::Value& logits, std::span<const int> labels,
                      const FocalParams& params) {
  const std::size_t n = logits.size();
  if (labels.size() != n) {
    throw ShapeError("focal_terms: " + std::to_string(labels.size()) + " labels for " +
                     ng::to_string(logits.shape()));
  }
  ng::Tensor out(ng::Shape{n});
  std::vector<double> dz(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = sigmoid(logits.data()[i]);
    const int y = labels[i];
    out[i] = focal_loss(p, y, params);
    if (clamped(p)) continue;
    const double pt = y == 1 ? p : 1.0 - p;
    const double at = y == 1 ? params.alpha : 1.0 - params.alpha;
    const double s = y == 1 ? 1.0 : -1.0;
    const double q = 1.0 - pt;
    dz[i] = s * at * (params.gamma * pt * std::pow(q, params.gamma) * std::log(pt) -
                      std::pow(q, params.gamma + 1.0));
  }
  return ng::make_result(std::move(out), {logits}, [dz = std::move(dz)](ng::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < dz.size(); ++i) g[i] += self.grad[i] * dz[i];
  });
}

ng::Value smooth_l1(const ng::Value& residual, double beta) {
  if (!(beta > 0.0)) throw ContractError("smooth_l1: beta must be positive");
  ng::Tensor out(residual.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = smooth_l1(residual.data()[i], beta);
  return ng::make_result(std::move(out), {residual}, [beta](ng::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = self.parents[0]->data[i];
      const double slope = std::abs(d) < beta ? d / beta : (d > 0.0 ? 1.0 : -1.0);
      g[i] += self.grad[i] * slope;
    }
  });
}

ng::Value bce_terms(const ng::Value& logits, std::span<const double> targets) {
  const std::size_t n = logits.size();
  if (targets.size() != n) {
    throw ShapeError("bce_terms: " + std::to_string(targets.size()) + " targets for " +
                     ng::to_string(logits.shape()));
  }
  ng::Tensor out(ng::Shape{n});
  std::vector<double> dz(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = sigmoid(logits.data()[i]);
    out[i] = binary_cross_entropy(p, targets[i]);
    if (!clamped(p)) dz[i] = p - targets[i];
  }
  return ng::make_result(std::move(out), {logits}, [dz = std::move(dz)](ng::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < dz.size(); ++i) g[i] += self.grad[i] * dz[i];
  });
}

BoxCode encode_box(const geom::Box3D& ref, const geom::Box3D& target) {
  const auto& rc = ref.center();
  const auto& rs = ref.size();
  const auto& tc = target.center();
  const auto& ts = target.size();
  const double diag = std::hypot(rs[0], rs[1]);
  return {(tc[0] - rc[0]) / diag,        (tc[1] - rc[1]) / diag,
          (tc[2] - rc[2]) / rs[2],       std::log(ts[0] / rs[0]),
          std::log(ts[1] / rs[1]),       std::log(ts[2] / rs[2]),
          geom::normalize_yaw(target.yaw() - ref.yaw())};
}

geom::Box3D decode_box(const geom::Box3D& ref, const BoxCode& code) {
  const auto& rc = ref.center();
  const auto& rs = ref.size();
  const double diag = std::hypot(rs[0], rs[1]);
  return geom::Box3D({rc[0] + code[0] * diag, rc[1] + code[1] * diag, rc[2] + code[2] * rs[2]},
                     {rs[0] * std::exp(code[3]), rs[1] * std::exp(code[4]),
                      rs[2] * std::exp(code[5])},
                     ref.yaw() + code[6]);
}

ng::Value box_residual(const ng::Value& pred, std::span<const BoxCode> targets) {
  const auto& p = pred.data();
  if (p.rank() != 2 || p.cols() != 7 || p.rows() != targets.size()) {
    throw ShapeError("box_residual: predictions " + ng::to_string(p.shape()) + " for " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = targets.size();
  ng::Tensor out(p.shape());
  std::vector<double> yaw_slope(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 6; ++j) out[i * 7 + j] = p[i * 7 + j] - targets[i][j];
    const double dyaw = p[i * 7 + 6] - targets[i][6];
    out[i * 7 + 6] = std::sin(dyaw);
    yaw_slope[i] = std::cos(dyaw);
  }
  return ng::make_result(std::move(out), {pred}, [yaw_slope = std::move(yaw_slope)](ng::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < yaw_slope.size(); ++i) {
      for (std::size_t j = 0; j < 6; ++j) g[i * 7 + j] += self.grad[i * 7 + j];
      g[i * 7 + 6] += self.grad[i * 7 + 6] * yaw_slope[i];
    }
  });
}

ng::Value rpn_loss(const ng::Value& cls_terms, const ng::Value& reg_terms,
                   const LossWeights& weights) {
  return ng::add(ng::scale(mean_or_zero(cls_terms), weights.omega1),
                 ng::scale(mean_or_zero(reg_terms), weights.omega2));
}

ng::Value rcnn_loss(const ng::Value& iou_terms, const ng::Value& refine_terms) {
  return ng::add(mean_or_zero(iou_terms), mean_or_zero(refine_terms));
}

ng::Value total_loss(const ng::Value& rpn, const ng::Value& rcnn, const ng::Value& vfim,
                     double gamma) {
  return ng::add(ng::add(rpn, rcnn), ng::scale(vfim, gamma));
}

}  // namespace voxelfuse::losses
