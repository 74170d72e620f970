#pragma once

#include <array>
#include <span>
#include <vector>

#include "voxelfuse/geom/box3d.hpp"
#include "voxelfuse/numgrad/value.hpp"

namespace voxelfuse::losses {

struct LossWeights {
  double gamma_vfim = 0.1;
  double omega1 = 1.0;
  double omega2 = 2.0;

  void validate() const;
};

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kRpnBeta = 1.0 / 9.0;
inline constexpr double kRefineBeta = 1.0;

// -α_t (1 - p_t)^γ log(p_t); p clamped into [1e-7, 1 - 1e-7].
double focal_loss(double p, int y, const FocalParams& params = {});
// 0.5 d²/β for |d| < β, else |d| - 0.5β.
double smooth_l1(double d, double beta);
// Binary cross-entropy of probability p against soft target t (clamped p).
double binary_cross_entropy(double p, double t);
// IoU-guided confidence target: clamp(2·IoU - 0.5, 0, 1).
double iou_target(double iou);

// ω1·mean(cls_terms) + ω2·mean(reg_terms). Empty lists contribute 0.
double rpn_loss(std::span<const double> cls_terms, std::span<const double> reg_terms,
                const LossWeights& weights);
// mean(iou_terms) + mean(refine_terms). Empty lists contribute 0.
double rcnn_loss(std::span<const double> iou_terms, std::span<const double> refine_terms);
double total_loss(double rpn, double rcnn, double vfim, double gamma);

// ---- differentiable counterparts ----

// Focal terms of sigmoid(logits) against 0/1 labels; logits and result are [n].
ng::Value focal_terms(const ng::Value& logits, std::span<const int> labels,
                      const FocalParams& params = {});
// Elementwise smooth-L1.
ng::Value smooth_l1(const ng::Value& residual, double beta);
// BCE of sigmoid(logits) against soft targets; [n] -> [n].
ng::Value bce_terms(const ng::Value& logits, std::span<const double> targets);

// 7-DoF box residual against a reference box (anchor or proposal):
// (Δx, Δy) / footprint diagonal, Δz / height, log size ratios, Δyaw.
using BoxCode = std::array<double, 7>;
BoxCode encode_box(const geom::Box3D& reference, const geom::Box3D& target);
geom::Box3D decode_box(const geom::Box3D& reference, const BoxCode& code);
// pred [n×7] minus target codes; the yaw column becomes sin(pred - target).
ng::Value box_residual(const ng::Value& pred, std::span<const BoxCode> targets);

// Means with the empty-list-is-zero rule, scaled by ω.
ng::Value rpn_loss(const ng::Value& cls_terms, const ng::Value& reg_terms,
                   const LossWeights& weights);
ng::Value rcnn_loss(const ng::Value& iou_terms, const ng::Value& refine_terms);
ng::Value total_loss(const ng::Value& rpn, const ng::Value& rcnn, const ng::Value& vfim,
                     double gamma);

}  // namespace voxelfuse::losses
