#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "voxelfuse/numgrad/ops.hpp"

namespace voxelfuse::ng {

using Rng = std::mt19937_64;

// y = x · weight (+ bias). weight is [in × out], bias is [out].
struct LinearMap {
  Value weight;
  std::optional<Value> bias;

  // Glorot-uniform weights in ±sqrt(6 / (in + out)); bias starts at zero.
  static LinearMap init(std::size_t in_dim, std::size_t out_dim, bool with_bias, Rng& rng);
  static LinearMap from(Tensor weight, std::optional<Tensor> bias = std::nullopt);

  std::size_t in_dim() const { return weight.data().rows(); }
  std::size_t out_dim() const { return weight.data().cols(); }

  Value operator()(const Value& x) const;
  void collect(std::vector<Value>& params) const;
};

// Uniform samples in [lo, hi), row-major.
Tensor uniform(Shape shape, double lo, double hi, Rng& rng);

}  // namespace voxelfuse::ng
