#pragma once

// Hand-rolled generators shared by the unit tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "voxelfuse/geom/box3d.hpp"
#include "voxelfuse/numgrad/linear.hpp"
#include "voxelfuse/numgrad/tensor.hpp"
#include "voxelfuse/numgrad/value.hpp"

namespace vftest {

using voxelfuse::ng::Rng;
using voxelfuse::ng::Shape;
using voxelfuse::ng::Tensor;
using voxelfuse::ng::Value;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

inline Value random_param(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Value::parameter(random_tensor(std::move(shape), rng, lo, hi));
}

inline voxelfuse::geom::Box3D random_box(Rng& rng, double spread = 3.0) {
  return voxelfuse::geom::Box3D(
      {uniform(rng, -spread, spread), uniform(rng, -spread, spread), uniform(rng, -1.0, 1.0)},
      {uniform(rng, 0.5, 4.0), uniform(rng, 0.5, 2.5), uniform(rng, 0.5, 2.0)},
      uniform(rng, -std::numbers::pi, std::numbers::pi));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() ? max_abs_diff(a.values(), b.values()) : INFINITY;
}

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace vftest
