#include "voxelfuse/numgrad/linear.hpp"

#include <cmath>

#include "voxelfuse/error.hpp"

namespace voxelfuse::ng {

Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

LinearMap LinearMap::init(std::size_t in_dim, std::size_t out_dim, bool with_bias,
                          Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  LinearMap m;
  m.weight = Value::parameter(uniform(Shape{in_dim, out_dim}, -limit, limit, rng));
  if (with_bias) m.bias = Value::parameter(Tensor(Shape{out_dim}, 0.0));
  return m;
}

LinearMap LinearMap::from(Tensor weight, std::optional<Tensor> bias) {
  if (weight.rank() != 2) {
    throw ShapeError("LinearMap weight must be a matrix, got " + to_string(weight.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->size() != weight.cols())) {
    throw ShapeError("LinearMap bias " + to_string(bias->shape()) +
                     " does not match weight " + to_string(weight.shape()));
  }
  LinearMap m;
  m.weight = Value::parameter(std::move(weight));
  if (bias) m.bias = Value::parameter(std::move(*bias));
  return m;
}

Value LinearMap::operator()(const Value& x) const {
  Value y = matmul(x, weight);
  return bias ? add_bias(y, *bias) : y;
}

void LinearMap::collect(std::vector<Value>& params) const {
  params.push_back(weight);
  if (bias) params.push_back(*bias);
}

}  // namespace voxelfuse::ng
