#include "voxelfuse/numgrad/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "voxelfuse/error.hpp"

namespace voxelfuse::ng {
namespace {

double scalar_of(const Value& y) {
  if (!y.defined() || y.size() != 1) {
    throw ContractError("grad_check: function must return a scalar, got shape " +
                        (y.defined() ? to_string(y.shape()) : std::string("<undefined>")));
  }
  return y.item();
}

}  // namespace

double grad_check_param(const std::function<Value()>& f, Value param, double eps) {
  param.zero_grad();
  Value y = f();
  scalar_of(y);
  y.backward();
  const Tensor analytic = param.grad();

  double worst = 0.0;
  auto& data = param.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + eps;
    const double up = scalar_of(f());
    data[i] = orig - eps;
    const double down = scalar_of(f());
    data[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
    const double err = std::abs(a - numeric) / denom;
    if (std::isnan(err)) return err;
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check(const std::function<Value(const Value&)>& f, const Value& x, double eps) {
  Value leaf = Value::parameter(x.data());
  return grad_check_param([&] { return f(leaf); }, leaf, eps);
}

}  // namespace voxelfuse::ng
