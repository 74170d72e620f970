#pragma once

#include <functional>

#include "voxelfuse/numgrad/value.hpp"

namespace voxelfuse::ng {

// Compares reverse-mode gradients with central differences.
//
// Returns max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
// f must return a single-element Value; anything else throws ContractError.
double grad_check(const std::function<Value(const Value&)>& f, const Value& x,
                  double eps = 1e-5);

// Same check for a parameter captured inside `f`: its data is perturbed in
// place and restored afterwards. Other grads touched by `f` are left dirty.
double grad_check_param(const std::function<Value()>& f, Value param, double eps = 1e-5);

}  // namespace voxelfuse::ng
