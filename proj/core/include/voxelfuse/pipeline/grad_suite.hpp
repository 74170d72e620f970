#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace voxelfuse::pipeline {

struct GradCaseResult {
  std::string name;
  std::size_t seeds = 0;
  double max_error = 0.0;  // worst over seeds and inputs
  bool passed = false;
};

struct GradSuiteReport {
  std::vector<GradCaseResult> cases;
  double tolerance = 0.0;
  double seconds = 0.0;

  bool passed() const;
};

// Central-difference check of every differentiable op and of the composed
// lift -> fuse -> RoI pool -> interaction-loss graph. Each case reduces its
// output with a random weighting so no gradient is trivially zero. Inputs are
// kept at least 1e-3 away from ReLU, max, smooth-L1 and clamp kinks.
GradSuiteReport run_grad_suite(std::size_t seeds = 20, double tolerance = 1e-4,
                               double eps = 1e-5,
                               const std::function<void(const GradCaseResult&)>& on_case = {});

}  // namespace voxelfuse::pipeline
