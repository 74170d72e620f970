#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "voxelfuse/numgrad/tensor.hpp"

namespace voxelfuse::ng {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Reads `self.grad` and accumulates (+=) into the grads of `self.parents`
// that require gradients.
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Tensor data;
  Tensor grad;  // empty until materialized
  bool requires_grad = false;
  bool grad_ready = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;

  // Materializes a zero gradient of data's shape on first use.
  Tensor& ensure_grad();
};

// Handle to a node of the computation graph. Copies share the node.
//
// A single graph must be driven from one thread at a time. Backward
// accumulates into leaf grads; callers zero them between optimizer steps.
class Value {
 public:
  Value() = default;
  explicit Value(Tensor data, bool requires_grad = false);

  static Value constant(Tensor data) { return Value(std::move(data), false); }
  static Value parameter(Tensor data) { return Value(std::move(data), true); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& data() const { return node_->data; }
  // Mutable access for optimizer updates and finite-difference probes.
  Tensor& mutable_data() { return node_->data; }
  const Shape& shape() const { return node_->data.shape(); }
  std::size_t size() const { return node_->data.size(); }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad_ready; }
  // The accumulated gradient, or zeros of data's shape if none has arrived.
  Tensor grad() const;
  void zero_grad();

  // Seeds d(self)/d(self) = 1 on a scalar and runs reverse accumulation over
  // every reachable node.
  void backward();

  const NodePtr& node() const noexcept { return node_; }

 private:
  friend Value make_result(Tensor, std::vector<Value>, BackwardFn);
  friend Value stop_grad(const Value&);
  explicit Value(NodePtr node) : node_(std::move(node)) {}

  NodePtr node_;
};

// Builds an op result. The backward rule is kept only if some parent requires
// a gradient; otherwise the result is a detached constant.
Value make_result(Tensor data, std::vector<Value> parents, BackwardFn backward);

// Forward identity; backward contributes nothing to x.
Value stop_grad(const Value& x);

void zero_grads(std::span<Value> params);
void sgd_step(std::span<Value> params, double lr);

}  // namespace voxelfuse::ng
