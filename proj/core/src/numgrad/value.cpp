#include "voxelfuse/numgrad/value.hpp"

#include <unordered_set>

#include "voxelfuse/error.hpp"

namespace voxelfuse::ng {

Tensor& Node::ensure_grad() {
  if (!grad_ready) {
    grad = Tensor(data.shape(), 0.0);
    grad_ready = true;
  }
  return grad;
}

Value::Value(Tensor data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

double Value::item() const {
  if (node_->data.size() != 1) {
    throw ShapeError("item() on non-scalar of shape " + to_string(shape()));
  }
  return node_->data[0];
}

Tensor Value::grad() const {
  if (node_->grad_ready) return node_->grad;
  return Tensor(node_->data.shape(), 0.0);
}

void Value::zero_grad() {
  if (node_->grad_ready) node_->grad.fill(0.0);
}

void Value::backward() {
  if (node_->data.size() != 1) {
    throw ContractError("backward() needs a scalar root, got shape " +
                        to_string(shape()));
  }
  // Iterative post-order DFS; `order` ends up parents-before-children.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->requires_grad) n->ensure_grad();
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad_ready) n->backward(*n);
  }
}

Value make_result(Tensor data, std::vector<Value> parents, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->data = std::move(data);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Value(std::move(node));
}

Value stop_grad(const Value& x) {
  auto node = std::make_shared<Node>();
  node->data = x.data();
  // Parent link kept so reachable leaves still get a (zero) gradient.
  node->parents.push_back(x.node());
  return Value(std::move(node));
}

void zero_grads(std::span<Value> params) {
  for (auto& p : params) p.zero_grad();
}

void sgd_step(std::span<Value> params, double lr) {
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    auto w = p.mutable_data().values();
    const auto g = p.node()->grad.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  }
}

}  // namespace voxelfuse::ng
