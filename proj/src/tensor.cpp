#include "pert/tensor.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

namespace pert {

namespace {

thread_local bool g_grad_enabled = true;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->shape = shape;
  node->data.assign(shape_numel(shape), value);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(std::vector<double> data, const Shape& shape, bool requires_grad) {
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = shape;
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({value}, {1}, requires_grad);
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.normal(0.0, stddev);
  return from(std::move(data), shape, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw UsageError("item(): tensor has shape " + shape_str(shape()) + ", expected one element");
  }
  return node_->data[0];
}

void Tensor::set_requires_grad(bool v) { node_->requires_grad = v; }

std::vector<double>& Tensor::grad() {
  if (!has_grad()) throw UsageError("grad(): gradient not populated; run backward() first");
  return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw UsageError("grad(): gradient not populated; run backward() first");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->grad.size() == node_->data.size()) {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

Tape Tape::from(const Tensor& root) {
  Tape tape;
  tape.root_ = root.node();

  // Iterative post-order DFS: a node is emitted after all of its parents.
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  std::unordered_map<TensorNode*, std::shared_ptr<TensorNode>> owner;

  owner[root.node().get()] = root.node();
  stack.emplace_back(root.node().get(), 0);
  while (!stack.empty()) {
    TensorNode* node = stack.back().first;
    const std::size_t next = stack.back().second;
    if (visited.count(node)) {
      stack.pop_back();
      continue;
    }
    if (next < node->parents.size()) {
      stack.back().second = next + 1;
      TensorNode* parent = node->parents[next].get();
      owner.emplace(parent, node->parents[next]);
      if (!visited.count(parent)) stack.emplace_back(parent, 0);
    } else {
      visited.insert(node);
      tape.order_.push_back(owner.at(node));
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::backward() {
  // Intermediates get fresh gradient buffers each sweep; leaves keep theirs
  // so repeated sweeps accumulate.
  for (const auto& node : order_) {
    if (!node->is_leaf()) {
      node->grad.assign(node->data.size(), 0.0);
    } else if (node->requires_grad) {
      node->ensure_grad();
    }
  }
  root_->ensure_grad();
  std::fill(root_->grad.begin(), root_->grad.end(), 1.0);

  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    TensorNode& node = **it;
    if (node.backward_fn) node.backward_fn(node);
  }
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw UsageError("backward(): loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  Tape::from(loss).backward();
}

}  // namespace pert
