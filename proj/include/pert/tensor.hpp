#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pert/errors.hpp"
#include "pert/rng.hpp"

namespace pert {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

/// One node of the computation graph: a dense row-major double buffer plus
/// the recipe (parents + backward closure) that produced it. Leaf nodes have
/// no recipe. Gradients are flat buffers of the same length as data.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;

  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;  // accumulates into parents' grads
  const char* op = "";

  std::size_t numel() const { return data.size(); }
  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

/// Value-semantics handle to a TensorNode. Copies alias the same storage,
/// which is what ties the graph together.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<double> data, const Shape& shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Entries drawn i.i.d. normal(0, stddev) from the caller's Rng.
  static Tensor randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t numel() const { return node_->numel(); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  double& at(std::size_t i) { return node_->data[i]; }
  double at(std::size_t i) const { return node_->data[i]; }
  double& at(std::size_t r, std::size_t c) { return node_->data[r * node_->shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * node_->shape[1] + c]; }

  /// Value of a one-element tensor.
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v);

  bool has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  std::shared_ptr<TensorNode>& node() { return node_; }
  const std::shared_ptr<TensorNode>& node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Topologically ordered record of the differentiable ops reachable from a
/// root tensor: every node's parents precede it in `order`. backward() walks
/// the order exactly once, in reverse.
class Tape {
 public:
  static Tape from(const Tensor& root);

  /// Reverse-mode sweep. Seeds the root with d(root)/d(root) = 1, resets
  /// intermediate gradients, and accumulates into leaf gradients (so repeated
  /// sweeps without zero_grad add up).
  void backward();

  const std::vector<std::shared_ptr<TensorNode>>& order() const { return order_; }

 private:
  std::shared_ptr<TensorNode> root_;
  std::vector<std::shared_ptr<TensorNode>> order_;
};

/// Convenience: Tape::from(loss).backward() with a scalar check.
void backward(const Tensor& loss);

/// Thread-local flag: while false, ops do not record onto the graph and
/// outputs never require grad. Inference paths run under a NoGradGuard.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace pert
