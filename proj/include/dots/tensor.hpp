#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dots/common.hpp"

namespace dots {

class Tensor;

// One recorded primitive. `forward` recomputes `value` from the parents'
// values; `backward` scatters `grad` into the parents' grads. Nodes are
// created in topological order; `seq` fixes the traversal order so forward
// replay and backward accumulation are bitwise deterministic.
struct TensorNode {
  Shape shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;
  bool requires_grad = false;  // set on leaves the caller wants grads for
  bool needs_grad = false;     // requires_grad, or any parent needs_grad
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> forward;
  std::function<void(TensorNode&)> backward;

  std::int64_t size() const { return value.size(); }
  bool grad_valid() const { return grad.size() == value.size(); }
  void ensure_grad() {
    if (!grad_valid()) grad = Eigen::ArrayXd::Zero(value.size());
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

// Value-semantic handle to a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(Shape shape, Eigen::ArrayXd data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(const std::vector<double>& data, Shape shape,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const { return node_->value.size(); }
  const char* op() const { return node_->op; }
  bool requires_grad() const { return node_->requires_grad; }

  Eigen::ArrayXd& value() { return node_->value; }
  const Eigen::ArrayXd& value() const { return node_->value; }
  Eigen::ArrayXd& grad();
  const Eigen::ArrayXd& grad() const;
  bool grad_valid() const { return node_->grad_valid(); }
  void zero_grad() { node_->grad.setZero(); }

  double item() const {
    check(size() == 1, "Tensor::item: tensor is not scalar, shape " +
                           shape_str(node_->shape));
    return node_->value[0];
  }

  // Runs reverse-mode accumulation from this scalar.
  void backward() const;

  NodePtr node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

// Topologically ordered record of the primitives reachable from a root.
// Replaying forward in order reproduces every value bitwise; backward walks
// the same record in reverse.
class GradGraph {
 public:
  static GradGraph record(const Tensor& root);

  void replay();
  void backward();

  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodePtr>& nodes() const { return nodes_; }

 private:
  NodePtr root_;
  std::vector<NodePtr> nodes_;  // ascending seq
};

namespace detail {

Tensor make_node(const char* op, Shape shape, std::vector<NodePtr> parents,
                 std::function<void(TensorNode&)> forward,
                 std::function<void(TensorNode&)> backward);

void require_finite(const Tensor& t, const char* op);

}  // namespace detail

}  // namespace dots
