#include "dots/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

namespace dots {

namespace {

std::atomic<std::uint64_t> g_seq{1};

NodePtr new_node(const char* op, Shape shape) {
  auto n = std::make_shared<TensorNode>();
  n->op = op;
  n->shape = std::move(shape);
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}

}  // namespace

Tensor Tensor::leaf(Shape shape, Eigen::ArrayXd data, bool requires_grad) {
  check(!shape.empty(), "Tensor::leaf: empty shape");
  for (int d : shape) check(d > 0, "Tensor::leaf: nonpositive dimension in " + shape_str(shape));
  check(numel(shape) == data.size(),
        "Tensor::leaf: shape " + shape_str(shape) + " does not match data length " +
            std::to_string(data.size()));
  auto n = new_node("leaf", std::move(shape));
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  n->needs_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Eigen::ArrayXd d = Eigen::ArrayXd::Zero(numel(shape));
  return leaf(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  Eigen::ArrayXd d = Eigen::ArrayXd::Constant(numel(shape), v);
  return leaf(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::from(const std::vector<double>& data, Shape shape, bool requires_grad) {
  Eigen::ArrayXd d(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) d[static_cast<Eigen::Index>(i)] = data[i];
  return leaf(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return full({1}, v, requires_grad);
}

Eigen::ArrayXd& Tensor::grad() {
  check(node_->grad_valid(), "Tensor::grad: gradient not populated (run backward first)");
  return node_->grad;
}

const Eigen::ArrayXd& Tensor::grad() const {
  check(node_->grad_valid(), "Tensor::grad: gradient not populated (run backward first)");
  return node_->grad;
}

void Tensor::backward() const {
  GradGraph::record(*this).backward();
}

GradGraph GradGraph::record(const Tensor& root) {
  check(root.valid(), "GradGraph::record: null tensor");
  GradGraph g;
  g.root_ = root.node();

  // Iterative DFS over parents; nodes are collected once each.
  std::unordered_set<const TensorNode*> seen;
  std::vector<NodePtr> stack{g.root_};
  seen.insert(g.root_.get());
  while (!stack.empty()) {
    NodePtr n = stack.back();
    stack.pop_back();
    g.nodes_.push_back(n);
    for (const NodePtr& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p);
    }
  }
  std::sort(g.nodes_.begin(), g.nodes_.end(),
            [](const NodePtr& a, const NodePtr& b) { return a->seq < b->seq; });
  return g;
}

void GradGraph::replay() {
  for (const NodePtr& n : nodes_) {
    if (n->forward) n->forward(*n);
  }
}

void GradGraph::backward() {
  check(root_ != nullptr, "GradGraph::backward: empty graph");
  check(root_->value.size() == 1,
        "GradGraph::backward: root must be scalar, shape " + shape_str(root_->shape));

  for (const NodePtr& n : nodes_) {
    if (n->needs_grad) {
      n->ensure_grad();
    }
  }
  root_->ensure_grad();
  root_->grad[0] += 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    TensorNode& n = **it;
    if (!n.needs_grad || !n.backward) continue;
    n.backward(n);
  }
}

namespace detail {

Tensor make_node(const char* op, Shape shape, std::vector<NodePtr> parents,
                 std::function<void(TensorNode&)> forward,
                 std::function<void(TensorNode&)> backward) {
  auto n = new_node(op, std::move(shape));
  n->parents = std::move(parents);
  for (const NodePtr& p : n->parents) {
    if (p->needs_grad) {
      n->needs_grad = true;
      break;
    }
  }
  n->forward = std::move(forward);
  n->backward = std::move(backward);
  n->forward(*n);
  check(n->value.size() == numel(n->shape),
        std::string(op) + ": forward produced " + std::to_string(n->value.size()) +
            " values for shape " + shape_str(n->shape));
  return Tensor(n);
}

void require_finite(const Tensor& t, const char* op) {
  if (!t.value().isFinite().all()) {
    throw std::invalid_argument(std::string(op) + ": non-finite input detected");
  }
}

}  // namespace detail

}  // namespace dots
