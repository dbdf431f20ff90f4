#include "attn_tutor/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace attn_tutor {

namespace {

std::atomic<std::uint64_t> g_sequence{1};

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> value, bool requires_grad) {
  if (element_count(shape) != value.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape) + " needs " +
                     std::to_string(element_count(shape)) + " values, got " +
                     std::to_string(value.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void require_defined(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw AutogradError("tensor: use of an undefined tensor");
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::span<double> detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  const auto n = element_count(shape);
  node_ = make_node(std::move(shape), std::vector<double>(n, fill), requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(make_node(std::move(shape), std::move(values), requires_grad)) {}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

const Shape& Tensor::shape() const {
  require_defined(node_);
  return node_->shape;
}

std::size_t Tensor::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return values().size(); }

std::span<const double> Tensor::values() const {
  require_defined(node_);
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  require_defined(node_);
  if (node_->backward) throw AutogradError("tensor: only leaf tensors may be modified in place");
  return node_->value;
}

double Tensor::item() const {
  const auto v = values();
  if (v.size() != 1) throw ShapeError("tensor: item() on tensor of shape " + shape_string(shape()));
  return v[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  require_defined(node_);
  if (node_->backward) throw AutogradError("tensor: requires_grad can only be set on leaves");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return node_ && !node_->backward && node_->parents.empty(); }

const char* Tensor::op_name() const {
  require_defined(node_);
  return node_->op;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(node_);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(node_);
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  require_defined(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  require_defined(node_);
  return Tensor(make_node(node_->shape, node_->value, false));
}

Tensor Tensor::from_op(const char* op, Shape shape, std::vector<double> value,
                       std::vector<Tensor> inputs, detail::BackwardFn backward) {
  bool track = false;
  for (const auto& in : inputs) track = track || in.requires_grad();
  auto node = make_node(std::move(shape), std::move(value), track);
  node->op = op;
  if (track) {
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tape Tape::collect(const Tensor& root) {
  Tape tape;
  require_defined(root.node());
  std::unordered_set<const detail::Node*> seen;
  std::vector<detail::Node*> stack{root.node().get()};
  std::vector<std::shared_ptr<detail::Node>> found{root.node()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto* node = stack.back();
    stack.pop_back();
    for (const auto& parent : node->parents) {
      if (!parent->requires_grad || !seen.insert(parent.get()).second) continue;
      found.push_back(parent);
      stack.push_back(parent.get());
    }
  }
  // Sequence numbers are assigned at creation, so a parent always has a
  // smaller one than any node computed from it.
  std::sort(found.begin(), found.end(),
            [](const auto& a, const auto& b) { return a->sequence < b->sequence; });
  tape.nodes = std::move(found);
  return tape;
}

void Tensor::backward(bool retain_graph) const {
  require_defined(node_);
  if (node_->value.size() != 1) {
    throw AutogradError("backward: loss must be scalar, got shape " + shape_string(node_->shape));
  }
  if (!node_->requires_grad) {
    throw AutogradError("backward: tensor is detached from the tape (no input requires grad)");
  }
  if (node_->released) {
    throw AutogradError("backward: graph was already released by an earlier backward");
  }
  auto tape = Tape::collect(*this);
  for (auto& node : tape.nodes)
    if (node->backward) node->grad.clear();
  node_->grad_buffer()[0] += 1.0;
  for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
    auto& node = **it;
    if (node.released) {
      throw AutogradError(std::string("backward: graph through '") + node.op + "' was already released");
    }
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
  if (retain_graph) return;
  for (auto& node : tape.nodes) {
    if (node->backward) {
      node->backward = nullptr;
      node->parents.clear();
      node->released = true;
    }
  }
}

}  // namespace attn_tutor
