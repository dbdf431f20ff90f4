#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace attn_tutor {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised when operands of a primitive do not conform. The message names the
/// primitive, the operands and the shapes that were expected.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Misuse of the differentiation tape (non-scalar loss, detached tensor,
/// graph already released).
class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Tensor;

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& out)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool released = false;
  std::uint64_t sequence = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  // Zero-initialises the gradient buffer on first use.
  std::span<double> grad_buffer();
};

}  // namespace detail

/// Dense row-major f64 tensor with an optional link into the reverse-mode
/// tape. Copies are shallow handles; values produced by a primitive are never
/// mutated afterwards (leaves may be updated in place by an optimizer).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Only leaves may be written; the tape assumes recorded values are frozen.
  std::span<double> mutable_values();
  double item() const;
  double value(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  const char* op_name() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// New leaf holding a copy of the values and no gradient history.
  Tensor detach() const;

  /// Reverse sweep from this scalar. Gradients accumulate into every
  /// reachable leaf that requires grad. The recorded graph is released
  /// afterwards unless retain_graph is set; intermediate gradients are reset
  /// at the start of each sweep so a retained graph can be swept again from
  /// another root.
  void backward(bool retain_graph = false) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Used by primitives: wraps a freshly computed value and records it on the
  /// tape when any input requires grad.
  static Tensor from_op(const char* op, Shape shape, std::vector<double> value,
                        std::vector<Tensor> inputs, detail::BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered view of the recorded graph reachable from a root.
/// Parents always precede children.
struct Tape {
  std::vector<std::shared_ptr<detail::Node>> nodes;

  static Tape collect(const Tensor& root);
};

}  // namespace attn_tutor
