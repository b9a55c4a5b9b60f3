#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "catmouse/real.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised by every operator whose operands do not conform.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tape;

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  const Tape* tape = nullptr;
  std::size_t tape_index = 0;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  }
};

}  // namespace detail

/// Dense row-major array with optional gradient tracking.
///
/// Tensor is a shared handle: copies alias the same storage, the way graph
/// nodes are shared between the producing operation and its consumers. Use
/// detached() for an independent deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor scalar(Real value) { return Tensor(Shape{}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const Real> data() const { return node_->data; }
  std::span<Real> mutable_data() { return node_->data; }
  Real item() const;
  Real at(std::size_t flat_index) const { return node_->data.at(flat_index); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Marks a leaf as trainable. Only leaves may be toggled.
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad();
  void zero_grad();

  Tensor detached() const;
  Tensor reshaped(Shape shape) const;

  bool is_leaf() const { return node_->is_leaf; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of differentiable operations.
///
/// Operators record onto the tape that is active on the calling thread (see
/// TapeScope) whenever one of their operands requires a gradient. Recording
/// order is execution order, so every operation's inputs precede it.
class Tape {
 public:
  struct Op {
    std::string name;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::shared_ptr<detail::Node> output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return ops_.size(); }
  const std::vector<Op>& ops() const { return ops_; }
  void clear() { ops_.clear(); }

  void record(Op op);

  /// Tape active on this thread, or nullptr.
  static Tape* active();

 private:
  friend class TapeScope;
  std::vector<Op> ops_;
};

/// Makes a tape the active recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Reverse accumulation from a scalar root. Intermediate gradients are reset
/// on every call; leaf gradients accumulate across calls until zero_grad().
void backward(Tape& tape, const Tensor& root);

namespace detail {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

/// Creates an op result and, if `tracked`, registers it on the active tape.
Tensor make_result(Shape shape, std::vector<Real> data, bool tracked);

void record_op(std::string_view name, std::initializer_list<const Tensor*> inputs,
               const Tensor& output, std::function<void()> backward_fn);

void record_op(std::string_view name, std::vector<std::shared_ptr<Node>> inputs,
               const Tensor& output, std::function<void()> backward_fn);

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op);

}  // namespace detail

}  // namespace catmouse::inline CATMOUSE_PRECISION
