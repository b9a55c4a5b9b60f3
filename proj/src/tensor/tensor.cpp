#include "catmouse/tensor.hpp"

#include <numeric>
#include <sstream>

namespace catmouse::inline CATMOUSE_PRECISION {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, Real fill) : node_(std::make_shared<detail::Node>()) {
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<Real> values) : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor: shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("Tensor::dim: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape()));
  }
  return node_->shape[axis];
}

Real Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("Tensor::item: tensor of shape " + shape_string(shape()) +
                         " is not a scalar");
  }
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf) throw std::logic_error("set_requires_grad: only leaf tensors are trainable");
  node_->requires_grad = on;
  return *this;
}

std::span<Real> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->data.size(), Real(0));
}

Tensor Tensor::detached() const { return Tensor(node_->shape, node_->data); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(this->shape()) + " as " +
                         shape_string(shape));
  }
  const bool tracked = detail::any_requires_grad({this});
  Tensor out = detail::make_result(std::move(shape), node_->data, tracked);
  if (tracked) {
    auto in = node_;
    auto o = out.node();
    detail::record_op("reshape", {this}, out, [in, o] {
      in->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) in->grad[i] += o->grad[i];
    });
  }
  return out;
}

void Tape::record(Op op) { ops_.push_back(std::move(op)); }

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

void backward(Tape& tape, const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw DimensionError("backward: root must be a scalar, got shape " +
                         (root.defined() ? shape_string(root.shape()) : std::string("<undefined>")));
  }
  const auto& node = root.node();
  if (node->is_leaf || node->tape != &tape || node->tape_index >= tape.size() ||
      tape.ops()[node->tape_index].output != node) {
    throw std::logic_error("backward: root was not recorded on this tape");
  }
  for (const auto& op : tape.ops()) op.output->grad.assign(op.output->data.size(), Real(0));
  node->grad[0] = Real(1);
  for (std::size_t i = node->tape_index + 1; i-- > 0;) tape.ops()[i].backward();
}

namespace detail {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor make_result(Shape shape, std::vector<Real> data, bool tracked) {
  Tensor out(std::move(shape), std::move(data));
  if (tracked) {
    out.node()->requires_grad = true;
    out.node()->is_leaf = false;
  }
  return out;
}

void record_op(std::string_view name, std::initializer_list<const Tensor*> inputs,
               const Tensor& output, std::function<void()> backward_fn) {
  std::vector<std::shared_ptr<Node>> nodes;
  for (const Tensor* t : inputs) {
    if (t && t->defined()) nodes.push_back(t->node());
  }
  record_op(name, std::move(nodes), output, std::move(backward_fn));
}

void record_op(std::string_view name, std::vector<std::shared_ptr<Node>> inputs,
               const Tensor& output, std::function<void()> backward_fn) {
  Tape* tape = Tape::active();
  Tape::Op op;
  op.name = std::string(name);
  op.inputs = std::move(inputs);
  op.output = output.node();
  op.backward = std::move(backward_fn);
  output.node()->tape = tape;
  output.node()->tape_index = tape->size();
  tape->record(std::move(op));
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

}  // namespace detail

}  // namespace catmouse::inline CATMOUSE_PRECISION
