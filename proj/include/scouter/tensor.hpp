#pragma once

#include <Eigen/Core>

#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scouter {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
class BasicTape;

/// Storage shared between a tensor handle and the tape entry that produced it.
template <typename Scalar>
struct TensorNode {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Vector value;
  Vector grad;  // allocated iff requires_grad
  bool requires_grad = false;
  bool reached = false;
  std::uint64_t tape_id = 0;  // 0: leaf or untracked
  std::function<void(const Vector&)> backward;
};

/// Dense row-major n-d array. Copies are shallow: two handles alias one node,
/// which is what lets parameters be updated in place and read back through the
/// graph. Use clone() for a deep copy.
template <typename Scalar>
class BasicTensor {
 public:
  using scalar_type = Scalar;
  using Node = TensorNode<Scalar>;
  using Vector = typename Node::Vector;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  BasicTensor() : BasicTensor(Shape{0}) {}

  explicit BasicTensor(Shape shape, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = Vector::Zero(checked_numel(shape));
    node_->shape = std::move(shape);
    set_requires_grad(requires_grad);
  }

  BasicTensor(Shape shape, Vector values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (checked_numel(shape) != values.size())
      throw ShapeError("tensor: " + to_string(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    if (!values.allFinite()) throw NumericError("tensor: non-finite initial values");
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    set_requires_grad(requires_grad);
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false)
      : BasicTensor(std::move(shape), Eigen::Map<const Vector>(values.begin(), Index(values.size())),
                    requires_grad) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    return BasicTensor(std::move(shape), requires_grad);
  }

  static BasicTensor full(Shape shape, Scalar v, bool requires_grad = false) {
    const Index count = checked_numel(shape);
    return BasicTensor(std::move(shape), Vector::Constant(count, v), requires_grad);
  }

  static BasicTensor scalar(Scalar v, bool requires_grad = false) {
    return BasicTensor(Shape{}, Vector::Constant(1, v), requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  Index rank() const { return Index(node_->shape.size()); }
  Index dim(Index axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw ShapeError("tensor: axis out of range");
    return node_->shape[std::size_t(axis)];
  }
  Index size() const { return node_->value.size(); }

  const Vector& value() const { return node_->value; }
  /// Direct write access; meant for leaves (parameters, inputs).
  Vector& mutable_value() { return node_->value; }
  Scalar item() const {
    if (size() != 1) throw ShapeError("tensor: item() on " + to_string(shape()));
    return node_->value[0];
  }
  Scalar operator[](Index i) const { return node_->value[i]; }

  ConstMatrixMap matrix(Index rows, Index cols) const {
    if (rows * cols != size()) throw ShapeError("tensor: bad matrix view");
    return ConstMatrixMap(node_->value.data(), rows, cols);
  }
  /// 2-d view that folds every leading axis into rows.
  ConstMatrixMap matrix() const {
    const Index cols = rank() == 0 ? 1 : shape().back();
    return matrix(cols == 0 ? 0 : size() / cols, cols);
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on && node_->grad.size() != node_->value.size())
      node_->grad = Vector::Zero(node_->value.size());
    if (!on) node_->grad.resize(0);
  }
  const Vector& grad() const {
    if (!node_->requires_grad) throw GraphError("tensor: grad() on a tensor without requires_grad");
    return node_->grad;
  }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.setZero();
  }

  BasicTensor detach() const { return BasicTensor(shape(), value(), false); }
  BasicTensor clone() const { return BasicTensor(shape(), value(), requires_grad()); }

  bool is_tracked() const { return node_->tape_id != 0; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  static Index checked_numel(const Shape& shape) {
    for (Index d : shape)
      if (d < 0) throw ShapeError("tensor: negative dimension in " + to_string(shape));
    return numel(shape);
  }

  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable operations. Constructing a tape makes it
/// the active tape of the calling thread until it is destroyed; operations on
/// tensors that require gradients are appended to the active tape, in
/// execution order.
template <typename Scalar>
class BasicTape {
 public:
  using Node = TensorNode<Scalar>;
  using Vector = typename Node::Vector;

  BasicTape() : id_(next_id()), previous_(active_) { active_ = this; }
  ~BasicTape() { active_ = previous_; }
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  static BasicTape* active() { return active_; }
  std::uint64_t id() const { return id_; }
  std::size_t size() const { return entries_.size(); }

  void record(const std::shared_ptr<Node>& node) {
    node->tape_id = id_;
    entries_.push_back(node);
  }

  /// Reverse sweep from `loss`. Each entry up to and including the loss runs
  /// its backward rule at most once; rules accumulate into their inputs.
  void backward(const BasicTensor<Scalar>& loss) {
    if (loss.size() != 1) throw GraphError("backward: loss must be scalar, got " + to_string(loss.shape()));
    const auto& root = loss.node();
    if (root->tape_id != id_) throw GraphError("backward: loss was not recorded on this tape");
    std::size_t end = entries_.size();
    while (end > 0 && entries_[end - 1] != root) --end;
    if (end == 0) throw GraphError("backward: loss not found on tape");
    for (std::size_t i = 0; i < end; ++i) {
      entries_[i]->grad.setZero();
      entries_[i]->reached = false;
    }
    root->grad.setConstant(Scalar(1));
    root->reached = true;
    for (std::size_t i = end; i-- > 0;) {
      Node& node = *entries_[i];
      if (!node.reached) continue;
      node.backward(node.grad);
    }
  }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  std::uint64_t id_;
  BasicTape* previous_;
  std::vector<std::shared_ptr<Node>> entries_;
  static inline thread_local BasicTape* active_ = nullptr;
};

/// Populates grads of every requires_grad tensor reachable from `loss`.
template <typename Scalar>
void backward(const BasicTensor<Scalar>& loss) {
  auto* tape = BasicTape<Scalar>::active();
  if (tape == nullptr || loss.node()->tape_id != tape->id())
    throw GraphError("backward: loss is detached from the active tape");
  tape->backward(loss);
}

namespace detail {

template <typename Scalar>
void accumulate(const std::shared_ptr<TensorNode<Scalar>>& node,
                const Eigen::Ref<const typename TensorNode<Scalar>::Vector>& g) {
  if (!node->requires_grad) return;
  node->grad += g;
  node->reached = true;
}

template <typename Scalar>
bool any_requires_grad(std::initializer_list<const BasicTensor<Scalar>*> inputs) {
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

/// Wraps a freshly computed value as an op output. When a tape is active and
/// some input needs gradients, the output is recorded with `rule`, which maps
/// the output gradient onto the inputs.
template <typename Scalar, typename Rule>
BasicTensor<Scalar> make_result(const char* op, Shape shape, typename TensorNode<Scalar>::Vector value,
                                std::initializer_list<const BasicTensor<Scalar>*> inputs, Rule&& rule) {
  if (!value.allFinite()) throw NumericError(std::string(op) + ": non-finite output");
  auto* tape = BasicTape<Scalar>::active();
  const bool track = tape != nullptr && any_requires_grad<Scalar>(inputs);
  BasicTensor<Scalar> out(std::move(shape), std::move(value), track);
  if (track) {
    out.node()->backward = std::forward<Rule>(rule);
    tape->record(out.node());
  }
  return out;
}

}  // namespace detail

using Tensor = BasicTensor<double>;
using Tape = BasicTape<double>;

}  // namespace scouter
