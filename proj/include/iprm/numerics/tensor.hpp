#ifndef IPRM_NUMERICS_TENSOR_HPP_
#define IPRM_NUMERICS_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace iprm {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces or receives non-finite values, or a
/// numerically undefined configuration (such as a fully masked softmax row).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Thread-local switch controlling whether new results record graph edges.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <class Real>
struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }

  Real* grad_ptr() {
    if (!requires_grad) return nullptr;
    if (grad.empty()) grad.assign(data.size(), Real(0));
    return grad.data();
  }
};

}  // namespace detail

/// Dense row-major array that optionally participates in a reverse-mode
/// differentiation graph. Copies share the underlying node.
template <class Real>
class Tensor {
 public:
  using Node = detail::Node<Real>;
  using value_type = Real;

  Tensor() = default;

  Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (iprm::numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + iprm::to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = iprm::numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad);
  }

  static Tensor full(Shape shape, Real value) {
    const auto n = iprm::numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, value));
  }

  static Tensor scalar(Real value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<Real>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  /// Size of dimension `axis`; negative values count from the end.
  std::size_t dim(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
      throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                       iprm::to_string(shape()));
    }
    return shape()[static_cast<std::size_t>(a)];
  }

  std::span<const Real> data() const { return node_->data; }
  /// Direct write access. Only safe on leaves that are not part of a live graph.
  std::span<Real> mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() {
    node_->grad_ptr();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  Real item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor of shape " + iprm::to_string(shape()));
    }
    return node_->data[0];
  }

  Real at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw ShapeError("index rank mismatch");
    std::size_t off = 0;
    std::size_t d = 0;
    for (auto i : index) {
      if (i >= shape()[d]) throw ShapeError("index out of range");
      off = off * shape()[d] + i;
      ++d;
    }
    return node_->data[off];
  }

  /// Detached copy holding the same values.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  /// Accumulates d(this)/d(leaf) into every reachable leaf with
  /// requires_grad. `this` must be a scalar.
  void backward() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  /// Builds an op result. Graph edges are recorded only in grad mode and when
  /// at least one parent requires a gradient.
  static Tensor make_result(Shape shape, std::vector<Real> data,
                            std::vector<Tensor> parents,
                            std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(data));
    if (!grad_mode()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

template <class Real>
void Tensor<Real>::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " +
                     iprm::to_string(shape()));
  }
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior grads are rebuilt on every call and released once consumed, so
  // the allocator keeps reusing warm memory; leaves accumulate.
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.clear();
  }
  node_->grad_ptr()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf()) continue;
    if (n->backward && !n->grad.empty()) n->backward(*n);
    std::vector<Real>().swap(n->grad);
  }
}

}  // namespace iprm

#endif  // IPRM_NUMERICS_TENSOR_HPP_
