#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace flux {

using Index = Eigen::Index;

namespace detail {
inline thread_local bool grad_enabled = true;
}

// Disables graph recording in scope (used for frozen teachers, evaluation,
// and finite-difference probes).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev; }
};

inline std::string shape_str(const std::vector<Index>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <typename S>
struct TensorNode {
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  std::vector<Index> shape;
  Vec value;
  Vec grad;  // sized lazily by backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;  // empty for leaves
};

// Dense row-major tensor with tape-based reverse-mode differentiation.
// Value semantics on the handle; the node is shared.
template <typename S = double>
class Tensor {
 public:
  using Node = TensorNode<S>;
  using Vec = typename Node::Vec;
  using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>;
  using CMatMap = Eigen::Map<const Eigen::Matrix<
      S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(std::vector<Index> shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = Vec::Zero(numel(n->shape));
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor from(std::vector<Index> shape, Vec value,
                     bool requires_grad = false) {
    if (value.size() != numel(shape))
      throw std::invalid_argument("tensor: data size " +
                                  std::to_string(value.size()) +
                                  " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor from(std::vector<Index> shape, const std::vector<S>& data,
                     bool requires_grad = false) {
    Vec v(static_cast<Index>(data.size()));
    for (Index i = 0; i < v.size(); ++i) v[i] = data[static_cast<std::size_t>(i)];
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(S v) {
    Vec d(1);
    d[0] = v;
    return from({1}, std::move(d));
  }

  bool defined() const { return n_ != nullptr; }
  const std::vector<Index>& shape() const { return n_->shape; }
  Index size() const { return n_->value.size(); }
  Index dim(std::size_t i) const { return n_->shape[i]; }
  std::size_t rank() const { return n_->shape.size(); }

  Vec& value() { return n_->value; }
  const Vec& value() const { return n_->value; }
  Vec& grad() { return n_->grad; }
  const Vec& grad() const { return n_->grad; }

  S item() const {
    if (size() != 1)
      throw std::invalid_argument("item: tensor has " + std::to_string(size()) +
                                  " elements, expected 1");
    return n_->value[0];
  }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    n_->requires_grad = b;
    return *this;
  }

  // 2-D Eigen view
  MatMap mat() {
    check_rank2();
    return MatMap(n_->value.data(), n_->shape[0], n_->shape[1]);
  }
  CMatMap mat() const {
    check_rank2();
    return CMatMap(n_->value.data(), n_->shape[0], n_->shape[1]);
  }
  MatMap grad_mat() {
    check_rank2();
    return MatMap(n_->grad.data(), n_->shape[0], n_->shape[1]);
  }

  std::shared_ptr<Node> node() const { return n_; }

  // Value copy cut off from the graph.
  Tensor detach() const {
    auto n = std::make_shared<Node>();
    n->shape = n_->shape;
    n->value = n_->value;
    return Tensor(n);
  }

  void zero_grad() { n_->grad = Vec::Zero(n_->value.size()); }

  // Reverse-mode sweep from a scalar output. Visits each node once;
  // gradients accumulate additively at fan-out.
  void backward() {
    if (size() != 1)
      throw std::invalid_argument("backward: output must be scalar, got shape " +
                                  shape_str(shape()));
    std::vector<Node*> order;
    topo_sort(n_.get(), order);
    for (Node* n : order) n->grad = Vec::Zero(n->value.size());
    n_->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

  static Index numel(const std::vector<Index>& shape) {
    Index p = 1;
    for (Index d : shape) p *= d;
    return p;
  }

 private:
  void check_rank2() const {
    if (n_->shape.size() != 2)
      throw std::invalid_argument("expected rank-2 tensor, got shape " +
                                  shape_str(n_->shape));
  }

  static void topo_sort(Node* root, std::vector<Node*>& order) {
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Node* p = node->parents[idx++].get();
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> n_;
};

using Tensord = Tensor<double>;

// Builds an op node; records the tape edge only when grad mode is on and
// some input requires grad.
template <typename S>
Tensor<S> make_op(std::vector<Index> shape, typename TensorNode<S>::Vec value,
                  const std::vector<Tensor<S>>& inputs,
                  std::function<void(TensorNode<S>&)> backward_fn) {
  auto n = std::make_shared<TensorNode<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool need = false;
  if (detail::grad_enabled) {
    for (const auto& t : inputs)
      if (t.requires_grad()) {
        need = true;
        break;
      }
  }
  if (need) {
    n->requires_grad = true;
    for (const auto& t : inputs) n->parents.push_back(t.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<S>(n);
}

}  // namespace flux
