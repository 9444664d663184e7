#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dip/tensor.hpp"

namespace dip {

// Process-wide execution switches. Defaults come from DIP_THREADS and
// DIP_DETERMINISTIC on first use.
struct Runtime {
  std::size_t worker_threads = 1;    // pipeline job pool size (DIP_THREADS)
  std::size_t intra_op_threads = 1;  // workers inside a single convolution
  bool deterministic = false;        // forces single-threaded op execution
  bool check_finite = false;         // verify every op output is finite

  static Runtime& get();
  static Runtime from_environment();
};

template <typename T>
struct Node {
  std::string op;
  Tensor<T> value;
  Tensor<T> grad;  // empty until backward reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads `self.grad` and accumulates into the inputs' grads.
  std::function<void(Node& self)> backward_fn;

  bool is_leaf() const noexcept { return inputs.empty(); }
  void accumulate_grad(const Tensor<T>& g);
  // Returns the grad buffer, allocating zeros on first access.
  Tensor<T>& grad_buffer();
};

// Handle to a node in the recorded computation graph.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);

  static Var from_node(std::shared_ptr<Node<T>> node) {
    Var v;
    v.node_ = std::move(node);
    return v;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  // Mutable access for in-place parameter updates between forwards.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  const Tensor<T>& grad() const;
  void zero_grad();

  const std::string& op() const { return node_->op; }
  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Creates a non-leaf node. When no input requires grad the node records no
// parents and no backward closure.
template <typename T>
Var<T> make_result(std::string op, Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn);

// Seeds d(loss)/d(loss) = 1 and visits each reachable node once in reverse
// topological order. Gradients accumulate into leaves.
template <typename T>
void backward(const Var<T>& loss);

// Nodes reachable from `root`, inputs before consumers.
template <typename T>
std::vector<std::shared_ptr<Node<T>>> topological_order(const Var<T>& root);

// Op tags of every node reachable from `root` (one entry per node).
template <typename T>
std::vector<std::string> graph_ops(const Var<T>& root);

extern template class Var<float>;
extern template class Var<double>;
extern template struct Node<float>;
extern template struct Node<double>;

}  // namespace dip
