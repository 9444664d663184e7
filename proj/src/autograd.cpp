#include "dip/autograd.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>
#include <thread>
#include <unordered_set>

namespace dip {

Runtime Runtime::from_environment() {
  Runtime rt;
  if (const char* env = std::getenv("DIP_THREADS"); env && *env) {
    long n = std::strtol(env, nullptr, 10);
    rt.worker_threads = n > 0 ? static_cast<std::size_t>(n) : 1;
  } else {
    rt.worker_threads = std::max(1u, std::thread::hardware_concurrency());
  }
  if (const char* env = std::getenv("DIP_DETERMINISTIC"); env && std::string(env) == "1") {
    rt.deterministic = true;
  }
  return rt;
}

Runtime& Runtime::get() {
  static Runtime rt = from_environment();
  return rt;
}

template <typename T>
void Node<T>::accumulate_grad(const Tensor<T>& g) {
  if (g.shape() != value.shape()) {
    throw std::logic_error("gradient shape " + shape_to_string(g.shape()) + " does not match value shape " +
                           shape_to_string(value.shape()) + " in op '" + op + "'");
  }
  if (grad.empty()) {
    grad = g;
    return;
  }
  auto dst = grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.empty()) grad = Tensor<T>::zeros(value.shape());
  return grad;
}

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->op = "leaf";
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  if (!has_grad()) throw std::logic_error("gradient requested for a node that has none");
  return node_->grad;
}

template <typename T>
void Var<T>::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(T(0));
}

template <typename T>
Var<T> make_result(std::string op, Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn) {
  if (Runtime::get().check_finite && !value.all_finite()) {
    throw std::runtime_error("non-finite value produced by op '" + op + "'");
  }
  auto node = std::make_shared<Node<T>>();
  node->op = std::move(op);
  node->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>::from_node(std::move(node));
}

template <typename T>
std::vector<std::shared_ptr<Node<T>>> topological_order(const Var<T>& root) {
  std::vector<std::shared_ptr<Node<T>>> order;
  if (!root.defined()) return order;
  std::unordered_set<const Node<T>*> visited;
  // Iterative post-order DFS; the graph can be deep for large networks.
  struct Frame {
    std::shared_ptr<Node<T>> node;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node(), 0});
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.next_input < top.node->inputs.size()) {
      auto child = top.node->inputs[top.next_input++];
      if (visited.insert(child.get()).second) stack.push_back({std::move(child), 0});
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward called on an undefined variable");
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward called on a loss that does not depend on any parameter");
  }
  auto order = topological_order(loss);
  loss.node()->accumulate_grad(Tensor<T>(loss.shape(), T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& node = **it;
    if (node.is_leaf() || !node.requires_grad) continue;
    if (node.grad.empty()) continue;  // not on a path to the loss
    node.backward_fn(node);
    node.grad = Tensor<T>();  // intermediate grads are not retained
  }
}

template <typename T>
std::vector<std::string> graph_ops(const Var<T>& root) {
  std::vector<std::string> ops;
  for (const auto& n : topological_order(root)) ops.push_back(n->op);
  return ops;
}

template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;

#define DIP_INSTANTIATE(T)                                                                              \
  template Var<T> make_result<T>(std::string, Tensor<T>, std::vector<Var<T>>, std::function<void(Node<T>&)>); \
  template void backward<T>(const Var<T>&);                                                             \
  template std::vector<std::shared_ptr<Node<T>>> topological_order<T>(const Var<T>&);                   \
  template std::vector<std::string> graph_ops<T>(const Var<T>&);

DIP_INSTANTIATE(float)
DIP_INSTANTIATE(double)
#undef DIP_INSTANTIATE

}  // namespace dip
