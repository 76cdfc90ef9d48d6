#include "crossfuse/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "crossfuse/errors.hpp"

namespace crossfuse {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_node_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed) + 1;
}

}  // namespace detail

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool enabled) { grad_mode_enabled = enabled; }

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " elements, got " + std::to_string(data.size()));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
  node_->seq = detail::next_node_seq();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_node(std::shared_ptr<detail::Node<T>> node) {
  BasicTensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
detail::Node<T>& BasicTensor<T>::checked() const {
  if (!node_) throw ContractError("operation on an undefined tensor");
  return *node_;
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
  return checked().shape;
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

template <typename T>
std::size_t BasicTensor<T>::numel() const {
  return checked().data.size();
}

template <typename T>
std::span<const T> BasicTensor<T>::data() const {
  return checked().data;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_data() {
  auto& n = checked();
  if (!n.is_leaf) throw ContractError("mutable_data() is only available on leaf tensors");
  return n.data;
}

template <typename T>
T BasicTensor<T>::item() const {
  const auto& n = checked();
  if (n.data.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(n.shape));
  return n.data[0];
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  const auto& n = checked();
  if (index.size() != n.shape.size()) throw DimensionError("index rank does not match " + shape_str(n.shape));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= n.shape[axis]) throw DimensionError("index out of range for " + shape_str(n.shape));
    flat = flat * n.shape[axis] + i;
    ++axis;
  }
  return n.data[flat];
}

template <typename T>
bool BasicTensor<T>::requires_grad() const {
  return checked().requires_grad;
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool requires_grad) {
  auto& n = checked();
  if (!n.is_leaf) throw ContractError("requires_grad can only be changed on leaf tensors");
  n.requires_grad = requires_grad;
}

template <typename T>
bool BasicTensor<T>::is_leaf() const {
  return checked().is_leaf;
}

template <typename T>
bool BasicTensor<T>::has_grad() const {
  return !checked().grad.empty();
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  return checked().grad;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  auto& n = checked();
  n.ensure_grad();
  return n.grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  auto& n = checked();
  std::fill(n.grad.begin(), n.grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  const auto& n = checked();
  return BasicTensor(n.shape, n.data, false);
}

template <typename T>
std::size_t BasicTensor<T>::backward() const {
  auto& root = checked();
  if (root.data.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) {
    throw ContractError("backward() on a loss that is not connected to any tensor requiring grad");
  }

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<NodeT*> stack{&root};
  seen.insert(&root);
  while (!stack.empty()) {
    NodeT* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  // Creation order is a topological order: a node is always created after its parents.
  std::sort(order.begin(), order.end(), [](const NodeT* a, const NodeT* b) { return a->seq > b->seq; });

  for (NodeT* n : order) {
    if (!n->is_leaf) n->grad.assign(n->data.size(), T(0));
  }
  root.ensure_grad();
  root.grad[0] += T(1);

  std::size_t visits = 0;
  for (NodeT* n : order) {
    ++visits;
    if (n->backward) n->backward(*n);
  }
  for (NodeT* n : order) {
    if (!n->is_leaf) std::vector<T>().swap(n->grad);
  }
  return visits;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace crossfuse
