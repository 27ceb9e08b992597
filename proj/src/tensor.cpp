#include "du2/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "du2/errors.hpp"

namespace du2 {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::string op = "leaf";
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn fn;
};

}  // namespace detail

namespace {

std::atomic<std::uint64_t> g_sequence{0};
thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->seq = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return n;
}

void ensure_grad(detail::Node& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// BackwardContext

std::span<const double> BackwardContext::out_value() const { return node_->value; }
std::size_t BackwardContext::input_count() const { return node_->inputs.size(); }
bool BackwardContext::wants(std::size_t i) const { return node_->inputs.at(i)->requires_grad; }

std::span<double> BackwardContext::grad(std::size_t i) const {
  auto& in = *node_->inputs.at(i);
  ensure_grad(in);
  return in.grad;
}

std::span<const double> BackwardContext::value(std::size_t i) const {
  return node_->inputs.at(i)->value;
}

const Shape& BackwardContext::shape(std::size_t i) const { return node_->inputs.at(i)->shape; }

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  std::vector<double> v(shape_size(shape), fill);
  node_ = new_node(std::move(shape), std::move(v));
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(new_node(std::move(shape), std::move(values))) {
  node_->requires_grad = requires_grad;
}

const Shape& Tensor::shape() const {
  if (!node_) throw UsageError("shape() on an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::span<double> Tensor::data() & {
  if (!node_) throw UsageError("data() on an undefined tensor");
  return node_->value;
}

std::span<const double> Tensor::data() const& {
  if (!node_) throw UsageError("data() on an undefined tensor");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_) throw UsageError("set_requires_grad on an undefined tensor");
  if (!node_->leaf) throw UsageError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

std::span<double> Tensor::grad_mut() {
  if (!node_) throw UsageError("grad_mut on an undefined tensor");
  ensure_grad(*node_);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t(shape(), node_->value, false);
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

bool Tensor::is_leaf() const { return !node_ || node_->leaf; }

const std::string& Tensor::op() const {
  if (!node_) throw UsageError("op() on an undefined tensor");
  return node_->op;
}

std::uint64_t Tensor::sequence() const { return node_ ? node_->seq : 0; }

std::vector<Tensor> Tensor::inputs() const {
  std::vector<Tensor> out;
  if (!node_) return out;
  out.reserve(node_->inputs.size());
  for (const auto& n : node_->inputs) out.push_back(Tensor(n));
  return out;
}

// ---------------------------------------------------------------------------

Tensor make_op_result(Shape shape, std::vector<double> values, std::string op,
                      std::vector<Tensor> inputs, BackwardFn fn) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(op + ": non-finite value in output");
  }
  auto node = new_node(std::move(shape), std::move(values));
  node->op = std::move(op);
  node->leaf = false;
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->fn = std::move(fn);
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw UsageError("backward(): loss does not depend on any tensor that requires a gradient");
  }

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node_.get(), 0);
  seen.insert(loss.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  }
  detail::Node* root = loss.node_.get();
  ensure_grad(*root);
  if (root->leaf) {
    root->grad[0] += 1.0;
  } else {
    root->grad[0] = 1.0;
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->leaf || !n->fn) continue;
    n->fn(BackwardContext(n, n->grad));
  }

  for (auto* n : order) {
    for (double g : n->grad) {
      if (!std::isfinite(g)) throw NumericError("backward(): non-finite gradient at op " + n->op);
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

}  // namespace du2
