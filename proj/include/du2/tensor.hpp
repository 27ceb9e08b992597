#pragma once

// Dense float64 tensors with a reverse-mode tape.
//
// A Tensor is a shared handle: copying it aliases the same storage and graph
// node (as in most autodiff frameworks). Use clone() for a deep copy.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace du2 {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {
struct Node;
}

/// View handed to an operator's backward closure.
class BackwardContext {
 public:
  std::span<const double> out_grad() const { return out_grad_; }
  std::span<const double> out_value() const;
  std::size_t input_count() const;
  /// True when input i needs a gradient contribution.
  bool wants(std::size_t i) const;
  /// Gradient buffer of input i; allocated on first use.
  std::span<double> grad(std::size_t i) const;
  std::span<const double> value(std::size_t i) const;
  const Shape& shape(std::size_t i) const;

 private:
  friend void backward(const Tensor& loss);
  BackwardContext(detail::Node* node, std::span<const double> g)
      : node_(node), out_grad_(g) {}
  detail::Node* node_;
  std::span<const double> out_grad_;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<double> data() &;
  std::span<const double> data() const&;
  /// The span would outlive a temporary tensor; bind the tensor first.
  std::span<const double> data() && = delete;
  double item() const;
  double& operator[](std::size_t i) { return data()[i]; }
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  /// Gradient buffer; empty span until backward() populated it.
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  /// Deep copy with no history.
  Tensor clone() const;
  /// Copy of the values as a fresh leaf that does not require a gradient.
  Tensor detach() const;

  bool is_leaf() const;
  const std::string& op() const;
  std::uint64_t sequence() const;
  std::vector<Tensor> inputs() const;

  /// Identity of the underlying node (graph inspection, tests).
  const void* id() const { return node_.get(); }

 private:
  friend class BackwardContext;
  friend void backward(const Tensor& loss);
  friend Tensor make_op_result(Shape, std::vector<double>, std::string,
                               std::vector<Tensor>, BackwardFn);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Creates the output of an operator. The result requires a gradient iff
/// any input does; in that case `fn` is recorded on the tape. Throws
/// NumericError naming `op` if any value is non-finite.
Tensor make_op_result(Shape shape, std::vector<double> values, std::string op,
                      std::vector<Tensor> inputs, BackwardFn fn);

/// Reverse sweep from a scalar. Leaf gradients accumulate across calls
/// (call zero_grad() between passes); interior gradients are recomputed.
void backward(const Tensor& loss);

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace du2
