#pragma once

// Reverse-mode gradient propagation over a per-evaluation tape.
//
// A Var is a shared handle to a graph node holding a Tensor value and, when it
// participates in a differentiable computation, a gradient buffer. Leaves are
// created with Var::parameter (trainable) or Var::constant. Every operation in
// this header records a node only when at least one input requires a gradient,
// so forward-only evaluation allocates no tape.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "spse/tensor.hpp"

namespace spse {

namespace detail {
struct Node;
}

/// Backward rule for a recorded operation. `input_grads[i]` is null when input
/// i does not require a gradient; otherwise it points to a zero-initialised (or
/// partially accumulated) buffer of the input's size that the rule adds into.
using BackwardFn =
    std::function<void(std::span<const double> out_grad, std::span<std::vector<double>* const> input_grads)>;

class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  static Var parameter(Tensor value);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }

  /// Overwrite the stored value in place (optimizer steps, clamping, loading).
  /// The new tensor must have the same shape.
  void assign(const Tensor& value);
  Tensor& mutable_value();

  bool requires_grad() const;
  /// Toggle gradient tracking on a leaf. Freezing a parameter keeps it out of
  /// every tape recorded afterwards.
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  /// Accumulated gradient, all zeros when nothing has been propagated yet.
  Tensor grad() const;
  std::span<const double> grad_span() const;
  void zero_grad();

  const detail::Node* node() const noexcept { return node_.get(); }

 private:
  friend Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn);
  friend void backward(const Var& loss);
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Record a custom differentiable operation. Returns an untracked constant when
/// no input requires a gradient.
Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn);

/// Propagate d(loss)/d(input) into every reachable leaf that requires a
/// gradient. Leaf gradients accumulate; intermediate buffers are reset first.
/// Throws ShapeError for non-scalar losses and ProvenanceError when the loss
/// was not produced by recorded operations.
void backward(const Var& loss);

// Differentiable operations.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// alpha * a + beta * b
Var axpby(double alpha, const Var& a, double beta, const Var& b);
Var add_constant(const Var& a, const Tensor& c);
Var sum(const Var& a);
Var mean(const Var& a);
Var dot(const Var& a, const Var& b);
/// mean((a - target)^2) over all entries; target is not differentiated.
Var mse(const Var& a, const Tensor& target);
Var silu(const Var& a);
Var tanh(const Var& a);
Var square(const Var& a);
Var concat(const std::vector<Var>& parts);
Var reshape(const Var& a, Shape shape);
/// weight [out, in], bias [out], x [in] -> [out]
Var linear(const Var& x, const Var& weight, const Var& bias);

}  // namespace spse
