#include "spse/autodiff.hpp"

#include <cmath>
#include <unordered_set>

#include "spse/errors.hpp"

namespace spse {

namespace detail {

struct Node {
  Tensor value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

}  // namespace detail

using detail::Node;

namespace {

const Node& checked(const std::shared_ptr<Node>& node) {
  if (!node) throw ArgumentError("use of an undefined Var");
  return *node;
}

std::vector<double>& ensure_grad(Node& node) {
  if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": produced a non-finite value");
}

}  // namespace

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

const Tensor& Var::value() const { return checked(node_).value; }

void Var::assign(const Tensor& value) {
  checked(node_);
  if (value.shape() != node_->value.shape()) {
    throw ShapeError("assign: shape " + shape_string(value.shape()) + " does not match " +
                     shape_string(node_->value.shape()));
  }
  node_->value = value;
}

Tensor& Var::mutable_value() {
  checked(node_);
  return node_->value;
}

bool Var::requires_grad() const { return checked(node_).requires_grad; }

void Var::set_requires_grad(bool flag) {
  checked(node_);
  if (node_->backward) throw ArgumentError("set_requires_grad is only valid on leaves");
  node_->requires_grad = flag;
}

bool Var::is_leaf() const { return !checked(node_).backward; }

Tensor Var::grad() const {
  const Node& node = checked(node_);
  if (node.grad.empty()) return Tensor(node.value.shape(), 0.0);
  return Tensor(node.value.shape(), node.grad);
}

std::span<const double> Var::grad_span() const { return checked(node_).grad; }

void Var::zero_grad() {
  checked(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  require_finite(value, "record");
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_);
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  const auto& root = loss.node_;
  checked(root);
  if (root->value.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_string(root->value.shape()));
  }
  if (!root->backward) {
    throw ProvenanceError("loss was not produced by recorded differentiable operations");
  }

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.contains(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order) {
    if (node->backward) node->grad.assign(node->value.size(), 0.0);
  }
  root->grad[0] = 1.0;

  std::vector<std::vector<double>*> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward) continue;
    slots.assign(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      Node* in = node->inputs[i].get();
      if (in->requires_grad) slots[i] = &ensure_grad(*in);
    }
    node->backward(node->grad, slots);
  }
}

// ---------------------------------------------------------------------------

namespace {

void require_same(const Var& a, const Var& b, const char* op) { require_same_shape(a.value(), b.value(), op); }

}  // namespace

Var add(const Var& a, const Var& b) { return axpby(1.0, a, 1.0, b); }

Var sub(const Var& a, const Var& b) { return axpby(1.0, a, -1.0, b); }

Var axpby(double alpha, const Var& a, double beta, const Var& b) {
  require_same(a, b, "axpby");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * out[i] + beta * bv[i];
  return record(std::move(out), {a, b}, [alpha, beta](auto g, auto grads) {
    if (grads[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += alpha * g[i];
    if (grads[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += beta * g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return record(std::move(out), {a, b}, [av = a.value(), bv](auto g, auto grads) {
    if (grads[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * bv[i];
    if (grads[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i] * av[i];
  });
}

Var scale(const Var& a, double s) {
  Tensor out = s * a.value();
  return record(std::move(out), {a}, [s](auto g, auto grads) {
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += s * g[i];
  });
}

Var add_constant(const Var& a, const Tensor& c) {
  require_same_shape(a.value(), c, "add_constant");
  Tensor out = a.value() + c;
  return record(std::move(out), {a}, [](auto g, auto grads) {
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
  });
}

Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return record(Tensor::scalar(acc), {a}, [](auto g, auto grads) {
    for (auto& v : *grads[0]) v += g[0];
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var dot(const Var& a, const Var& b) {
  require_same(a, b, "dot");
  const double value = dot(a.value(), b.value());
  return record(Tensor::scalar(value), {a, b}, [av = a.value(), bv = b.value()](auto g, auto grads) {
    if (grads[0])
      for (std::size_t i = 0; i < av.size(); ++i) (*grads[0])[i] += g[0] * bv[i];
    if (grads[1])
      for (std::size_t i = 0; i < av.size(); ++i) (*grads[1])[i] += g[0] * av[i];
  });
}

Var mse(const Var& a, const Tensor& target) {
  require_same_shape(a.value(), target, "mse");
  const auto& av = a.value();
  const double n = static_cast<double>(av.size());
  std::vector<double> diff(av.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    diff[i] = av[i] - target[i];
    acc += diff[i] * diff[i];
  }
  return record(Tensor::scalar(acc / n), {a}, [diff = std::move(diff), n](auto g, auto grads) {
    const double k = 2.0 * g[0] / n;
    for (std::size_t i = 0; i < diff.size(); ++i) (*grads[0])[i] += k * diff[i];
  });
}

Var silu(const Var& a) {
  const auto& av = a.value();
  Tensor out(av.shape());
  std::vector<double> sig(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    sig[i] = 1.0 / (1.0 + std::exp(-av[i]));
    out[i] = av[i] * sig[i];
  }
  return record(std::move(out), {a}, [av, sig = std::move(sig)](auto g, auto grads) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = sig[i] * (1.0 + av[i] * (1.0 - sig[i]));
      (*grads[0])[i] += g[i] * d;
    }
  });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::tanh(v);
  return record(out, {a}, [out](auto g, auto grads) {
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * (1.0 - out[i] * out[i]);
  });
}

Var square(const Var& a) { return mul(a, a); }

Var concat(const std::vector<Var>& parts) {
  std::vector<double> data;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(data.size());
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  const std::size_t n = data.size();
  return record(Tensor(Shape{n}, std::move(data)), parts, [offsets](auto g, auto grads) {
    for (std::size_t k = 0; k < grads.size(); ++k) {
      if (!grads[k]) continue;
      auto& dst = *grads[k];
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[offsets[k] + i];
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return record(std::move(out), {a}, [](auto g, auto grads) {
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const auto& w = weight.value();
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (w.rank() != 2 || w.shape()[1] != xv.size() || bv.size() != w.shape()[0]) {
    throw ShapeError("linear: weight " + shape_string(w.shape()) + ", input " + shape_string(xv.shape()) +
                     ", bias " + shape_string(bv.shape()));
  }
  const std::size_t out_dim = w.shape()[0];
  const std::size_t in_dim = w.shape()[1];
  Tensor out(Shape{out_dim});
  const double* wp = w.data().data();
  const double* xp = xv.data().data();
  for (std::size_t o = 0; o < out_dim; ++o) {
    double acc = bv[o];
    const double* row = wp + o * in_dim;
    for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * xp[i];
    out[o] = acc;
  }
  // Parameters are only mutated between evaluations, so the backward rule
  // reads the weight and input through their handles instead of copying.
  return record(std::move(out), {x, weight, bias}, [x, weight, out_dim, in_dim](auto g, auto grads) {
    const double* wp = weight.value().data().data();
    if (grads[0]) {
      auto& dx = *grads[0];
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double go = g[o];
        if (go == 0.0) continue;
        const double* row = wp + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) dx[i] += row[i] * go;
      }
    }
    if (grads[1]) {
      auto& dw = *grads[1];
      const double* xp = x.value().data().data();
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double go = g[o];
        double* row = dw.data() + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) row[i] += go * xp[i];
      }
    }
    if (grads[2]) {
      for (std::size_t o = 0; o < out_dim; ++o) (*grads[2])[o] += g[o];
    }
  });
}

}  // namespace spse
