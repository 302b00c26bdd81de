#pragma once

#include <functional>

#include "spse/tensor.hpp"

namespace spse {

using ScalarFn = std::function<double(const Tensor&)>;

/// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h for every
/// coordinate. Independent of the tape: `f` is evaluated on plain values.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h = 1e-4);

struct GradCheckResult {
  bool ok = true;
  double worst_abs_error = 0.0;
  double worst_rel_error = 0.0;
  std::size_t worst_index = 0;
};

/// Elementwise |a - n| <= atol + rtol * |n|.
GradCheckResult compare_gradients(const Tensor& analytic, const Tensor& numeric, double rtol = 1e-3,
                                  double atol = 1e-5);

}  // namespace spse
