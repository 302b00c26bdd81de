#include "spse/gradcheck.hpp"

#include <cmath>

#include "spse/errors.hpp"

namespace spse {

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ArgumentError("finite_diff_grad: step must be positive");
  Tensor probe = x;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + h;
    const double fp = f(probe);
    probe[i] = original - h;
    const double fm = f(probe);
    probe[i] = original;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    }
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

GradCheckResult compare_gradients(const Tensor& analytic, const Tensor& numeric, double rtol, double atol) {
  require_same_shape(analytic, numeric, "compare_gradients");
  GradCheckResult result;
  double worst_excess = -1.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]);
    const double bound = atol + rtol * std::abs(numeric[i]);
    const double rel = err / std::max(std::abs(numeric[i]), 1e-300);
    if (err > bound) result.ok = false;
    if (err - bound > worst_excess) {
      worst_excess = err - bound;
      result.worst_index = i;
    }
    result.worst_abs_error = std::max(result.worst_abs_error, err);
    if (err > atol) result.worst_rel_error = std::max(result.worst_rel_error, rel);
  }
  return result;
}

}  // namespace spse
