#pragma once

#include <vector>

#include "spse/autodiff.hpp"

namespace spse {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamOptions options);

  /// Apply one update from the accumulated gradients. Throws NumericError on a
  /// non-finite gradient.
  void step();
  void zero_grad();
  /// L2 norm of the concatenated current gradients.
  double grad_norm() const;
  void set_lr(double lr) { options_.lr = lr; }
  double lr() const noexcept { return options_.lr; }

  const std::vector<Var>& params() const noexcept { return params_; }
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  std::vector<Var> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

}  // namespace spse
