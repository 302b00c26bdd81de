#pragma once

#include <cstddef>
#include <string>

#include "spse/autodiff.hpp"
#include "spse/diffusion.hpp"
#include "spse/mve.hpp"
#include "spse/tensor.hpp"

namespace spse {

/// r * e_t + (1 - r) * e_o. Throws RangeError unless r is in [0, 1].
Tensor fuse(const Tensor& target, const Tensor& original, double rate);
/// Per-base fusion of a target embedding into a multi-view embedding.
MultiViewEmbedding fuse(const Tensor& target, const MultiViewEmbedding& original, double rate);

struct CfgResult {
  Tensor prediction;  // eps_unc + w * (eps_cond - eps_unc)
  Tensor direction;   // eps_cond - eps_unc
};

CfgResult cfg_direction(const Tensor& eps_unc, const Tensor& eps_cond, double guidance_scale);
/// eps_unc + w * direction
Tensor cfg_assemble(const Tensor& eps_unc, const Tensor& direction, double guidance_scale);

inline constexpr double kDegenerateNorm = 1e-12;

/// Component of `a` orthogonal to `b`: a - (a.b / |b|^2) b.
/// Throws DegenerateGuidanceError when |b| < 1e-12.
Tensor perp_extract(const Tensor& a, const Tensor& b);

/// (|eps_f| / |eps_perp|) * scale. Throws DegenerateGuidanceError when
/// |eps_perp| < 1e-12.
double lambda_weight(const Tensor& eps_f, const Tensor& eps_perp, double scale);

/// Noise predictions for one (x_t, t) under the four conditions.
struct GuidanceDirections {
  Tensor eps_unc;     // e_unc
  Tensor eps_cond_f;  // fused embedding
  Tensor eps_cond_t;  // target embedding
  Tensor eps_cond_o;  // optimised original embedding
};

enum class SpsPhase { kTargetEnhancement = 1, kFused = 2, kDetailEnhancement = 3 };
std::string to_string(SpsPhase phase);

struct SpsSchedule {
  std::size_t total_steps = 300;
  std::size_t phase1_end = 100;
  std::size_t phase3_start = 200;
  double lambda_t_scale = 0.4;
  double lambda_d_scale = 0.2;
  double guidance_scale = 10.0;

  /// 300 steps: first 100 target enhancement, last 100 detail enhancement.
  static SpsSchedule geometry(std::size_t total = 300, std::size_t phase1 = 100, std::size_t phase3 = 100);
  /// No target-enhancement phase; last `phase3` steps detail enhancement.
  static SpsSchedule texture(std::size_t total = 200, std::size_t phase3 = 100);

  void validate() const;
  SpsPhase phase_at(std::size_t step) const;
};

struct SpsOutput {
  SpsPhase phase = SpsPhase::kFused;
  Tensor direction;   // the guidance direction eps
  Tensor prediction;  // eps_unc + w * direction
  double lambda = 0.0;
  bool degenerate = false;  // fell back to the plain fused direction
};

/// Phase 1: lambda_t * perp(eps_t, eps_f) + eps_f; phase 2: eps_f;
/// phase 3: lambda_d * perp(eps_o, eps_f) + eps_f, where each eps_x is
/// eps_cond_x - eps_unc.
SpsOutput sps_direction(const GuidanceDirections& dirs, const SpsSchedule& schedule, std::size_t step);

/// Timestep weighting w(t) of the score-distillation gradient.
enum class TimestepWeighting {
  kUnit,           // w(t) = 1
  kNoiseVariance,  // w(t) = 1 - alpha_bar(t)
};
std::string to_string(TimestepWeighting weighting);
TimestepWeighting timestep_weighting_from_string(const std::string& text);
double timestep_weight(TimestepWeighting weighting, const NoiseSchedule& schedule, std::size_t t);

/// Surrogate <stopgrad(omega * (eps_hat - eps)), render>: backpropagating it
/// deposits omega * (eps_hat - eps) * d(render)/d(theta) on the parameters.
Var sds_surrogate(const Var& render, const Tensor& eps_hat, const Tensor& eps, double omega);

}  // namespace spse
