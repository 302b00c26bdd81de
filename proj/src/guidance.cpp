#include "spse/guidance.hpp"

#include <cmath>

#include "spse/errors.hpp"

namespace spse {

Tensor fuse(const Tensor& target, const Tensor& original, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw RangeError("fusion rate must lie in [0, 1], got " + std::to_string(rate));
  require_same_shape(target, original, "fuse");
  Tensor out(target.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = rate * target[i] + (1.0 - rate) * original[i];
  return out;
}

MultiViewEmbedding fuse(const Tensor& target, const MultiViewEmbedding& original, double rate) {
  MultiViewEmbedding out(original);
  for (std::size_t i = 0; i < 4; ++i) out.bases()[i].assign(fuse(target, original.base(i), rate));
  return out;
}

CfgResult cfg_direction(const Tensor& eps_unc, const Tensor& eps_cond, double guidance_scale) {
  Tensor direction = eps_cond - eps_unc;
  Tensor prediction = cfg_assemble(eps_unc, direction, guidance_scale);
  return {std::move(prediction), std::move(direction)};
}

Tensor cfg_assemble(const Tensor& eps_unc, const Tensor& direction, double guidance_scale) {
  require_same_shape(eps_unc, direction, "cfg");
  Tensor out(eps_unc.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_unc[i] + guidance_scale * direction[i];
  return out;
}

Tensor perp_extract(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "perp_extract");
  const double bb = dot(b, b);
  if (std::sqrt(bb) < kDegenerateNorm) throw DegenerateGuidanceError("reference direction has vanishing norm");
  const double k = dot(a, b) / bb;
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - k * b[i];
  // One refinement pass removes the rounding residue left along b.
  const double k2 = dot(out, b) / bb;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= k2 * b[i];
  return out;
}

double lambda_weight(const Tensor& eps_f, const Tensor& eps_perp, double scale) {
  const double perp = norm(eps_perp);
  if (perp < kDegenerateNorm) throw DegenerateGuidanceError("perpendicular component has vanishing norm");
  return norm(eps_f) / perp * scale;
}

std::string to_string(SpsPhase phase) {
  switch (phase) {
    case SpsPhase::kTargetEnhancement: return "target_enhancement";
    case SpsPhase::kFused: return "fused";
    case SpsPhase::kDetailEnhancement: return "detail_enhancement";
  }
  return "unknown";
}

SpsSchedule SpsSchedule::geometry(std::size_t total, std::size_t phase1, std::size_t phase3) {
  SpsSchedule s;
  s.total_steps = total;
  s.phase1_end = phase1;
  s.phase3_start = total >= phase3 ? total - phase3 : 0;
  s.validate();
  return s;
}

SpsSchedule SpsSchedule::texture(std::size_t total, std::size_t phase3) {
  SpsSchedule s = geometry(total, 0, phase3);
  return s;
}

void SpsSchedule::validate() const {
  if (!(phase1_end <= phase3_start && phase3_start <= total_steps)) {
    throw ConfigError("SPS phases must satisfy 0 <= phase1_end <= phase3_start <= total_steps");
  }
  if (!(lambda_t_scale >= 0.0) || !(lambda_d_scale >= 0.0)) throw ConfigError("lambda scales must be non-negative");
  if (!std::isfinite(guidance_scale)) throw ConfigError("guidance scale must be finite");
}

SpsPhase SpsSchedule::phase_at(std::size_t step) const {
  if (step >= total_steps) throw RangeError("SPS step " + std::to_string(step) + " beyond schedule");
  if (step < phase1_end) return SpsPhase::kTargetEnhancement;
  if (step >= phase3_start) return SpsPhase::kDetailEnhancement;
  return SpsPhase::kFused;
}

SpsOutput sps_direction(const GuidanceDirections& dirs, const SpsSchedule& schedule, std::size_t step) {
  SpsOutput out;
  out.phase = schedule.phase_at(step);
  const Tensor eps_f = dirs.eps_cond_f - dirs.eps_unc;
  out.direction = eps_f;

  if (out.phase != SpsPhase::kFused) {
    const bool target = out.phase == SpsPhase::kTargetEnhancement;
    const double scale = target ? schedule.lambda_t_scale : schedule.lambda_d_scale;
    const Tensor& cond = target ? dirs.eps_cond_t : dirs.eps_cond_o;
    if (scale != 0.0) {
      try {
        const Tensor perp = perp_extract(cond - dirs.eps_unc, eps_f);
        out.lambda = lambda_weight(eps_f, perp, scale);
        for (std::size_t i = 0; i < eps_f.size(); ++i) out.direction[i] = out.lambda * perp[i] + eps_f[i];
      } catch (const DegenerateGuidanceError&) {
        out.lambda = 0.0;
        out.degenerate = true;
        out.direction = eps_f;
      }
    }
  }
  out.prediction = cfg_assemble(dirs.eps_unc, out.direction, schedule.guidance_scale);
  return out;
}

std::string to_string(TimestepWeighting weighting) {
  return weighting == TimestepWeighting::kUnit ? "unit" : "noise-variance";
}

TimestepWeighting timestep_weighting_from_string(const std::string& text) {
  if (text == "unit") return TimestepWeighting::kUnit;
  if (text == "noise-variance") return TimestepWeighting::kNoiseVariance;
  throw ConfigError("timestep weighting must be unit or noise-variance, got '" + text + "'");
}

double timestep_weight(TimestepWeighting weighting, const NoiseSchedule& schedule, std::size_t t) {
  const double ab = schedule.alpha_bar(t);
  return weighting == TimestepWeighting::kUnit ? 1.0 : 1.0 - ab;
}

Var sds_surrogate(const Var& render, const Tensor& eps_hat, const Tensor& eps, double omega) {
  require_same_shape(eps_hat, eps, "sds_surrogate");
  if (eps_hat.size() != render.size()) throw ShapeError("sds_surrogate: residual and render sizes differ");
  Tensor residual = omega * (eps_hat - eps);
  return dot(render, Var::constant(residual.reshaped(render.shape())));
}

}  // namespace spse
