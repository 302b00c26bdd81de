#include "spse/mve.hpp"

#include <cmath>

#include "spse/adam.hpp"
#include "spse/errors.hpp"
#include "spse/scene.hpp"

namespace spse {

MultiViewEmbedding::MultiViewEmbedding(const Tensor& initial) {
  if (initial.rank() != 1) throw ShapeError("embeddings must be vectors, got " + shape_string(initial.shape()));
  for (auto& b : bases_) b = Var::parameter(initial);
}

MultiViewEmbedding::MultiViewEmbedding(const MultiViewEmbedding& other) {
  for (std::size_t i = 0; i < 4; ++i) {
    bases_[i] = Var::parameter(other.bases_[i].value());
    bases_[i].set_requires_grad(other.bases_[i].requires_grad());
  }
}

MultiViewEmbedding& MultiViewEmbedding::operator=(const MultiViewEmbedding& other) {
  if (this != &other) *this = MultiViewEmbedding(other);
  return *this;
}

void MultiViewEmbedding::set_trainable(bool trainable) {
  for (auto& b : bases_) b.set_requires_grad(trainable);
}

MultiViewEmbedding::Blend MultiViewEmbedding::blend(double azimuth, InterpolationConvention convention) {
  const double a = normalize_azimuth(azimuth);
  // Segments in ascending order; 180 doubles as -180 on the first one.
  struct Segment {
    double start;
    std::size_t lower;
    std::size_t upper;
  };
  static constexpr Segment kSegments[] = {{-180.0, 3, 1}, {-90.0, 1, 0}, {0.0, 0, 2}, {90.0, 2, 3}};
  const Segment* seg = &kSegments[0];
  for (const auto& s : kSegments)
    if (a >= s.start) seg = &s;
  const double f = (a - seg->start) / 90.0;
  if (convention == InterpolationConvention::kMatchingBase) return {seg->lower, seg->upper, 1.0 - f, f};
  return {seg->lower, seg->upper, f, 1.0 - f};
}

Var MultiViewEmbedding::interpolate(double azimuth, InterpolationConvention convention) const {
  const Blend b = blend(azimuth, convention);
  return axpby(b.lower_weight, bases_[b.lower], b.upper_weight, bases_[b.upper]);
}

Tensor MultiViewEmbedding::interpolate_value(double azimuth, InterpolationConvention convention) const {
  const Blend b = blend(azimuth, convention);
  return b.lower_weight * bases_[b.lower].value() + b.upper_weight * bases_[b.upper].value();
}

// ---------------------------------------------------------------------------

std::vector<NoiseDraw> sample_draws(RngStream& rng, std::size_t count, std::size_t n_views,
                                    const NoiseSchedule& schedule, const Shape& image_shape) {
  if (n_views == 0) throw ArgumentError("no views to sample from");
  std::vector<NoiseDraw> draws;
  draws.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    NoiseDraw d;
    d.view = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n_views) - 1));
    d.t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(schedule.steps())));
    d.alpha_bar = schedule.alpha_bar(d.t);
    d.eps = gaussian(rng, image_shape);
    draws.push_back(std::move(d));
  }
  return draws;
}

Var reconstruction_loss(const Denoiser& denoiser, const std::vector<ViewImage>& views, const EmbeddingForView& embed,
                        const std::vector<NoiseDraw>& draws) {
  if (draws.empty()) throw ArgumentError("reconstruction loss needs at least one draw");
  Var total;
  for (const auto& d : draws) {
    const auto& v = views.at(d.view);
    const Var term = denoising_loss(denoiser, v.image, embed(v.azimuth), d.t, d.alpha_bar, d.eps);
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(draws.size()));
}

Var multi_view_loss(const MultiViewEmbedding& mve, const Denoiser& denoiser, const std::vector<ViewImage>& views,
                    const std::vector<NoiseDraw>& draws, InterpolationConvention convention) {
  return reconstruction_loss(denoiser, views, [&](double az) { return mve.interpolate(az, convention); }, draws);
}

Var single_embedding_loss(const SingleEmbedding& embedding, const Denoiser& denoiser,
                          const std::vector<ViewImage>& views, const std::vector<NoiseDraw>& draws) {
  return reconstruction_loss(denoiser, views, [&](double) { return embedding.var(); }, draws);
}

namespace {

OptimTrace run_embedding_adam(std::vector<Var> params, const EmbeddingOptimOptions& options,
                              const std::function<Var(const std::vector<NoiseDraw>&)>& loss_fn,
                              const std::vector<ViewImage>& views, const NoiseSchedule& schedule,
                              const OptimStepCallback& on_step) {
  if (views.empty()) throw ArgumentError("embedding optimisation needs at least one view");
  OptimTrace trace;
  Adam adam(std::move(params), AdamOptions{options.lr});
  RngStream rng(options.seed);
  for (std::size_t step = 0; step < options.steps; ++step) {
    const auto draws = sample_draws(rng, options.batch, views.size(), schedule, views.front().image.shape());
    const double progress = static_cast<double>(step) / static_cast<double>(options.steps);
    adam.set_lr(options.lr * (1.0 - (1.0 - options.final_lr_fraction) * progress));
    adam.zero_grad();
    const Var loss = loss_fn(draws);
    backward(loss);
    const double l = loss.value().item();
    const double g = adam.grad_norm();
    if (!std::isfinite(l)) throw TrainingError("embedding optimisation diverged at step " + std::to_string(step));
    try {
      adam.step();
    } catch (const NumericError&) {
      throw TrainingError("non-finite embedding gradient at step " + std::to_string(step));
    }
    trace.losses.push_back(l);
    trace.grad_norms.push_back(g);
    if (on_step) on_step(step, l, g);
  }
  adam.zero_grad();
  return trace;
}

}  // namespace

OptimTrace optimize_embeddings(MultiViewEmbedding& mve, const Denoiser& denoiser, const std::vector<ViewImage>& views,
                               const NoiseSchedule& schedule, const EmbeddingOptimOptions& options,
                               const OptimStepCallback& on_step) {
  Denoiser fixed(denoiser);
  fixed.set_trainable(false);
  mve.set_trainable(true);
  std::vector<Var> params(mve.bases().begin(), mve.bases().end());
  return run_embedding_adam(
      std::move(params), options,
      [&](const std::vector<NoiseDraw>& draws) { return multi_view_loss(mve, fixed, views, draws, options.convention); },
      views, schedule, on_step);
}

OptimTrace optimize_single_embedding(SingleEmbedding& embedding, const Denoiser& denoiser,
                                     const std::vector<ViewImage>& views, const NoiseSchedule& schedule,
                                     const EmbeddingOptimOptions& options, const OptimStepCallback& on_step) {
  Denoiser fixed(denoiser);
  fixed.set_trainable(false);
  embedding.var().set_requires_grad(true);
  return run_embedding_adam(
      {embedding.var()}, options,
      [&](const std::vector<NoiseDraw>& draws) { return single_embedding_loss(embedding, fixed, views, draws); }, views,
      schedule, on_step);
}

TrainReport finetune_on_views(Denoiser& denoiser, const std::vector<ViewImage>& views,
                              const std::function<Tensor(double azimuth)>& embed, const NoiseSchedule& schedule,
                              const TrainOptions& options, const StepCallback& on_step) {
  std::vector<ConditionedImage> data;
  data.reserve(views.size());
  for (const auto& v : views) data.push_back({v.image, embed(v.azimuth)});
  return finetune(denoiser, data, schedule, options, on_step);
}

}  // namespace spse
