#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "spse/autodiff.hpp"
#include "spse/diffusion.hpp"
#include "spse/tensor.hpp"

namespace spse {

/// How an azimuth between two base angles weights its neighbours.
enum class InterpolationConvention {
  /// Weight 1 - (a - a0)/90 on the lower base: reproduces each base exactly.
  kMatchingBase,
  /// Weight (a - a0)/90 on the lower base, i.e. the coefficients swapped.
  kSwapped,
};

/// Four trainable view embeddings at base azimuths 0, -90, 90 and 180 degrees,
/// blended linearly for views in between.
class MultiViewEmbedding {
 public:
  static constexpr std::array<double, 4> kBaseAzimuths{0.0, -90.0, 90.0, 180.0};

  /// All four bases start as copies of `initial`.
  explicit MultiViewEmbedding(const Tensor& initial);
  MultiViewEmbedding(const MultiViewEmbedding& other);
  MultiViewEmbedding& operator=(const MultiViewEmbedding& other);
  MultiViewEmbedding(MultiViewEmbedding&&) noexcept = default;
  MultiViewEmbedding& operator=(MultiViewEmbedding&&) noexcept = default;

  std::array<Var, 4>& bases() noexcept { return bases_; }
  const std::array<Var, 4>& bases() const noexcept { return bases_; }
  const Tensor& base(std::size_t i) const { return bases_.at(i).value(); }
  std::size_t dim() const { return bases_[0].size(); }

  void set_trainable(bool trainable);

  struct Blend {
    std::size_t lower;  // index into bases()
    std::size_t upper;
    double lower_weight;
    double upper_weight;
  };
  /// Adjacent bases and their weights for an azimuth (normalised internally).
  static Blend blend(double azimuth, InterpolationConvention convention = InterpolationConvention::kMatchingBase);

  Var interpolate(double azimuth, InterpolationConvention convention = InterpolationConvention::kMatchingBase) const;
  Tensor interpolate_value(double azimuth,
                           InterpolationConvention convention = InterpolationConvention::kMatchingBase) const;

 private:
  std::array<Var, 4> bases_;
};

/// One embedding shared by every view.
class SingleEmbedding {
 public:
  explicit SingleEmbedding(const Tensor& initial) : value_(Var::parameter(initial)) {}
  SingleEmbedding(const SingleEmbedding& other) : value_(Var::parameter(other.value_.value())) {}
  SingleEmbedding& operator=(const SingleEmbedding& other) {
    if (this != &other) value_ = Var::parameter(other.value_.value());
    return *this;
  }
  SingleEmbedding(SingleEmbedding&&) noexcept = default;
  SingleEmbedding& operator=(SingleEmbedding&&) noexcept = default;

  Var& var() noexcept { return value_; }
  const Var& var() const noexcept { return value_; }
  const Tensor& value() const { return value_.value(); }

 private:
  Var value_;
};

/// Render of the original object seen from one azimuth.
struct ViewImage {
  double azimuth;
  Tensor image;
};

/// One Monte-Carlo term of the reconstruction objective.
struct NoiseDraw {
  std::size_t view = 0;  // index into the ViewImage list
  std::size_t t = 1;
  double alpha_bar = 1.0;
  Tensor eps;
};

std::vector<NoiseDraw> sample_draws(RngStream& rng, std::size_t count, std::size_t n_views,
                                    const NoiseSchedule& schedule, const Shape& image_shape);

using EmbeddingForView = std::function<Var(double azimuth)>;

/// Mean over draws of mean((predict(x_t^v; e(alpha_v), t) - eps)^2).
Var reconstruction_loss(const Denoiser& denoiser, const std::vector<ViewImage>& views, const EmbeddingForView& embed,
                        const std::vector<NoiseDraw>& draws);

/// Reconstruction loss with interpolated view-dependent embeddings.
Var multi_view_loss(const MultiViewEmbedding& mve, const Denoiser& denoiser, const std::vector<ViewImage>& views,
                    const std::vector<NoiseDraw>& draws,
                    InterpolationConvention convention = InterpolationConvention::kMatchingBase);

/// Reconstruction loss with one embedding for every view.
Var single_embedding_loss(const SingleEmbedding& embedding, const Denoiser& denoiser,
                          const std::vector<ViewImage>& views, const std::vector<NoiseDraw>& draws);

struct EmbeddingOptimOptions {
  std::size_t steps = 200;
  std::size_t batch = 4;
  double lr = 2e-3;
  /// Learning rate decays linearly from lr to lr * final_lr_fraction.
  double final_lr_fraction = 1.0;
  std::uint64_t seed = 0;
  InterpolationConvention convention = InterpolationConvention::kMatchingBase;
};

struct OptimTrace {
  std::vector<double> losses;
  std::vector<double> grad_norms;
};

using OptimStepCallback = std::function<void(std::size_t step, double loss, double grad_norm)>;

/// Adam on the base embeddings only; the denoiser is held fixed.
OptimTrace optimize_embeddings(MultiViewEmbedding& mve, const Denoiser& denoiser, const std::vector<ViewImage>& views,
                               const NoiseSchedule& schedule, const EmbeddingOptimOptions& options,
                               const OptimStepCallback& on_step = {});

OptimTrace optimize_single_embedding(SingleEmbedding& embedding, const Denoiser& denoiser,
                                     const std::vector<ViewImage>& views, const NoiseSchedule& schedule,
                                     const EmbeddingOptimOptions& options, const OptimStepCallback& on_step = {});

/// Finetune the denoiser weights on the original object's views with the
/// view embeddings held fixed at `embed(azimuth)`.
TrainReport finetune_on_views(Denoiser& denoiser, const std::vector<ViewImage>& views,
                              const std::function<Tensor(double azimuth)>& embed, const NoiseSchedule& schedule,
                              const TrainOptions& options, const StepCallback& on_step = {});

}  // namespace spse
