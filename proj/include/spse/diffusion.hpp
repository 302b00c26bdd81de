#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "spse/autodiff.hpp"
#include "spse/rng.hpp"
#include "spse/tensor.hpp"

namespace spse {

/// DDPM variance schedule with t in [1, T].
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::size_t steps = 100, double beta_start = 1e-4, double beta_end = 0.02);
  static NoiseSchedule from_betas(std::vector<double> betas);

  std::size_t steps() const noexcept { return betas_.size(); }
  double beta(std::size_t t) const;
  double alpha_bar(std::size_t t) const;
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

 private:
  struct Empty {};
  explicit NoiseSchedule(Empty) {}
  void finish();
  std::vector<double> betas_;
  std::vector<double> alpha_bar_;  // alpha_bar_[t - 1]
};

/// x_t = sqrt(alpha_bar) x + sqrt(1 - alpha_bar) eps
Var add_noise(const Var& x, const Tensor& eps, double alpha_bar);
Var add_noise(const NoiseSchedule& schedule, const Var& x, std::size_t t, const Tensor& eps);

/// Sinusoidal timestep features (sin/cos pairs over geometric frequencies).
Tensor time_features(std::size_t t, std::size_t count);

struct DenoiserSpec {
  std::size_t image_elems = 256;
  std::size_t embed_dim = 32;
  std::size_t time_dim = 16;
  std::size_t hidden = 128;
};

/// Conditional noise predictor: an MLP over flatten(x_t) ++ time features ++
/// condition embedding with two SiLU hidden layers. Holds live weights and a
/// frozen snapshot of the weights taken when prior training finishes.
class Denoiser {
 public:
  Denoiser(DenoiserSpec spec, std::uint64_t seed);
  Denoiser(const Denoiser& other);
  Denoiser& operator=(const Denoiser& other);
  Denoiser(Denoiser&&) noexcept = default;
  Denoiser& operator=(Denoiser&&) noexcept = default;

  const DenoiserSpec& spec() const noexcept { return spec_; }

  /// Differentiable forward pass. x_t must have image_elems entries (any
  /// shape); the result has x_t's shape.
  Var predict(const Var& x_t, const Var& embedding, std::size_t t) const;
  /// Forward pass on plain values, no tape.
  Tensor predict_value(const Tensor& x_t, const Tensor& embedding, std::size_t t) const;

  std::vector<Var>& params() noexcept { return params_; }
  const std::vector<Var>& params() const noexcept { return params_; }
  static const std::vector<std::string>& param_names();
  void set_trainable(bool trainable);

  /// Snapshot the current weights as the immutable pre-finetune copy.
  void freeze_prior();
  bool has_frozen_prior() const noexcept { return !frozen_.empty(); }
  const std::vector<Tensor>& frozen_params() const noexcept { return frozen_; }
  /// Denoiser evaluating with the frozen weights.
  Denoiser frozen_copy() const;

  /// Load weights (and optionally the frozen snapshot) by position.
  void load(const std::vector<Tensor>& weights, const std::vector<Tensor>& frozen);

 private:
  DenoiserSpec spec_;
  std::vector<Var> params_;  // w1, b1, w2, b2, w3, b3
  std::vector<Tensor> frozen_;
};

/// One conditioned training image.
struct ConditionedImage {
  Tensor image;
  Tensor embedding;
};

struct TrainOptions {
  std::size_t steps = 3000;
  std::size_t batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  /// Probability of replacing the condition with the unconditional (zero)
  /// embedding so the same network also predicts eps(x_t; e_unc, t).
  double condition_dropout = 0.1;
};

struct TrainReport {
  std::vector<double> losses;  // mean per-step batch loss
  double first_fraction_mean(double fraction) const;
  double last_fraction_mean(double fraction) const;
};

/// Denoising objective ||predict(x_t; e, t) - eps||^2 (mean over pixels) for
/// one sample. `t` and `alpha_bar` are passed separately so degenerate noise
/// levels can be probed.
Var denoising_loss(const Denoiser& denoiser, const Tensor& image, const Var& embedding, std::size_t t,
                   double alpha_bar, const Tensor& eps);

/// Adam on the denoising objective over uniformly sampled images, timesteps
/// and noise. Stores the frozen snapshot when done. Throws TrainingError on
/// divergence.
TrainReport train_prior(Denoiser& denoiser, const std::vector<ConditionedImage>& data, const NoiseSchedule& schedule,
                        const TrainOptions& options);

/// Same objective with fixed conditions, updating the live weights only.
/// The frozen snapshot is left untouched.
using StepCallback = std::function<void(std::size_t step, double loss, double grad_norm)>;
TrainReport finetune(Denoiser& denoiser, const std::vector<ConditionedImage>& data, const NoiseSchedule& schedule,
                     const TrainOptions& options, const StepCallback& on_step = {});

}  // namespace spse
