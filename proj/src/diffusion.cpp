#include "spse/diffusion.hpp"

#include <cmath>

#include "spse/adam.hpp"
#include "spse/errors.hpp"

namespace spse {

NoiseSchedule::NoiseSchedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps == 0) throw ArgumentError("noise schedule needs at least one step");
  betas_.resize(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double f = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas_[i] = beta_start + f * (beta_end - beta_start);
  }
  finish();
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ArgumentError("noise schedule needs at least one step");
  NoiseSchedule s{Empty{}};
  s.betas_ = std::move(betas);
  s.finish();
  return s;
}

void NoiseSchedule::finish() {
  alpha_bar_.resize(betas_.size());
  double acc = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    if (!(betas_[i] > 0.0 && betas_[i] < 1.0)) throw ArgumentError("betas must lie in (0, 1)");
    acc *= 1.0 - betas_[i];
    alpha_bar_[i] = acc;
  }
}

double NoiseSchedule::beta(std::size_t t) const {
  if (t < 1 || t > steps()) throw RangeError("timestep " + std::to_string(t) + " outside [1, T]");
  return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
  if (t < 1 || t > steps()) throw RangeError("timestep " + std::to_string(t) + " outside [1, T]");
  return alpha_bar_[t - 1];
}

Var add_noise(const Var& x, const Tensor& eps, double alpha_bar) {
  if (eps.size() != x.size()) throw ShapeError("add_noise: noise and image sizes differ");
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  return add_constant(scale(x, a), (b * eps).reshaped(x.shape()));
}

Var add_noise(const NoiseSchedule& schedule, const Var& x, std::size_t t, const Tensor& eps) {
  return add_noise(x, eps, schedule.alpha_bar(t));
}

Tensor time_features(std::size_t t, std::size_t count) {
  Tensor out(Shape{count});
  const std::size_t half = count / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(1000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double angle = static_cast<double>(t) * freq;
    out[2 * i] = std::sin(angle);
    out[2 * i + 1] = std::cos(angle);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Tensor init_weight(RngStream& rng, std::size_t out, std::size_t in, double gain) {
  Tensor w = gaussian(rng, Shape{out, in});
  const double s = gain / std::sqrt(static_cast<double>(in));
  for (auto& v : w.data()) v *= s;
  return w;
}

}  // namespace

Denoiser::Denoiser(DenoiserSpec spec, std::uint64_t seed) : spec_(spec) {
  RngStream rng(seed);
  const std::size_t in = spec_.image_elems + spec_.time_dim + spec_.embed_dim;
  params_ = {
      Var::parameter(init_weight(rng, spec_.hidden, in, 1.0)),
      Var::parameter(Tensor(Shape{spec_.hidden}, 0.0)),
      Var::parameter(init_weight(rng, spec_.hidden, spec_.hidden, 1.0)),
      Var::parameter(Tensor(Shape{spec_.hidden}, 0.0)),
      Var::parameter(init_weight(rng, spec_.image_elems, spec_.hidden, 0.1)),
      Var::parameter(Tensor(Shape{spec_.image_elems}, 0.0)),
  };
}

Denoiser::Denoiser(const Denoiser& other) : spec_(other.spec_), frozen_(other.frozen_) {
  for (const auto& p : other.params_) {
    params_.push_back(Var::parameter(p.value()));
    params_.back().set_requires_grad(p.requires_grad());
  }
}

Denoiser& Denoiser::operator=(const Denoiser& other) {
  if (this != &other) *this = Denoiser(other);
  return *this;
}

const std::vector<std::string>& Denoiser::param_names() {
  static const std::vector<std::string> names{"l1.weight", "l1.bias", "l2.weight", "l2.bias", "l3.weight", "l3.bias"};
  return names;
}

Var Denoiser::predict(const Var& x_t, const Var& embedding, std::size_t t) const {
  if (x_t.size() != spec_.image_elems) {
    throw ShapeError("denoiser expects " + std::to_string(spec_.image_elems) + " image entries, got " +
                     std::to_string(x_t.size()));
  }
  if (embedding.size() != spec_.embed_dim) {
    throw ShapeError("denoiser expects a " + std::to_string(spec_.embed_dim) + "-dim embedding, got " +
                     std::to_string(embedding.size()));
  }
  const Var input = concat({reshape(x_t, Shape{spec_.image_elems}), Var::constant(time_features(t, spec_.time_dim)),
                            reshape(embedding, Shape{spec_.embed_dim})});
  const Var h1 = silu(linear(input, params_[0], params_[1]));
  const Var h2 = silu(linear(h1, params_[2], params_[3]));
  return reshape(linear(h2, params_[4], params_[5]), x_t.shape());
}

Tensor Denoiser::predict_value(const Tensor& x_t, const Tensor& embedding, std::size_t t) const {
  if (x_t.size() != spec_.image_elems || embedding.size() != spec_.embed_dim) {
    throw ShapeError("denoiser input size mismatch");
  }
  std::vector<double> input;
  input.reserve(spec_.image_elems + spec_.time_dim + spec_.embed_dim);
  input.insert(input.end(), x_t.data().begin(), x_t.data().end());
  const Tensor tf = time_features(t, spec_.time_dim);
  input.insert(input.end(), tf.data().begin(), tf.data().end());
  input.insert(input.end(), embedding.data().begin(), embedding.data().end());

  // Same arithmetic order as linear()/silu() so both paths agree bitwise.
  auto dense = [](const std::vector<double>& x, const Tensor& w, const Tensor& b, bool activate) {
    const std::size_t out_dim = w.shape()[0];
    const std::size_t in_dim = w.shape()[1];
    std::vector<double> y(out_dim);
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = b[o];
      const double* row = w.data().data() + o * in_dim;
      for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * x[i];
      if (activate) acc = acc * (1.0 / (1.0 + std::exp(-acc)));
      y[o] = acc;
    }
    return y;
  };
  auto h = dense(input, params_[0].value(), params_[1].value(), true);
  h = dense(h, params_[2].value(), params_[3].value(), true);
  h = dense(h, params_[4].value(), params_[5].value(), false);
  return Tensor(x_t.shape(), std::move(h));
}

void Denoiser::set_trainable(bool trainable) {
  for (auto& p : params_) p.set_requires_grad(trainable);
}

void Denoiser::freeze_prior() {
  frozen_.clear();
  for (const auto& p : params_) frozen_.push_back(p.value());
}

Denoiser Denoiser::frozen_copy() const {
  if (frozen_.empty()) throw ArgumentError("denoiser has no frozen prior weights");
  Denoiser out(*this);
  for (std::size_t i = 0; i < params_.size(); ++i) out.params_[i].assign(frozen_[i]);
  return out;
}

void Denoiser::load(const std::vector<Tensor>& weights, const std::vector<Tensor>& frozen) {
  if (weights.size() != params_.size() || (!frozen.empty() && frozen.size() != params_.size())) {
    throw FormatError("denoiser expects " + std::to_string(params_.size()) + " weight tensors");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params_[i].assign(weights[i]);
    if (!frozen.empty() && frozen[i].shape() != params_[i].shape()) throw ShapeError("frozen weight shape mismatch");
  }
  frozen_ = frozen;
}

// ---------------------------------------------------------------------------

double TrainReport::first_fraction_mean(double fraction) const {
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(losses.size())));
  double acc = 0.0;
  for (std::size_t i = 0; i < k && i < losses.size(); ++i) acc += losses[i];
  return acc / static_cast<double>(std::min(k, losses.size()));
}

double TrainReport::last_fraction_mean(double fraction) const {
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(losses.size())));
  double acc = 0.0;
  const std::size_t start = losses.size() > k ? losses.size() - k : 0;
  for (std::size_t i = start; i < losses.size(); ++i) acc += losses[i];
  return acc / static_cast<double>(losses.size() - start);
}

Var denoising_loss(const Denoiser& denoiser, const Tensor& image, const Var& embedding, std::size_t t,
                   double alpha_bar, const Tensor& eps) {
  const Var x_t = add_noise(Var::constant(image), eps, alpha_bar);
  return mse(denoiser.predict(x_t, embedding, t), eps.reshaped(image.shape()));
}

namespace {

TrainReport fit(Denoiser& denoiser, const std::vector<ConditionedImage>& data, const NoiseSchedule& schedule,
                const TrainOptions& options, double dropout, const StepCallback& on_step) {
  if (data.empty()) throw ArgumentError("training data is empty");
  TrainReport report;
  if (options.steps == 0) return report;

  denoiser.set_trainable(true);
  Adam adam(denoiser.params(), AdamOptions{options.lr});
  RngStream rng(options.seed);
  const Tensor unconditional(Shape{denoiser.spec().embed_dim}, 0.0);
  const double inv_batch = 1.0 / static_cast<double>(options.batch);

  for (std::size_t step = 0; step < options.steps; ++step) {
    adam.zero_grad();
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < options.batch; ++b) {
      const auto& sample = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))];
      const auto t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(schedule.steps())));
      const Tensor eps = gaussian(rng, sample.image.shape());
      const bool drop = dropout > 0.0 && rng.uniform() < dropout;
      const Var e = Var::constant(drop ? unconditional : sample.embedding);
      try {
        const Var loss = denoising_loss(denoiser, sample.image, e, t, schedule.alpha_bar(t), eps);
        batch_loss += loss.value().item() * inv_batch;
        backward(scale(loss, inv_batch));
      } catch (const NumericError& err) {
        throw TrainingError("training diverged at step " + std::to_string(step) + ": " + err.what());
      }
    }
    if (!std::isfinite(batch_loss)) {
      throw TrainingError("training diverged at step " + std::to_string(step));
    }
    const double gnorm = adam.grad_norm();
    try {
      adam.step();
    } catch (const NumericError&) {
      throw TrainingError("non-finite gradient at step " + std::to_string(step));
    }
    report.losses.push_back(batch_loss);
    if (on_step) on_step(step, batch_loss, gnorm);
  }
  adam.zero_grad();
  return report;
}

}  // namespace

TrainReport train_prior(Denoiser& denoiser, const std::vector<ConditionedImage>& data, const NoiseSchedule& schedule,
                        const TrainOptions& options) {
  auto report = fit(denoiser, data, schedule, options, options.condition_dropout, {});
  denoiser.freeze_prior();
  return report;
}

TrainReport finetune(Denoiser& denoiser, const std::vector<ConditionedImage>& data, const NoiseSchedule& schedule,
                     const TrainOptions& options, const StepCallback& on_step) {
  if (!denoiser.has_frozen_prior()) denoiser.freeze_prior();
  return fit(denoiser, data, schedule, options, options.condition_dropout, on_step);
}

}  // namespace spse
