#include "spse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "spse/adam.hpp"
#include "spse/errors.hpp"
#include "spse/rng.hpp"

namespace spse {

std::string to_string(RenderKind kind) {
  switch (kind) {
    case RenderKind::kIntensity: return "intensity";
    case RenderKind::kDepth: return "depth";
    case RenderKind::kColor: return "color";
  }
  return "unknown";
}

RenderKind render_kind_from_string(const std::string& text) {
  if (text == "intensity") return RenderKind::kIntensity;
  if (text == "depth") return RenderKind::kDepth;
  if (text == "color") return RenderKind::kColor;
  throw ArgumentError("render kind must be intensity, depth or color, got '" + text + "'");
}

Tensor render_value(const VoxelScene& scene, RenderKind kind, const View& view) {
  switch (kind) {
    case RenderKind::kIntensity: return render_intensity(scene, view).value();
    case RenderKind::kDepth: return render_depth(scene, view).value();
    case RenderKind::kColor: return render_color(scene, view).value();
  }
  throw ArgumentError("bad render kind");
}

std::size_t image_elems(RenderKind kind, std::size_t image_size) {
  return image_size * image_size * (kind == RenderKind::kColor ? 3 : 1);
}

// ---------------------------------------------------------------------------

const Denoiser& PriorModels::denoiser(RenderKind kind) const {
  switch (kind) {
    case RenderKind::kIntensity: return intensity;
    case RenderKind::kDepth: return depth;
    case RenderKind::kColor: return color;
  }
  throw ArgumentError("bad render kind");
}

std::vector<ConditionedImage> training_images(const std::vector<CorpusEntry>& corpus, const ConceptVocabulary& vocab,
                                              RenderKind kind) {
  std::vector<ConditionedImage> out;
  for (const auto& entry : corpus) {
    const Tensor e = vocab.encode(entry.tags);
    const auto& images = kind == RenderKind::kIntensity ? entry.intensity
                         : kind == RenderKind::kDepth   ? entry.depth
                                                        : entry.color;
    for (const auto& img : images) out.push_back({img, e});
  }
  return out;
}

namespace {

DenoiserSpec spec_for(RenderKind kind, std::size_t image_size, std::size_t embed_dim) {
  DenoiserSpec spec;
  spec.image_elems = image_elems(kind, image_size);
  spec.embed_dim = embed_dim;
  return spec;
}

// Distinct stream labels so every random consumer is independent of the
// others' draw counts.
enum StreamLabel : std::uint64_t {
  kStreamIntensityInit = 11,
  kStreamDepthInit,
  kStreamColorInit,
  kStreamIntensityTrain,
  kStreamDepthTrain,
  kStreamColorTrain,
  kStreamEmbedding = 31,
  kStreamFinetune,
  kStreamGeometry = 41,
  kStreamTexture,
};

}  // namespace

PriorModels train_priors(const std::vector<CorpusEntry>& corpus, const PriorOptions& options, PriorReports* reports) {
  if (corpus.empty()) throw ArgumentError("cannot train priors on an empty corpus");
  const ConceptVocabulary vocab = ConceptVocabulary::make_default();
  const std::size_t m = corpus.front().intensity.front().shape()[0];
  const RngStream root(options.seed);
  auto make = [&](RenderKind kind, std::uint64_t label) {
    return Denoiser(spec_for(kind, m, vocab.dim()), root.fork(label).next_u64());
  };
  PriorModels models{vocab,
                     NoiseSchedule(),
                     corpus.front().scene.grid_size(),
                     m,
                     make(RenderKind::kIntensity, kStreamIntensityInit),
                     make(RenderKind::kDepth, kStreamDepthInit),
                     make(RenderKind::kColor, kStreamColorInit)};

  auto train = [&](RenderKind kind, Denoiser& d, std::uint64_t label) {
    TrainOptions to;
    to.steps = options.steps;
    to.batch = options.batch;
    to.lr = options.lr;
    to.seed = root.fork(label).next_u64();
    to.condition_dropout = options.condition_dropout;
    return train_prior(d, training_images(corpus, vocab, kind), models.schedule, to);
  };
  PriorReports r{train(RenderKind::kIntensity, models.intensity, kStreamIntensityTrain),
                 train(RenderKind::kDepth, models.depth, kStreamDepthTrain),
                 train(RenderKind::kColor, models.color, kStreamColorTrain)};
  if (reports) *reports = std::move(r);
  return models;
}

std::string denoiser_prefix(RenderKind kind) {
  switch (kind) {
    case RenderKind::kIntensity: return "denoiser";
    case RenderKind::kDepth: return "depth_denoiser";
    case RenderKind::kColor: return "color_denoiser";
  }
  throw ArgumentError("bad render kind");
}

void put_denoiser(Checkpoint& ck, const std::string& prefix, const Denoiser& denoiser) {
  const auto& names = Denoiser::param_names();
  for (std::size_t i = 0; i < names.size(); ++i) ck.put(prefix + ".φ." + names[i], denoiser.params()[i].value());
  if (denoiser.has_frozen_prior()) {
    for (std::size_t i = 0; i < names.size(); ++i) ck.put(prefix + ".φ0." + names[i], denoiser.frozen_params()[i]);
  }
}

Denoiser get_denoiser(const Checkpoint& ck, const std::string& prefix, const DenoiserSpec& spec) {
  Denoiser d(spec, 0);
  std::vector<Tensor> weights;
  std::vector<Tensor> frozen;
  for (const auto& name : Denoiser::param_names()) {
    weights.push_back(ck.get(prefix + ".φ." + name));
    if (auto f = ck.find(prefix + ".φ0." + name)) frozen.push_back(*f);
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i].shape() != d.params()[i].shape()) {
      throw FormatError("weight '" + prefix + ".φ." + Denoiser::param_names()[i] + "' has shape " +
                        shape_string(weights[i].shape()) + ", expected " + shape_string(d.params()[i].shape()));
    }
  }
  if (!frozen.empty() && frozen.size() != weights.size()) throw FormatError("incomplete frozen weights for " + prefix);
  d.load(weights, frozen);
  return d;
}

Checkpoint save_priors(const PriorModels& models) {
  Checkpoint ck;
  ck.put("prior.grid_size", Tensor(Shape{1}, {static_cast<double>(models.grid_size)}));
  ck.put("prior.image_size", Tensor(Shape{1}, {static_cast<double>(models.image_size)}));
  ck.put("prior.betas", Tensor(Shape{models.schedule.steps()}, [&] {
           std::vector<double> b;
           for (std::size_t t = 1; t <= models.schedule.steps(); ++t) b.push_back(models.schedule.beta(t));
           return b;
         }()));
  ck.put("vocab.basis", models.vocab.basis_matrix());
  for (auto kind : {RenderKind::kIntensity, RenderKind::kDepth, RenderKind::kColor}) {
    put_denoiser(ck, denoiser_prefix(kind), models.denoiser(kind));
  }
  return ck;
}

PriorModels load_priors(const Checkpoint& ck) {
  const auto n = static_cast<std::size_t>(ck.get("prior.grid_size")[0]);
  const auto m = static_cast<std::size_t>(ck.get("prior.image_size")[0]);
  const ConceptVocabulary vocab = ConceptVocabulary::make_default();
  if (ck.get("vocab.basis") != vocab.basis_matrix()) {
    throw FormatError("checkpoint vocabulary basis does not match this build's vocabulary");
  }
  auto load = [&](RenderKind kind) {
    return get_denoiser(ck, denoiser_prefix(kind), spec_for(kind, m, vocab.dim()));
  };
  return PriorModels{vocab,
                     NoiseSchedule::from_betas([&] {
                       const auto b = ck.get("prior.betas").data();
                       return std::vector<double>(b.begin(), b.end());
                     }()),
                     n,
                     m,
                     load(RenderKind::kIntensity),
                     load(RenderKind::kDepth),
                     load(RenderKind::kColor)};
}

void put_scene(Checkpoint& ck, const VoxelScene& scene, const std::string& prefix) {
  ck.put(prefix + ".density", scene.density().value());
  ck.put(prefix + ".color", scene.color().value());
}

VoxelScene get_scene(const Checkpoint& ck, const std::string& prefix) {
  return VoxelScene(ck.get(prefix + ".density"), ck.get(prefix + ".color"));
}

namespace {

// kind, centre[3], half extents[3], hollow, colour[3]
Tensor pack_shape(const ShapeParams& s) {
  Tensor out(Shape{11});
  out[0] = static_cast<double>(s.kind);
  for (std::size_t a = 0; a < 3; ++a) {
    out[1 + a] = s.center[a];
    out[4 + a] = s.half_extents[a];
    out[8 + a] = s.color[a];
  }
  out[7] = s.hollow ? 1.0 : 0.0;
  return out;
}

ShapeParams unpack_shape(const Tensor& t) {
  if (t.size() != 11) throw FormatError("corpus shape record must have 11 entries");
  const double kind = t[0];
  if (kind != 0.0 && kind != 1.0 && kind != 2.0) throw FormatError("corpus shape record has an unknown kind");
  ShapeParams s;
  s.kind = static_cast<ShapeKind>(static_cast<int>(kind));
  for (std::size_t a = 0; a < 3; ++a) {
    s.center[a] = t[1 + a];
    s.half_extents[a] = t[4 + a];
    s.color[a] = t[8 + a];
  }
  s.hollow = t[7] != 0.0;
  return s;
}

}  // namespace

Checkpoint save_corpus(const std::vector<CorpusEntry>& corpus, const CorpusOptions& options) {
  Checkpoint ck;
  ck.put("corpus.options", Tensor(Shape{3}, {static_cast<double>(options.grid_size),
                                             static_cast<double>(options.image_size),
                                             static_cast<double>(options.n_views)}));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string prefix = "corpus." + std::to_string(i);
    ck.put(prefix + ".shape", pack_shape(corpus[i].shape));
    put_scene(ck, corpus[i].scene, prefix);
  }
  return ck;
}

std::vector<CorpusEntry> load_corpus(const Checkpoint& ck, const ConceptVocabulary& vocab) {
  const Tensor& opts = ck.get("corpus.options");
  if (opts.size() != 3) throw FormatError("corpus.options must have 3 entries");
  CorpusOptions options{static_cast<std::size_t>(opts[0]), static_cast<std::size_t>(opts[1]),
                        static_cast<std::size_t>(opts[2])};
  const auto azimuths = evenly_spaced_azimuths(options.n_views);
  std::vector<CorpusEntry> corpus;
  for (std::size_t i = 0;; ++i) {
    const std::string prefix = "corpus." + std::to_string(i);
    const auto shape_record = ck.find(prefix + ".shape");
    if (!shape_record) break;
    const ShapeParams shape = unpack_shape(*shape_record);
    VoxelScene scene = make_scene(shape, options.grid_size);
    // The stored grids are redundant with the shape; a mismatch means the
    // file was produced by different generator code.
    if (!(scene.density().value() == ck.get(prefix + ".density"))) {
      throw FormatError(prefix + ": stored density does not match its shape parameters");
    }
    TagSet tags = derive_tags(shape, scene.density().value());
    for (const auto& t : tags) vocab.index_of(t);
    CorpusEntry entry{shape, std::move(tags), std::move(scene), azimuths, {}, {}, {}};
    render_views(entry, options.image_size);
    corpus.push_back(std::move(entry));
  }
  if (corpus.empty()) throw FormatError("checkpoint holds no corpus entries");
  return corpus;
}

// ---------------------------------------------------------------------------

std::vector<std::string> task_names() { return {"cube-to-sphere", "red-to-green", "red-cube-to-green-sphere"}; }

EditTask make_task(const std::string& name, std::size_t grid_size) {
  const double c = 0.5 * static_cast<double>(grid_size - 1);
  const double h = 0.22 * static_cast<double>(grid_size);
  ShapeParams cube;
  cube.kind = ShapeKind::kBox;
  cube.center = {c, c, c};
  cube.half_extents = {h, h, h};
  cube.color = {0.9, 0.1, 0.1};
  ShapeParams sphere = cube;
  sphere.kind = ShapeKind::kSphere;
  // Roughly volume-preserving: r = h * (6/pi)^(1/3).
  sphere.half_extents = {h * 1.2407, h * 1.2407, h * 1.2407};

  auto tags_of = [&](const ShapeParams& s) { return derive_tags(s, blur_once(voxelize(s, grid_size))); };
  auto recolor = [](ShapeParams s) {
    s.color = {0.1, 0.9, 0.1};
    return s;
  };

  EditTask task;
  task.name = name;
  if (name == "cube-to-sphere") {
    task.original = cube;
    task.target = sphere;
  } else if (name == "red-to-green") {
    task.original = cube;
    task.target = recolor(cube);
  } else if (name == "red-cube-to-green-sphere") {
    task.original = cube;
    task.target = recolor(sphere);
  } else {
    throw ArgumentError("unknown task '" + name + "'");
  }
  task.original_tags = tags_of(task.original);
  task.target_tags = tags_of(task.target);
  return task;
}

// ---------------------------------------------------------------------------

Tensor GuidanceChannel::fused(double azimuth, double rate) const {
  return fuse(target, original.interpolate_value(azimuth), rate);
}

std::string to_json_line(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["stage"] = r.stage;
  j["phase"] = r.phase;
  j["loss"] = r.loss;
  j["lambda"] = r.lambda;
  j["grad_norm"] = r.grad_norm;
  return j.dump();
}

std::vector<ViewImage> original_views(const VoxelScene& original, RenderKind kind, std::size_t n_views,
                                      std::size_t image_size) {
  std::vector<ViewImage> views;
  for (double az : evenly_spaced_azimuths(n_views)) {
    views.push_back({az, render_value(original, kind, View(az, image_size))});
  }
  return views;
}

MultiViewEmbedding capture_original(const Denoiser& prior, RenderKind kind, const VoxelScene& original,
                                    const Tensor& target_embedding, EmbeddingMode mode, const NoiseSchedule& schedule,
                                    const EditConfig& config, std::uint64_t seed, const StepLogger& log) {
  MultiViewEmbedding mve(target_embedding);
  if (mode == EmbeddingMode::kNone) return mve;
  const auto views = original_views(original, kind, CorpusOptions{}.n_views, config.image_size);
  EmbeddingOptimOptions eo;
  eo.steps = config.embedding_steps;
  eo.batch = config.batch;
  eo.lr = config.embedding_lr;
  eo.seed = RngStream(seed).fork(kStreamEmbedding).next_u64();
  const std::string stage = "embedding." + to_string(kind);
  auto on_step = [&](std::size_t step, double loss, double g) {
    if (log) log(StepRecord{step, stage, 0, loss, 0.0, g});
  };
  if (mode == EmbeddingMode::kMultiView) {
    optimize_embeddings(mve, prior, views, schedule, eo, on_step);
  } else {
    SingleEmbedding single(target_embedding);
    optimize_single_embedding(single, prior, views, schedule, eo, on_step);
    mve = MultiViewEmbedding(single.value());
  }
  mve.set_trainable(false);
  return mve;
}

Denoiser finetune_for_original(const Denoiser& prior, RenderKind kind, const VoxelScene& original,
                               const MultiViewEmbedding& mve, const NoiseSchedule& schedule, const EditConfig& config,
                               std::uint64_t seed, const StepLogger& log) {
  Denoiser out = prior;
  const auto views = original_views(original, kind, CorpusOptions{}.n_views, config.image_size);
  TrainOptions fo;
  fo.steps = config.finetune_steps;
  fo.batch = config.batch;
  fo.lr = config.finetune_lr;
  fo.seed = RngStream(seed).fork(kStreamFinetune).next_u64();
  fo.condition_dropout = config.finetune_dropout;
  const std::string stage = "finetune." + to_string(kind);
  finetune_on_views(
      out, views, [&](double az) { return mve.interpolate_value(az); }, schedule, fo,
      [&](std::size_t step, double loss, double g) {
        if (log) log(StepRecord{step, stage, 0, loss, 0.0, g});
      });
  out.set_trainable(false);
  return out;
}

GuidanceChannel prepare_channel(const Denoiser& prior, RenderKind kind, const VoxelScene& original,
                                const Tensor& target_embedding, EmbeddingMode mode, const NoiseSchedule& schedule,
                                const EditConfig& config, std::uint64_t seed, const StepLogger& log) {
  GuidanceChannel ch{kind, prior, MultiViewEmbedding(target_embedding), target_embedding};
  if (mode == EmbeddingMode::kNone) return ch;
  ch.original = capture_original(prior, kind, original, target_embedding, mode, schedule, config, seed, log);
  ch.denoiser = finetune_for_original(prior, kind, original, ch.original, schedule, config, seed, log);
  return ch;
}

Tensor initial_density(const VoxelScene& original, InitMode mode) {
  if (mode == InitMode::kFromOriginal) return original.density().value();
  const std::size_t n = original.grid_size();
  const double c = 0.5 * static_cast<double>(n - 1);
  const double r = 0.3 * static_cast<double>(n);
  ShapeParams blob;
  blob.kind = ShapeKind::kSphere;
  blob.center = {c, c, c};
  blob.half_extents = {r, r, r};
  return blur_once(voxelize(blob, n));
}

namespace {

std::pair<std::size_t, std::size_t> timestep_range(const NoiseSchedule& schedule, const EditConfig& config) {
  const double T = static_cast<double>(schedule.steps());
  const auto lo = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(config.t_min_fraction * T)));
  const auto hi = std::max(lo, static_cast<std::size_t>(std::floor(config.t_max_fraction * T)));
  return {lo, hi};
}

Tensor noised(const Tensor& x, const Tensor& eps, double alpha_bar) {
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * eps[i];
  return out;
}

double mean_square_residual(const Tensor& eps_hat, const Tensor& eps) {
  double acc = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = eps_hat[i] - eps[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps.size());
}

/// Only the conditions the current phase reads are evaluated.
GuidanceDirections evaluate_directions(const GuidanceChannel& ch, const Tensor& x_t, std::size_t t, double azimuth,
                                       double rate, SpsPhase phase, const SpsSchedule& sps) {
  const Tensor unc(Shape{ch.target.size()}, 0.0);
  GuidanceDirections d;
  d.eps_unc = ch.denoiser.predict_value(x_t, unc, t);
  d.eps_cond_f = ch.denoiser.predict_value(x_t, ch.fused(azimuth, rate), t);
  if (phase == SpsPhase::kTargetEnhancement && sps.lambda_t_scale != 0.0) {
    d.eps_cond_t = ch.denoiser.predict_value(x_t, ch.target, t);
  }
  if (phase == SpsPhase::kDetailEnhancement && sps.lambda_d_scale != 0.0) {
    d.eps_cond_o = ch.denoiser.predict_value(x_t, ch.original.interpolate_value(azimuth), t);
  }
  return d;
}

void clamp_unit(Var& v) {
  for (auto& x : v.mutable_value().data()) x = std::clamp(x, 0.0, 1.0);
}

void check_sizes(const GuidanceChannel& ch, std::size_t image_size) {
  if (ch.denoiser.spec().image_elems != image_elems(ch.kind, image_size)) {
    throw ConfigError(to_string(ch.kind) + " denoiser expects " + std::to_string(ch.denoiser.spec().image_elems) +
                      " image entries but image_size " + std::to_string(image_size) + " gives " +
                      std::to_string(image_elems(ch.kind, image_size)));
  }
}

}  // namespace

Tensor run_geometry_stage(const VoxelScene& original, const GuidanceChannel& intensity, const GuidanceChannel* depth,
                          const NoiseSchedule& schedule, const EditConfig& config, const StepLogger& log) {
  config.validate();
  check_sizes(intensity, config.image_size);
  const SpsSchedule sps = config.geometry_schedule();
  const std::size_t n = original.grid_size();
  const bool use_depth = depth != nullptr && config.aux_guidance_weight > 0.0;
  if (use_depth) check_sizes(*depth, config.image_size);
  const auto [t_lo, t_hi] = timestep_range(schedule, config);

  Var density = Var::parameter(initial_density(original, config.init_mode));
  Adam adam({density}, AdamOptions{config.geometry_lr, 0.9, 0.999, config.scene_adam_eps});
  RngStream rng = RngStream(config.seed).fork(kStreamGeometry);
  const Tensor unc(Shape{intensity.target.size()}, 0.0);

  const double inv_draws = 1.0 / static_cast<double>(config.draws_per_step);

  for (std::size_t step = 0; step < sps.total_steps; ++step) {
    const SpsPhase phase = sps.phase_at(step);
    adam.zero_grad();
    double loss = 0.0;
    double lambda = 0.0;
    for (std::size_t k = 0; k < config.draws_per_step; ++k) {
      const View view(rng.uniform(-180.0, 180.0), config.image_size);
      const auto t = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(t_lo), static_cast<std::int64_t>(t_hi)));
      const double ab = schedule.alpha_bar(t);

      const Var x = render_intensity(density, n, view);
      const Tensor eps = gaussian(rng, x.shape());
      const auto dirs = evaluate_directions(intensity, noised(x.value(), eps, ab), t, view.azimuth,
                                            config.fusion_rate, phase, sps);
      const SpsOutput out = sps_direction(dirs, sps, step);
      Var surrogate = sds_surrogate(x, out.prediction, eps, timestep_weight(config.timestep_weighting, schedule, t));
      loss += inv_draws * mean_square_residual(out.prediction, eps);
      lambda += inv_draws * out.lambda;

      if (use_depth) {
        const Var xd = render_depth(density, n, view);
        const Tensor eps_d = gaussian(rng, xd.shape());
        const Tensor xd_t = noised(xd.value(), eps_d, ab);
        const Tensor d_unc = depth->denoiser.predict_value(xd_t, unc, t);
        const Tensor d_cond = depth->denoiser.predict_value(xd_t, depth->fused(view.azimuth, config.fusion_rate), t);
        const Tensor pred_d = cfg_direction(d_unc, d_cond, sps.guidance_scale).prediction;
        surrogate =
            add(surrogate, scale(sds_surrogate(xd, pred_d, eps_d, timestep_weight(config.timestep_weighting, schedule, t)), config.aux_guidance_weight));
        loss += inv_draws * config.aux_guidance_weight * mean_square_residual(pred_d, eps_d);
      }
      backward(scale(surrogate, inv_draws));
    }

    const double gnorm = adam.grad_norm();
    try {
      adam.step();
    } catch (const NumericError& e) {
      throw NumericError("geometry stage: non-finite gradient at step " + std::to_string(step) + " (" + e.what() + ")");
    }
    clamp_unit(density);
    if (log) log(StepRecord{step, "geometry", static_cast<int>(phase), loss, lambda, gnorm});
  }
  return density.value();
}

Tensor run_texture_stage(const VoxelScene& scene, const GuidanceChannel& color, const NoiseSchedule& schedule,
                         const EditConfig& config, const StepLogger& log) {
  config.validate();
  check_sizes(color, config.image_size);
  const SpsSchedule sps = config.texture_schedule();
  const std::size_t n = scene.grid_size();
  const auto [t_lo, t_hi] = timestep_range(schedule, config);

  const Tensor density = scene.density().value();
  Var rgb = Var::parameter(scene.color().value());
  Adam adam({rgb}, AdamOptions{config.texture_lr, 0.9, 0.999, config.scene_adam_eps});
  RngStream rng = RngStream(config.seed).fork(kStreamTexture);

  const double inv_draws = 1.0 / static_cast<double>(config.draws_per_step);

  for (std::size_t step = 0; step < sps.total_steps; ++step) {
    const SpsPhase phase = sps.phase_at(step);
    adam.zero_grad();
    double loss = 0.0;
    double lambda = 0.0;
    for (std::size_t k = 0; k < config.draws_per_step; ++k) {
      const View view(rng.uniform(-180.0, 180.0), config.image_size);
      const auto t = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(t_lo), static_cast<std::int64_t>(t_hi)));
      const double ab = schedule.alpha_bar(t);

      const Var x = render_color(density, rgb, n, view);
      const Tensor eps = gaussian(rng, x.shape());
      const auto dirs =
          evaluate_directions(color, noised(x.value(), eps, ab), t, view.azimuth, config.fusion_rate, phase, sps);
      const SpsOutput out = sps_direction(dirs, sps, step);
      loss += inv_draws * mean_square_residual(out.prediction, eps);
      lambda += inv_draws * out.lambda;
      backward(scale(sds_surrogate(x, out.prediction, eps, timestep_weight(config.timestep_weighting, schedule, t)), inv_draws));
    }

    const double gnorm = adam.grad_norm();
    try {
      adam.step();
    } catch (const NumericError& e) {
      throw NumericError("texture stage: non-finite gradient at step " + std::to_string(step) + " (" + e.what() + ")");
    }
    clamp_unit(rgb);
    if (log) log(StepRecord{step, "texture", static_cast<int>(phase), loss, lambda, gnorm});
  }
  return rgb.value();
}

// ---------------------------------------------------------------------------

namespace {

template <typename F>
auto run_stage(const std::string& label, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    throw Error(e.kind(), "stage " + label + ": " + e.what());
  }
}

void put_channel(Checkpoint& ck, const GuidanceChannel& ch, const std::string& embed_prefix) {
  if (ch.kind == RenderKind::kDepth) {
    ck.put(embed_prefix, ch.original.base(0));
  } else {
    for (std::size_t i = 0; i < 4; ++i) ck.put(embed_prefix + "." + std::to_string(i), ch.original.base(i));
  }
  put_denoiser(ck, denoiser_prefix(ch.kind), ch.denoiser);
}

}  // namespace

EditRun run_full_edit(const VoxelScene& original, const TagSet& target_tags, const PriorModels& models,
                      const EditConfig& config) {
  config.validate();
  if (original.grid_size() != config.grid_size) {
    throw ConfigError("scene grid size " + std::to_string(original.grid_size()) + " differs from grid_size " +
                      std::to_string(config.grid_size));
  }
  if (config.image_size != models.image_size) {
    throw ConfigError("image_size " + std::to_string(config.image_size) + " differs from the prior's " +
                      std::to_string(models.image_size));
  }
  EditRun run{original, target_tags, original, {}, {}};
  const StepLogger log = [&](const StepRecord& r) { run.log.push_back(r); };
  const Tensor e_t = models.vocab.encode(target_tags);
  const RngStream root(config.seed);
  const EmbeddingMode depth_mode =
      config.embedding_mode == EmbeddingMode::kNone ? EmbeddingMode::kNone : EmbeddingMode::kSingle;

  auto [intensity, depth, color] = run_stage("mve", [&] {
    return std::tuple{
        prepare_channel(models.intensity, RenderKind::kIntensity, original, e_t, config.embedding_mode,
                        models.schedule, config, root.fork(1).next_u64(), log),
        prepare_channel(models.depth, RenderKind::kDepth, original, e_t, depth_mode, models.schedule, config,
                        root.fork(2).next_u64(), log),
        prepare_channel(models.color, RenderKind::kColor, original, e_t, config.embedding_mode, models.schedule,
                        config, root.fork(3).next_u64(), log)};
  });
  {
    Checkpoint ck;
    put_channel(ck, intensity, "mve.base");
    put_channel(ck, depth, "depth_embedding");
    put_channel(ck, color, "mve_tex.base");
    put_scene(ck, original);
    run.checkpoints.emplace_back("mve", std::move(ck));
  }

  const Tensor density = run_stage("geometry", [&] {
    return run_geometry_stage(original, intensity, &depth, models.schedule, config, log);
  });
  run.edited = VoxelScene(density, original.color().value());
  {
    Checkpoint ck;
    put_scene(ck, run.edited);
    run.checkpoints.emplace_back("geometry", std::move(ck));
  }

  const Tensor rgb =
      run_stage("texture", [&] { return run_texture_stage(run.edited, color, models.schedule, config, log); });
  run.edited = VoxelScene(density, rgb);
  {
    Checkpoint ck;
    put_scene(ck, run.edited);
    run.checkpoints.emplace_back("texture", std::move(ck));
  }
  return run;
}

void write_run(const EditRun& run, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  for (const auto& [stage, ck] : run.checkpoints) ck.write(dir / (stage + ".spse"));
  std::ofstream out(dir / "metrics.jsonl", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "metrics.jsonl").string());
  for (const auto& r : run.log) out << to_json_line(r) << "\n";
}

}  // namespace spse
