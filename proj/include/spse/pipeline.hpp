#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "spse/checkpoint.hpp"
#include "spse/config.hpp"
#include "spse/corpus.hpp"
#include "spse/diffusion.hpp"
#include "spse/guidance.hpp"
#include "spse/mve.hpp"
#include "spse/scene.hpp"

namespace spse {

enum class RenderKind { kIntensity, kDepth, kColor };

std::string to_string(RenderKind kind);
RenderKind render_kind_from_string(const std::string& text);
/// Plain-value render of a scene.
Tensor render_value(const VoxelScene& scene, RenderKind kind, const View& view);
/// Number of image entries produced for a given image size.
std::size_t image_elems(RenderKind kind, std::size_t image_size);

// ---- prior denoisers ------------------------------------------------------

struct PriorOptions {
  std::size_t corpus_size = 120;
  std::uint64_t corpus_seed = 1;
  CorpusOptions corpus;
  std::size_t steps = 10000;
  std::size_t batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double condition_dropout = 0.1;
};

/// The three pretrained noise predictors plus what they were trained against.
struct PriorModels {
  ConceptVocabulary vocab = ConceptVocabulary::make_default();
  NoiseSchedule schedule;
  std::size_t grid_size = 16;
  std::size_t image_size = 16;
  Denoiser intensity;
  Denoiser depth;
  Denoiser color;

  const Denoiser& denoiser(RenderKind kind) const;
};

struct PriorReports {
  TrainReport intensity;
  TrainReport depth;
  TrainReport color;
};

/// Conditioned training images of one render kind over all corpus views.
std::vector<ConditionedImage> training_images(const std::vector<CorpusEntry>& corpus, const ConceptVocabulary& vocab,
                                              RenderKind kind);

PriorModels train_priors(const std::vector<CorpusEntry>& corpus, const PriorOptions& options,
                         PriorReports* reports = nullptr);

/// Checkpoint names: "<prefix>.φ.<param>" and "<prefix>.φ0.<param>".
std::string denoiser_prefix(RenderKind kind);
void put_denoiser(Checkpoint& ck, const std::string& prefix, const Denoiser& denoiser);
Denoiser get_denoiser(const Checkpoint& ck, const std::string& prefix, const DenoiserSpec& spec);

Checkpoint save_priors(const PriorModels& models);
PriorModels load_priors(const Checkpoint& ck);

/// Shape parameters plus density/colour grids per entry; loading regenerates
/// tags and views from the shapes.
Checkpoint save_corpus(const std::vector<CorpusEntry>& corpus, const CorpusOptions& options = {});
std::vector<CorpusEntry> load_corpus(const Checkpoint& ck, const ConceptVocabulary& vocab);

// ---- edit tasks -----------------------------------------------------------

struct EditTask {
  std::string name;
  ShapeParams original;
  TagSet original_tags;
  TagSet target_tags;
  ShapeParams target;  // analytic reference for the intended result
};

std::vector<std::string> task_names();
EditTask make_task(const std::string& name, std::size_t grid_size = 16);

// ---- guidance channels ----------------------------------------------------

/// One diffusion guidance source bound to the original object: the
/// (finetuned) denoiser, the optimised original embedding e_o and the target
/// embedding e_t. A single optimised embedding is stored as four equal bases.
struct GuidanceChannel {
  RenderKind kind = RenderKind::kIntensity;
  Denoiser denoiser;
  MultiViewEmbedding original;
  Tensor target;

  Tensor fused(double azimuth, double rate) const;
};

/// One line of the metric log.
struct StepRecord {
  std::size_t step = 0;
  std::string stage;
  int phase = 0;  // SPS phase; 0 outside the SPS stages
  double loss = 0.0;
  double lambda = 0.0;
  double grad_norm = 0.0;
};
std::string to_json_line(const StepRecord& record);
using StepLogger = std::function<void(const StepRecord&)>;

/// Renders of the original at the evenly spaced corpus azimuths.
std::vector<ViewImage> original_views(const VoxelScene& original, RenderKind kind, std::size_t n_views,
                                      std::size_t image_size);

/// Optimise the original's view embeddings starting from e_t with the prior
/// held fixed. kSingle returns four equal bases; kNone returns e_t untouched.
MultiViewEmbedding capture_original(const Denoiser& prior, RenderKind kind, const VoxelScene& original,
                                    const Tensor& target_embedding, EmbeddingMode mode, const NoiseSchedule& schedule,
                                    const EditConfig& config, std::uint64_t seed, const StepLogger& log = {});

/// Copy of `prior` finetuned on the original's views with `mve` fixed.
Denoiser finetune_for_original(const Denoiser& prior, RenderKind kind, const VoxelScene& original,
                               const MultiViewEmbedding& mve, const NoiseSchedule& schedule, const EditConfig& config,
                               std::uint64_t seed, const StepLogger& log = {});

/// Embedding optimisation followed by denoiser finetuning on the original's
/// views. `mode` kNone skips both (e_o = e_t, prior weights).
GuidanceChannel prepare_channel(const Denoiser& prior, RenderKind kind, const VoxelScene& original,
                                const Tensor& target_embedding, EmbeddingMode mode, const NoiseSchedule& schedule,
                                const EditConfig& config, std::uint64_t seed, const StepLogger& log = {});

/// Density after init_mode initialisation.
Tensor initial_density(const VoxelScene& original, InitMode mode);

/// SPS over density with optional plain-SDS depth guidance weighted by
/// config.aux_guidance_weight. Returns the edited density.
Tensor run_geometry_stage(const VoxelScene& original, const GuidanceChannel& intensity,
                          const GuidanceChannel* depth, const NoiseSchedule& schedule, const EditConfig& config,
                          const StepLogger& log = {});

/// SPS phases 2-3 over colour with the density held fixed. Returns the
/// edited colour grid.
Tensor run_texture_stage(const VoxelScene& scene, const GuidanceChannel& color, const NoiseSchedule& schedule,
                         const EditConfig& config, const StepLogger& log = {});

struct EditRun {
  VoxelScene original;
  TagSet target_tags;
  VoxelScene edited;
  std::vector<std::pair<std::string, Checkpoint>> checkpoints;  // per stage, in order
  std::vector<StepRecord> log;
};

/// MVE optimisation and finetuning for all channels, then the geometry and
/// texture stages, checkpointing after each.
EditRun run_full_edit(const VoxelScene& original, const TagSet& target_tags, const PriorModels& models,
                      const EditConfig& config);

void put_scene(Checkpoint& ck, const VoxelScene& scene, const std::string& prefix = "scene");
VoxelScene get_scene(const Checkpoint& ck, const std::string& prefix = "scene");

/// Stage checkpoints as "<stage>.spse" and the metric log as metrics.jsonl.
void write_run(const EditRun& run, const std::filesystem::path& dir);

}  // namespace spse
