#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spse/guidance.hpp"

namespace spse {

enum class InitMode { kFromOriginal, kEllipsoidBlob };

std::string to_string(InitMode mode);
InitMode init_mode_from_string(const std::string& text);

/// How the original object's appearance is captured in embedding space.
enum class EmbeddingMode {
  kMultiView,  // four interpolated base embeddings
  kSingle,     // one shared embedding
  kNone,       // no optimisation, no finetuning: e_o = e_t
};

/// Run configuration. Fields above the marker are settable from the
/// "key = value" config file; the rest are programmatic or CLI flags.
struct EditConfig {
  double fusion_rate = 0.6;
  double guidance_scale = 10.0;
  double lambda_t_scale = 0.4;
  double lambda_d_scale = 0.2;
  std::size_t geometry_steps = 300;
  std::size_t texture_steps = 200;
  std::size_t phase1_steps = 100;
  std::size_t phase3_steps = 100;
  double aux_guidance_weight = 0.125;
  std::size_t grid_size = 16;
  std::size_t image_size = 16;
  std::uint64_t seed = 0;
  InitMode init_mode = InitMode::kFromOriginal;
  // ---- not exposed in the config file ----
  EmbeddingMode embedding_mode = EmbeddingMode::kMultiView;
  std::size_t embedding_steps = 200;
  double embedding_lr = 2e-3;
  std::size_t finetune_steps = 300;
  double finetune_lr = 1e-4;
  // Condition dropout while finetuning keeps the unconditional branch on the
  // original too, so the CFG difference at the original stays near zero.
  double finetune_dropout = 0.5;
  std::size_t batch = 4;
  /// Score-distillation draws (view, t, noise) accumulated per optimizer step.
  std::size_t draws_per_step = 8;
  TimestepWeighting timestep_weighting = TimestepWeighting::kNoiseVariance;
  double geometry_lr = 0.0025;
  double texture_lr = 0.02;
  double scene_adam_eps = 1e-8;
  double t_min_fraction = 0.02;
  double t_max_fraction = 0.98;

  SpsSchedule geometry_schedule() const;
  SpsSchedule texture_schedule() const;

  /// Throws ConfigError on invalid values.
  void validate() const;
  /// Non-fatal advisories (e.g. fusion rate outside the recommended range).
  std::vector<std::string> warnings() const;
};

inline constexpr double kRecommendedFusionMin = 0.35;
inline constexpr double kRecommendedFusionMax = 0.85;

/// Keys accepted in config files, in canonical order.
const std::vector<std::string>& config_keys();

/// Parse "key = value" lines ('#' starts a comment). Unknown keys, malformed
/// lines and unparsable values raise ConfigError. Unset keys keep `base`.
EditConfig parse_config(const std::string& text, EditConfig base = {});
EditConfig load_config(const std::filesystem::path& path, EditConfig base = {});
/// Canonical text form listing every key.
std::string format_config(const EditConfig& config);
void apply_config_value(EditConfig& config, const std::string& key, const std::string& value);

}  // namespace spse
