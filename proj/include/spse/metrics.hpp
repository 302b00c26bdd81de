#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spse/corpus.hpp"
#include "spse/scene.hpp"
#include "spse/tensor.hpp"

namespace spse {

/// max(cos(image, text), 0). Throws MetricError on a zero vector.
double clip_sim(const Tensor& image_embedding, const Tensor& text_embedding);

/// max(cos(E_It - E_Io, E_ct - E_co), 0). Throws MetricError when either
/// difference vanishes.
double clip_dir(const Tensor& edited_image, const Tensor& original_image, const Tensor& target_text,
                const Tensor& original_text);

/// Fixed seeded linear map from a flattened render to the embedding space.
class ProbeEmbedder {
 public:
  ProbeEmbedder(std::size_t input_elems, std::size_t dim, std::uint64_t seed);
  Tensor embed(const Tensor& render) const;

 private:
  std::size_t input_elems_;
  std::size_t dim_;
  Tensor weight_;  // [dim, input]
};

inline constexpr double kOccupancyThreshold = 0.5;

/// Binary occupancy of a density grid at the given threshold.
Tensor occupancy(const Tensor& density, double threshold = kOccupancyThreshold);

/// |A and B| / |A or B| over thresholded occupancy; 1 when both are empty.
double voxel_iou(const Tensor& density, const Tensor& reference_density, double threshold = kOccupancyThreshold);
double voxel_iou(const Tensor& density, const ShapeParams& reference, double threshold = kOccupancyThreshold);

/// iou(edited, target) - iou(edited, original): positive once the edit is
/// closer to the target than to where it started.
double edit_extent(const Tensor& original_density, const Tensor& edited_density, const ShapeParams& target,
                   double threshold = kOccupancyThreshold);

struct MetricRecord {
  std::string metric;
  double value = 0.0;
  std::size_t views = 0;
  std::uint64_t seed = 0;
};

std::string to_json_line(const MetricRecord& record);

/// Averages probe-embedding CLIP-style scores over `views` seeded uniform
/// azimuths at elevation 0.
struct ProbeEvaluation {
  double clip_sim = 0.0;
  double clip_dir = 0.0;
  std::size_t views = 0;
  std::size_t skipped_dir = 0;  // views where the image delta vanished
};

ProbeEvaluation evaluate_probe(const VoxelScene& original, const VoxelScene& edited, const Tensor& target_text,
                               const Tensor& original_text, const ProbeEmbedder& probe, std::size_t image_size,
                               std::size_t views, std::uint64_t seed);

/// Mean of one colour channel over covered pixels, un-premultiplied by
/// coverage, across `views` evenly spaced azimuths. Pixels with intensity
/// below `min_coverage` are skipped; returns 0 when none qualify.
double mean_covered_channel(const VoxelScene& scene, std::size_t channel, std::size_t image_size, std::size_t views,
                            double min_coverage = 0.05);

}  // namespace spse
