#include "spse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "spse/errors.hpp"
#include "spse/rng.hpp"

namespace spse {

namespace {

double clamped_cosine(const Tensor& a, const Tensor& b, const char* what) {
  require_same_shape(a, b, what);
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw MetricError(std::string(what) + ": undefined for a zero vector");
  return std::max(dot(a, b) / (na * nb), 0.0);
}

}  // namespace

double clip_sim(const Tensor& image_embedding, const Tensor& text_embedding) {
  return clamped_cosine(image_embedding, text_embedding, "clip_sim");
}

double clip_dir(const Tensor& edited_image, const Tensor& original_image, const Tensor& target_text,
                const Tensor& original_text) {
  return clamped_cosine(edited_image - original_image, target_text - original_text, "clip_dir");
}

ProbeEmbedder::ProbeEmbedder(std::size_t input_elems, std::size_t dim, std::uint64_t seed)
    : input_elems_(input_elems), dim_(dim) {
  RngStream rng(seed);
  weight_ = gaussian(rng, Shape{dim, input_elems});
  const double s = 1.0 / std::sqrt(static_cast<double>(input_elems));
  for (auto& v : weight_.data()) v *= s;
}

Tensor ProbeEmbedder::embed(const Tensor& render) const {
  if (render.size() != input_elems_) throw ShapeError("probe embedder input size mismatch");
  Tensor out(Shape{dim_});
  for (std::size_t d = 0; d < dim_; ++d) {
    double acc = 0.0;
    for (std::size_t i = 0; i < input_elems_; ++i) acc += weight_[d * input_elems_ + i] * render[i];
    out[d] = acc;
  }
  return out;
}

Tensor occupancy(const Tensor& density, double threshold) {
  Tensor out(density.shape(), 0.0);
  for (std::size_t i = 0; i < density.size(); ++i) out[i] = density[i] >= threshold ? 1.0 : 0.0;
  return out;
}

double voxel_iou(const Tensor& density, const Tensor& reference_density, double threshold) {
  require_same_shape(density, reference_density, "voxel_iou");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < density.size(); ++i) {
    const bool a = density[i] >= threshold;
    const bool b = reference_density[i] >= threshold;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double voxel_iou(const Tensor& density, const ShapeParams& reference, double threshold) {
  return voxel_iou(density, voxelize(reference, density.shape().at(0)), threshold);
}

double edit_extent(const Tensor& original_density, const Tensor& edited_density, const ShapeParams& target,
                   double threshold) {
  return voxel_iou(edited_density, target, threshold) - voxel_iou(edited_density, original_density, threshold);
}

std::string to_json_line(const MetricRecord& record) {
  nlohmann::json j = {{"metric", record.metric}, {"value", record.value}, {"views", record.views}, {"seed", record.seed}};
  return j.dump();
}

ProbeEvaluation evaluate_probe(const VoxelScene& original, const VoxelScene& edited, const Tensor& target_text,
                               const Tensor& original_text, const ProbeEmbedder& probe, std::size_t image_size,
                               std::size_t views, std::uint64_t seed) {
  RngStream rng(seed);
  ProbeEvaluation ev;
  std::size_t dir_count = 0;
  for (std::size_t i = 0; i < views; ++i) {
    const View view(rng.uniform(-180.0, 180.0), image_size);
    const Tensor e_edit = probe.embed(render_intensity(edited, view).value());
    const Tensor e_orig = probe.embed(render_intensity(original, view).value());
    ev.clip_sim += norm(e_edit) > 0.0 ? clip_sim(e_edit, target_text) : 0.0;
    if (norm(e_edit - e_orig) > 0.0) {
      ev.clip_dir += clip_dir(e_edit, e_orig, target_text, original_text);
      ++dir_count;
    } else {
      ++ev.skipped_dir;
    }
  }
  ev.views = views;
  if (views > 0) ev.clip_sim /= static_cast<double>(views);
  if (dir_count > 0) ev.clip_dir /= static_cast<double>(dir_count);
  return ev;
}

double mean_covered_channel(const VoxelScene& scene, std::size_t channel, std::size_t image_size, std::size_t views,
                            double min_coverage) {
  if (channel > 2) throw ArgumentError("colour channel must be 0, 1 or 2");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t v = 0; v < views; ++v) {
    const View view(-180.0 + 360.0 * static_cast<double>(v) / static_cast<double>(views), image_size);
    const Tensor cover = render_intensity(scene, view).value();
    const Tensor rgb = render_color(scene, view).value();
    for (std::size_t p = 0; p < cover.size(); ++p) {
      if (cover[p] < min_coverage) continue;
      sum += rgb[3 * p + channel] / cover[p];
      ++count;
    }
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace spse
