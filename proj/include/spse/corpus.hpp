#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "spse/scene.hpp"
#include "spse/tensor.hpp"

namespace spse {

using TagSet = std::set<std::string>;

inline constexpr std::size_t kEmbeddingDim = 32;

/// Bag-of-tags text encoder: each tag owns one vector of an orthonormal basis
/// and a prompt encodes to the sum of its tags' vectors. The empty prompt
/// encodes to zero, which serves as the unconditional embedding.
class ConceptVocabulary {
 public:
  static std::vector<std::string> default_tags();
  static ConceptVocabulary make_default(std::uint64_t seed = 20240611);

  ConceptVocabulary(std::vector<std::string> tags, std::size_t dim, std::uint64_t seed);

  const std::vector<std::string>& tags() const noexcept { return tags_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t index_of(const std::string& tag) const;
  bool contains(const std::string& tag) const;
  Tensor basis(const std::string& tag) const;
  /// Basis matrix [tags, dim].
  const Tensor& basis_matrix() const noexcept { return basis_; }

  Tensor encode(const TagSet& tags) const;
  Tensor unconditional() const { return Tensor(Shape{dim_}, 0.0); }

 private:
  std::vector<std::string> tags_;
  std::size_t dim_;
  Tensor basis_;
};

enum class ShapeKind { kSphere, kBox, kCylinder };

std::string to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(const std::string& name);

/// Analytic primitive in grid coordinates (voxel centres at integers).
struct ShapeParams {
  ShapeKind kind = ShapeKind::kBox;
  std::array<double, 3> center{7.5, 7.5, 7.5};
  /// Sphere: radius in [0]; cylinder: radius in [0] and [2], half height in [1].
  std::array<double, 3> half_extents{3.5, 3.5, 3.5};
  bool hollow = false;
  std::array<double, 3> color{0.9, 0.1, 0.1};
};

inline constexpr double kShellThickness = 2.0;

/// Membership of the voxel centre (x, y, z) in the analytic shape.
bool contains(const ShapeParams& shape, double x, double y, double z);
/// Binary occupancy [N,N,N] of the analytic shape at voxel centres.
Tensor voxelize(const ShapeParams& shape, std::size_t grid_size);
/// Separable [1/4, 1/2, 1/4] tent filter along each axis, zero padded.
Tensor blur_once(const Tensor& grid);
/// Scene with blurred density and a uniform colour grid.
VoxelScene make_scene(const ShapeParams& shape, std::size_t grid_size);

/// Geometric predicates that define what each modifier tag means.
struct ShapeStats {
  std::array<std::size_t, 3> extent{0, 0, 0};  // occupied (>= 0.5) bounding box per axis
  std::array<double, 3> centroid{0, 0, 0};
  bool empty = true;
};
ShapeStats measure(const Tensor& density);
/// Tags whose predicates hold for this shape and its generated density.
TagSet derive_tags(const ShapeParams& shape, const Tensor& density);

struct CorpusEntry {
  ShapeParams shape;
  TagSet tags;
  VoxelScene scene;
  std::vector<double> azimuths;
  std::vector<Tensor> intensity;  // [M,M] per view
  std::vector<Tensor> depth;      // [M,M] per view
  std::vector<Tensor> color;      // [M,M,3] per view
};

struct CorpusOptions {
  std::size_t grid_size = 16;
  std::size_t image_size = 16;
  std::size_t n_views = 8;
};

/// n evenly spaced azimuths starting at 0, normalised to [-180, 180).
std::vector<double> evenly_spaced_azimuths(std::size_t n);

void render_views(CorpusEntry& entry, std::size_t image_size);

std::vector<CorpusEntry> generate_corpus(const ConceptVocabulary& vocab, std::size_t count, std::uint64_t seed,
                                         const CorpusOptions& options = {});

/// One JSON object per line: index, tags, shape parameters.
std::string corpus_manifest(const std::vector<CorpusEntry>& corpus);

}  // namespace spse
