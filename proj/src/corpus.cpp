#include "spse/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "spse/errors.hpp"
#include "spse/rng.hpp"

namespace spse {

std::vector<std::string> ConceptVocabulary::default_tags() {
  return {"sphere", "cube",  "cylinder", "tall", "flat",   "wide", "hollow",
          "small",  "large", "offset",   "red",  "green", "blue"};
}

ConceptVocabulary ConceptVocabulary::make_default(std::uint64_t seed) {
  return ConceptVocabulary(default_tags(), kEmbeddingDim, seed);
}

ConceptVocabulary::ConceptVocabulary(std::vector<std::string> tags, std::size_t dim, std::uint64_t seed)
    : tags_(std::move(tags)), dim_(dim) {
  if (tags_.empty() || tags_.size() > dim_) {
    throw VocabularyError("vocabulary needs between 1 and dim tags");
  }
  for (std::size_t i = 0; i < tags_.size(); ++i)
    for (std::size_t j = i + 1; j < tags_.size(); ++j)
      if (tags_[i] == tags_[j]) throw VocabularyError("duplicate tag '" + tags_[i] + "'");

  // Gram-Schmidt over seeded Gaussian draws, run twice per vector so the
  // residual inner products sit at rounding level.
  RngStream rng(seed);
  const std::size_t k = tags_.size();
  basis_ = Tensor(Shape{k, dim_});
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<double> v(dim_);
    for (auto& x : v) x = rng.gaussian();
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < i; ++j) {
        double proj = 0.0;
        for (std::size_t d = 0; d < dim_; ++d) proj += v[d] * basis_[j * dim_ + d];
        for (std::size_t d = 0; d < dim_; ++d) v[d] -= proj * basis_[j * dim_ + d];
      }
      double nrm = 0.0;
      for (double x : v) nrm += x * x;
      nrm = std::sqrt(nrm);
      for (auto& x : v) x /= nrm;
    }
    std::copy(v.begin(), v.end(), basis_.data().begin() + static_cast<std::ptrdiff_t>(i * dim_));
  }
}

std::size_t ConceptVocabulary::index_of(const std::string& tag) const {
  const auto it = std::find(tags_.begin(), tags_.end(), tag);
  if (it == tags_.end()) throw VocabularyError("unknown tag '" + tag + "'");
  return static_cast<std::size_t>(it - tags_.begin());
}

bool ConceptVocabulary::contains(const std::string& tag) const {
  return std::find(tags_.begin(), tags_.end(), tag) != tags_.end();
}

Tensor ConceptVocabulary::basis(const std::string& tag) const {
  const std::size_t i = index_of(tag);
  auto row = basis_.data().subspan(i * dim_, dim_);
  return Tensor(Shape{dim_}, std::vector<double>(row.begin(), row.end()));
}

Tensor ConceptVocabulary::encode(const TagSet& tags) const {
  Tensor out(Shape{dim_}, 0.0);
  for (const auto& tag : tags) {
    const std::size_t i = index_of(tag);
    for (std::size_t d = 0; d < dim_; ++d) out[d] += basis_[i * dim_ + d];
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kBox: return "cube";
    case ShapeKind::kCylinder: return "cylinder";
  }
  return "unknown";
}

ShapeKind shape_kind_from_string(const std::string& name) {
  if (name == "sphere") return ShapeKind::kSphere;
  if (name == "cube" || name == "box") return ShapeKind::kBox;
  if (name == "cylinder") return ShapeKind::kCylinder;
  throw ArgumentError("unknown shape kind '" + name + "'");
}

namespace {

bool contains_solid(ShapeKind kind, const std::array<double, 3>& h, double dx, double dy, double dz) {
  switch (kind) {
    case ShapeKind::kSphere: return dx * dx + dy * dy + dz * dz <= h[0] * h[0];
    case ShapeKind::kBox: return std::abs(dx) <= h[0] && std::abs(dy) <= h[1] && std::abs(dz) <= h[2];
    case ShapeKind::kCylinder: return dx * dx + dz * dz <= h[0] * h[0] && std::abs(dy) <= h[1];
  }
  return false;
}

}  // namespace

bool contains(const ShapeParams& shape, double x, double y, double z) {
  const double dx = x - shape.center[0];
  const double dy = y - shape.center[1];
  const double dz = z - shape.center[2];
  if (!contains_solid(shape.kind, shape.half_extents, dx, dy, dz)) return false;
  if (!shape.hollow) return true;
  std::array<double, 3> inner = shape.half_extents;
  for (auto& v : inner) v -= kShellThickness;
  if (inner[0] <= 0.0 || inner[1] <= 0.0 || inner[2] <= 0.0) return true;
  return !contains_solid(shape.kind, inner, dx, dy, dz);
}

Tensor voxelize(const ShapeParams& shape, std::size_t n) {
  Tensor out(Shape{n, n, n}, 0.0);
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t z = 0; z < n; ++z)
        if (contains(shape, static_cast<double>(x), static_cast<double>(y), static_cast<double>(z))) {
          out[voxel_index(n, x, y, z)] = 1.0;
        }
  return out;
}

Tensor blur_once(const Tensor& grid) {
  const auto& sh = grid.shape();
  if (sh.size() != 3 || sh[0] != sh[1] || sh[1] != sh[2]) throw ShapeError("blur_once expects [N,N,N]");
  const std::size_t n = sh[0];
  Tensor cur = grid;
  for (int axis = 0; axis < 3; ++axis) {
    Tensor next(sh, 0.0);
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t z = 0; z < n; ++z) {
          std::array<std::size_t, 3> p{x, y, z};
          double acc = 0.5 * cur[voxel_index(n, x, y, z)];
          if (p[axis] > 0) {
            auto q = p;
            --q[axis];
            acc += 0.25 * cur[voxel_index(n, q[0], q[1], q[2])];
          }
          if (p[axis] + 1 < n) {
            auto q = p;
            ++q[axis];
            acc += 0.25 * cur[voxel_index(n, q[0], q[1], q[2])];
          }
          next[voxel_index(n, x, y, z)] = acc;
        }
    cur = std::move(next);
  }
  return cur;
}

VoxelScene make_scene(const ShapeParams& shape, std::size_t n) {
  Tensor density = blur_once(voxelize(shape, n));
  Tensor color(Shape{n, n, n, 3});
  for (std::size_t i = 0; i < n * n * n; ++i)
    for (std::size_t c = 0; c < 3; ++c) color[i * 3 + c] = shape.color[c];
  return VoxelScene(std::move(density), std::move(color));
}

ShapeStats measure(const Tensor& density) {
  const std::size_t n = density.shape().at(0);
  std::array<std::size_t, 3> lo{n, n, n};
  std::array<std::size_t, 3> hi{0, 0, 0};
  std::array<double, 3> sum{0, 0, 0};
  std::size_t count = 0;
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t z = 0; z < n; ++z) {
        if (density[voxel_index(n, x, y, z)] < 0.5) continue;
        const std::array<std::size_t, 3> p{x, y, z};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a]);
          sum[a] += static_cast<double>(p[a]);
        }
        ++count;
      }
  ShapeStats stats;
  if (count == 0) return stats;
  stats.empty = false;
  for (int a = 0; a < 3; ++a) {
    stats.extent[a] = hi[a] - lo[a] + 1;
    stats.centroid[a] = sum[a] / static_cast<double>(count);
  }
  return stats;
}

TagSet derive_tags(const ShapeParams& shape, const Tensor& density) {
  const std::size_t n = density.shape().at(0);
  const double nd = static_cast<double>(n);
  const ShapeStats s = measure(density);
  TagSet tags{to_string(shape.kind)};
  if (s.empty) return tags;

  const double ex = static_cast<double>(s.extent[0]);
  const double ey = static_cast<double>(s.extent[1]);
  const double ez = static_cast<double>(s.extent[2]);
  const double horizontal = std::max(ex, ez);
  const double largest = std::max({ex, ey, ez});

  if (shape.kind != ShapeKind::kSphere && ey >= 1.5 * horizontal) tags.insert("tall");
  if (ey <= nd / 4.0) tags.insert("flat");
  if (shape.kind == ShapeKind::kBox && ex >= 1.5 * ez) tags.insert("wide");
  if (largest <= nd / 2.0) tags.insert("small");
  if (largest >= 0.75 * nd) tags.insert("large");
  const double c = (nd - 1.0) / 2.0;
  if (std::max(std::abs(shape.center[0] - c), std::abs(shape.center[2] - c)) >= 2.0) tags.insert("offset");
  if (shape.hollow) {
    const auto ci = [&](double v) { return static_cast<std::size_t>(std::clamp(std::lround(v), 0L, static_cast<long>(n) - 1)); };
    if (density[voxel_index(n, ci(shape.center[0]), ci(shape.center[1]), ci(shape.center[2]))] < 0.5) {
      tags.insert("hollow");
    }
  }
  const auto& col = shape.color;
  const std::size_t dominant = static_cast<std::size_t>(std::max_element(col.begin(), col.end()) - col.begin());
  static const char* kColorTags[] = {"red", "green", "blue"};
  if (col[dominant] >= 2.0 * std::max({col[(dominant + 1) % 3], col[(dominant + 2) % 3], 0.05})) {
    tags.insert(kColorTags[dominant]);
  }
  return tags;
}

std::vector<double> evenly_spaced_azimuths(std::size_t n) {
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(normalize_azimuth(360.0 * static_cast<double>(i) / static_cast<double>(n)));
  return out;
}

void render_views(CorpusEntry& entry, std::size_t image_size) {
  entry.intensity.clear();
  entry.depth.clear();
  entry.color.clear();
  for (double az : entry.azimuths) {
    const View view(az, image_size);
    entry.intensity.push_back(render_intensity(entry.scene, view).value());
    entry.depth.push_back(render_depth(entry.scene, view).value());
    entry.color.push_back(render_color(entry.scene, view).value());
  }
}

namespace {

ShapeParams sample_shape(RngStream& rng, std::size_t n) {
  const double nd = static_cast<double>(n);
  const double c = (nd - 1.0) / 2.0;
  const double scale = nd / 16.0;
  ShapeParams p;
  p.kind = static_cast<ShapeKind>(rng.uniform_int(0, 2));

  const double h = rng.uniform(2.0, 6.5) * scale;
  p.half_extents = {h, h, h};
  // Aspect modifier: 0 none, 1 tall, 2 flat, 3 wide (boxes only).
  const auto aspect = p.kind == ShapeKind::kSphere ? 0 : rng.uniform_int(0, p.kind == ShapeKind::kBox ? 3 : 2);
  if (aspect == 1) {
    p.half_extents = {h / 1.8, std::max(h, 4.5 * scale), h / 1.8};
    p.half_extents[0] = std::max(p.half_extents[0], 1.5 * scale);
    p.half_extents[2] = p.half_extents[0];
  } else if (aspect == 2) {
    const double hh = std::max(h, 3.5 * scale);
    p.half_extents = {hh, rng.uniform(1.0, 1.5) * scale, hh};
  } else if (aspect == 3) {
    const double hh = std::max(h, 3.5 * scale);
    p.half_extents = {hh, hh * rng.uniform(0.6, 1.0), hh / 2.0};
  }

  if (p.kind != ShapeKind::kBox) p.half_extents[2] = p.half_extents[0];

  p.hollow = aspect != 2 && h >= 4.0 * scale && rng.uniform() < 0.2;

  // Optional horizontal offset, limited so the shape stays inside the grid.
  p.center = {c, c, c};
  if (rng.uniform() < 0.3) {
    for (int a : {0, 2}) {
      const double room = c - p.half_extents[static_cast<std::size_t>(a)];
      if (room >= 2.0) {
        const double mag = rng.uniform(2.0, std::min(room, 4.0 * scale));
        p.center[static_cast<std::size_t>(a)] = c + (rng.uniform() < 0.5 ? -mag : mag);
      }
    }
  }

  const auto hue = rng.uniform_int(0, 2);
  p.color = {0.1, 0.1, 0.1};
  p.color[static_cast<std::size_t>(hue)] = 0.9;
  return p;
}

}  // namespace

std::vector<CorpusEntry> generate_corpus(const ConceptVocabulary& vocab, std::size_t count, std::uint64_t seed,
                                         const CorpusOptions& options) {
  if (count < 1) throw ArgumentError("corpus count must be at least 1");
  std::vector<CorpusEntry> corpus;
  corpus.reserve(count);
  const auto azimuths = evenly_spaced_azimuths(options.n_views);
  for (std::size_t i = 0; i < count; ++i) {
    RngStream rng = RngStream(seed).fork(i);
    ShapeParams shape = sample_shape(rng, options.grid_size);
    VoxelScene scene = make_scene(shape, options.grid_size);
    TagSet tags = derive_tags(shape, scene.density().value());
    for (const auto& t : tags) vocab.index_of(t);
    CorpusEntry entry{shape, std::move(tags), std::move(scene), azimuths, {}, {}, {}};
    render_views(entry, options.image_size);
    corpus.push_back(std::move(entry));
  }
  return corpus;
}

std::string corpus_manifest(const std::vector<CorpusEntry>& corpus) {
  std::string out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& e = corpus[i];
    nlohmann::json line = {
        {"index", i},
        {"tags", std::vector<std::string>(e.tags.begin(), e.tags.end())},
        {"kind", to_string(e.shape.kind)},
        {"center", e.shape.center},
        {"half_extents", e.shape.half_extents},
        {"hollow", e.shape.hollow},
        {"color", e.shape.color},
    };
    out += line.dump() + "\n";
  }
  return out;
}

}  // namespace spse
