#include <cmath>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "spse/corpus.hpp"
#include "spse/errors.hpp"
#include "spse/pipeline.hpp"

using namespace spse;

TEST_SUITE("corpus") {
  TEST_CASE("vocabulary basis is orthonormal and encoding is a bag of tags") {
    const auto vocab = ConceptVocabulary::make_default();
    CHECK(vocab.tags().size() == 13);
    CHECK(vocab.dim() == kEmbeddingDim);
    for (const auto& a : vocab.tags()) {
      for (const auto& b : vocab.tags()) {
        CHECK(dot(vocab.basis(a), vocab.basis(b)) == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-12));
      }
    }
    const Tensor e = vocab.encode({"sphere", "red"});
    CHECK(max_abs_difference(e, vocab.basis("sphere") + vocab.basis("red")) == 0.0);
    CHECK(norm(vocab.encode({})) == 0.0);
    CHECK(vocab.unconditional() == vocab.encode({}));
    CHECK_THROWS_AS(vocab.encode({"dodecahedron"}), VocabularyError);
    CHECK_THROWS_AS(ConceptVocabulary({}, 4, 0), VocabularyError);
  }

  TEST_CASE("vocabulary is a pure function of its seed") {
    CHECK(ConceptVocabulary::make_default(3).basis_matrix() == ConceptVocabulary::make_default(3).basis_matrix());
    CHECK_FALSE(ConceptVocabulary::make_default(3).basis_matrix() == ConceptVocabulary::make_default(4).basis_matrix());
  }

  TEST_CASE("voxelize agrees with the analytic membership test") {
    ShapeParams cyl;
    cyl.kind = ShapeKind::kCylinder;
    cyl.center = {6.0, 7.0, 8.0};
    cyl.half_extents = {3.0, 4.5, 3.0};
    const Tensor v = voxelize(cyl, 16);
    std::size_t inside = 0;
    for (std::size_t x = 0; x < 16; ++x)
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t z = 0; z < 16; ++z) {
          const double dx = x - 6.0, dz = z - 8.0, dy = y - 7.0;
          const bool in = dx * dx + dz * dz <= 9.0 && std::abs(dy) <= 4.5;
          CHECK(v[voxel_index(16, x, y, z)] == (in ? 1.0 : 0.0));
          inside += in;
        }
    CHECK(inside > 0);
  }

  TEST_CASE("hollow shapes have an empty core") {
    ShapeParams s;
    s.kind = ShapeKind::kSphere;
    s.half_extents = {6.0, 6.0, 6.0};
    s.hollow = true;
    CHECK_FALSE(contains(s, 7.5, 7.5, 7.5));
    CHECK(contains(s, 7.5, 7.5, 7.5 + 5.0));
  }

  TEST_CASE("blur of a single voxel is the separable tent") {
    Tensor g(Shape{5, 5, 5}, 0.0);
    g[voxel_index(5, 2, 2, 2)] = 1.0;
    const Tensor b = blur_once(g);
    const double w[3] = {0.25, 0.5, 0.25};
    double total = 0.0;
    for (std::size_t x = 0; x < 5; ++x)
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t z = 0; z < 5; ++z) {
          const auto tap = [&](std::size_t i) { return i >= 1 && i <= 3 ? w[i - 1] : 0.0; };
          CHECK(b[voxel_index(5, x, y, z)] == doctest::Approx(tap(x) * tap(y) * tap(z)));
          total += b[voxel_index(5, x, y, z)];
        }
    CHECK(total == doctest::Approx(1.0));
  }

  TEST_CASE("tags follow the geometric predicates") {
    ShapeParams tall;
    tall.kind = ShapeKind::kCylinder;
    tall.half_extents = {2.0, 6.5, 2.0};
    tall.color = {0.1, 0.8, 0.1};
    const TagSet t = derive_tags(tall, make_scene(tall, 16).density().value());
    CHECK(t.count("cylinder"));
    CHECK(t.count("tall"));
    CHECK(t.count("green"));
    CHECK_FALSE(t.count("flat"));
    CHECK_FALSE(t.count("red"));

    ShapeParams slab;
    slab.kind = ShapeKind::kBox;
    slab.half_extents = {6.0, 1.0, 3.0};
    slab.color = {0.5, 0.5, 0.5};
    const TagSet s = derive_tags(slab, make_scene(slab, 16).density().value());
    CHECK(s.count("cube"));
    CHECK(s.count("flat"));
    CHECK(s.count("wide"));
    CHECK_FALSE(s.count("red"));
    CHECK_FALSE(s.count("green"));
    CHECK_FALSE(s.count("blue"));

    ShapeParams off;
    off.kind = ShapeKind::kSphere;
    off.center = {4.0, 7.5, 7.5};
    off.half_extents = {2.5, 2.5, 2.5};
    const TagSet o = derive_tags(off, make_scene(off, 16).density().value());
    CHECK(o.count("offset"));
    CHECK(o.count("small"));
    CHECK(o.count("red"));
  }

  TEST_CASE("azimuths are evenly spaced and normalised") {
    const auto a = evenly_spaced_azimuths(8);
    REQUIRE(a.size() == 8);
    CHECK(a[0] == 0.0);
    CHECK(a[2] == 90.0);
    CHECK(a[4] == -180.0);
    CHECK(a[6] == -90.0);
  }

  TEST_CASE("corpus generation is seeded and complete") {
    const auto vocab = ConceptVocabulary::make_default();
    const auto a = generate_corpus(vocab, 6, 11);
    const auto b = generate_corpus(vocab, 6, 11);
    const auto c = generate_corpus(vocab, 6, 12);
    REQUIRE(a.size() == 6);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].scene.density().value() == b[i].scene.density().value());
      CHECK(a[i].tags == b[i].tags);
      differs = differs || !(a[i].scene.density().value() == c[i].scene.density().value());
      CHECK(a[i].azimuths.size() == 8);
      CHECK(a[i].intensity.size() == 8);
      CHECK(a[i].depth.size() == 8);
      CHECK(a[i].color.size() == 8);
      CHECK(a[i].intensity[0].shape() == Shape{16, 16});
      CHECK(a[i].color[0].shape() == Shape{16, 16, 3});
      CHECK(a[i].tags == derive_tags(a[i].shape, a[i].scene.density().value()));
      // Stored views are the renders of the stored scene.
      CHECK(a[i].intensity[3] == render_intensity(a[i].scene, View(a[i].azimuths[3], 16)).value());
    }
    CHECK(differs);
  }

  TEST_CASE("manifest has one JSON object per entry") {
    const auto vocab = ConceptVocabulary::make_default();
    const auto corpus = generate_corpus(vocab, 4, 2);
    std::istringstream in(corpus_manifest(corpus));
    std::string line;
    std::size_t i = 0;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j["index"] == i);
      CHECK(j["kind"] == to_string(corpus[i].shape.kind));
      CHECK(j["tags"].size() == corpus[i].tags.size());
      ++i;
    }
    CHECK(i == corpus.size());
  }

  TEST_CASE("saved corpus loads back identically") {
    const auto vocab = ConceptVocabulary::make_default();
    CorpusOptions opts;
    opts.n_views = 4;
    const auto corpus = generate_corpus(vocab, 5, 3, opts);
    const auto loaded = load_corpus(Checkpoint::from_bytes(save_corpus(corpus, opts).to_bytes()), vocab);
    REQUIRE(loaded.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      CHECK(loaded[i].tags == corpus[i].tags);
      CHECK(loaded[i].scene.density().value() == corpus[i].scene.density().value());
      CHECK(loaded[i].scene.color().value() == corpus[i].scene.color().value());
      CHECK(loaded[i].azimuths == corpus[i].azimuths);
      CHECK(loaded[i].depth == corpus[i].depth);
    }
  }

  TEST_CASE("tampered corpus density is rejected") {
    const auto vocab = ConceptVocabulary::make_default();
    const auto corpus = generate_corpus(vocab, 2, 3);
    Checkpoint ck = save_corpus(corpus);
    Checkpoint bad;
    for (const auto& [name, t] : ck.entries()) {
      Tensor v = t;
      if (name.find("density") != std::string::npos) v[0] += 0.5;
      bad.put(name, v);
    }
    CHECK_THROWS_AS(load_corpus(bad, vocab), FormatError);
  }

  TEST_CASE("encoding examples") {
    const auto vocab = ConceptVocabulary::make_default();
    CHECK(vocab.encode({"sphere"}) == vocab.basis("sphere"));
    CHECK(std::abs(dot(vocab.encode({"sphere", "tall"}), vocab.basis("cube"))) < 1e-10);
  }

  TEST_CASE("generated tags describe the generated shapes") {
    const auto vocab = ConceptVocabulary::make_default();
    const auto corpus = generate_corpus(vocab, 60, 1);
    std::size_t spheres = 0, flats = 0;
    for (const auto& e : corpus) {
      const Tensor& d = e.scene.density().value();
      const std::size_t n = e.scene.grid_size();
      if (e.tags.count("sphere")) {
        ++spheres;
        // Blurred support stays within one voxel of the analytic ball.
        ShapeParams grown = e.shape;
        for (double& h : grown.half_extents) h += std::sqrt(3.0);
        grown.hollow = false;
        for (std::size_t x = 0; x < n; ++x)
          for (std::size_t y = 0; y < n; ++y)
            for (std::size_t z = 0; z < n; ++z)
              if (d[voxel_index(n, x, y, z)] > 0.0) CHECK(contains(grown, double(x), double(y), double(z)));
      }
      if (e.tags.count("flat")) {
        ++flats;
        CHECK(static_cast<double>(measure(d).extent[1]) <= n / 4.0);
      }
    }
    CHECK(spheres > 0);
    CHECK(flats > 0);
  }
}
