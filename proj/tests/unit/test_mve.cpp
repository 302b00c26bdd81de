#include <cmath>

#include "doctest.h"
#include "spse/errors.hpp"
#include "spse/mve.hpp"
#include "spse/gradcheck.hpp"

using namespace spse;

namespace {

MultiViewEmbedding distinct_bases() {
  MultiViewEmbedding mve(Tensor(Shape{3}, 0.0));
  for (std::size_t i = 0; i < 4; ++i) {
    mve.bases()[i].assign(Tensor::vector({static_cast<double>(i), 10.0 * i, -1.0 * i}));
  }
  return mve;
}

std::vector<ViewImage> stripe_views() {
  // Four views of a 4x4 image with a stripe whose column depends on the view.
  std::vector<ViewImage> views;
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor img(Shape{4, 4}, 0.0);
    for (std::size_t r = 0; r < 4; ++r) img[r * 4 + i] = 1.0;
    views.push_back({MultiViewEmbedding::kBaseAzimuths[i], img});
  }
  return views;
}

// A denoiser that has learned which stripe goes with which one-hot condition.
const Denoiser& stripe_denoiser() {
  static const Denoiser d = [] {
    Denoiser out(DenoiserSpec{16, 3, 8, 16}, 2);
    const auto views = stripe_views();
    std::vector<ConditionedImage> data;
    for (std::size_t i = 0; i < 3; ++i) {
      Tensor e(Shape{3}, 0.0);
      e[i] = 1.0;
      data.push_back({views[i].image, e});
    }
    TrainOptions to;
    to.steps = 1500;
    to.lr = 3e-3;
    train_prior(out, data, NoiseSchedule(50), to);
    return out;
  }();
  return d;
}

}  // namespace

TEST_SUITE("mve") {
  TEST_CASE("each base azimuth reproduces its base exactly") {
    const auto mve = distinct_bases();
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(mve.interpolate_value(MultiViewEmbedding::kBaseAzimuths[i]) == mve.base(i));
    }
    CHECK(mve.interpolate_value(-180.0) == mve.base(3));
    CHECK(mve.interpolate_value(540.0) == mve.base(3));
  }

  TEST_CASE("midpoints average their neighbours") {
    const auto mve = distinct_bases();
    const auto mid = [&](std::size_t a, std::size_t b) { return 0.5 * (mve.base(a) + mve.base(b)); };
    CHECK(max_abs_difference(mve.interpolate_value(45.0), mid(0, 2)) < 1e-15);
    CHECK(max_abs_difference(mve.interpolate_value(-45.0), mid(0, 1)) < 1e-15);
    CHECK(max_abs_difference(mve.interpolate_value(135.0), mid(2, 3)) < 1e-15);
    CHECK(max_abs_difference(mve.interpolate_value(-135.0), mid(1, 3)) < 1e-15);
  }

  TEST_CASE("weights are linear in the angle and sum to one") {
    for (double az = -180.0; az < 180.0; az += 7.5) {
      const auto b = MultiViewEmbedding::blend(az);
      CHECK(b.lower_weight + b.upper_weight == doctest::Approx(1.0));
      CHECK(b.lower_weight >= 0.0);
      CHECK(b.upper_weight >= 0.0);
    }
    const auto b = MultiViewEmbedding::blend(30.0);
    CHECK(b.lower == 0);
    CHECK(b.upper == 2);
    CHECK(b.lower_weight == doctest::Approx(2.0 / 3.0));
  }

  TEST_CASE("interpolation is continuous across every seam") {
    const auto mve = distinct_bases();
    for (double seam : {-180.0, -90.0, 0.0, 90.0, 180.0}) {
      const Tensor lo = mve.interpolate_value(seam - 1e-9);
      const Tensor hi = mve.interpolate_value(seam + 1e-9);
      CHECK(max_abs_difference(lo, hi) < 1e-6);
    }
  }

  TEST_CASE("the swapped convention does not reproduce the bases") {
    const auto mve = distinct_bases();
    const Tensor at0 = mve.interpolate_value(0.0, InterpolationConvention::kSwapped);
    CHECK(at0 == mve.base(2));
  }

  TEST_CASE("gradient reaches only the two adjacent bases") {
    MultiViewEmbedding mve = distinct_bases();
    backward(sum(mve.interpolate(60.0)));
    CHECK(mve.bases()[0].grad()[0] == doctest::Approx(1.0 / 3.0));
    CHECK(mve.bases()[2].grad()[0] == doctest::Approx(2.0 / 3.0));
    CHECK(norm(mve.bases()[1].grad()) == 0.0);
    CHECK(norm(mve.bases()[3].grad()) == 0.0);
  }

  TEST_CASE("copies are independent") {
    MultiViewEmbedding a = distinct_bases();
    MultiViewEmbedding b = a;
    b.bases()[0].mutable_value()[0] = 99.0;
    CHECK(a.base(0)[0] == 0.0);
    SingleEmbedding s(Tensor::vector({1.0}));
    SingleEmbedding t = s;
    t.var().mutable_value()[0] = 2.0;
    CHECK(s.value()[0] == 1.0);
  }

  TEST_CASE("draws are seeded and within range") {
    const NoiseSchedule sched(50);
    RngStream a(3), b(3);
    const auto da = sample_draws(a, 40, 4, sched, Shape{4, 4});
    const auto db = sample_draws(b, 40, 4, sched, Shape{4, 4});
    for (std::size_t i = 0; i < da.size(); ++i) {
      CHECK(da[i].view < 4);
      CHECK(da[i].t >= 1);
      CHECK(da[i].t <= 50);
      CHECK(da[i].alpha_bar == sched.alpha_bar(da[i].t));
      CHECK(da[i].eps == db[i].eps);
      CHECK(da[i].eps.shape() == Shape{4, 4});
    }
    CHECK_THROWS_AS(sample_draws(a, 1, 0, sched, Shape{4}), ArgumentError);
  }

  TEST_CASE("reconstruction loss is the mean of per-draw denoising losses") {
    const Denoiser d(DenoiserSpec{16, 3, 8, 16}, 2);
    const auto views = stripe_views();
    const auto mve = distinct_bases();
    RngStream rng(4);
    const auto draws = sample_draws(rng, 6, views.size(), NoiseSchedule(50), Shape{4, 4});
    double ref = 0.0;
    for (const auto& dr : draws) {
      const Tensor e = mve.interpolate_value(views[dr.view].azimuth);
      ref += denoising_loss(d, views[dr.view].image, Var::constant(e), dr.t, dr.alpha_bar, dr.eps).value().item();
    }
    CHECK(multi_view_loss(mve, d, views, draws).value().item() == doctest::Approx(ref / 6.0).epsilon(1e-12));
  }

  TEST_CASE("embedding optimisation lowers held-out loss and leaves the denoiser alone") {
    // A denoiser that has learned which stripe goes with which one-hot
    // condition, so the embedding carries information.
    Denoiser d(DenoiserSpec{16, 3, 8, 16}, 2);
    const auto views = stripe_views();
    const NoiseSchedule sched(50);
    std::vector<ConditionedImage> data;
    for (std::size_t i = 0; i < 3; ++i) {
      Tensor e(Shape{3}, 0.0);
      e[i] = 1.0;
      data.push_back({views[i].image, e});
    }
    TrainOptions to;
    to.steps = 1500;
    to.lr = 3e-3;
    train_prior(d, data, sched, to);
    const auto before = d.params()[0].value();
    RngStream rng(99);
    const auto held = sample_draws(rng, 256, views.size(), sched, Shape{4, 4});

    MultiViewEmbedding mve(Tensor(Shape{3}, 0.0));
    SingleEmbedding single(Tensor(Shape{3}, 0.0));
    const double init = multi_view_loss(mve, d, views, held).value().item();
    EmbeddingOptimOptions opts;
    opts.steps = 300;
    opts.batch = 8;
    opts.lr = 2e-2;
    std::size_t calls = 0;
    const auto trace = optimize_embeddings(mve, d, views, sched, opts, [&](std::size_t, double, double) { ++calls; });
    optimize_single_embedding(single, d, views, sched, opts);
    CHECK(trace.losses.size() == 300);
    CHECK(calls == 300);
    CHECK(multi_view_loss(mve, d, views, held).value().item() < init);
    CHECK(single_embedding_loss(single, d, views, held).value().item() < init);
    CHECK(d.params()[0].value() == before);
  }

  TEST_CASE("finetuning on views moves the live weights only") {
    Denoiser d(DenoiserSpec{16, 3, 8, 16}, 2);
    d.freeze_prior();
    const auto frozen = d.frozen_params();
    TrainOptions opts;
    opts.steps = 10;
    opts.batch = 4;
    const auto rep =
        finetune_on_views(d, stripe_views(), [](double) { return Tensor(Shape{3}, 0.0); }, NoiseSchedule(50), opts);
    CHECK(rep.losses.size() == 10);
    CHECK(d.frozen_params() == frozen);
    CHECK_FALSE(d.params()[0].value() == frozen[0]);
  }

  TEST_CASE("zero optimisation steps keep the target at every azimuth") {
    const Denoiser d(DenoiserSpec{16, 3, 8, 16}, 2);
    const Tensor e_t = Tensor::vector({0.2, -0.1, 0.7});
    MultiViewEmbedding mve(e_t);
    EmbeddingOptimOptions opts;
    opts.steps = 0;
    optimize_embeddings(mve, d, stripe_views(), NoiseSchedule(50), opts);
    for (double az = -180.0; az < 180.0; az += 15.0) CHECK(max_abs_difference(mve.interpolate_value(az), e_t) < 1e-15);
  }

  TEST_CASE("one view with equal bases reduces to the single-embedding loss") {
    const Denoiser d(DenoiserSpec{16, 3, 8, 16}, 2);
    const Tensor e = Tensor::vector({0.4, 0.1, -0.3});
    const std::vector<ViewImage> one{{37.0, stripe_views()[1].image}};
    RngStream rng(6);
    const auto draws = sample_draws(rng, 5, 1, NoiseSchedule(50), Shape{4, 4});
    CHECK(multi_view_loss(MultiViewEmbedding(e), d, one, draws).value().item() ==
          doctest::Approx(single_embedding_loss(SingleEmbedding(e), d, one, draws).value().item()).epsilon(1e-14));
  }

  TEST_CASE("single embedding loss gradient and zero-noise reduction") {
    const Denoiser d(DenoiserSpec{16, 3, 8, 16}, 2);
    const auto views = stripe_views();
    RngStream rng(8);
    const auto draws = sample_draws(rng, 4, views.size(), NoiseSchedule(50), Shape{4, 4});
    const Tensor e0 = Tensor::vector({0.3, -0.2, 0.5});
    SingleEmbedding s(e0);
    backward(single_embedding_loss(s, d, views, draws));
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& v) { return single_embedding_loss(SingleEmbedding(v), d, views, draws).value().item(); }, e0);
    CHECK(compare_gradients(s.var().grad(), numeric, 1e-3, 1e-9).ok);

    std::vector<NoiseDraw> clean = draws;
    for (auto& dr : clean) {
      dr.alpha_bar = 1.0;
      dr.eps = Tensor(Shape{4, 4}, 0.0);
    }
    double ref = 0.0;
    for (const auto& dr : clean) {
      const Tensor p = d.predict_value(views[dr.view].image.reshaped(Shape{16}), e0, dr.t);
      ref += dot(p, p) / 16.0;
    }
    CHECK(single_embedding_loss(s, d, views, clean).value().item() == doctest::Approx(ref / 4.0).epsilon(1e-12));
  }

  TEST_CASE("measured: optimisation and finetuning do not raise the loss on seeds 0-4") {
    const Denoiser& trained = stripe_denoiser();
    const auto views = stripe_views();
    const NoiseSchedule sched(50);
    Tensor e_t(Shape{3}, 0.0);
    e_t[0] = 1.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      RngStream rng(100 + seed);
      const auto held = sample_draws(rng, 256, views.size(), sched, Shape{4, 4});
      MultiViewEmbedding mve(e_t);
      const double at_target = multi_view_loss(mve, trained, views, held).value().item();
      EmbeddingOptimOptions eo;
      eo.steps = 200;
      eo.batch = 8;
      eo.lr = 2e-2;
      eo.seed = seed;
      optimize_embeddings(mve, trained, views, sched, eo);
      const double optimised = multi_view_loss(mve, trained, views, held).value().item();
      CHECK(optimised <= at_target);

      Denoiser d = trained;
      const auto bases = mve;
      TrainOptions fo;
      fo.steps = 100;
      fo.batch = 4;
      fo.lr = 1e-4;
      fo.seed = seed;
      finetune_on_views(d, views, [&](double az) { return mve.interpolate_value(az); }, sched, fo);
      CHECK(multi_view_loss(mve, d, views, held).value().item() <= optimised);
      for (std::size_t i = 0; i < 4; ++i) CHECK(mve.base(i) == bases.base(i));
    }
  }
}
