#include <cmath>

#include "doctest.h"
#include "spse/diffusion.hpp"
#include "spse/errors.hpp"
#include "spse/gradcheck.hpp"

using namespace spse;

namespace {

DenoiserSpec tiny_spec() { return DenoiserSpec{16, 8, 8, 16}; }

std::vector<ConditionedImage> two_images() {
  // A bright left half conditioned on e1, a bright right half on e2.
  Tensor left(Shape{4, 4}, 0.0), right(Shape{4, 4}, 0.0);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) (c < 2 ? left : right)[r * 4 + c] = 1.0;
  Tensor e1(Shape{8}, 0.0), e2(Shape{8}, 0.0);
  e1[0] = 1.0;
  e2[1] = 1.0;
  return {{left, e1}, {right, e2}};
}

}  // namespace

TEST_SUITE("diffusion") {
  TEST_CASE("linear schedule endpoints and cumulative products") {
    const NoiseSchedule s(100, 1e-4, 0.02);
    CHECK(s.steps() == 100);
    CHECK(s.beta(1) == doctest::Approx(1e-4));
    CHECK(s.beta(100) == doctest::Approx(0.02));
    long double acc = 1.0L;
    for (std::size_t t = 1; t <= 100; ++t) {
      acc *= 1.0L - (1e-4L + (0.02L - 1e-4L) * static_cast<long double>(t - 1) / 99.0L);
      CHECK(s.alpha_bar(t) == doctest::Approx(static_cast<double>(acc)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(s.alpha_bar(0), RangeError);
    CHECK_THROWS_AS(s.alpha_bar(101), RangeError);
  }

  TEST_CASE("explicit betas are validated") {
    const auto s = NoiseSchedule::from_betas({0.1, 0.2});
    CHECK(s.alpha_bar(2) == doctest::Approx(0.9 * 0.8));
    CHECK_THROWS_AS(NoiseSchedule::from_betas({}), ArgumentError);
    CHECK_THROWS_AS(NoiseSchedule::from_betas({0.1, 1.0}), ArgumentError);
    CHECK_THROWS_AS(NoiseSchedule::from_betas({0.0}), ArgumentError);
  }

  TEST_CASE("forward noising formula") {
    const Tensor x = Tensor::vector({1.0, -2.0});
    const Tensor eps = Tensor::vector({0.5, 0.25});
    const Tensor xt = add_noise(Var::constant(x), eps, 0.64).value();
    CHECK(xt[0] == doctest::Approx(0.8 * 1.0 + 0.6 * 0.5));
    CHECK(xt[1] == doctest::Approx(0.8 * -2.0 + 0.6 * 0.25));
    CHECK_THROWS_AS(add_noise(Var::constant(x), Tensor::vector({1, 2, 3}), 0.5), ShapeError);
  }

  TEST_CASE("time features are unit sin/cos pairs") {
    const Tensor f = time_features(37, 16);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(f[2 * i] * f[2 * i] + f[2 * i + 1] * f[2 * i + 1] == doctest::Approx(1.0));
    }
    CHECK(f[0] == doctest::Approx(std::sin(37.0)));
    CHECK_FALSE(time_features(1, 16) == time_features(2, 16));
  }

  TEST_CASE("denoiser forward on the tape equals the plain forward") {
    const Denoiser d(tiny_spec(), 3);
    RngStream rng(1);
    const Tensor x = gaussian(rng, Shape{4, 4});
    const Tensor e = gaussian(rng, Shape{8});
    const Tensor a = d.predict(Var::constant(x), Var::constant(e), 12).value();
    const Tensor b = d.predict_value(x, e, 12);
    CHECK(a.shape() == Shape{4, 4});
    CHECK(max_abs_difference(a, b) < 1e-14);
    CHECK_THROWS_AS(d.predict_value(Tensor(Shape{5}), e, 12), ShapeError);
    CHECK_THROWS_AS(d.predict_value(x, Tensor(Shape{3}), 12), ShapeError);
  }

  TEST_CASE("same seed, same weights") {
    const Denoiser a(tiny_spec(), 5), b(tiny_spec(), 5), c(tiny_spec(), 6);
    CHECK(a.params()[0].value() == b.params()[0].value());
    CHECK_FALSE(a.params()[0].value() == c.params()[0].value());
    CHECK(Denoiser::param_names().size() == a.params().size());
  }

  TEST_CASE("denoising loss is the pixel mean squared noise error") {
    const Denoiser d(tiny_spec(), 4);
    RngStream rng(2);
    const Tensor img = gaussian(rng, Shape{4, 4});
    const Tensor eps = gaussian(rng, Shape{4, 4});
    const Tensor e = gaussian(rng, Shape{8});
    const double ab = 0.7;
    const double loss = denoising_loss(d, img, Var::constant(e), 20, ab, eps).value().item();
    const Tensor xt = std::sqrt(ab) * img + std::sqrt(1 - ab) * eps;
    const Tensor pred = d.predict_value(xt, e, 20);
    double ref = 0.0;
    for (std::size_t i = 0; i < 16; ++i) ref += (pred[i] - eps[i]) * (pred[i] - eps[i]);
    CHECK(loss == doctest::Approx(ref / 16.0).epsilon(1e-12));
  }

  TEST_CASE("embedding gradient of the denoising loss") {
    const Denoiser d(tiny_spec(), 4);
    RngStream rng(3);
    const Tensor img = gaussian(rng, Shape{4, 4});
    const Tensor eps = gaussian(rng, Shape{4, 4});
    const Tensor e0 = gaussian(rng, Shape{8});
    Var e = Var::parameter(e0);
    backward(denoising_loss(d, img, e, 30, 0.5, eps));
    const Tensor num = finite_diff_grad(
        [&](const Tensor& v) { return denoising_loss(d, img, Var::constant(v), 30, 0.5, eps).value().item(); }, e0,
        1e-6);
    CHECK(compare_gradients(e.grad(), num, 1e-5, 1e-9).ok);
  }

  TEST_CASE("training lowers the loss and freezes a snapshot that finetuning leaves alone") {
    Denoiser d(tiny_spec(), 7);
    const NoiseSchedule s(50);
    TrainOptions opts;
    opts.steps = 600;
    opts.batch = 8;
    opts.lr = 3e-3;
    opts.seed = 1;
    const TrainReport rep = train_prior(d, two_images(), s, opts);
    REQUIRE(rep.losses.size() == 600);
    CHECK(rep.last_fraction_mean(0.1) < 0.8 * rep.first_fraction_mean(0.1));
    REQUIRE(d.has_frozen_prior());
    const auto frozen = d.frozen_params();
    CHECK(frozen[0] == d.params()[0].value());

    TrainOptions ft = opts;
    ft.steps = 20;
    finetune(d, two_images(), s, ft);
    CHECK(d.frozen_params()[0] == frozen[0]);
    CHECK_FALSE(d.params()[0].value() == frozen[0]);
    const Denoiser f = d.frozen_copy();
    CHECK(f.params()[0].value() == frozen[0]);
  }

  TEST_CASE("training is reproducible") {
    Denoiser a(tiny_spec(), 7), b(tiny_spec(), 7);
    const NoiseSchedule s(50);
    TrainOptions opts;
    opts.steps = 30;
    const auto ra = train_prior(a, two_images(), s, opts);
    const auto rb = train_prior(b, two_images(), s, opts);
    CHECK(ra.losses == rb.losses);
    CHECK(a.params()[4].value() == b.params()[4].value());
  }

  TEST_CASE("diverging training is reported") {
    Denoiser d(tiny_spec(), 7);
    TrainOptions opts;
    opts.steps = 50;
    opts.lr = 1e120;
    CHECK_THROWS_AS(train_prior(d, two_images(), NoiseSchedule(50), opts), TrainingError);
  }

  TEST_CASE("noising edge cases") {
    const NoiseSchedule s(100);
    RngStream rng(2);
    const Tensor x = gaussian(rng, Shape{5});
    const Tensor eps = gaussian(rng, Shape{5});
    CHECK(add_noise(Var::constant(x), eps, 1.0).value() == x);
    for (std::size_t t = 1; t <= s.steps(); ++t) {
      const double a = std::sqrt(s.alpha_bar(t));
      const double b = std::sqrt(1.0 - s.alpha_bar(t));
      CHECK(a * a + b * b == doctest::Approx(1.0).epsilon(1e-15));
    }
  }

  TEST_CASE("zero steps leave the weights alone") {
    Denoiser d(DenoiserSpec{4, 2, 4, 8}, 5);
    const auto before = d.params()[0].value();
    std::vector<ConditionedImage> data{{Tensor(Shape{4}, 0.5), Tensor(Shape{2}, 0.0)}};
    TrainOptions o;
    o.steps = 0;
    train_prior(d, data, NoiseSchedule(20), o);
    CHECK(d.params()[0].value() == before);
    REQUIRE(d.has_frozen_prior());
    for (std::size_t i = 0; i < d.params().size(); ++i) CHECK(d.frozen_params()[i] == d.params()[i].value());
    finetune(d, data, NoiseSchedule(20), o);
    CHECK(d.params()[0].value() == before);
  }
}
