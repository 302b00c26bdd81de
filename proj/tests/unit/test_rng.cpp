#include <cmath>
#include <set>

#include "doctest.h"
#include "spse/errors.hpp"
#include "spse/rng.hpp"

using namespace spse;

TEST_SUITE("rng") {
  TEST_CASE("same seed replays the same stream") {
    RngStream a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  }

  TEST_CASE("draw n depends only on (seed, n)") {
    RngStream a(9);
    for (int i = 0; i < 10; ++i) a.next_u64();
    const auto tenth = a.next_u64();
    RngStream b(9, 10);
    CHECK(b.next_u64() == tenth);
  }

  TEST_CASE("forks are reproducible and distinct") {
    const RngStream root(5);
    RngStream f1 = root.fork(1), f1b = root.fork(1), f2 = root.fork(2);
    const auto x = f1.next_u64();
    CHECK(f1b.next_u64() == x);
    CHECK(f2.next_u64() != x);
    // Forking does not advance the parent.
    RngStream r = root;
    CHECK(r.counter() == 0);
  }

  TEST_CASE("uniform moments") {
    RngStream rng(3);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      const double u = rng.uniform();
      REQUIRE(u >= 0.0);
      REQUIRE(u < 1.0);
      s += u;
      s2 += u * u;
    }
    CHECK(s / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(s2 / n - (s / n) * (s / n) == doctest::Approx(1.0 / 12.0).epsilon(0.02));
  }

  TEST_CASE("gaussian moments") {
    RngStream rng(4);
    const Tensor g = gaussian(rng, Shape{200000});
    double s = 0, s2 = 0, s4 = 0;
    for (double v : g.data()) {
      s += v;
      s2 += v * v;
      s4 += v * v * v * v;
    }
    const double n = static_cast<double>(g.size());
    CHECK(std::abs(s / n) < 0.01);
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(s4 / n == doctest::Approx(3.0).epsilon(0.05));
  }

  TEST_CASE("uniform_int covers its inclusive range") {
    RngStream rng(6);
    std::set<std::int64_t> seen;
    for (int i = 0; i < 2000; ++i) {
      const auto k = uniform_int(rng, -2, 3);
      REQUIRE(k >= -2);
      REQUIRE(k <= 3);
      seen.insert(k);
    }
    CHECK(seen.size() == 6);
    CHECK_THROWS_AS(uniform_int(rng, 3, 2), ArgumentError);
  }

  TEST_CASE("degenerate integer range") {
    RngStream rng(1);
    for (int i = 0; i < 10; ++i) CHECK(uniform_int(rng, 5, 5) == 5);
  }
}
