#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mueller/angular.hpp"
#include "mueller/errors.hpp"

using mueller::make_channel;
using mueller::wigner3j_squared;

TEST_CASE("channel degeneracy is q(2l+1)") {
  CHECK(make_channel(0, 1).degeneracy == 1);
  CHECK(make_channel(0, 2).degeneracy == 2);
  CHECK(make_channel(2, 2).degeneracy == 10);
  CHECK(make_channel(3, 1).degeneracy == 7);
  CHECK_THROWS_AS(make_channel(-1, 2), mueller::ConfigError);
  CHECK_THROWS_AS(make_channel(1, 0), mueller::ConfigError);
}

TEST_CASE("squared 3j symbols reproduce the closed-form values") {
  CHECK(wigner3j_squared(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(wigner3j_squared(1, 1, 1) == 0.0);  // odd sum
  CHECK(wigner3j_squared(1, 1, 2) == doctest::Approx(2.0 / 15.0).epsilon(1e-13));
  CHECK(wigner3j_squared(1, 1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-13));
  CHECK(wigner3j_squared(2, 2, 0) == doctest::Approx(1.0 / 5.0).epsilon(1e-13));
  CHECK(wigner3j_squared(1, 0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-13));
  CHECK(wigner3j_squared(2, 1, 1) == doctest::Approx(2.0 / 15.0).epsilon(1e-13));
  CHECK(wigner3j_squared(0, 0, 1) == 0.0);  // triangle violation
  CHECK(wigner3j_squared(3, 1, 1) == 0.0);
}

TEST_CASE("3j orthogonality sum rule") {
  for (int l1 = 0; l1 <= 6; ++l1)
    for (int l2 = 0; l2 <= 6; ++l2) {
      double sum = 0.0;
      for (int k = std::abs(l1 - l2); k <= l1 + l2; ++k)
        sum += (2.0 * k + 1.0) * wigner3j_squared(l1, l2, k);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("squared 3j symbols are permutation symmetric") {
  for (int a = 0; a <= 4; ++a)
    for (int b = 0; b <= 4; ++b)
      for (int c = 0; c <= 4; ++c) {
        const double v = wigner3j_squared(a, b, c);
        CHECK(v == doctest::Approx(wigner3j_squared(b, a, c)).epsilon(1e-13));
        CHECK(v == doctest::Approx(wigner3j_squared(c, b, a)).epsilon(1e-13));
      }
}
