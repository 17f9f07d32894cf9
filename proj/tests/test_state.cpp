#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mueller/errors.hpp"
#include "mueller/state.hpp"

using namespace mueller;

TEST_CASE("rank-one 1s state reproduces the analytic density") {
  const auto g = testutil::rank_one_1s(1.0);
  const Eigen::VectorXd rho = density_from_gamma(g);
  for (int i = 0; i < g.grid.n_points; i += 29) {
    const double exact = std::exp(-2.0 * g.grid.r[i]) / M_PI;
    CHECK(rho[i] == doctest::Approx(exact).epsilon(1e-7));
  }
  CHECK(g.trace() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("trace counts spin-angular degeneracy") {
  auto g = testutil::rank_one_1s(1.0, 0.5, 2);
  CHECK(g.trace() == doctest::Approx(1.0).epsilon(1e-12));  // 2 * 1 * 0.5
  g.channels.resize(2);
  g.channels[1].push_back(testutil::make_subshell(
      g.grid, 1, 2, 0.25, [](double r) { return r * r * std::exp(-r); }));
  // adds q(2l+1) lambda = 2*3*0.25
  CHECK(g.trace() == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(g.subshell_count() == 2);
}

TEST_CASE("flattened order is channel-major with ascending bands") {
  auto g = testutil::rank_one_1s(1.0);
  g.channels[0].push_back(testutil::make_subshell(
      g.grid, 0, 2, 0.3, [](double r) { return r * (1.0 - 0.5 * r) * std::exp(-0.5 * r); }));
  g.channels.resize(2);
  g.channels[1].push_back(testutil::make_subshell(
      g.grid, 1, 2, 0.2, [](double r) { return r * r * std::exp(-0.5 * r); }));
  const auto flat = g.flattened();
  REQUIRE(flat.size() == 3);
  CHECK(flat[0]->l == 0);
  CHECK(flat[0]->n == 1);
  CHECK(flat[1]->l == 0);
  CHECK(flat[1]->n == 2);
  CHECK(flat[2]->l == 1);
  CHECK(flat[2]->n == 2);
}

TEST_CASE("state validation catches structural violations") {
  const auto good = testutil::rank_one_1s(1.0);
  CHECK_NOTHROW(validate_state(good));

  auto bad_occ = good;
  bad_occ.channels[0][0].lambda = 1.5;
  CHECK_THROWS_AS(validate_state(bad_occ), DataError);

  auto bad_norm = good;
  bad_norm.channels[0][0].u *= 1.1;
  CHECK_THROWS_AS(validate_state(bad_norm), DataError);

  auto dup_band = good;
  dup_band.channels[0].push_back(dup_band.channels[0][0]);
  CHECK_THROWS_AS(validate_state(dup_band), DataError);

  auto non_ortho = good;
  auto second = good.channels[0][0];
  second.n = 2;
  non_ortho.channels[0].push_back(second);  // same orbital, different label
  CHECK_THROWS_AS(validate_state(non_ortho), DataError);
}

TEST_CASE("orthogonal channel pairs pass validation") {
  auto g = testutil::rank_one_1s(1.0, 0.8);
  auto s2 = testutil::make_subshell(g.grid, 0, 2, 0.4, [](double r) {
    return r * (1.0 - 0.5 * r) * std::exp(-0.5 * r);
  });
  // Gram-Schmidt against the first subshell
  const auto& u1 = g.channels[0][0].u;
  const double ov = (g.grid.w.array() * u1.array() * s2.u.array()).sum();
  s2.u -= ov * u1;
  s2.u /= std::sqrt((g.grid.w.array() * s2.u.array().square()).sum());
  g.channels[0].push_back(s2);
  CHECK_NOTHROW(validate_state(g));
}

TEST_CASE("pinned shells are counted with the tolerance") {
  auto g = testutil::rank_one_1s(1.0, 1.0 - 1e-8);
  CHECK(count_pinned(g) == 1);
  g.channels[0][0].lambda = 0.9999;
  CHECK(count_pinned(g) == 0);
}

TEST_CASE("radial interpolation is locally cubic and guards the domain") {
  const auto grid = build_grid(300, 30.0, GridScheme::LogStretched);
  Eigen::VectorXd f(grid.n_points);
  for (int i = 0; i < grid.n_points; ++i)
    f[i] = grid.r[i] * std::exp(-grid.r[i]);
  for (double r : {0.05, 0.3, 1.7, 4.0, 14.2, 29.9}) {
    const double exact = r * std::exp(-r);
    CHECK(interpolate_radial(grid, f, r) == doctest::Approx(exact).epsilon(1e-7));
  }
  // node values are reproduced exactly
  CHECK(interpolate_radial(grid, f, grid.r[57]) == doctest::Approx(f[57]).epsilon(1e-14));
  // origin uses the virtual zero node
  CHECK(std::abs(interpolate_radial(grid, f, 0.0)) < 1e-14);
  CHECK_THROWS_AS(interpolate_radial(grid, f, 31.0), DataError);
}
