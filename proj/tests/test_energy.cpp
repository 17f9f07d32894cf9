#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "mueller/energy.hpp"
#include "mueller/errors.hpp"
#include "oracles.hpp"

using namespace mueller;

TEST_CASE("self-repulsion of hydrogenic densities matches 5Z/16") {
  for (double Z : {1.0, 2.0}) {
    const auto grid = build_grid(500, 40.0, GridScheme::LogStretched);
    Eigen::VectorXd rho(grid.n_points);
    for (int i = 0; i < grid.n_points; ++i)
      rho[i] = Z * Z * Z * std::exp(-2.0 * Z * grid.r[i]) / M_PI;
    CHECK(direct_energy(rho, grid) == doctest::Approx(5.0 * Z / 16.0).epsilon(1e-6));
  }
}

TEST_CASE("self-repulsion scales quadratically in the density") {
  const auto g = testutil::rank_one_1s(1.0);
  const Eigen::VectorXd rho = density_from_gamma(g);
  const double base = direct_energy(rho, g.grid);
  const double scaled = direct_energy((1.7 * rho.array()).matrix(), g.grid);
  CHECK(scaled == doctest::Approx(1.7 * 1.7 * base).epsilon(1e-12));
  CHECK(base >= 0.0);
}

TEST_CASE("monopole pair integral of the 1s shell is 5/8") {
  const auto g = testutil::rank_one_1s(1.0);
  const auto table = slater_integrals(g, 0);
  CHECK(table.value(0, 0, 0) == doctest::Approx(0.625).epsilon(1e-6));
  CHECK(table.value(0, 0, 0) > 0.0);
}

TEST_CASE("exchange equals self-repulsion on fully occupied rank-one states") {
  const auto g = testutil::rank_one_1s(1.3, 1.0);
  const auto table = slater_integrals(g, 0);
  const double x = exchange_energy(g, table);
  const double d = direct_energy(density_from_gamma(g), g.grid);
  CHECK(x == doctest::Approx(d).epsilon(1e-12));
}

TEST_CASE("exchange is linear in a single occupation and non-negative") {
  auto g = testutil::rank_one_1s(1.0, 1.0);
  const double x1 = exchange_energy(g, slater_integrals(g, 0));
  g.channels[0][0].lambda = 0.37;
  const double x037 = exchange_energy(g, slater_integrals(g, 0));
  CHECK(x037 == doctest::Approx(0.37 * x1).epsilon(1e-12));
  CHECK(x037 > 0.0);
  g.channels[0][0].lambda = 0.74;
  CHECK(exchange_energy(g, slater_integrals(g, 0)) > x037);
}

TEST_CASE("fully occupied hydrogenic ground states give E = -Z^2/2") {
  for (double Z : {1.0, 2.0}) {
    const auto g = testutil::discrete_ground_state(Z);
    const auto e = total_energy(g, Z);
    CHECK(std::abs(e.total + 0.5 * Z * Z) < 1e-5);
    // direct and exchange cancel exactly on this state
    CHECK(e.hartree == doctest::Approx(e.exchange).epsilon(1e-12));
    CHECK(e.kinetic > 0.0);
    CHECK(e.external < 0.0);
  }
}

TEST_CASE("empty states carry zero energy") {
  DensityMatrix1P g;
  g.grid = build_grid(100, 20.0, GridScheme::LogStretched);
  g.q = 2;
  const auto e = total_energy(g, 3.0);
  CHECK(e.total == 0.0);
  CHECK(e.kinetic == 0.0);

  auto zero_occ = testutil::rank_one_1s(1.0, 0.0);
  const auto e2 = total_energy(zero_occ, 1.0);
  CHECK(e2.total == 0.0);
}

TEST_CASE("energies are invariant under rotations of degenerate subshells") {
  auto g = testutil::rank_one_1s(1.0, 0.6);
  auto s2 = testutil::make_subshell(g.grid, 0, 2, 0.6, [](double r) {
    return r * (1.0 - 0.4 * r) * std::exp(-0.7 * r);
  });
  const auto& u1 = g.channels[0][0].u;
  s2.u -= (g.grid.w.array() * u1.array() * s2.u.array()).sum() * u1;
  s2.u /= std::sqrt((g.grid.w.array() * s2.u.array().square()).sum());
  g.channels[0].push_back(s2);

  const auto e_before = total_energy(g, 2.0);
  const double th = 0.7;
  auto rotated = g;
  rotated.channels[0][0].u = std::cos(th) * g.channels[0][0].u + std::sin(th) * g.channels[0][1].u;
  rotated.channels[0][1].u = -std::sin(th) * g.channels[0][0].u + std::cos(th) * g.channels[0][1].u;
  const auto e_after = total_energy(rotated, 2.0);

  CHECK(e_after.kinetic == doctest::Approx(e_before.kinetic).epsilon(1e-10));
  CHECK(e_after.hartree == doctest::Approx(e_before.hartree).epsilon(1e-10));
  CHECK(e_after.exchange == doctest::Approx(e_before.exchange).epsilon(1e-10));
  CHECK(e_after.total == doctest::Approx(e_before.total).epsilon(1e-9));
}

TEST_CASE("pair integrals agree with a direct double quadrature") {
  auto g = testutil::rank_one_1s(1.0, 0.8);
  g.channels.resize(2);
  g.channels[1].push_back(testutil::make_subshell(
      g.grid, 1, 2, 0.5, [](double r) { return r * r * std::exp(-0.8 * r); }));
  const auto table = slater_integrals(g, 2);
  const auto shells = g.flattened();
  const auto& grid = g.grid;
  for (int a = 0; a < 2; ++a)
    for (int b = a; b < 2; ++b)
      for (int k = std::abs(shells[a]->l - shells[b]->l);
           k <= shells[a]->l + shells[b]->l; k += 2) {
        const Eigen::VectorXd p = (shells[a]->u.array() * shells[b]->u.array()).matrix();
        double direct = 0.0;
        for (int i = 0; i < grid.n_points; ++i)
          for (int j = 0; j < grid.n_points; ++j) {
            const double rlo = std::min(grid.r[i], grid.r[j]);
            const double rhi = std::max(grid.r[i], grid.r[j]);
            direct += grid.w[i] * grid.w[j] * p[i] * p[j] *
                      std::pow(rlo, k) / std::pow(rhi, k + 1);
          }
        // reference carries the product-rule kink error at r = s
        CHECK(table.value(k, a, b) == doctest::Approx(direct).epsilon(2e-4));
      }
}

TEST_CASE("radial exchange matches the 3D brute-force sum") {
  DensityMatrix1P g;
  g.grid = build_grid(400, 14.0, GridScheme::LogStretched);
  g.q = 1;
  g.channels.resize(2);
  g.channels[0].push_back(testutil::make_subshell(
      g.grid, 0, 1, 0.7, [](double r) { return r * (1.0 + 0.3 * r) * std::exp(-r); }));
  g.channels[1].push_back(testutil::make_subshell(
      g.grid, 1, 2, 0.4, [](double r) { return r * r * std::exp(-0.9 * r); }));

  const double radial = exchange_energy(g, slater_integrals(g, 2));
  const double brute = testutil::brute_force_exchange_3d(g, 14, 12.0);
  CHECK(radial == doctest::Approx(brute).epsilon(0.08));
}

TEST_CASE("mismatched pair tables are rejected") {
  const auto g1 = testutil::rank_one_1s(1.0);
  auto g2 = g1;
  g2.channels[0].push_back(testutil::make_subshell(
      g2.grid, 0, 2, 0.1, [](double r) { return r * (1.0 - 0.5 * r) * std::exp(-0.5 * r); }));
  const auto table1 = slater_integrals(g1, 0);
  CHECK_THROWS_AS(exchange_energy(g2, table1), ConfigError);

  auto with_p = g1;
  with_p.channels.resize(2);
  with_p.channels[1].push_back(testutil::make_subshell(
      with_p.grid, 1, 2, 0.1, [](double r) { return r * r * std::exp(-r); }));
  CHECK_THROWS_AS(slater_integrals(with_p, 1), ConfigError);  // k_max < 2 l_max
}
