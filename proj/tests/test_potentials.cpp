#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mueller/errors.hpp"
#include "mueller/grid.hpp"
#include "mueller/potentials.hpp"

using namespace mueller;

TEST_CASE("hydrogen 1s density gives the analytic screened potential") {
  const auto grid = build_grid(400, 40.0, GridScheme::LogStretched);
  Eigen::VectorXd rho(grid.n_points);
  for (int i = 0; i < grid.n_points; ++i)
    rho[i] = std::exp(-2.0 * grid.r[i]) / M_PI;
  const Eigen::VectorXd vh = hartree_potential(rho, grid);

  int near_one = 0;
  (grid.r.array() - 1.0).abs().minCoeff(&near_one);
  const double r1 = grid.r[near_one];
  const double exact1 = 1.0 / r1 - std::exp(-2.0 * r1) * (1.0 + 1.0 / r1);
  CHECK(std::abs(vh[near_one] - exact1) < 1e-6);
  CHECK(exact1 == doctest::Approx(1.0 - 2.0 * std::exp(-2.0)).epsilon(2e-2));

  double max_err = 0.0;
  for (int i = 0; i < grid.n_points; ++i) {
    const double r = grid.r[i];
    const double exact = 1.0 / r - std::exp(-2.0 * r) * (1.0 + 1.0 / r);
    max_err = std::max(max_err, std::abs(vh[i] - exact));
  }
  CHECK(max_err < 1e-6);
}

TEST_CASE("zero density produces a zero potential") {
  const auto grid = build_grid(100, 20.0, GridScheme::LogStretched);
  const Eigen::VectorXd vh = hartree_potential(Eigen::VectorXd::Zero(100), grid);
  CHECK(vh.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("r times the potential approaches the enclosed charge") {
  const auto grid = build_grid(300, 35.0, GridScheme::LogStretched);
  Eigen::VectorXd rho(grid.n_points);
  for (int i = 0; i < grid.n_points; ++i)
    rho[i] = 2.0 * std::exp(-2.0 * grid.r[i]) / M_PI;  // two electrons
  const Eigen::VectorXd vh = hartree_potential(rho, grid);
  const int last = grid.n_points - 1;
  CHECK(grid.r[last] * vh[last] == doctest::Approx(2.0).epsilon(1e-8));
  // monotone non-increasing beyond the density bulk
  for (int i = 0; i + 1 < grid.n_points; ++i)
    if (grid.r[i] > 5.0) CHECK(vh[i + 1] <= vh[i] + 1e-14);
}

TEST_CASE("negative density entries are rejected") {
  const auto grid = build_grid(64, 10.0, GridScheme::Uniform);
  Eigen::VectorXd rho = Eigen::VectorXd::Zero(64);
  rho[10] = -1e-3;
  CHECK_THROWS_AS(hartree_potential(rho, grid), DataError);
}

TEST_CASE("Newton formula equals the brute-force monopole double integral") {
  const auto grid = build_grid(400, 40.0, GridScheme::LogStretched);
  std::mt19937 rng(7u);
  std::uniform_real_distribution<double> coef(0.3, 1.5);
  for (int trial = 0; trial < 3; ++trial) {
    const double a = coef(rng), b = coef(rng), c = coef(rng), d = coef(rng);
    Eigen::VectorXd rho(grid.n_points);
    for (int i = 0; i < grid.n_points; ++i) {
      const double r = grid.r[i];
      rho[i] = a * std::exp(-2.0 * b * r) + c * r * r * std::exp(-1.7 * d * r);
    }
    const Eigen::VectorXd vh = hartree_potential(rho, grid);
    const Eigen::VectorXd f = 4.0 * M_PI * grid.r.array().square() * rho.array();
    // direct double sum with the grid's own weights
    double max_rel = 0.0;
    for (int i = 0; i < grid.n_points; i += 13) {
      double direct = 0.0;
      for (int j = 0; j < grid.n_points; ++j)
        direct += grid.w[j] * f[j] / std::max(grid.r[i], grid.r[j]);
      max_rel = std::max(max_rel, std::abs(direct - vh[i]) / std::abs(direct));
    }
    // the reference sum crosses the kernel kink at s = r with a plain
    // product rule, so the agreement floor is its own quadrature error
    CHECK(max_rel < 1e-4);
  }
}

TEST_CASE("higher multipole matches the separable disjoint-support product") {
  const auto grid = build_grid(512, 12.0, GridScheme::Uniform);
  auto bump = [](double r, double lo, double hi) {
    if (r <= lo || r >= hi) return 0.0;
    const double x = (2.0 * r - lo - hi) / (hi - lo);
    const double q = 1.0 - x * x;
    return q * q * q;  // C^2 bump
  };
  Eigen::VectorXd f1(grid.n_points), f2(grid.n_points);
  for (int i = 0; i < grid.n_points; ++i) {
    f1[i] = bump(grid.r[i], 1.0, 2.0);
    f2[i] = bump(grid.r[i], 5.0, 6.0);
  }
  for (int k : {1, 2, 3}) {
    // supports are disjoint with f1 inside f2: the kernel factorizes as r^k/s^{k+1}
    const Eigen::VectorXd wk = multipole_potential(grid, f1, k);
    const double coupled = (grid.w.array() * f2.array() * wk.array()).sum();
    double lo = 0.0, hi = 0.0;
    for (int i = 0; i < grid.n_points; ++i) {
      lo += grid.w[i] * f1[i] * std::pow(grid.r[i], k);
      hi += grid.w[i] * f2[i] * std::pow(grid.r[i], -(k + 1));
    }
    CHECK(coupled == doctest::Approx(lo * hi).epsilon(1e-8));
  }
}

TEST_CASE("cumulative integral is exact on cubics and fourth order overall") {
  const int n = 50;
  const double dt = 1.0 / n;
  Eigen::VectorXd g(n);
  for (int i = 0; i < n; ++i) {
    const double t = (i + 1) * dt;
    g[i] = t * (1.0 + t * (2.0 - 3.0 * t));  // cubic vanishing at 0
  }
  const Eigen::VectorXd c = cumulative_integral(g, dt);
  for (int i = 0; i < n; i += 7) {
    const double t = (i + 1) * dt;
    const double exact = t * t / 2.0 + 2.0 * t * t * t / 3.0 - 3.0 * t * t * t * t / 4.0;
    CHECK(c[i] == doctest::Approx(exact).epsilon(1e-13));
  }
}
