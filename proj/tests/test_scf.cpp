#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "mueller/channel.hpp"
#include "mueller/energy.hpp"
#include "mueller/errors.hpp"
#include "mueller/scf.hpp"
#include "mueller/slater.hpp"

using namespace mueller;

TEST_CASE("effective operator reproduces the rank-one identity <h> = e0 + <v_H>/2") {
  // For a rank-one state with occupation 1 the mean-field and exchange parts
  // combine to (v_H - X) u = <v_H>/2 u, exactly at the discrete level.
  for (double Z : {1.0, 2.0}) {
    const DensityMatrix1P gamma = testutil::discrete_ground_state(Z);
    EffectiveHamiltonian ham(gamma, Z);
    const Eigen::VectorXd& u = gamma.channels[0][0].u;
    const double expect = ham.expectation(0, u, u);
    const double reference = -0.5 * Z * Z + 0.5 * (5.0 * Z / 8.0);
    CHECK(expect == doctest::Approx(reference).epsilon(2e-5));

    // and u is an exact eigenvector of the full discrete operator
    const auto& op = ham.channel(0);
    const Eigen::VectorXd z = op.to_z(u);
    const Eigen::VectorXd hz = ham.apply(0, z);
    const double resid = (hz - expect * z).norm() / z.norm();
    CHECK(resid <= 1e-8);
  }
}

TEST_CASE("orbital update has the rank-one hydrogenic state as a fixed point") {
  const DensityMatrix1P gamma = testutil::discrete_ground_state(1.0);
  const DensityMatrix1P next = effective_orbital_update(gamma, 1.0, 1.0);
  const double drift =
      (next.channels[0][0].u - gamma.channels[0][0].u).cwiseAbs().maxCoeff();
  CHECK(drift <= 1e-7);
  CHECK(next.channels[0][0].lambda == 1.0);
}

TEST_CASE("orbital update with zero mixing is the identity") {
  const DensityMatrix1P gamma = testutil::rank_one_1s(1.3, 0.7);
  const DensityMatrix1P next = effective_orbital_update(gamma, 1.3, 0.0);
  CHECK((next.channels[0][0].u - gamma.channels[0][0].u).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stationarity residual vanishes for the rank-one eigenstate and flags others") {
  const DensityMatrix1P gamma = testutil::discrete_ground_state(1.0);
  // pinned subshell: eigenvector residual with its own level shift
  const auto at_half = euler_lagrange_residual(gamma, 1.0, -0.5);
  REQUIRE(at_half.size() == 1);
  CHECK(at_half[0].pinned);
  CHECK(at_half[0].residual <= 1e-8);
  CHECK(at_half[0].level_shift == doctest::Approx(-3.0 / 16.0 + 0.5).epsilon(1e-4));

  // a deliberately wrong orbital must produce an O(1) residual
  DensityMatrix1P off = testutil::rank_one_1s(1.0, 0.7);
  off.channels[0][0] = testutil::make_subshell(off.grid, 0, 1, 0.7, [](double r) {
    return r * std::exp(-1.9 * r);
  });
  const auto bad = euler_lagrange_residual(off, 1.0, -0.5);
  CHECK(bad[0].residual > 0.1);
}

TEST_CASE("initial state fills by ascending bare levels and conserves the trace") {
  SolverConfig cfg;
  cfg.Z = 20.0;
  cfg.N = 10.0;
  cfg.q = 2;
  cfg.l_max = 2;
  cfg.bands = 3;
  cfg.grid_points = 300;
  cfg.r_max = 12.0;
  const DensityMatrix1P gamma = initial_state(cfg);
  CHECK(gamma.trace() == doctest::Approx(10.0).epsilon(1e-12));
  // 1s (degeneracy 2) filled, the n=2 level takes the remaining 8 electrons
  CHECK(gamma.channels[0][0].lambda == doctest::Approx(1.0));
  double partial = 0.0;
  for (const auto& ch : gamma.channels)
    for (const auto& s : ch)
      if (s.lambda > 0.0 && s.lambda < 1.0) partial += 1.0;
  CHECK(partial <= 1.0);  // at most one fractionally filled level set member

  SolverConfig tiny = cfg;
  tiny.N = 200.0;
  CHECK_THROWS_AS(initial_state(tiny), CapacityError);
}

TEST_CASE("single-band hydrogen run recovers the bare ground state exactly") {
  SolverConfig cfg;
  cfg.Z = 1.0;
  cfg.N = 1.0;
  cfg.q = 1;
  cfg.l_max = 0;
  cfg.bands = 1;
  cfg.grid_points = 320;
  cfg.r_max = 40.0;
  cfg.energy_tol = 1e-13;
  cfg.max_outer = 60;
  const SolveResult res = solve(cfg);

  ChannelOperator op = kinetic_matrix(res.state.grid, 0);
  add_potential(op, coulomb_attraction(1.0, res.state.grid));
  const EigenPairs bare = op.lowest_eigenpairs(1);

  CHECK(res.report.converged);
  CHECK(res.energy.total == doctest::Approx(bare.values[0]).epsilon(1e-10));
  CHECK((res.state.channels[0][0].u - bare.orbitals.col(0)).cwiseAbs().maxCoeff() <= 1e-5);
  CHECK(res.state.trace() == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("hydrogen minimization spreads occupation and beats the rank-one bound") {
  SolverConfig cfg;
  cfg.Z = 1.0;
  cfg.N = 1.0;
  cfg.q = 1;
  cfg.l_max = 0;
  cfg.bands = 5;
  cfg.grid_points = 320;
  cfg.r_max = 40.0;
  cfg.energy_tol = 1e-9;
  cfg.max_outer = 80;
  const SolveResult res = solve(cfg);

  CHECK(res.report.converged);
  CHECK(res.energy.total <= -0.5);  // rank-one gives exactly the bare level
  CHECK(res.state.trace() == doctest::Approx(1.0).epsilon(1e-9));

  int occupied = 0;
  for (const auto& s : res.state.channels[0])
    if (s.lambda > 1e-8) ++occupied;
  CHECK(occupied >= 2);  // the minimizer is never rank-one

  // monotone energy history
  for (std::size_t k = 1; k < res.report.energy_history.size(); ++k)
    CHECK(res.report.energy_history[k] <=
          res.report.energy_history[k - 1] + 1e-9);

  CHECK(res.report.mu <= -0.124);  // chemical potential bound -1/8
  CHECK(res.report.mu >= -0.75);
  CHECK(count_pinned(res.state) <= 1);
}

TEST_CASE("helium-like rank-one run lands at the self-consistent mean-field energy") {
  SolverConfig cfg;
  cfg.Z = 2.0;
  cfg.N = 2.0;
  cfg.q = 2;
  cfg.l_max = 0;
  cfg.bands = 1;
  cfg.grid_points = 420;
  cfg.r_max = 30.0;
  cfg.energy_tol = 1e-12;
  cfg.max_outer = 60;
  const SolveResult res = solve(cfg);
  CHECK(res.report.converged);
  // paired two-electron mean-field minimum: E = 2 h + <uu|uu>
  CHECK(res.energy.total == doctest::Approx(-2.86168).epsilon(3e-4));
  CHECK(res.state.trace() == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("helium run: energy, stationarity and occupation structure") {
  SolverConfig cfg;
  cfg.Z = 2.0;
  cfg.N = 2.0;
  cfg.q = 2;
  cfg.l_max = 2;
  cfg.bands = 6;
  cfg.grid_points = 360;
  cfg.r_max = 30.0;
  cfg.energy_tol = 1e-9;
  cfg.max_outer = 120;
  const SolveResult res = solve(cfg);

  CHECK(res.report.converged);
  CHECK(res.energy.total <= -2.8615);  // below the mean-field upper bound
  CHECK(res.energy.total >= -3.2);
  CHECK(res.state.trace() == doctest::Approx(2.0).epsilon(1e-9));

  int occupied = 0;
  for (const auto& ch : res.state.channels)
    for (const auto& s : ch)
      if (s.lambda > 1e-8) ++occupied;
  CHECK(occupied >= 3);
  CHECK(count_pinned(res.state) <= 1);

  // free-subshell gradients agree: the multiplier is well defined
  CHECK(res.report.mu_spread <= 1e-5);
  CHECK(res.report.mu <= -0.124);
  CHECK(res.report.max_el_residual < 1e-3);

  for (std::size_t k = 1; k < res.report.energy_history.size(); ++k)
    CHECK(res.report.energy_history[k] <=
          res.report.energy_history[k - 1] + 1e-9);

  // warm restart resumes without losing ground
  SolverConfig resume = cfg;
  resume.max_outer = 6;
  const SolveResult again = solve(resume, res.state);
  CHECK(again.energy.total <= res.energy.total + 1e-8);
}
