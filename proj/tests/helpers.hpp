#pragma once

// Shared builders for test states (analytic hydrogenic orbitals etc.).

#include <cmath>
#include <functional>

#include "mueller/channel.hpp"
#include "mueller/grid.hpp"
#include "mueller/state.hpp"

namespace testutil {

/// Normalized subshell from an analytic reduced radial function.
inline mueller::Subshell make_subshell(const mueller::RadialGrid& grid, int l, int n,
                                       double lambda,
                                       const std::function<double(double)>& u_of_r) {
  mueller::Subshell s;
  s.l = l;
  s.n = n;
  s.lambda = lambda;
  s.u.resize(grid.n_points);
  for (int i = 0; i < grid.n_points; ++i) s.u[i] = u_of_r(grid.r[i]);
  const double norm = std::sqrt((grid.w.array() * s.u.array().square()).sum());
  s.u /= norm;
  return s;
}

/// Rank-one hydrogenic 1s state with charge Z and occupation lambda.
inline mueller::DensityMatrix1P rank_one_1s(double Z, double lambda = 1.0, int q = 1,
                                            int n_points = 600, double r_max = 40.0) {
  mueller::DensityMatrix1P g;
  g.grid = mueller::build_grid(n_points, r_max, mueller::GridScheme::LogStretched);
  g.q = q;
  g.channels.resize(1);
  g.channels[0].push_back(make_subshell(
      g.grid, 0, 1, lambda, [Z](double r) { return r * std::exp(-Z * r); }));
  return g;
}

/// Exact discrete hydrogenic eigenstate of the channel operator (so that the
/// variational identities hold to solver precision, not just analytically).
inline mueller::DensityMatrix1P discrete_ground_state(double Z, double lambda = 1.0,
                                                      int q = 1, int n_points = 600,
                                                      double r_max = 40.0) {
  mueller::DensityMatrix1P g;
  g.grid = mueller::build_grid(n_points, r_max, mueller::GridScheme::LogStretched);
  g.q = q;
  auto op = mueller::kinetic_matrix(g.grid, 0);
  mueller::add_potential(op, mueller::coulomb_attraction(Z, g.grid));
  const auto pairs = op.lowest_eigenpairs(1);
  mueller::Subshell s;
  s.l = 0;
  s.n = 1;
  s.lambda = lambda;
  s.u = pairs.orbitals.col(0);
  g.channels.resize(1);
  g.channels[0].push_back(std::move(s));
  return g;
}

}  // namespace testutil
