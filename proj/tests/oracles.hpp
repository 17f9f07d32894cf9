#pragma once

// Independent brute-force references used by unit tests and the acceptance
// suite. These deliberately avoid the radial-reduction code paths.

#include <cmath>
#include <vector>

#include "mueller/state.hpp"

namespace testutil {

/// Exchange energy 1/2 int int |Phi(x,y)|^2 / |x-y| evaluated on a cubic
/// n^3 point grid over [-L/2, L/2]^3 by direct summation. The cell
/// self-interaction uses the analytic 1/|d| integral over a cube. Spin
/// enters as the global multiplicity factor q.
inline double brute_force_exchange_3d(const mueller::DensityMatrix1P& g, int n, double L) {
  const double h = L / n;
  const int npts = n * n * n;
  std::vector<Eigen::Vector3d> pts(static_cast<std::size_t>(npts));
  {
    int idx = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k)
          pts[static_cast<std::size_t>(idx++)] =
              Eigen::Vector3d(-0.5 * L + (i + 0.5) * h, -0.5 * L + (j + 0.5) * h,
                              -0.5 * L + (k + 0.5) * h);
  }

  // per-point radial factors R_a(|x|) = u_a(|x|)/|x| for every subshell
  const auto shells = g.flattened();
  const int s = static_cast<int>(shells.size());
  Eigen::MatrixXd rad(npts, s);
  for (int p = 0; p < npts; ++p) {
    const double r = pts[static_cast<std::size_t>(p)].norm();
    for (int a = 0; a < s; ++a) {
      if (r > g.grid.r_max) {
        rad(p, a) = 0.0;
      } else if (r < 0.25 * g.grid.r[0]) {
        rad(p, a) = shells[a]->l == 0
                        ? mueller::interpolate_radial(g.grid, shells[a]->u, g.grid.r[0]) /
                              g.grid.r[0]
                        : 0.0;
      } else {
        rad(p, a) = mueller::interpolate_radial(g.grid, shells[a]->u, r) / r;
      }
    }
  }

  auto kernel = [&](int p, int qq) {
    const Eigen::Vector3d& x = pts[static_cast<std::size_t>(p)];
    const Eigen::Vector3d& y = pts[static_cast<std::size_t>(qq)];
    const double rx = x.norm(), ry = y.norm();
    double cosang = 0.0;
    if (rx > 0.0 && ry > 0.0) cosang = std::clamp(x.dot(y) / (rx * ry), -1.0, 1.0);
    double val = 0.0;
    for (int a = 0; a < s; ++a) {
      const int l = shells[a]->l;
      const double leg = (l == 0) ? 1.0 : std::legendre(static_cast<unsigned>(l), cosang);
      val += std::sqrt(shells[a]->lambda) * (2.0 * l + 1.0) / (4.0 * M_PI) *
             rad(p, a) * rad(qq, a) * leg;
    }
    return val;
  };

  const double cube_self = 2.3800774;  // int over unit cube of 1/|v| dv
  double x_sum = 0.0;
  for (int p = 0; p < npts; ++p) {
    const double kpp = kernel(p, p);
    x_sum += kpp * kpp * cube_self * h * h * h * h * h;
    for (int qq = p + 1; qq < npts; ++qq) {
      const double kv = kernel(p, qq);
      const double dist = (pts[static_cast<std::size_t>(p)] -
                           pts[static_cast<std::size_t>(qq)]).norm();
      x_sum += 2.0 * kv * kv * h * h * h * h * h * h / dist;
    }
  }
  return 0.5 * g.q * x_sum;
}

}  // namespace testutil
