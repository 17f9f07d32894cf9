#include "mueller/potentials.hpp"

#include <cmath>

#include "mueller/errors.hpp"

namespace mueller {

Eigen::VectorXd cumulative_integral(const Eigen::Ref<const Eigen::VectorXd>& g, double dt) {
  const int n = static_cast<int>(g.size());
  Eigen::VectorXd c(n);
  if (n < 4) {  // trapezoid fallback for tiny inputs
    double acc = 0.0;
    double prev = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += 0.5 * dt * (prev + g[i]);
      prev = g[i];
      c[i] = acc;
    }
    return c;
  }
  // Cell integrals from the cubic through four neighbouring samples; the
  // virtual t = 0 sample is zero. Node indexing: sample j >= 1 lives at g[j-1].
  auto s = [&](int j) { return j == 0 ? 0.0 : g[j - 1]; };
  double acc = dt / 24.0 * (19.0 * s(1) - 5.0 * s(2) + s(3));  // 9*s(0) = 0
  c[0] = acc;
  for (int j = 2; j <= n - 1; ++j) {
    acc += dt / 24.0 * (-s(j - 2) + 13.0 * (s(j - 1) + s(j)) - s(j + 1));
    c[j - 1] = acc;
  }
  acc += dt / 24.0 * (s(n - 3) - 5.0 * s(n - 2) + 19.0 * s(n - 1) + 9.0 * s(n));
  c[n - 1] = acc;
  return c;
}

Eigen::VectorXd multipole_potential(const RadialGrid& grid,
                                    const Eigen::Ref<const Eigen::VectorXd>& f, int k) {
  if (k < 0) throw ConfigError("multipole_potential: k must be non-negative");
  const int n = grid.n_points;
  // inner: (1/r^{k+1}) int_{s<=r} s^k f ds,  outer: r^k int_{s>r} f/s^{k+1} ds
  Eigen::VectorXd gin(n), gout(n);
  for (int i = 0; i < n; ++i) {
    const double rk = std::pow(grid.r[i], k);
    gin[i] = rk * f[i] * grid.rp[i];
    gout[i] = f[i] * grid.rp[i] / (rk * grid.r[i]);
  }
  const Eigen::VectorXd cin = cumulative_integral(gin, grid.dt);
  const Eigen::VectorXd cout = cumulative_integral(gout, grid.dt);
  const double total_out = cout[n - 1];
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) {
    const double rk = std::pow(grid.r[i], k);
    v[i] = cin[i] / (rk * grid.r[i]) + rk * (total_out - cout[i]);
  }
  return v;
}

Eigen::VectorXd hartree_potential(const Eigen::Ref<const Eigen::VectorXd>& rho,
                                  const RadialGrid& grid) {
  if (rho.size() != grid.n_points)
    throw ConfigError("hartree_potential: density length does not match grid");
  if ((rho.array() < -1e-10).any())
    throw DataError("hartree_potential: density has negative entries");
  const Eigen::VectorXd f =
      4.0 * M_PI * grid.r.array().square() * rho.array().max(0.0);
  return multipole_potential(grid, f, 0);
}

}  // namespace mueller
