#include "mueller/energy.hpp"

#include <cmath>

#include "mueller/angular.hpp"
#include "mueller/channel.hpp"
#include "mueller/errors.hpp"
#include "mueller/potentials.hpp"

namespace mueller {

double direct_energy(const Eigen::Ref<const Eigen::VectorXd>& rho, const RadialGrid& grid) {
  const Eigen::VectorXd vh = hartree_potential(rho, grid);
  const Eigen::VectorXd shell = 4.0 * M_PI * grid.r.array().square() * rho.array();
  return 0.5 * (grid.w.array() * shell.array() * vh.array()).sum();
}

double exchange_energy(const DensityMatrix1P& gamma, const SlaterTable& table) {
  const auto shells = gamma.flattened();
  const int s = static_cast<int>(shells.size());
  if (!table.rk.empty() && table.rk.front().rows() != s)
    throw ConfigError("exchange_energy: table does not match the state");
  double x = 0.0;
  for (int a = 0; a < s; ++a) {
    for (int b = 0; b < s; ++b) {
      const int la = shells[a]->l, lb = shells[b]->l;
      const double amp = std::sqrt(shells[a]->lambda * shells[b]->lambda) *
                         (2.0 * la + 1.0) * (2.0 * lb + 1.0);
      if (amp == 0.0) continue;
      double angular = 0.0;
      for (int k = std::abs(la - lb); k <= std::min(la + lb, table.k_max); k += 2)
        angular += wigner3j_squared(la, lb, k) * table.value(k, a, b);
      x += amp * angular;
    }
  }
  return 0.5 * gamma.q * x;
}

EnergyBreakdown total_energy(const DensityMatrix1P& gamma, double Z) {
  return total_energy(gamma, Z, slater_integrals(gamma, 2 * std::max(gamma.l_max(), 0)));
}

EnergyBreakdown total_energy(const DensityMatrix1P& gamma, double Z, const SlaterTable& table) {
  EnergyBreakdown e;
  if (gamma.subshell_count() == 0) return e;

  const auto& grid = gamma.grid;
  const Eigen::VectorXd vext = coulomb_attraction(Z, grid);
  for (int l = 0; l <= gamma.l_max(); ++l) {
    if (gamma.channels[static_cast<std::size_t>(l)].empty()) continue;
    const ChannelOperator t = kinetic_matrix(grid, l);
    const double d = gamma.degeneracy(l);
    for (const auto& sh : gamma.channels[static_cast<std::size_t>(l)]) {
      const double occ = d * sh.lambda;
      if (occ == 0.0) continue;
      e.kinetic += occ * t.expectation(sh.u, sh.u);
      e.external += occ * (grid.w.array() * vext.array() * sh.u.array().square()).sum();
    }
  }
  e.hartree = direct_energy(density_from_gamma(gamma), grid);
  e.exchange = exchange_energy(gamma, table);
  e.total = e.kinetic + e.external + e.hartree - e.exchange;
  return e;
}

}  // namespace mueller
