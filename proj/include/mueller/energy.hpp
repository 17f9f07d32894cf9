#pragma once

#include <Eigen/Dense>

#include "mueller/slater.hpp"
#include "mueller/state.hpp"

namespace mueller {

/// Energy components of the density-matrix functional (Hartree units):
/// E = kinetic + external + hartree - exchange.
struct EnergyBreakdown {
  double kinetic{0.0};
  double external{0.0};  ///< nuclear attraction, negative for bound states
  double hartree{0.0};   ///< classical Coulomb self-repulsion D(rho, rho)
  double exchange{0.0};  ///< square-root-kernel exchange X(gamma)
  double total{0.0};
};

/// D(rho, rho) = 1/2 int int rho(x) rho(y)/|x-y| for a radial density:
/// 1/2 int 4 pi r^2 rho v_H dr with the Newton potential.
double direct_energy(const Eigen::Ref<const Eigen::VectorXd>& rho, const RadialGrid& grid);

/// X(gamma) = 1/2 int int |gamma^{1/2}(x,y)|^2/|x-y|, reduced to channels:
/// (q/2) sum_ab sqrt(lambda_a lambda_b) (2l_a+1)(2l_b+1) sum_k 3j(l_a,l_b,k)^2
/// R^k(ab;ab). The table must come from the same state.
double exchange_energy(const DensityMatrix1P& gamma, const SlaterTable& table);

/// Full functional with a nuclear charge Z; builds the pair table internally.
EnergyBreakdown total_energy(const DensityMatrix1P& gamma, double Z);
EnergyBreakdown total_energy(const DensityMatrix1P& gamma, double Z, const SlaterTable& table);

}  // namespace mueller
