#pragma once

#include <Eigen/Dense>

#include "mueller/grid.hpp"

namespace mueller {

/// Cumulative integral C_i = int_0^{t_i} g dt on the uniform auxiliary grid,
/// for integrands sampled at nodes t_1..t_n that vanish at the virtual node
/// t = 0. Local-cubic cells give order-4 accuracy. Index i of the result
/// corresponds to node t_{i+1} of the stored mesh.
Eigen::VectorXd cumulative_integral(const Eigen::Ref<const Eigen::VectorXd>& g, double dt);

/// Multipole potential W_k[f](r_i) = int f(s) r_<^k / r_>^{k+1} ds for a
/// node-sampled radial function f (dr measure). k = 0 is the Newton kernel.
Eigen::VectorXd multipole_potential(const RadialGrid& grid,
                                    const Eigen::Ref<const Eigen::VectorXd>& f, int k);

/// Electrostatic potential of a spherical density by Newton's theorem:
/// v_H(r) = (1/r) int_{s<=r} 4 pi s^2 rho ds + int_{s>r} 4 pi s rho ds.
/// rho must be non-negative on the nodes (small negative rounding is clipped,
/// entries below -1e-10 raise a data error).
Eigen::VectorXd hartree_potential(const Eigen::Ref<const Eigen::VectorXd>& rho,
                                  const RadialGrid& grid);

}  // namespace mueller
