#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mueller/state.hpp"

namespace mueller {

/// Radial two-electron integrals R^k(ab;ab) = int int p_ab(r) p_ab(s)
/// r_<^k / r_>^{k+1} dr ds for subshell pair products p_ab = u_a u_b, indexed
/// by the canonical flattened subshell order. Entries outside the angular
/// selection rules (parity, triangle) are zero.
struct SlaterTable {
  int k_max{0};
  std::vector<Eigen::MatrixXd> rk;  ///< rk[k](a, b), symmetric in (a, b)

  double value(int k, int a, int b) const { return rk[static_cast<std::size_t>(k)](a, b); }
};

/// Build the pair table with the shared multipole-potential path (order-4
/// prefix sums, O(n_points) per pair and k). Requires k_max >= 2 l_max so the
/// exchange sum is exact for the stored channels.
SlaterTable slater_integrals(const DensityMatrix1P& gamma, int k_max);

}  // namespace mueller
