#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mueller/grid.hpp"

namespace mueller {

/// One radial subshell: a band of an angular channel with its occupation.
/// u is the reduced radial function on the grid nodes, normalized so that
/// sum w_i u_i^2 = 1; the physical orbital is u(r)/r times a spherical
/// harmonic, and the subshell carries q(2l+1) spin-angular copies.
struct Subshell {
  int l{0};
  int n{1};            ///< band label, n >= l+1, unique within the channel
  double lambda{0.0};  ///< occupation per spin-angular copy, in [0, 1]
  Eigen::VectorXd u;
};

/// Spherically symmetric one-particle density matrix in natural-orbital form:
/// per-channel lists of subshells sharing one radial grid and a global spin
/// multiplicity q. Trace = sum over subshells of q(2l+1) lambda.
struct DensityMatrix1P {
  RadialGrid grid;
  int q{1};
  std::vector<std::vector<Subshell>> channels;  ///< index = l

  int l_max() const { return static_cast<int>(channels.size()) - 1; }
  int degeneracy(int l) const { return q * (2 * l + 1); }
  double trace() const;
  int subshell_count() const;

  /// Subshells in canonical flattened order: channel-major, bands ascending.
  std::vector<const Subshell*> flattened() const;
};

/// Verify structural invariants: grid consistency, occupation range,
/// normalization, within-channel orthonormality (tolerance 1e-8), distinct
/// band labels. Throws DataError on violation.
void validate_state(const DensityMatrix1P& gamma);

/// Number of subshells pinned at full occupation within `tol`.
int count_pinned(const DensityMatrix1P& gamma, double tol = 1e-6);

/// Radial particle density rho(r_i) = sum_a q(2l_a+1) lambda_a u_a^2 / (4 pi r^2).
Eigen::VectorXd density_from_gamma(const DensityMatrix1P& gamma);

/// Evaluate a node-sampled reduced radial function at an arbitrary radius by
/// local cubic interpolation (the origin acts as a zero node). Radii beyond
/// R_max raise DataError.
double interpolate_radial(const RadialGrid& grid,
                          const Eigen::Ref<const Eigen::VectorXd>& u, double r);

}  // namespace mueller
