#pragma once

#include <Eigen/Dense>

#include "mueller/grid.hpp"

namespace mueller {

/// Lowest eigenvalues (ascending) with eigenvectors as reduced radial
/// functions u(r) sampled on all grid nodes (last node is the Dirichlet
/// zero at R_max). Columns are quadrature-normalized, sign-fixed so the
/// largest-magnitude sample is positive.
struct EigenPairs {
  Eigen::VectorXd values;
  Eigen::MatrixXd orbitals;
};

/// Discretization of -1/2 d^2/dr^2 + l(l+1)/(2 r^2) + v(r) acting on reduced
/// radial functions u(r) = r R(r) with Dirichlet conditions at the origin and
/// at R_max.
///
/// Internally the operator is expressed in the Liouville-conditioned variable
/// z = sqrt(phi') u of the auxiliary coordinate t (r = phi(t)), where the
/// second derivative becomes a constant-coefficient 5-point stencil of order 4
/// plus the diagonal potential (3/4)(phi''/phi')^2/2 - (phi'''/phi')/2 scaled
/// by 1/phi'^2. `matrix` acts on the interior nodes only; the R_max node
/// carries the identically-zero boundary value.
struct ChannelOperator {
  int l{0};
  Eigen::MatrixXd matrix;  ///< symmetric, interior x interior, z-variable

  // grid plumbing needed to map eigenvectors back to radial functions
  Eigen::VectorXd sqrt_rp;  ///< sqrt(phi') on interior nodes
  Eigen::VectorXd w;        ///< quadrature weights, all nodes
  double dt{0.0};
  int n_nodes{0};

  int interior() const { return n_nodes - 1; }

  /// Quadratic form <u1|H|u2> for node-sampled radial functions (length
  /// n_nodes); the R_max sample is ignored (Dirichlet).
  double expectation(const Eigen::Ref<const Eigen::VectorXd>& u1,
                     const Eigen::Ref<const Eigen::VectorXd>& u2) const;

  /// Conditioned coefficients z = sqrt(phi') u on interior nodes.
  Eigen::VectorXd to_z(const Eigen::Ref<const Eigen::VectorXd>& u) const;
  /// Radial function from conditioned coefficients, zero-padded at R_max.
  Eigen::VectorXd to_u(const Eigen::Ref<const Eigen::VectorXd>& z) const;

  /// Lowest `count` eigenpairs by Lanczos with full reorthogonalization
  /// (deterministic start), falling back to a dense solve for small systems.
  EigenPairs lowest_eigenpairs(int count) const;
};

/// Kinetic-plus-centrifugal channel operator on the given mesh.
ChannelOperator kinetic_matrix(const RadialGrid& grid, int l);

/// Add a local potential sampled on the grid nodes to the operator.
void add_potential(ChannelOperator& op, const Eigen::Ref<const Eigen::VectorXd>& v);

/// Nuclear attraction -Z/r sampled on the grid nodes.
Eigen::VectorXd coulomb_attraction(double Z, const RadialGrid& grid);

}  // namespace mueller
