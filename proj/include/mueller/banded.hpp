#pragma once

#include <Eigen/Dense>
#include <functional>

namespace mueller {

/// LDL^T factorization of a symmetric pentadiagonal matrix minus a shift,
/// without pivoting. Signs of the pivots give the inertia (number of
/// eigenvalues below the shift); solves are valid when all pivots are
/// positive.
class PentaCholesky {
public:
  /// Factor A - shift*I, reading only the five central bands of `a`.
  /// Returns the number of non-positive pivots.
  int factor(const Eigen::Ref<const Eigen::MatrixXd>& a, double shift);

  /// Solve (A - shift*I) x = b. Valid after any factor() whose pivots are all
  /// far from zero (check min_abs_pivot()); the matrix may be indefinite.
  Eigen::VectorXd solve(const Eigen::Ref<const Eigen::VectorXd>& b) const;

  int size() const { return static_cast<int>(d_.size()); }
  double min_abs_pivot() const { return d_.size() ? d_.cwiseAbs().minCoeff() : 0.0; }

private:
  Eigen::VectorXd d_, l1_, l2_;  // pivots and the two subdiagonals of L
};

/// Ritz approximations of the algebraically largest eigenvalues of a
/// symmetric operator given through its matrix-vector product. Values are
/// returned in descending order with orthonormal vectors as columns.
struct LanczosResult {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  bool converged{false};
  double max_residual{0.0};  ///< residual bound of the requested pairs
};

/// Lanczos with full reorthogonalization and a deterministic seeded start.
/// Stops when the residual bounds of the `count` largest Ritz pairs fall
/// below tol_rel relative to the spectral scale, or when max_steps is hit.
LanczosResult lanczos_largest(int dim,
                              const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
                              int count, double tol_rel = 1e-10,
                              int max_steps = 0, unsigned seed = 12345u);

/// Lowest eigenpairs of a symmetric pentadiagonal matrix by shift-invert
/// Lanczos. The shift is located below the spectrum by inertia bisection.
/// Values ascending; vectors orthonormal columns.
LanczosResult banded_lowest_eigenpairs(const Eigen::Ref<const Eigen::MatrixXd>& a, int count);

}  // namespace mueller
