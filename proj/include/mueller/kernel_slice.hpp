#pragma once

#include <Eigen/Dense>

#include "mueller/state.hpp"

namespace mueller {

/// Pointwise value of the square-root kernel of the state,
///   Phi(x, y) = sum_a sqrt(lambda_a) (2 l_a + 1)/(4 pi)
///               * u_a(|x|) u_a(|y|) / (|x||y|) * P_{l_a}(cos angle(x, y)),
/// the spatial kernel of gamma^{1/2} per spin component. Radii beyond R_max
/// raise DataError (no extrapolation).
double sqrt_kernel_value(const DensityMatrix1P& gamma, const Eigen::Vector3d& x,
                         const Eigen::Vector3d& y);

/// Kernel samples along the line y(t) = x0 + t * dir for the given parameter
/// values, with x held at x0.
Eigen::VectorXd sqrt_kernel_slice(const DensityMatrix1P& gamma, const Eigen::Vector3d& x0,
                                  const Eigen::Vector3d& dir,
                                  const Eigen::Ref<const Eigen::VectorXd>& ts);

}  // namespace mueller
