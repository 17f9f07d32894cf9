#pragma once

#include <Eigen/Dense>

#include "mueller/slater.hpp"
#include "mueller/state.hpp"

namespace mueller {

/// Project raw occupation scores onto the degeneracy-weighted simplex
/// { 0 <= lambda_a <= 1, sum_a d_a lambda_a = N } in the d-weighted metric:
/// lambda = clip(raw - tau, 0, 1) with tau found by bisection. Feasible to
/// 1e-10. Throws CapacityError when sum d < N and ConfigError on bad shapes.
Eigen::VectorXd project_occupations(const Eigen::Ref<const Eigen::VectorXd>& raw,
                                    const Eigen::Ref<const Eigen::VectorXd>& d, double N);

/// Gradient of the total energy with respect to the per-subshell electron
/// numbers nu_a = d_a lambda_a, at fixed orbitals:
///   g_a = <u_a| -Delta/2 + l(l+1)/2r^2 - Z/r + v_H |u_a>
///         - (2 sqrt(lambda_a))^{-1} sum_b sqrt(lambda_b) (2l_b+1)
///           sum_k 3j(l_a,l_b,k)^2 R^k_ab,
/// which equals the diagonal of the effective one-body operator. Occupations
/// are floored at 1e-12 inside the square root, so nearly empty subshells get
/// a large negative (but finite) gradient that pulls occupation into them.
Eigen::VectorXd occupation_gradient(const DensityMatrix1P& gamma, const SlaterTable& table,
                                    double Z);

}  // namespace mueller
