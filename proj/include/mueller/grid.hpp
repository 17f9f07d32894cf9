#pragma once

#include <Eigen/Dense>
#include <string>

namespace mueller {

/// Node layout for the radial half-line (0, R_max].
///
/// Both schemes place nodes at the images r_i = phi(t_i) of a uniform
/// auxiliary grid t_i = i/n, i = 1..n:
///   uniform:        phi(t) = R_max * t
///   log-stretched:  phi(t) = R_max * (e^{alpha t} - 1 - alpha t) / (e^alpha - 1 - alpha)
/// The stretched map satisfies phi'(0) = 0, so nodes cluster quadratically
/// near the origin (Coulomb cusp resolution) while integrands f(phi(t)) phi'(t)
/// vanish at the virtual node t = 0, which keeps the end-corrected quadrature
/// weights positive.
enum class GridScheme { Uniform, LogStretched };

/// Radial mesh with positive quadrature weights and the transformation data
/// (phi', Liouville potential) needed by the channel operators.
///
/// Quadrature: integrate() approximates \int_0^{R_max} f dr as sum w_i f(r_i).
/// The uniform scheme uses the trapezoid rule (order 2); the log-stretched
/// scheme uses Gregory end corrections of order 4 on the t-coordinate, whose
/// weights stay positive because the t=0 integrand vanishes.
struct RadialGrid {
  GridScheme scheme{GridScheme::LogStretched};
  int n_points{0};    ///< number of stored nodes; r[n_points-1] == R_max
  double r_max{0.0};  ///< truncation radius (bohr)
  double alpha{8.0};  ///< stretching strength, log-stretched scheme only
  double dt{0.0};     ///< step of the auxiliary coordinate, 1/n_points

  Eigen::VectorXd r;   ///< nodes, strictly increasing, r[0] > 0
  Eigen::VectorXd w;   ///< quadrature weights, all > 0
  Eigen::VectorXd rp;  ///< phi'(t_i), metric factor of the map
  Eigen::VectorXd q0;  ///< Liouville potential (3/4)(phi''/phi')^2 - (1/2)(phi'''/phi')

  /// sum w_i f_i; f sampled on the nodes.
  double integrate(const Eigen::Ref<const Eigen::VectorXd>& f) const { return w.dot(f); }

  /// L^2(dr) inner product of two node-sampled functions.
  double inner(const Eigen::Ref<const Eigen::VectorXd>& a,
               const Eigen::Ref<const Eigen::VectorXd>& b) const {
    return (w.array() * a.array() * b.array()).sum();
  }
};

/// Build a radial mesh. n_points >= 16 and r_max > 0 are required.
RadialGrid build_grid(int n_points, double r_max, GridScheme scheme, double alpha = 8.0);

GridScheme parse_grid_scheme(const std::string& name);
std::string to_string(GridScheme scheme);

}  // namespace mueller
