#include "mueller/occupation.hpp"

#include <algorithm>
#include <cmath>

#include "mueller/angular.hpp"
#include "mueller/channel.hpp"
#include "mueller/energy.hpp"
#include "mueller/errors.hpp"
#include "mueller/potentials.hpp"

namespace mueller {

namespace {

double clipped_mass(const Eigen::VectorXd& raw, const Eigen::VectorXd& d, double tau) {
  double mass = 0.0;
  for (Eigen::Index a = 0; a < raw.size(); ++a) {
    mass += d[a] * std::clamp(raw[a] - tau, 0.0, 1.0);
  }
  return mass;
}

}  // namespace

Eigen::VectorXd project_occupations(const Eigen::Ref<const Eigen::VectorXd>& raw,
                                    const Eigen::Ref<const Eigen::VectorXd>& d, double N) {
  if (raw.size() != d.size()) {
    throw ConfigError("project_occupations: raw and degeneracy vectors differ in length");
  }
  if (raw.size() == 0) {
    if (N > 1e-12) throw CapacityError("project_occupations: no subshells but N > 0");
    return Eigen::VectorXd();
  }
  if ((d.array() <= 0.0).any()) {
    throw ConfigError("project_occupations: degeneracies must be positive");
  }
  if (N < -1e-12) throw ConfigError("project_occupations: negative electron number");
  const double capacity = d.sum();
  if (capacity < N - 1e-10) {
    throw CapacityError("project_occupations: total degeneracy " + std::to_string(capacity) +
                        " is below electron number " + std::to_string(N));
  }

  double lo = raw.minCoeff() - 2.0;  // all occupations clip to 1 here
  double hi = raw.maxCoeff();        // all occupations clip to 0 here
  // mass(tau) is continuous, piecewise linear and non-increasing, with
  // mass(lo) = capacity >= N and mass(hi) = 0 <= N.
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (clipped_mass(raw, d, mid) >= N) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-15 * (1.0 + std::abs(lo))) break;
  }
  double tau = 0.5 * (lo + hi);
  // Tighten once with a secant correction on the active linear piece.
  double active_weight = 0.0;
  for (Eigen::Index a = 0; a < raw.size(); ++a) {
    const double v = raw[a] - tau;
    if (v > 0.0 && v < 1.0) active_weight += d[a];
  }
  if (active_weight > 0.0) tau += (clipped_mass(raw, d, tau) - N) / active_weight;

  Eigen::VectorXd lambda(raw.size());
  for (Eigen::Index a = 0; a < raw.size(); ++a) {
    lambda[a] = std::clamp(raw[a] - tau, 0.0, 1.0);
  }
  if (std::abs(lambda.dot(d) - N) > 1e-10 * (1.0 + std::abs(N))) {
    throw NumericError("project_occupations: bisection failed to reach feasibility");
  }
  return lambda;
}

Eigen::VectorXd occupation_gradient(const DensityMatrix1P& gamma, const SlaterTable& table,
                                    double Z) {
  const auto shells = gamma.flattened();
  const int count = static_cast<int>(shells.size());
  if (static_cast<int>(table.rk.empty() ? 0 : table.rk[0].rows()) != count) {
    throw ConfigError("occupation_gradient: Slater table does not match the state");
  }
  Eigen::VectorXd g(count);
  if (count == 0) return g;

  const RadialGrid& grid = gamma.grid;
  const Eigen::VectorXd rho = density_from_gamma(gamma);
  const Eigen::VectorXd v_h = hartree_potential(rho, grid);
  const Eigen::VectorXd v_ext = coulomb_attraction(Z, grid);

  // Cache one-body channel operators (kinetic + centrifugal only).
  std::vector<ChannelOperator> kin;
  for (int l = 0; l <= gamma.l_max(); ++l) kin.push_back(kinetic_matrix(grid, l));

  constexpr double kFloor = 1e-12;
  for (int a = 0; a < count; ++a) {
    const Subshell& sa = *shells[a];
    double one_body = kin[sa.l].expectation(sa.u, sa.u);
    const Eigen::VectorXd u2 = sa.u.array().square();
    one_body += grid.integrate(u2.cwiseProduct(v_ext + v_h));

    double xrow = 0.0;
    for (int b = 0; b < count; ++b) {
      const Subshell& sb = *shells[b];
      if (sb.lambda <= 0.0) continue;
      const double sqrt_lb = std::sqrt(std::max(sb.lambda, 0.0));
      double angular = 0.0;
      for (int k = std::abs(sa.l - sb.l); k <= sa.l + sb.l; k += 2) {
        angular += wigner3j_squared(sa.l, sb.l, k) * table.value(k, a, b);
      }
      xrow += sqrt_lb * (2 * sb.l + 1) * angular;
    }
    const double sqrt_la = std::sqrt(std::max(sa.lambda, kFloor));
    g[a] = one_body - xrow / (2.0 * sqrt_la);
  }
  return g;
}

}  // namespace mueller
