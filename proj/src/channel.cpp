#include "mueller/channel.hpp"

#include <cmath>
#include <random>

#include "mueller/banded.hpp"

#include "mueller/errors.hpp"

namespace mueller {

ChannelOperator kinetic_matrix(const RadialGrid& grid, int l) {
  if (l < 0) throw ConfigError("kinetic_matrix: l must be non-negative");
  const int n = grid.n_points;
  const int m = n - 1;  // interior unknowns; u(R_max) = 0

  ChannelOperator op;
  op.l = l;
  op.n_nodes = n;
  op.dt = grid.dt;
  op.w = grid.w;
  op.sqrt_rp = grid.rp.head(m).array().sqrt();

  // -1/2 d^2/dt^2 as the 4th-order 5-point stencil; ghost nodes beyond the
  // boundaries carry zero (Dirichlet at t = 0 and just past t = 1).
  const double c0 = 1.25 / (grid.dt * grid.dt);
  const double c1 = -2.0 / 3.0 / (grid.dt * grid.dt);
  const double c2 = 1.0 / 24.0 / (grid.dt * grid.dt);
  op.matrix = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    op.matrix(i, i) = c0;
    if (i + 1 < m) op.matrix(i, i + 1) = c1;
    if (i + 2 < m) op.matrix(i, i + 2) = c2;
    if (i - 1 >= 0) op.matrix(i, i - 1) = c1;
    if (i - 2 >= 0) op.matrix(i, i - 2) = c2;
  }
  // Condition by the metric: A -> diag(1/phi') A diag(1/phi'), then add the
  // Liouville potential and the centrifugal barrier (plain diagonal terms).
  for (int i = 0; i < m; ++i) {
    const int jlo = std::max(0, i - 2), jhi = std::min(m - 1, i + 2);
    for (int j = jlo; j <= jhi; ++j) op.matrix(i, j) /= grid.rp[i] * grid.rp[j];
    const double cf = 0.5 * l * (l + 1) / (grid.r[i] * grid.r[i]);
    op.matrix(i, i) += 0.5 * grid.q0[i] / (grid.rp[i] * grid.rp[i]) + cf;
  }
  return op;
}

void add_potential(ChannelOperator& op, const Eigen::Ref<const Eigen::VectorXd>& v) {
  const int m = op.interior();
  op.matrix.diagonal() += v.head(m);
}

Eigen::VectorXd coulomb_attraction(double Z, const RadialGrid& grid) {
  if (!(Z > 0.0)) throw ConfigError("coulomb_attraction: Z must be positive");
  return (-Z / grid.r.array()).matrix();
}

double ChannelOperator::expectation(const Eigen::Ref<const Eigen::VectorXd>& u1,
                                    const Eigen::Ref<const Eigen::VectorXd>& u2) const {
  const Eigen::VectorXd z1 = to_z(u1), z2 = to_z(u2);
  return dt * z1.dot(matrix.selfadjointView<Eigen::Lower>() * z2);
}

Eigen::VectorXd ChannelOperator::to_z(const Eigen::Ref<const Eigen::VectorXd>& u) const {
  return (u.head(interior()).array() * sqrt_rp.array()).matrix();
}

Eigen::VectorXd ChannelOperator::to_u(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n_nodes);
  u.head(interior()) = z.array() / sqrt_rp.array();
  return u;
}

namespace {

/// Quadrature-normalize and sign-fix a radial function in place.
void normalize_column(Eigen::Ref<Eigen::VectorXd> u, const Eigen::VectorXd& w) {
  const double norm = std::sqrt((w.array() * u.array().square()).sum());
  if (norm > 0.0) u /= norm;
  int imax = 0;
  u.array().abs().maxCoeff(&imax);
  if (u[imax] < 0.0) u = -u;
}

}  // namespace

EigenPairs ChannelOperator::lowest_eigenpairs(int count) const {
  const int m = static_cast<int>(matrix.rows());
  if (count < 1) throw ConfigError("lowest_eigenpairs: count must be positive");
  count = std::min(count, m);

  EigenPairs out;
  auto finish = [&](const Eigen::VectorXd& vals, const Eigen::MatrixXd& zvecs) {
    out.values = vals.head(count);
    out.orbitals.resize(n_nodes, count);
    for (int k = 0; k < count; ++k) {
      out.orbitals.col(k) = to_u(zvecs.col(k) / std::sqrt(dt));
      normalize_column(out.orbitals.col(k), w);
    }
  };

  bool banded = true;
  for (int i = 0; i < m && banded; ++i)
    for (int j = 0; j < i - 2 && banded; ++j) banded = matrix(i, j) == 0.0;

  if (!banded || m <= 220 || count > m / 4) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(matrix);
    if (es.info() != Eigen::Success) throw NumericError("channel diagonalization failed");
    finish(es.eigenvalues(), es.eigenvectors());
    return out;
  }

  // The conditioned stencil is stiff (the near-origin nodes carry huge
  // kinetic scales), so plain Lanczos cannot resolve the bottom of the
  // spectrum; shift-invert with a banded factorization can.
  const LanczosResult low = banded_lowest_eigenpairs(matrix, count);
  finish(low.values, low.vectors);
  return out;
}

}  // namespace mueller
