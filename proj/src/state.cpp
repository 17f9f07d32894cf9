#include "mueller/state.hpp"

#include <cmath>
#include <set>

#include "mueller/errors.hpp"

namespace mueller {

double DensityMatrix1P::trace() const {
  double tr = 0.0;
  for (std::size_t l = 0; l < channels.size(); ++l)
    for (const auto& s : channels[l]) tr += degeneracy(static_cast<int>(l)) * s.lambda;
  return tr;
}

int DensityMatrix1P::subshell_count() const {
  int count = 0;
  for (const auto& ch : channels) count += static_cast<int>(ch.size());
  return count;
}

std::vector<const Subshell*> DensityMatrix1P::flattened() const {
  std::vector<const Subshell*> out;
  out.reserve(subshell_count());
  for (const auto& ch : channels)
    for (const auto& s : ch) out.push_back(&s);
  return out;
}

void validate_state(const DensityMatrix1P& gamma) {
  if (gamma.q < 1) throw DataError("state: spin multiplicity must be >= 1");
  if (gamma.grid.n_points < 16) throw DataError("state: grid is not initialized");
  for (std::size_t l = 0; l < gamma.channels.size(); ++l) {
    const auto& ch = gamma.channels[l];
    std::set<int> bands;
    for (const auto& s : ch) {
      if (s.l != static_cast<int>(l)) throw DataError("state: subshell filed in wrong channel");
      if (s.n < s.l + 1) throw DataError("state: band label below l+1");
      if (!bands.insert(s.n).second) throw DataError("state: duplicate band label in channel");
      if (s.lambda < -1e-12 || s.lambda > 1.0 + 1e-12)
        throw DataError("state: occupation outside [0, 1]");
      if (s.u.size() != gamma.grid.n_points)
        throw DataError("state: orbital length does not match grid");
      const double norm = (gamma.grid.w.array() * s.u.array().square()).sum();
      if (std::abs(norm - 1.0) > 1e-8) throw DataError("state: orbital not normalized");
    }
    for (std::size_t a = 0; a < ch.size(); ++a)
      for (std::size_t b = a + 1; b < ch.size(); ++b) {
        const double ov = (gamma.grid.w.array() * ch[a].u.array() * ch[b].u.array()).sum();
        if (std::abs(ov) > 1e-8) throw DataError("state: channel orbitals not orthogonal");
      }
  }
}

int count_pinned(const DensityMatrix1P& gamma, double tol) {
  int pinned = 0;
  for (const auto& ch : gamma.channels)
    for (const auto& s : ch)
      if (s.lambda >= 1.0 - tol) ++pinned;
  return pinned;
}

Eigen::VectorXd density_from_gamma(const DensityMatrix1P& gamma) {
  Eigen::VectorXd rho = Eigen::VectorXd::Zero(gamma.grid.n_points);
  for (std::size_t l = 0; l < gamma.channels.size(); ++l) {
    const double d = gamma.degeneracy(static_cast<int>(l));
    for (const auto& s : gamma.channels[l])
      rho += d * s.lambda * s.u.array().square().matrix();
  }
  rho.array() /= 4.0 * M_PI * gamma.grid.r.array().square();
  return rho;
}

double interpolate_radial(const RadialGrid& grid,
                          const Eigen::Ref<const Eigen::VectorXd>& u, double r) {
  const int n = grid.n_points;
  if (r < 0.0 || r > grid.r_max + 1e-12)
    throw DataError("interpolate_radial: radius outside the grid");
  // virtual node (0, 0) extends the table to the origin
  auto node_r = [&](int j) { return j < 0 ? 0.0 : grid.r[j]; };
  auto node_u = [&](int j) { return j < 0 ? 0.0 : u[j]; };
  // first stored node with r_j >= r
  int hi = static_cast<int>(std::lower_bound(grid.r.data(), grid.r.data() + n, r) -
                            grid.r.data());
  int j0 = std::min(std::max(hi - 2, -1), n - 4);
  double result = 0.0;
  for (int a = 0; a < 4; ++a) {
    double term = node_u(j0 + a);
    for (int b = 0; b < 4; ++b) {
      if (a == b) continue;
      term *= (r - node_r(j0 + b)) / (node_r(j0 + a) - node_r(j0 + b));
    }
    result += term;
  }
  return result;
}

}  // namespace mueller
