#include "mueller/kernel_slice.hpp"

#include <algorithm>
#include <cmath>

#include "mueller/errors.hpp"

namespace mueller {

namespace {

/// R(r) = u(r)/r with a finite origin limit (u ~ c r^{l+1}).
double radial_factor(const RadialGrid& grid, const Eigen::VectorXd& u, int l, double r) {
  const double tiny = 0.25 * grid.r[0];
  if (r < tiny) {
    if (l >= 1) return 0.0;
    const double r0 = grid.r[0];
    return interpolate_radial(grid, u, r0) / r0;  // u/r -> u'(0) as r -> 0
  }
  return interpolate_radial(grid, u, r) / r;
}

}  // namespace

double sqrt_kernel_value(const DensityMatrix1P& gamma, const Eigen::Vector3d& x,
                         const Eigen::Vector3d& y) {
  const double rx = x.norm(), ry = y.norm();
  double cosang = 0.0;
  if (rx > 0.0 && ry > 0.0)
    cosang = std::clamp(x.dot(y) / (rx * ry), -1.0, 1.0);

  double phi = 0.0;
  for (std::size_t l = 0; l < gamma.channels.size(); ++l) {
    const int li = static_cast<int>(l);
    double channel_sum = 0.0;
    for (const auto& sh : gamma.channels[l]) {
      if (sh.lambda <= 0.0) continue;
      const double fa = radial_factor(gamma.grid, sh.u, li, rx);
      if (fa == 0.0) continue;
      const double fb = radial_factor(gamma.grid, sh.u, li, ry);
      channel_sum += std::sqrt(sh.lambda) * fa * fb;
    }
    if (channel_sum == 0.0) continue;
    const double leg = (li == 0) ? 1.0 : std::legendre(static_cast<unsigned>(li), cosang);
    phi += channel_sum * (2.0 * li + 1.0) / (4.0 * M_PI) * leg;
  }
  return phi;
}

Eigen::VectorXd sqrt_kernel_slice(const DensityMatrix1P& gamma, const Eigen::Vector3d& x0,
                                  const Eigen::Vector3d& dir,
                                  const Eigen::Ref<const Eigen::VectorXd>& ts) {
  Eigen::VectorXd out(ts.size());
  for (Eigen::Index i = 0; i < ts.size(); ++i)
    out[i] = sqrt_kernel_value(gamma, x0, x0 + ts[i] * dir);
  return out;
}

}  // namespace mueller
