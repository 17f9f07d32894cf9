#include "mueller/grid.hpp"

#include <cmath>

#include "mueller/errors.hpp"

namespace mueller {

RadialGrid build_grid(int n_points, double r_max, GridScheme scheme, double alpha) {
  if (n_points < 16) throw ConfigError("build_grid: n_points must be >= 16");
  if (!(r_max > 0.0)) throw ConfigError("build_grid: r_max must be positive");
  if (scheme == GridScheme::LogStretched && !(alpha > 0.0))
    throw ConfigError("build_grid: alpha must be positive for the log-stretched scheme");

  const int n = n_points;
  RadialGrid g;
  g.scheme = scheme;
  g.n_points = n;
  g.r_max = r_max;
  g.alpha = (scheme == GridScheme::LogStretched) ? alpha : 0.0;
  g.dt = 1.0 / n;
  g.r.resize(n);
  g.w.resize(n);
  g.rp.resize(n);
  g.q0.resize(n);

  if (scheme == GridScheme::Uniform) {
    for (int i = 0; i < n; ++i) {
      const double t = (i + 1) * g.dt;
      g.r[i] = r_max * t;
      g.rp[i] = r_max;
      g.q0[i] = 0.0;
    }
    // Trapezoid on [0, R_max] with a virtual node at r = 0; integrands are
    // treated as vanishing there (reduced radial functions do).
    g.w.setConstant(r_max * g.dt);
    g.w[n - 1] *= 0.5;
  } else {
    const double denom = std::expm1(alpha) - alpha;  // e^alpha - 1 - alpha
    for (int i = 0; i < n; ++i) {
      const double t = (i + 1) * g.dt;
      const double em1 = std::expm1(alpha * t);  // e^{alpha t} - 1
      const double e = em1 + 1.0;
      g.r[i] = r_max * (em1 - alpha * t) / denom;
      g.rp[i] = r_max * alpha * em1 / denom;
      // phi''/phi' = alpha e/(e-1), phi'''/phi' = alpha^2 e/(e-1)
      const double ratio = e / em1;
      g.q0[i] = 0.75 * alpha * alpha * ratio * ratio - 0.5 * alpha * alpha * ratio;
    }
    // Gregory weights of order 4 on the t-grid (virtual t=0 node carries a
    // vanishing integrand since phi'(0) = 0): 3/8, 7/6, 23/24, 1, ..., mirrored.
    Eigen::VectorXd c = Eigen::VectorXd::Ones(n);
    c[0] = 7.0 / 6.0;
    c[1] = 23.0 / 24.0;
    c[n - 1] = 3.0 / 8.0;
    c[n - 2] = 7.0 / 6.0;
    c[n - 3] = 23.0 / 24.0;
    g.w = c.array() * g.rp.array() * g.dt;
  }
  return g;
}

GridScheme parse_grid_scheme(const std::string& name) {
  if (name == "uniform") return GridScheme::Uniform;
  if (name == "log-stretched" || name == "log") return GridScheme::LogStretched;
  throw ConfigError("unknown grid scheme '" + name + "' (expected uniform | log-stretched)");
}

std::string to_string(GridScheme scheme) {
  return scheme == GridScheme::Uniform ? "uniform" : "log-stretched";
}

}  // namespace mueller
