#include "mueller/banded.hpp"

#include <cmath>
#include <random>

#include "mueller/errors.hpp"

namespace mueller {

int PentaCholesky::factor(const Eigen::Ref<const Eigen::MatrixXd>& a, double shift) {
  const int n = static_cast<int>(a.rows());
  d_.resize(n);
  l1_ = Eigen::VectorXd::Zero(n);
  l2_ = Eigen::VectorXd::Zero(n);
  int bad = 0;
  for (int i = 0; i < n; ++i) {
    double d = a(i, i) - shift;
    if (i >= 1) d -= l1_[i - 1] * l1_[i - 1] * d_[i - 1];
    if (i >= 2) d -= l2_[i - 2] * l2_[i - 2] * d_[i - 2];
    if (!(d > 0.0)) ++bad;
    if (d == 0.0) d = 1e-300;  // keep the recurrence finite for inertia counts
    d_[i] = d;
    if (i + 1 < n) {
      double offd = a(i + 1, i);
      if (i >= 1) offd -= l1_[i - 1] * l2_[i - 1] * d_[i - 1];
      l1_[i] = offd / d;
    }
    if (i + 2 < n) l2_[i] = a(i + 2, i) / d;
  }
  return bad;
}

Eigen::VectorXd PentaCholesky::solve(const Eigen::Ref<const Eigen::VectorXd>& b) const {
  const int n = size();
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    double v = b[i];
    if (i >= 1) v -= l1_[i - 1] * y[i - 1];
    if (i >= 2) v -= l2_[i - 2] * y[i - 2];
    y[i] = v;
  }
  y.array() /= d_.array();
  for (int i = n - 1; i >= 0; --i) {
    double v = y[i];
    if (i + 1 < n) v -= l1_[i] * y[i + 1];
    if (i + 2 < n) v -= l2_[i] * y[i + 2];
    y[i] = v;
  }
  return y;
}

LanczosResult lanczos_largest(int dim,
                              const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
                              int count, double tol_rel, int max_steps, unsigned seed) {
  count = std::min(count, dim);
  if (max_steps <= 0) max_steps = dim;
  max_steps = std::min(max_steps, dim);

  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd q(dim, max_steps);
  Eigen::VectorXd alpha(max_steps), beta(max_steps);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = gauss(rng);
  v.normalize();
  q.col(0) = v;

  LanczosResult out;
  int built = 0;
  int target = std::min(max_steps, std::max(2 * count + 30, 60));
  while (true) {
    for (int j = built; j < target; ++j) {
      Eigen::VectorXd hv = apply(q.col(j));
      alpha[j] = q.col(j).dot(hv);
      for (int pass = 0; pass < 2; ++pass)
        hv -= q.leftCols(j + 1) * (q.leftCols(j + 1).transpose() * hv);
      beta[j] = hv.norm();
      if (j + 1 < max_steps) {
        if (beta[j] < 1e-300) {
          for (int i = 0; i < dim; ++i) hv[i] = gauss(rng);
          for (int pass = 0; pass < 2; ++pass)
            hv -= q.leftCols(j + 1) * (q.leftCols(j + 1).transpose() * hv);
          beta[j] = 0.0;
          const double nrm = hv.norm();
          if (nrm > 0.0) hv /= nrm;
        } else {
          hv /= beta[j];
        }
        q.col(j + 1) = hv;
      }
    }
    built = target;

    Eigen::MatrixXd tri = Eigen::MatrixXd::Zero(built, built);
    tri.diagonal() = alpha.head(built);
    for (int j = 0; j + 1 < built; ++j) tri(j, j + 1) = tri(j + 1, j) = beta[j];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tri);
    if (es.info() != Eigen::Success) throw NumericError("tridiagonal solve failed");

    // largest Ritz values live at the top end of the ascending spectrum
    const double scale = es.eigenvalues().cwiseAbs().maxCoeff() + 1e-300;
    const double bm = (built < dim) ? beta[built - 1] : 0.0;
    double worst = 0.0;
    for (int k = 0; k < count; ++k) {
      const int idx = built - 1 - k;
      worst = std::max(worst, bm * std::abs(es.eigenvectors()(built - 1, idx)));
    }
    if (worst <= tol_rel * scale || built >= max_steps) {
      out.values.resize(count);
      out.vectors.resize(dim, count);
      for (int k = 0; k < count; ++k) {
        const int idx = built - 1 - k;
        out.values[k] = es.eigenvalues()[idx];
        out.vectors.col(k) = q.leftCols(built) * es.eigenvectors().col(idx);
      }
      out.converged = worst <= tol_rel * scale;
      out.max_residual = worst;
      return out;
    }
    target = std::min(max_steps, built + 48);
  }
}

LanczosResult banded_lowest_eigenpairs(const Eigen::Ref<const Eigen::MatrixXd>& a, int count) {
  const int n = static_cast<int>(a.rows());
  count = std::min(count, n);

  // Locate a shift strictly below the spectrum: start under the smallest
  // diagonal entry (>= lambda_min is false in general, so walk down until the
  // inertia vanishes), then bisect back up to tighten.
  PentaCholesky chol;
  double hi = a.diagonal().minCoeff();  // lambda_min <= min diag
  double step = std::max(1.0, 0.01 * std::abs(hi));
  double lo = hi - step;
  while (chol.factor(a, lo) > 0) {
    step *= 4.0;
    lo -= step;
  }
  for (int it = 0; it < 40 && hi - lo > std::max(0.05, 1e-3 * std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (chol.factor(a, mid) > 0)
      hi = mid;
    else
      lo = mid;
  }
  const double sigma = lo - 0.1 * std::max(1.0, hi - lo);
  if (chol.factor(a, sigma) > 0) throw NumericError("shift-invert shift not below spectrum");

  auto apply = [&chol](const Eigen::VectorXd& x) { return chol.solve(x); };
  LanczosResult inv = lanczos_largest(n, apply, count, 1e-12, n, 777u);
  if (!inv.converged && inv.max_residual > 1e-8)
    throw NumericError("shift-invert iteration failed to converge");

  LanczosResult out;
  out.converged = true;
  out.max_residual = inv.max_residual;
  out.values.resize(count);
  out.vectors.resize(n, count);
  for (int k = 0; k < count; ++k) {
    out.values[k] = sigma + 1.0 / inv.values[k];
    out.vectors.col(k) = inv.vectors.col(k);
  }
  return out;
}

}  // namespace mueller
