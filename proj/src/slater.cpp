#include "mueller/slater.hpp"

#include "mueller/errors.hpp"
#include "mueller/potentials.hpp"

namespace mueller {

SlaterTable slater_integrals(const DensityMatrix1P& gamma, int k_max) {
  const int lmax = gamma.l_max();
  if (k_max < 2 * lmax)
    throw ConfigError("slater_integrals: k_max must be at least twice the largest channel");
  const auto shells = gamma.flattened();
  const int s = static_cast<int>(shells.size());

  SlaterTable table;
  table.k_max = k_max;
  table.rk.assign(static_cast<std::size_t>(k_max) + 1, Eigen::MatrixXd::Zero(s, s));

  const auto& grid = gamma.grid;
  for (int a = 0; a < s; ++a) {
    for (int b = a; b < s; ++b) {
      const int la = shells[a]->l, lb = shells[b]->l;
      const Eigen::VectorXd pair =
          (shells[a]->u.array() * shells[b]->u.array()).matrix();
      for (int k = std::abs(la - lb); k <= std::min(la + lb, k_max); k += 2) {
        const Eigen::VectorXd wk = multipole_potential(grid, pair, k);
        const double val = (grid.w.array() * pair.array() * wk.array()).sum();
        table.rk[static_cast<std::size_t>(k)](a, b) = val;
        table.rk[static_cast<std::size_t>(k)](b, a) = val;
      }
    }
  }
  return table;
}

}  // namespace mueller
