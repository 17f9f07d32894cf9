#include "mueller/angular.hpp"

#include <array>

#include "mueller/errors.hpp"

namespace mueller {

AngularChannel make_channel(int l, int q) {
  if (l < 0 || q < 1) throw ConfigError("make_channel: require l >= 0 and q >= 1");
  return AngularChannel{l, q, q * (2 * l + 1)};
}

namespace {

// factorials as doubles; arguments stay below 64 for any sane channel count
const std::array<double, 64>& factorials() {
  static const auto table = [] {
    std::array<double, 64> f{};
    f[0] = 1.0;
    for (std::size_t i = 1; i < f.size(); ++i) f[i] = f[i - 1] * static_cast<double>(i);
    return f;
  }();
  return table;
}

}  // namespace

double wigner3j_squared(int l1, int l2, int k) {
  if (l1 < 0 || l2 < 0 || k < 0) throw ConfigError("wigner3j_squared: negative argument");
  const int J = l1 + l2 + k;
  if (J % 2 != 0) return 0.0;
  if (k < std::abs(l1 - l2) || k > l1 + l2) return 0.0;
  const auto& f = factorials();
  if (J + 1 >= static_cast<int>(f.size()))
    throw ConfigError("wigner3j_squared: arguments too large");
  const int g = J / 2;
  const double pre = f[J - 2 * l1] * f[J - 2 * l2] * f[J - 2 * k] / f[J + 1];
  const double ratio = f[g] / (f[g - l1] * f[g - l2] * f[g - k]);
  return pre * ratio * ratio;
}

}  // namespace mueller
