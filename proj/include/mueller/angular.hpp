#pragma once

namespace mueller {

/// Angular-momentum channel: orbital quantum number with its spin-weighted
/// degeneracy d_l = q (2l + 1).
struct AngularChannel {
  int l{0};
  int q{1};           ///< spin multiplicity
  int degeneracy{1};  ///< q (2l + 1)
};

AngularChannel make_channel(int l, int q);

/// Squared Wigner 3j symbol (l1 l2 k; 0 0 0). Zero outside the triangle
/// or when l1 + l2 + k is odd.
double wigner3j_squared(int l1, int l2, int k);

}  // namespace mueller
