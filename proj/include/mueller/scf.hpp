#pragma once

#include <vector>

#include <Eigen/Dense>

#include "mueller/channel.hpp"
#include "mueller/energy.hpp"
#include "mueller/grid.hpp"
#include "mueller/state.hpp"

namespace mueller {

/// Problem definition and solver knobs for the radial minimization.
struct SolverConfig {
  double Z{1.0};              ///< nuclear charge
  double N{1.0};              ///< electron number (need not be an integer)
  int q{1};                   ///< spin factor: degeneracy of (l,n) is q(2l+1)
  int l_max{0};               ///< highest angular channel carried
  int bands{6};               ///< radial bands kept per channel
  int grid_points{480};
  double r_max{40.0};
  GridScheme scheme{GridScheme::LogStretched};
  double grid_alpha{8.0};
  double energy_tol{1e-8};    ///< absolute energy-change tolerance
  int max_outer{200};         ///< outer iteration budget
  double occupation_step{1.0};///< initial step of the projected occupation descent
  double orbital_mix{0.6};    ///< initial orbital mixing factor (backtracked)
  double stationarity_tol{1e-4};  ///< max one-body equation residual at exit
};

/// Stationarity data of one subshell with respect to the effective one-body
/// operator h = -Delta/2 - Z/r + v_H - X.
struct SubshellResidual {
  int l{0};
  int n{0};
  double lambda{0.0};
  double residual{0.0};     ///< |(h - mu - shift) u| / |u|
  bool pinned{false};       ///< occupation at the upper bound 1
  double level_shift{0.0};  ///< e = <h> - mu for pinned subshells (else 0)
};

struct ConvergenceReport {
  bool converged{false};
  int iterations{0};
  double final_energy{0.0};
  double mu{0.0};             ///< multiplier estimate: d-weighted mean gradient
  double mu_spread{0.0};      ///< d-weighted stdev of free-subshell gradients
  double max_el_residual{0.0};
  std::vector<double> energy_history;  ///< total energy after each outer step
  std::vector<SubshellResidual> el_residuals;
};

struct SolveResult {
  DensityMatrix1P state;
  EnergyBreakdown energy;
  ConvergenceReport report;
};

/// Effective one-body operator of a fixed state: the mean-field part
/// -Delta/2 + l(l+1)/2r^2 - Z/r + v_H as a banded channel matrix, and the
/// exchange part as a low-rank correction built from the subshells with
/// occupation >= active_threshold,
///   X = sum_{ab} |u_a> Z_ab/(s_a+s_b) <u_b|
///       + sum_b s_b^{-1} (Q Z|u_b><u_b| + |u_b><u_b|Z Q),   s_a = sqrt(lambda_a),
/// where Z is the kernel gamma^{1/2}(x,y)/|x-y| reduced to the channel and Q
/// projects off the active subshells of the channel. The block between two
/// directions orthogonal to every active subshell is zero (the occupation
/// boundary admits only one-sided derivatives; this is the minimal-norm
/// choice, consistent with the variational inequality at lambda = 0).
///
/// coupling_cap bounds the magnitude of the exchange couplings: entries of
/// the projected block Z_ab/(s_a+s_b) are clamped to [-cap, cap] and each
/// off-subspace column s_b^{-1} Q Z u_b is rescaled so its norm stays below
/// cap. At a stationary state those couplings equal bounded mean-field
/// matrix elements (|Q Z u_b| shrinks like s_b), so the cap never binds
/// there; away from stationarity it stops barely-occupied, not yet relaxed
/// subshells from flooding the operator with 1/s_b-amplified noise. A
/// non-positive cap disables the clamp.
class EffectiveHamiltonian {
 public:
  EffectiveHamiltonian(const DensityMatrix1P& gamma, double Z,
                       double active_threshold = 1e-8,
                       double coupling_cap = 0.0);

  int channel_count() const { return static_cast<int>(channels_.size()); }

  /// Matrix action on interior conditioned coefficients of channel l.
  Eigen::VectorXd apply(int l, const Eigen::Ref<const Eigen::VectorXd>& z) const;

  /// <u1|h|u2> for node-sampled radial functions of channel l.
  double expectation(int l, const Eigen::Ref<const Eigen::VectorXd>& u1,
                     const Eigen::Ref<const Eigen::VectorXd>& u2) const;

  /// Lowest `count` eigenpairs of channel l: shift-invert Lanczos with the
  /// banded factor corrected by the low-rank exchange (Woodbury), shift
  /// located below the spectrum by structured inertia counts; falls back to a
  /// dense solve if the structured path stalls.
  EigenPairs lowest_eigenpairs(int l, int count) const;

  const ChannelOperator& channel(int l) const { return channels_.at(l).base; }

 private:
  struct Channel {
    ChannelOperator base;     // banded: kinetic + centrifugal - Z/r + v_H
    Eigen::MatrixXd u_cols;   // M x 2m low-rank factors (empty when no exchange)
    Eigen::MatrixXd c_small;  // 2m x 2m symmetric coupling
    Eigen::MatrixXd c_inv;    // closed-form inverse of c_small
  };
  std::vector<Channel> channels_;
};

/// One orbital relaxation sweep at fixed occupations: every stored subshell
/// slot of each channel is replaced by mix * (new eigenvector) + (1-mix) *
/// (old orbital), re-orthonormalized channel-wise; slots pair with the new
/// eigenvectors in ascending eigenvalue order and keep their labels and
/// occupations. mix = 0 returns the state unchanged.
DensityMatrix1P effective_orbital_update(const DensityMatrix1P& gamma, double Z, double mix,
                                         double active_threshold = 1e-8,
                                         double coupling_cap = 0.0);

/// Residuals of the stationarity conditions at multiplier mu: free subshells
/// satisfy h u = mu u, pinned subshells h u = (mu + e) u with e <= 0.
std::vector<SubshellResidual> euler_lagrange_residual(const DensityMatrix1P& gamma, double Z,
                                                      double mu,
                                                      double active_threshold = 1e-8);

/// Deterministic starting point: per-channel eigenvectors of the bare
/// operator -Delta/2 + l(l+1)/2r^2 - Z/r, occupations filled by ascending
/// bare eigenvalue (ties broken by channel then band) until N is reached.
DensityMatrix1P initial_state(const SolverConfig& config);

/// Alternating minimization: orbital sweeps and projected occupation descent,
/// both safeguarded by backtracking so the total energy never increases.
/// Stops when the energy change stays below energy_tol. A result is returned
/// also when the iteration budget runs out (report.converged = false with the
/// best iterate); genuine numerical breakdowns throw.
SolveResult solve(const SolverConfig& config);

/// Same minimization warm-started from an existing state (its channel and
/// band structure is adopted as-is; occupations are re-projected onto the
/// configured electron number). The grid and spin factor must match.
SolveResult solve(const SolverConfig& config, const DensityMatrix1P& warm_start);

}  // namespace mueller
