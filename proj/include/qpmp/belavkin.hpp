#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "qpmp/operators.hpp"

namespace qpmp {

enum class SmeScheme {
  EulerMaruyama,
  /// Euler-Maruyama plus the 1/2 sigma'(sigma)(dW^2 - dt) correction.
  Milstein,
};

/// Fixed-step discretization of the conditional master equation.
struct SmeConfig {
  double dt = 1e-3;
  double T = 1.0;
  bool normalize_each_step = true;
  std::uint64_t seed = 0;
  SmeScheme scheme = SmeScheme::Milstein;
  /// Each step's dW is the sum of this many keyed normals of variance
  /// dt/noise_substeps. A run at (dt, 2) and one at (dt/2, 1) see the same
  /// Brownian path, which is what refinement studies need.
  std::size_t noise_substeps = 1;

  /// T/dt, required to be an integer within 1e-9.
  std::size_t steps() const;
  std::vector<std::string> violations() const;
  void validate() const;
};

/// One sampled measurement trajectory. All sequences have steps()+1 entries;
/// controls[k] is the action applied on [t_k, t_{k+1}).
struct TrajectoryRecord {
  std::vector<double> times;
  std::vector<DensityMatrix> states;
  std::vector<RealVector> controls;
  std::vector<double> record_y;
  std::vector<double> innovations_W;
  std::uint64_t seed = 0;
  std::uint64_t traj_index = 0;
  SmeScheme scheme = SmeScheme::Milstein;

  std::size_t size() const { return times.size(); }
  /// Innovation increment W_{k+1} - W_k.
  double dW(std::size_t k) const { return innovations_W[k + 1] - innovations_W[k]; }
};

/// Linear cost: running density <rho, C(t,u)> and terminal <rho, M>.
struct CostSpec {
  std::function<ComplexMatrix(double t, const RealVector& u)> running_op;
  ComplexMatrix terminal_op;

  static CostSpec zero(Eigen::Index dim);
  /// running_op(t,u) = C0 + penalty*|u|^2 I.
  static CostSpec quadratic(ComplexMatrix C0, double control_penalty, ComplexMatrix M);

  /// Checks Hermitian PSD at the given sample points.
  std::vector<std::string> violations(Eigen::Index dim, std::span<const double> times,
                                      std::span<const RealVector> controls) const;
};

/// What a control policy may see: the current filter state and the record
/// up to and including the current time, never beyond it.
struct PolicyInput {
  double t;
  std::size_t step;
  const DensityMatrix& rho;
  std::span<const double> past_y;
  std::span<const double> past_W;
};

using Policy = std::function<RealVector(const PolicyInput&)>;

Policy constant_policy(RealVector u);

/// Directional derivative of sigma at rho along delta.
ComplexMatrix fluctuation_derivative(const ComplexMatrix& L, const ComplexMatrix& rho,
                                     const ComplexMatrix& delta);

/// One step rho + w dt + sigma dW (+ Milstein correction), then optional
/// projection onto physical states.
/// Throws NumericalError carrying `step_index` on non-finite output.
DensityMatrix step_sme(const DensityMatrix& rho, const RealVector& u, double dW,
                       const QuantumModel& model, const SmeConfig& cfg, long step_index = -1);

/// dW = dy - tr(rho (L + L^dagger)) dt.
double innovation_increment(double dy, const ComplexMatrix& rho, const ComplexMatrix& L, double dt);

/// Simulates the filter on its own output: dW ~ N(0, dt) from the keyed RNG
/// (cfg.seed, traj_index, step), dy = <L + L^dagger> dt + dW.
TrajectoryRecord generate_record(const QuantumModel& model, const DensityMatrix& rho0,
                                 const Policy& policy, const SmeConfig& cfg,
                                 std::uint64_t traj_index = 0);

/// Left-endpoint quadrature of the running cost plus the terminal cost.
double trajectory_cost(const TrajectoryRecord& traj, const CostSpec& cost);

/// Integrates the scalar conditional-expectation SDE for <X> with the
/// trajectory's innovations and returns max_t |pi_t(X) - tr(rho_t X)|.
/// The scalar recursion uses the trajectory's scheme, so without per-step
/// projection the two routes agree to rounding; what remains measures the
/// effect of projection on observables.
double filter_observable_check(const TrajectoryRecord& traj, const ComplexMatrix& X,
                               const QuantumModel& model);

/// Column order: t, y, W, u_0..u_{k-1}, rho_re_{ij}..., rho_im_{ij}... (row-major).
void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& traj);

}  // namespace qpmp
