#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "qpmp/io.hpp"
#include "qpmp/moments.hpp"

namespace qpmp {

/// Quadratic criterion 1/2 int (X^T Q X + u^T R u) dt + 1/2 X(T)^T F X(T)
/// over the filtered mean, with horizon and fixed step.
struct LqgSpec {
  std::function<RealMatrix(double)> Q_run;
  std::function<RealMatrix(double)> R_run;
  RealMatrix F_term;
  double T = 1.0;
  double dt = 1e-3;
  RealVector x0;
  RealMatrix sigma0;

  static LqgSpec constant(RealMatrix Q, RealMatrix R, RealMatrix F, double T, double dt);

  /// T/dt, required to be an integer within 1e-9.
  std::size_t steps() const;
  /// Checks shapes, Q and F symmetric PSD, R symmetric PD (min eigenvalue
  /// > 1e-10) at the integration nodes.
  std::vector<std::string> violations(Eigen::Index n, Eigen::Index d) const;
  void validate(Eigen::Index n, Eigen::Index d) const;
};

/// K(t), phi(t), c(t) on the integration grid, plus the filter covariance
/// Sigma(t) that determines the noise gain Ktilde(t) = Sigma C^T + M.
struct RiccatiSolution {
  std::vector<double> time_points;
  std::vector<RealMatrix> K;
  std::vector<RealVector> phi;
  std::vector<double> c;
  std::vector<RealMatrix> sigma;

  double T() const { return time_points.back(); }
  double dt() const { return time_points[1] - time_points[0]; }
  std::size_t steps() const { return time_points.size() - 1; }

  /// Linear interpolation between nodes; InputError outside [0, T].
  RealMatrix K_at(double t) const;
  RealVector phi_at(double t) const;
  double c_at(double t) const;
  RealMatrix sigma_at(double t) const;

 private:
  friend RiccatiSolution riccati_backward(const LinearModel&, const LqgSpec&);
  std::pair<std::size_t, double> locate(double t) const;
};

/// Classical RK4 backward from K(T) = F, phi(T) = 0, c(T) = 0:
///   K'   = -K A - A^T K + K B R^-1 B^T K - Q
///   phi' = -(A - B R^-1 B^T K)^T phi
///   c'   = -1/2 tr(K Ktilde Ktilde^T)
/// Sigma is integrated forward first (RK4, half-step resolution) from
/// spec.sigma0 so Ktilde is known at every stage. K is symmetrized each step.
/// Throws IllConditionedError when R has condition number above 1e12.
RiccatiSolution riccati_backward(const LinearModel& model, const LqgSpec& spec);

/// u = -R^-1 B^T (K(t) xhat + phi(t)).
RealVector feedback(const MomentState& state, const RiccatiSolution& sol, double t,
                    const LinearModel& model, const LqgSpec& spec);

/// 1/2 xhat^T K xhat + phi^T xhat + c.
double value_function(double t, const MomentState& state, const RiccatiSolution& sol);

struct ClosedLoopOptions {
  bool noise = true;
  std::uint64_t seed = 0;
  std::uint64_t traj_index = 0;
  /// Added to the optimal feedback at each step (perturbation studies).
  std::function<RealVector(double t)> control_offset;
  /// Keep per-step states and controls (off for large ensembles).
  bool record = true;
};

struct ClosedLoopTrajectory {
  std::vector<double> times;
  std::vector<RealVector> xhat;
  std::vector<RealVector> controls;
  /// Ktilde dYtilde applied on [t_k, t_{k+1}).
  std::vector<RealVector> noise;
  double cost = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t traj_index = 0;
};

/// Euler-Maruyama closed loop dX = (A X + B u) dt + Ktilde dYtilde with
/// dYtilde ~ N(0, dt I) from the keyed generator (seed, traj_index, step).
/// Cost is the left-endpoint sum plus 1/2 X(T)^T F X(T).
/// Throws NumericalError carrying the step index on blowup.
ClosedLoopTrajectory closed_loop_simulate(const LinearModel& model, const LqgSpec& spec,
                                          const RiccatiSolution& sol,
                                          const ClosedLoopOptions& opts = {});

struct PmpMomentResidual {
  /// max_k |dp_observed - dp_predicted|, noise increment K dV removed and the
  /// drift -(Q X + A^T p) taken at the left endpoint.
  double max_step_residual = 0.0;
  /// |K(T) X(T) + phi(T) - F X(T)|.
  double terminal_residual = 0.0;
  double max_costate_norm = 0.0;
};

PmpMomentResidual pmp_moment_residual(const ClosedLoopTrajectory& traj, const RiccatiSolution& sol,
                                      const LinearModel& model, const LqgSpec& spec);

/// 1/2 (X^T Q X + u^T R u) + <p, A X + B u> + 1/2 <q, Ktilde Ktilde^T>.
double lqg_hamiltonian(double t, const RealVector& x, const RealVector& u, const RealVector& p,
                       const RealMatrix& q, const RealMatrix& ktilde, const LinearModel& model,
                       const LqgSpec& spec);

/// Grid argmin of lqg_hamiltonian (lexicographic tie-break).
RealVector lqg_grid_argmin(double t, const RealVector& x, const RealVector& p, const RealMatrix& q,
                           const RealMatrix& ktilde, const LinearModel& model, const LqgSpec& spec,
                           const std::vector<RealVector>& u_grid);

/// |K' X + phi' + K (A X - B R^-1 B^T (K X + phi)) + Q X + A^T (K X + phi)|
/// with K, phi and their time derivatives from the local 5-node Lagrange
/// interpolant of the stored solution.
double riccati_matching_residual(const RiccatiSolution& sol, const LinearModel& model,
                                 const LqgSpec& spec, double t, const RealVector& x);

/// `t, K_ij (row-major)..., phi_i..., c`.
void write_riccati_csv(std::ostream& os, const RiccatiSolution& sol);
/// Gains at t = 0 and the expected cost from spec.x0.
io::KeyValueDoc controller_summary(const RiccatiSolution& sol, const LinearModel& model,
                                   const LqgSpec& spec);

}  // namespace qpmp
