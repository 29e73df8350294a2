#pragma once

#include <vector>

#include "qpmp/belavkin.hpp"
#include "qpmp/hjb.hpp"
#include "qpmp/io.hpp"

namespace qpmp {

/// First-order adjoint pair in matrix coordinates. p is the gradient of a
/// real functional of rho, q its derivative along sigma(rho).
struct AdjointState {
  ComplexMatrix p;
  ComplexMatrix q;
};

/// Qubit chart maps: p_matrix = sum_i g_i sigma_i and g_i = 1/2 tr(p sigma_i),
/// so that <w, p_matrix> = <b, g> with b the Bloch drift.
ComplexMatrix matrix_gradient(const Vec3& g);
Vec3 bloch_gradient(const ComplexMatrix& p);

/// C(t,u,r) +/- <b(r,u), p> + 1/2 s(r)^T P s(r), with the sign of the drift
/// term chosen by `convention` (Flipped applies the minus sign).
double generalized_hamiltonian(double t, const RealVector& u, const Vec3& r, const Vec3& p,
                               const Mat3& P, const QuantumModel& model, const CostSpec& cost,
                               HamiltonianSign convention);

/// Matrix-chart form: <rho, C> +/- <w, p> + 1/2 s^T P s with P the
/// Bloch-reduced second derivative.
double generalized_hamiltonian(double t, const RealVector& u, const DensityMatrix& rho,
                               const ComplexMatrix& p, const Mat3& P, const QuantumModel& model,
                               const CostSpec& cost, HamiltonianSign convention);

struct HamiltonianMinimum {
  RealVector u_star;
  double h_star = 0.0;
  std::size_t index = 0;
};

/// Exhaustive argmin over u_grid. Values within 1e-12 relative are ties and
/// go to the lexicographically smallest control.
HamiltonianMinimum minimize_hamiltonian(double t, const Vec3& r, const Vec3& p, const Mat3& P,
                                        const QuantumModel& model, const CostSpec& cost,
                                        const std::vector<RealVector>& u_grid,
                                        HamiltonianSign convention);

/// Lexicographic argmin of precomputed values; shared with the linear model.
std::size_t argmin_with_tiebreak(const std::vector<double>& values,
                                 const std::vector<RealVector>& u_grid);

/// Partial derivative of the Bloch Hamiltonian in r with u, p, P frozen.
Vec3 hamiltonian_gradient_r(double t, const RealVector& u, const Vec3& r, const Vec3& p,
                            const Mat3& P, const QuantumModel& model, const CostSpec& cost,
                            HamiltonianSign convention);

/// p' = p - grad_H_rho dt + q dW, q carried over unchanged.
/// Throws NumericalError on non-finite output.
AdjointState costate_backward_step(const AdjointState& state, const DensityMatrix& rho,
                                   const RealVector& u, double dW, double dt,
                                   const ComplexMatrix& grad_H_rho);

/// Feedback u(t, rho) minimizing the Hamiltonian at the grid costate.
Policy greedy_policy(const ValueGrid& grid, const QuantumModel& model, const CostSpec& cost,
                     std::vector<RealVector> u_grid);

struct FbsdeResidual {
  /// |p_propagated(T) - grad <rho(r), M>| at the final state.
  double terminal_residual = 0.0;
  /// Same against the grid gradient at T (the reference leg).
  double terminal_grid_residual = 0.0;
  double max_backward_residual = 0.0;
  double mean_backward_residual = 0.0;
  double mean_costate_norm = 0.0;
  double mean_relative_residual = 0.0;
  double grid_h = 0.0;
  double dt = 0.0;
  std::size_t steps = 0;
  HamiltonianSign convention = HamiltonianSign::Standard;
};

/// Starts the costate at the grid gradient at (0, r_0), propagates it along
/// the recorded path with the backward step (q = P s from the grid) and
/// compares against the grid gradient at every later time.
/// Throws InputError naming the exit time when the path leaves the grid.
FbsdeResidual fbsde_residual(const TrajectoryRecord& traj, const ValueGrid& grid,
                             const QuantumModel& model, const CostSpec& cost,
                             const std::vector<RealVector>& u_grid);

io::KeyValueDoc to_key_values(const FbsdeResidual& r);

}  // namespace qpmp
