#include "qpmp/pontryagin.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qpmp/errors.hpp"

namespace qpmp {

namespace {

constexpr double kTieTol = 1e-12;
constexpr double kFdStep = 1e-6;

Vec3 components(const ComplexMatrix& m) {
  return {expectation(m, ops::sigma_x()).real(), expectation(m, ops::sigma_y()).real(),
          expectation(m, ops::sigma_z()).real()};
}

double sign_of(HamiltonianSign c) { return c == HamiltonianSign::Standard ? 1.0 : -1.0; }

void check_control(const QuantumModel& model, const RealVector& u) {
  if (u.size() != static_cast<Eigen::Index>(model.Hc.size()))
    throw InputError("control has " + std::to_string(u.size()) + " components, model has " +
                     std::to_string(model.Hc.size()) + " control Hamiltonians");
}

bool lex_less(const RealVector& a, const RealVector& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace

ComplexMatrix matrix_gradient(const Vec3& g) {
  return g[0] * ops::sigma_x() + g[1] * ops::sigma_y() + g[2] * ops::sigma_z();
}

Vec3 bloch_gradient(const ComplexMatrix& p) {
  if (p.rows() != 2 || p.cols() != 2) throw InputError("bloch_gradient: expected a 2x2 matrix");
  return 0.5 * components(p);
}

double generalized_hamiltonian(double t, const RealVector& u, const Vec3& r, const Vec3& p,
                               const Mat3& P, const QuantumModel& model, const CostSpec& cost,
                               HamiltonianSign convention) {
  check_control(model, u);
  const ComplexMatrix rho = bloch_matrix(r);
  const BlochDynamics d = bloch_dynamics(model, u, r);
  const double c = expectation(rho, cost.running_op(t, u)).real();
  return c + sign_of(convention) * d.drift.dot(p) + 0.5 * d.diffusion.dot(P * d.diffusion);
}

double generalized_hamiltonian(double t, const RealVector& u, const DensityMatrix& rho,
                               const ComplexMatrix& p, const Mat3& P, const QuantumModel& model,
                               const CostSpec& cost, HamiltonianSign convention) {
  check_control(model, u);
  if (rho.dim() != 2 || p.rows() != 2 || p.cols() != 2)
    throw InputError("generalized_hamiltonian: qubit state and 2x2 costate required");
  const ComplexMatrix w = lindblad_drift(model, u, rho);
  const Vec3 s = components(fluctuation(model.L, rho));
  const double c = expectation(rho, cost.running_op(t, u)).real();
  const double wp = (w * p).trace().real();
  return c + sign_of(convention) * wp + 0.5 * s.dot(P * s);
}

std::size_t argmin_with_tiebreak(const std::vector<double>& values,
                                 const std::vector<RealVector>& u_grid) {
  if (values.empty() || values.size() != u_grid.size())
    throw InputError("argmin over an empty or mismatched control grid");
  std::size_t best = 0;
  for (std::size_t c = 1; c < values.size(); ++c) {
    const double tol = kTieTol * (1.0 + std::abs(values[best]));
    if (values[c] < values[best] - tol ||
        (std::abs(values[c] - values[best]) <= tol && lex_less(u_grid[c], u_grid[best])))
      best = c;
  }
  return best;
}

HamiltonianMinimum minimize_hamiltonian(double t, const Vec3& r, const Vec3& p, const Mat3& P,
                                        const QuantumModel& model, const CostSpec& cost,
                                        const std::vector<RealVector>& u_grid,
                                        HamiltonianSign convention) {
  if (u_grid.empty()) throw InputError("minimize_hamiltonian: empty control grid");
  std::vector<double> h(u_grid.size());
  for (std::size_t c = 0; c < u_grid.size(); ++c)
    h[c] = generalized_hamiltonian(t, u_grid[c], r, p, P, model, cost, convention);
  const std::size_t k = argmin_with_tiebreak(h, u_grid);
  return {u_grid[k], h[k], k};
}

Vec3 hamiltonian_gradient_r(double t, const RealVector& u, const Vec3& r, const Vec3& p,
                            const Mat3& P, const QuantumModel& model, const CostSpec& cost,
                            HamiltonianSign convention) {
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    const Vec3 e = kFdStep * Vec3::Unit(a);
    g[a] = (generalized_hamiltonian(t, u, r + e, p, P, model, cost, convention) -
            generalized_hamiltonian(t, u, r - e, p, P, model, cost, convention)) /
           (2 * kFdStep);
  }
  return g;
}

AdjointState costate_backward_step(const AdjointState& state, const DensityMatrix& rho,
                                   const RealVector&, double dW, double dt,
                                   const ComplexMatrix& grad_H_rho) {
  const Eigen::Index d = rho.dim();
  if (state.p.rows() != d || state.p.cols() != d || state.q.rows() != d || state.q.cols() != d ||
      grad_H_rho.rows() != d || grad_H_rho.cols() != d)
    throw InputError("costate_backward_step: shape mismatch");
  AdjointState next{state.p - dt * grad_H_rho + dW * state.q, state.q};
  if (!next.p.allFinite()) throw NumericalError("costate became non-finite");
  return next;
}

Policy greedy_policy(const ValueGrid& grid, const QuantumModel& model, const CostSpec& cost,
                     std::vector<RealVector> u_grid) {
  if (u_grid.empty()) throw InputError("greedy_policy: empty control grid");
  const HamiltonianSign conv = grid.spec().convention;
  return [&grid, model, cost, u_grid = std::move(u_grid), conv](const PolicyInput& in) {
    const Vec3 r = bloch_from_density(in.rho).r();
    const double t = std::min(in.t, grid.spec().T);
    const BlochCostate c = extract_costate(grid, t, r);
    return minimize_hamiltonian(t, r, c.p, c.P, model, cost, u_grid, conv).u_star;
  };
}

FbsdeResidual fbsde_residual(const TrajectoryRecord& traj, const ValueGrid& grid,
                             const QuantumModel& model, const CostSpec& cost,
                             const std::vector<RealVector>& u_grid) {
  if (traj.size() < 2) throw InputError("fbsde_residual: trajectory needs at least two samples");
  if (model.dim != 2) throw InputError("fbsde_residual: qubit scenario required");
  if (u_grid.empty()) throw InputError("fbsde_residual: empty control grid");
  const double T = grid.spec().T;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const Vec3 r = (traj.states[k].dim() == 2) ? components(traj.states[k].mat()) : Vec3::Zero();
    if (traj.states[k].dim() != 2 || traj.times[k] > T * (1 + 1e-12) ||
        r.cwiseAbs().maxCoeff() > 1.0 + 1e-12) {
      std::ostringstream msg;
      msg << "trajectory leaves the value grid at t = " << traj.times[k];
      throw InputError(msg.str());
    }
  }

  const HamiltonianSign conv = grid.spec().convention;
  const Vec3 terminal_grad = 0.5 * components(cost.terminal_op);

  FbsdeResidual out;
  out.grid_h = grid.h();
  out.dt = traj.times[1] - traj.times[0];
  out.steps = traj.size() - 1;
  out.convention = conv;

  Vec3 r = components(traj.states[0].mat());
  BlochCostate ref = extract_costate(grid, traj.times[0], r);
  AdjointState state{matrix_gradient(ref.p), ComplexMatrix::Zero(2, 2)};
  double sum_res = 0.0, sum_norm = 0.0;
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    const double t = traj.times[k];
    const double dt = traj.times[k + 1] - t;
    const Vec3 p = bloch_gradient(state.p);
    const Vec3 s = bloch_dynamics(model, traj.controls[k], r).diffusion;
    state.q = matrix_gradient(ref.P * s);
    const Vec3 grad = hamiltonian_gradient_r(t, traj.controls[k], r, p, ref.P, model, cost, conv);
    state = costate_backward_step(state, traj.states[k], traj.controls[k], traj.dW(k), dt,
                                  matrix_gradient(grad));

    r = components(traj.states[k + 1].mat());
    ref = extract_costate(grid, traj.times[k + 1], r);
    const double res = (bloch_gradient(state.p) - ref.p).norm();
    sum_res += res;
    sum_norm += ref.p.norm();
    out.max_backward_residual = std::max(out.max_backward_residual, res);
  }
  const double n = static_cast<double>(out.steps);
  out.mean_backward_residual = sum_res / n;
  out.mean_costate_norm = sum_norm / n;
  out.mean_relative_residual =
      out.mean_costate_norm > 0 ? out.mean_backward_residual / out.mean_costate_norm
                                : out.mean_backward_residual;
  out.terminal_residual = (bloch_gradient(state.p) - terminal_grad).norm();
  out.terminal_grid_residual = (ref.p - terminal_grad).norm();
  return out;
}

io::KeyValueDoc to_key_values(const FbsdeResidual& r) {
  io::KeyValueDoc doc;
  doc.set("terminal_residual", r.terminal_residual);
  doc.set("terminal_grid_residual", r.terminal_grid_residual);
  doc.set("max_backward_residual", r.max_backward_residual);
  doc.set("mean_backward_residual", r.mean_backward_residual);
  doc.set("mean_costate_norm", r.mean_costate_norm);
  doc.set("mean_relative_residual", r.mean_relative_residual);
  doc.set("grid_h", r.grid_h);
  doc.set("dt", r.dt);
  doc.set("steps", r.steps);
  doc.set("convention", to_string(r.convention));
  return doc;
}

}  // namespace qpmp
