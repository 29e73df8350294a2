#include "qpmp/lqg.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "qpmp/errors.hpp"
#include "qpmp/pontryagin.hpp"
#include "qpmp/rng.hpp"

namespace qpmp {

namespace {

constexpr double kMaxCondition = 1e12;
constexpr double kPsdTol = 1e-9;

RealMatrix sym(const RealMatrix& m) { return 0.5 * (m + m.transpose()); }

Eigen::VectorXd sym_eigenvalues(const RealMatrix& m) {
  return Eigen::SelfAdjointEigenSolver<RealMatrix>(sym(m), Eigen::EigenvaluesOnly).eigenvalues();
}

RealMatrix checked_inverse(const RealMatrix& R, double t) {
  const Eigen::VectorXd ev = sym_eigenvalues(R);
  const double lo = ev.minCoeff(), hi = ev.cwiseAbs().maxCoeff();
  if (!(lo > 0) || hi / lo > kMaxCondition) {
    std::ostringstream msg;
    msg << "control weight R(t=" << t << ") is ill-conditioned (eigenvalues in [" << lo << ", "
        << hi << "])";
    throw IllConditionedError(msg.str());
  }
  return sym(R).llt().solve(RealMatrix::Identity(R.rows(), R.cols()));
}

struct Derivs {
  RealMatrix K;
  RealVector phi;
  double c;
};

}  // namespace

LqgSpec LqgSpec::constant(RealMatrix Q, RealMatrix R, RealMatrix F, double T, double dt) {
  LqgSpec s;
  s.Q_run = [Q](double) { return Q; };
  s.R_run = [R](double) { return R; };
  s.F_term = std::move(F);
  s.T = T;
  s.dt = dt;
  return s;
}

std::size_t LqgSpec::steps() const {
  const double r = T / dt;
  return static_cast<std::size_t>(std::llround(r));
}

std::vector<std::string> LqgSpec::violations(Eigen::Index n, Eigen::Index d) const {
  std::vector<std::string> out;
  if (!(dt > 0) || !(T > 0) || !std::isfinite(T) || !std::isfinite(dt)) {
    out.push_back("T and dt must be positive");
    return out;
  }
  if (std::abs(T / dt - std::round(T / dt)) > 1e-9 * std::max(1.0, T / dt) || T / dt < 1)
    out.push_back("T/dt must be an integer");
  if (!Q_run || !R_run) {
    out.push_back("Q_run and R_run must be set");
    return out;
  }
  if (F_term.rows() != n || F_term.cols() != n) out.push_back("F_term must be n x n");
  else if ((F_term - F_term.transpose()).cwiseAbs().maxCoeff() > 1e-12 ||
           sym_eigenvalues(F_term).minCoeff() < -kPsdTol)
    out.push_back("F_term must be symmetric PSD");
  if (x0.size() != 0 && x0.size() != n) out.push_back("x0 must have n entries");
  if (sigma0.size() != 0 && (sigma0.rows() != n || sigma0.cols() != n))
    out.push_back("sigma0 must be n x n");
  if (!out.empty() || T / dt < 1) return out;
  const std::size_t N = steps();
  for (std::size_t k = 0; k <= N; ++k) {
    const double t = T * static_cast<double>(k) / static_cast<double>(N);
    const RealMatrix Q = Q_run(t), R = R_run(t);
    if (Q.rows() != n || Q.cols() != n || (Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12 ||
        sym_eigenvalues(Q).minCoeff() < -kPsdTol) {
      out.push_back("Q_run(" + io::fmt(t) + ") must be n x n symmetric PSD");
      break;
    }
    if (R.rows() != d || R.cols() != d || (R - R.transpose()).cwiseAbs().maxCoeff() > 1e-12 ||
        (d > 0 && sym_eigenvalues(R).minCoeff() <= 0)) {
      out.push_back("R_run(" + io::fmt(t) + ") must be d x d symmetric positive definite");
      break;
    }
  }
  return out;
}

void LqgSpec::validate(Eigen::Index n, Eigen::Index d) const {
  const auto v = violations(n, d);
  if (!v.empty()) throw ConfigError("invalid LQG spec: " + v.front());
}

std::pair<std::size_t, double> RiccatiSolution::locate(double t) const {
  const double T_ = T(), h = dt();
  if (!(t >= -1e-12 * T_ && t <= T_ * (1 + 1e-12)))
    throw InputError("time " + io::fmt(t) + " outside the Riccati solution range [0, " +
                     io::fmt(T_) + "]");
  const double x = std::clamp(t / h, 0.0, static_cast<double>(steps()));
  const std::size_t k = std::min(static_cast<std::size_t>(x), steps() - 1);
  return {k, x - static_cast<double>(k)};
}

RealMatrix RiccatiSolution::K_at(double t) const {
  const auto [k, th] = locate(t);
  return th == 0.0 ? K[k] : RealMatrix((1 - th) * K[k] + th * K[k + 1]);
}

RealVector RiccatiSolution::phi_at(double t) const {
  const auto [k, th] = locate(t);
  return (1 - th) * phi[k] + th * phi[k + 1];
}

double RiccatiSolution::c_at(double t) const {
  const auto [k, th] = locate(t);
  return (1 - th) * c[k] + th * c[k + 1];
}

RealMatrix RiccatiSolution::sigma_at(double t) const {
  const auto [k, th] = locate(t);
  return (1 - th) * sigma[k] + th * sigma[k + 1];
}

RiccatiSolution riccati_backward(const LinearModel& model, const LqgSpec& spec) {
  model.validate();
  const Eigen::Index n = model.n(), d = model.controls();
  spec.validate(n, d);
  const std::size_t N = spec.steps();
  const double h = spec.T / static_cast<double>(N);
  const RealMatrix& A = model.A;
  const RealMatrix& B = model.B;
  const RealMatrix FFt = model.FFt();

  // Forward covariance at half steps.
  const RealMatrix sigma0 = spec.sigma0.size() ? spec.sigma0 : RealMatrix::Zero(n, n);
  auto G = [&](const RealMatrix& S) {
    const RealMatrix Kt = kalman_gain(S, model.C, model.M_cov);
    RealMatrix g = A * S + S * A.transpose() - Kt * Kt.transpose();
    if (model.include_diffusion && FFt.size()) g += FFt;
    return g;
  };
  std::vector<RealMatrix> sig_half(2 * N + 1);
  sig_half[0] = sym(sigma0);
  const double hh = 0.5 * h;
  for (std::size_t j = 0; j < 2 * N; ++j) {
    const RealMatrix& S = sig_half[j];
    const RealMatrix k1 = G(S);
    const RealMatrix k2 = G(S + 0.5 * hh * k1);
    const RealMatrix k3 = G(S + 0.5 * hh * k2);
    const RealMatrix k4 = G(S + hh * k3);
    sig_half[j + 1] = sym(S + (hh / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4));
    if (!sig_half[j + 1].allFinite())
      throw NumericalError("covariance Riccati blew up", static_cast<long>(j / 2));
  }
  auto noise_cov = [&](std::size_t half_index) {
    const RealMatrix Kt = kalman_gain(sig_half[half_index], model.C, model.M_cov);
    return RealMatrix(Kt * Kt.transpose());
  };

  auto f = [&](double t, const RealMatrix& K, const RealVector& phi, std::size_t half) {
    const RealMatrix Rinv = checked_inverse(spec.R_run(t), t);
    const RealMatrix S = B * Rinv * B.transpose();
    Derivs out;
    out.K = -K * A - A.transpose() * K + K * S * K - spec.Q_run(t);
    out.phi = -(A - S * K).transpose() * phi;
    out.c = -0.5 * (K * noise_cov(half)).trace();
    return out;
  };

  RiccatiSolution sol;
  sol.time_points.resize(N + 1);
  for (std::size_t k = 0; k <= N; ++k) sol.time_points[k] = h * static_cast<double>(k);
  sol.time_points[N] = spec.T;
  sol.K.resize(N + 1);
  sol.phi.resize(N + 1);
  sol.c.resize(N + 1);
  sol.sigma.resize(N + 1);
  for (std::size_t k = 0; k <= N; ++k) sol.sigma[k] = sig_half[2 * k];
  sol.K[N] = spec.F_term;
  sol.phi[N] = RealVector::Zero(n);
  sol.c[N] = 0.0;
  for (std::size_t k = N; k-- > 0;) {
    const double t = sol.time_points[k + 1];
    const RealMatrix& K = sol.K[k + 1];
    const RealVector& p = sol.phi[k + 1];
    const double c = sol.c[k + 1];
    const Derivs d1 = f(t, K, p, 2 * k + 2);
    const Derivs d2 = f(t - 0.5 * h, K - 0.5 * h * d1.K, p - 0.5 * h * d1.phi, 2 * k + 1);
    const Derivs d3 = f(t - 0.5 * h, K - 0.5 * h * d2.K, p - 0.5 * h * d2.phi, 2 * k + 1);
    const Derivs d4 = f(t - h, K - h * d3.K, p - h * d3.phi, 2 * k);
    sol.K[k] = sym(K - (h / 6.0) * (d1.K + 2 * d2.K + 2 * d3.K + d4.K));
    sol.phi[k] = p - (h / 6.0) * (d1.phi + 2 * d2.phi + 2 * d3.phi + d4.phi);
    sol.c[k] = c - (h / 6.0) * (d1.c + 2 * d2.c + 2 * d3.c + d4.c);
    if (!sol.K[k].allFinite() || !sol.phi[k].allFinite() || !std::isfinite(sol.c[k]))
      throw NumericalError("Riccati integration blew up", static_cast<long>(k));
  }
  return sol;
}

RealVector feedback(const MomentState& state, const RiccatiSolution& sol, double t,
                    const LinearModel& model, const LqgSpec& spec) {
  const RealMatrix K = sol.K_at(t);
  if (state.xhat.size() != K.rows()) throw InputError("feedback: state size mismatch");
  const RealVector p = K * state.xhat + sol.phi_at(t);
  return -checked_inverse(spec.R_run(t), t) * model.B.transpose() * p;
}

double value_function(double t, const MomentState& state, const RiccatiSolution& sol) {
  const RealMatrix K = sol.K_at(t);
  if (state.xhat.size() != K.rows()) throw InputError("value_function: state size mismatch");
  return 0.5 * state.xhat.dot(K * state.xhat) + sol.phi_at(t).dot(state.xhat) + sol.c_at(t);
}

ClosedLoopTrajectory closed_loop_simulate(const LinearModel& model, const LqgSpec& spec,
                                          const RiccatiSolution& sol,
                                          const ClosedLoopOptions& opts) {
  const Eigen::Index n = model.n(), q = model.outputs();
  const std::size_t N = sol.steps();
  const double dt = sol.dt();
  if (spec.x0.size() != n) throw InputError("closed_loop_simulate: spec.x0 must have n entries");

  // Per-node gains u = -L X - l and noise gain Ktilde.
  std::vector<RealMatrix> L(N + 1), Kt(N + 1), Q(N + 1), R(N + 1);
  std::vector<RealVector> l(N + 1);
  for (std::size_t k = 0; k <= N; ++k) {
    const double t = sol.time_points[k];
    R[k] = spec.R_run(t);
    Q[k] = spec.Q_run(t);
    const RealMatrix RinvBt = checked_inverse(R[k], t) * model.B.transpose();
    L[k] = RinvBt * sol.K[k];
    l[k] = RinvBt * sol.phi[k];
    Kt[k] = kalman_gain(sol.sigma[k], model.C, model.M_cov);
  }

  const KeyedRng rng(opts.seed, opts.traj_index);
  const double sq = std::sqrt(dt);
  ClosedLoopTrajectory out;
  out.seed = opts.seed;
  out.traj_index = opts.traj_index;
  if (opts.record) {
    out.times = sol.time_points;
    out.xhat.reserve(N + 1);
    out.controls.reserve(N + 1);
    out.noise.reserve(N);
  }
  RealVector x = spec.x0, u(model.controls()), dY(q), noise(n), next(n);
  double cost = 0.0;
  for (std::size_t k = 0; k < N; ++k) {
    const double t = sol.time_points[k];
    u.noalias() = -L[k] * x - l[k];
    if (opts.control_offset) u += opts.control_offset(t);
    cost += 0.5 * (x.dot(Q[k] * x) + u.dot(R[k] * u)) * dt;
    next = x + (model.A * x + model.B * u) * dt;
    if (opts.noise) {
      for (Eigen::Index j = 0; j < q; ++j) dY[j] = sq * rng.normal(k, static_cast<std::uint64_t>(j));
      noise.noalias() = Kt[k] * dY;
      next += noise;
    } else {
      noise.setZero();
    }
    if (opts.record) {
      out.xhat.push_back(x);
      out.controls.push_back(u);
      out.noise.push_back(noise);
    }
    if (!next.allFinite())
      throw NumericalError("closed loop blew up at step " + std::to_string(k), static_cast<long>(k));
    x = next;
  }
  cost += 0.5 * x.dot(spec.F_term * x);
  if (opts.record) {
    u.noalias() = -L[N] * x - l[N];
    if (opts.control_offset) u += opts.control_offset(spec.T);
    out.xhat.push_back(x);
    out.controls.push_back(u);
  }
  out.cost = cost;
  return out;
}

PmpMomentResidual pmp_moment_residual(const ClosedLoopTrajectory& traj, const RiccatiSolution& sol,
                                      const LinearModel& model, const LqgSpec& spec) {
  if (traj.xhat.size() != sol.time_points.size() || traj.noise.size() + 1 != traj.xhat.size())
    throw InputError("pmp_moment_residual: trajectory was not recorded on the solution grid");
  PmpMomentResidual out;
  const std::size_t N = sol.steps();
  const double dt = sol.dt();
  auto costate = [&](std::size_t k, const RealVector& x) { return RealVector(sol.K[k] * x + sol.phi[k]); };
  for (std::size_t k = 0; k < N; ++k) {
    const RealVector& x = traj.xhat[k];
    const RealVector p = costate(k, x);
    const RealVector p_next = costate(k + 1, traj.xhat[k + 1]);
    const RealVector observed = p_next - p - sol.K[k + 1] * traj.noise[k];
    const RealVector predicted =
        -(spec.Q_run(sol.time_points[k]) * x + model.A.transpose() * p) * dt;
    out.max_step_residual = std::max(out.max_step_residual, (observed - predicted).norm());
    out.max_costate_norm = std::max(out.max_costate_norm, p.norm());
  }
  const RealVector& xT = traj.xhat.back();
  out.terminal_residual = (costate(N, xT) - spec.F_term * xT).norm();
  return out;
}

double lqg_hamiltonian(double t, const RealVector& x, const RealVector& u, const RealVector& p,
                       const RealMatrix& q, const RealMatrix& ktilde, const LinearModel& model,
                       const LqgSpec& spec) {
  if (x.size() != model.n() || p.size() != model.n() || u.size() != model.controls() ||
      q.rows() != model.n() || q.cols() != model.n() || ktilde.rows() != model.n())
    throw InputError("lqg_hamiltonian: shapes do not conform");
  return 0.5 * (x.dot(spec.Q_run(t) * x) + u.dot(spec.R_run(t) * u)) +
         p.dot(model.A * x + model.B * u) + 0.5 * (q * ktilde * ktilde.transpose()).trace();
}

RealVector lqg_grid_argmin(double t, const RealVector& x, const RealVector& p, const RealMatrix& q,
                           const RealMatrix& ktilde, const LinearModel& model, const LqgSpec& spec,
                           const std::vector<RealVector>& u_grid) {
  std::vector<double> h(u_grid.size());
  for (std::size_t c = 0; c < u_grid.size(); ++c)
    h[c] = lqg_hamiltonian(t, x, u_grid[c], p, q, ktilde, model, spec);
  return u_grid[argmin_with_tiebreak(h, u_grid)];
}

double riccati_matching_residual(const RiccatiSolution& sol, const LinearModel& model,
                                 const LqgSpec& spec, double t, const RealVector& x) {
  const std::size_t N = sol.steps();
  if (N < 4) throw InputError("riccati_matching_residual needs at least 5 nodes");
  (void)sol.K_at(t);
  const double h = sol.dt();
  const long c = std::lround(t / h);
  const std::size_t j0 = static_cast<std::size_t>(std::clamp<long>(c - 2, 0, static_cast<long>(N) - 4));
  const Eigen::Index n = model.n();
  RealMatrix K = RealMatrix::Zero(n, n), dK = RealMatrix::Zero(n, n);
  RealVector phi = RealVector::Zero(n), dphi = RealVector::Zero(n);
  for (std::size_t i = 0; i < 5; ++i) {
    const double ti = sol.time_points[j0 + i];
    double w = 1.0, dw = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      if (j == i) continue;
      const double tj = sol.time_points[j0 + j];
      dw = dw * (t - tj) / (ti - tj) + w / (ti - tj);
      w *= (t - tj) / (ti - tj);
    }
    K += w * sol.K[j0 + i];
    dK += dw * sol.K[j0 + i];
    phi += w * sol.phi[j0 + i];
    dphi += dw * sol.phi[j0 + i];
  }
  const RealMatrix Rinv = checked_inverse(spec.R_run(t), t);
  const RealVector p = K * x + phi;
  const RealVector lhs = dK * x + dphi + K * (model.A * x - model.B * Rinv * model.B.transpose() * p);
  const RealVector rhs = -(spec.Q_run(t) * x + model.A.transpose() * p);
  return (lhs - rhs).norm();
}

void write_riccati_csv(std::ostream& os, const RiccatiSolution& sol) {
  const Eigen::Index n = sol.K.front().rows();
  os << "t";
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) os << ",K_" << i << '_' << j;
  for (Eigen::Index i = 0; i < n; ++i) os << ",phi_" << i;
  os << ",c\n";
  for (std::size_t k = 0; k < sol.time_points.size(); ++k) {
    os << io::fmt(sol.time_points[k]);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) os << ',' << io::fmt(sol.K[k](i, j));
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << io::fmt(sol.phi[k][i]);
    os << ',' << io::fmt(sol.c[k]) << '\n';
  }
}

io::KeyValueDoc controller_summary(const RiccatiSolution& sol, const LinearModel& model,
                                   const LqgSpec& spec) {
  io::KeyValueDoc doc;
  const Eigen::Index n = model.n();
  doc.set("n", static_cast<long long>(n));
  doc.set("d", static_cast<long long>(model.controls()));
  doc.set("T", sol.T());
  doc.set("dt", sol.dt());
  doc.set("include_diffusion", model.include_diffusion);
  const RealMatrix gain = checked_inverse(spec.R_run(0.0), 0.0) * model.B.transpose() * sol.K[0];
  for (Eigen::Index i = 0; i < gain.rows(); ++i)
    for (Eigen::Index j = 0; j < gain.cols(); ++j)
      doc.set("gain0_" + std::to_string(i) + "_" + std::to_string(j), gain(i, j));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      doc.set("K0_" + std::to_string(i) + "_" + std::to_string(j), sol.K[0](i, j));
  doc.set("c0", sol.c[0]);
  if (spec.x0.size() == n) {
    const RealVector& x = spec.x0;
    doc.set("expected_cost", 0.5 * x.dot(sol.K[0] * x) + sol.phi[0].dot(x) + sol.c[0]);
  }
  return doc;
}

}  // namespace qpmp
