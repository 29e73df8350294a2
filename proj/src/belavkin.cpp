#include "qpmp/belavkin.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

#include "qpmp/errors.hpp"
#include "qpmp/io.hpp"
#include "qpmp/rng.hpp"

namespace qpmp {

std::size_t SmeConfig::steps() const {
  return static_cast<std::size_t>(std::llround(T / dt));
}

std::vector<std::string> SmeConfig::violations() const {
  std::vector<std::string> out;
  if (!(dt > 0.0) || !std::isfinite(dt)) out.push_back("numerics.dt must be positive");
  if (!(T > 0.0) || !std::isfinite(T)) out.push_back("numerics.T must be positive");
  if (!out.empty()) return out;
  if (dt > T) out.push_back("numerics.dt must not exceed numerics.T");
  if (noise_substeps < 1) out.push_back("numerics.noise_substeps must be >= 1");
  const double ratio = T / dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio))
    out.push_back("numerics.T/numerics.dt must be an integer step count");
  return out;
}

void SmeConfig::validate() const {
  const auto v = violations();
  if (!v.empty()) throw ConfigError(v.front());
}

CostSpec CostSpec::zero(Eigen::Index dim) {
  const ComplexMatrix z = ComplexMatrix::Zero(dim, dim);
  return CostSpec{[z](double, const RealVector&) { return z; }, z};
}

CostSpec CostSpec::quadratic(ComplexMatrix C0, double control_penalty, ComplexMatrix M) {
  const Eigen::Index dim = C0.rows();
  return CostSpec{[C0 = std::move(C0), control_penalty, dim](double, const RealVector& u) {
                    return ComplexMatrix(C0 + control_penalty * u.squaredNorm() *
                                                  ComplexMatrix::Identity(dim, dim));
                  },
                  std::move(M)};
}

std::vector<std::string> CostSpec::violations(Eigen::Index dim, std::span<const double> times,
                                              std::span<const RealVector> controls) const {
  std::vector<std::string> out;
  auto check = [&](const ComplexMatrix& m, const std::string& name) {
    if (m.rows() != dim || m.cols() != dim) {
      out.push_back(name + " has the wrong shape");
      return;
    }
    if (!is_hermitian(m, kPositivityTol)) {
      out.push_back(name + " is not Hermitian");
      return;
    }
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(0.5 * (m + m.adjoint()), Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -kPositivityTol) out.push_back(name + " is not positive semidefinite");
  };
  if (!running_op) out.push_back("cost.running is missing");
  check(terminal_op, "cost.terminal");
  if (running_op) {
    for (double t : times)
      for (const auto& u : controls) {
        std::ostringstream name;
        name << "cost.running(t=" << t << ")";
        check(running_op(t, u), name.str());
      }
  }
  return out;
}

ComplexMatrix fluctuation_derivative(const ComplexMatrix& L, const ComplexMatrix& rho,
                                     const ComplexMatrix& delta) {
  const double quad = 2.0 * (L * rho).trace().real();
  const double quad_delta = 2.0 * (L * delta).trace().real();
  const ComplexMatrix Ld = L * delta;
  return Ld + Ld.adjoint() - quad_delta * rho - quad * delta;
}

Policy constant_policy(RealVector u) {
  return [u = std::move(u)](const PolicyInput&) { return u; };
}

DensityMatrix step_sme(const DensityMatrix& rho, const RealVector& u, double dW,
                       const QuantumModel& model, const SmeConfig& cfg, long step_index) {
  if (!std::isfinite(dW)) throw NumericalError("step_sme: non-finite noise increment", step_index);
  ComplexMatrix next = rho.mat();
  next.noalias() += cfg.dt * lindblad_drift(model, u, rho.mat());
  const ComplexMatrix sigma = fluctuation(model.L, rho.mat());
  next.noalias() += dW * sigma;
  if (cfg.scheme == SmeScheme::Milstein)
    next.noalias() += 0.5 * (dW * dW - cfg.dt) * fluctuation_derivative(model.L, rho.mat(), sigma);
  if (!next.allFinite()) {
    std::ostringstream os;
    os << "step_sme: non-finite state after step " << step_index;
    throw NumericalError(os.str(), step_index);
  }
  if (cfg.normalize_each_step) {
    try {
      return project_physical(next);
    } catch (const InputError& e) {
      std::ostringstream os;
      os << "step_sme: state left the physical set at step " << step_index << " (" << e.what() << ")";
      throw NumericalError(os.str(), step_index);
    } catch (const DegenerateStateError&) {
      std::ostringstream os;
      os << "step_sme: state collapsed to zero trace at step " << step_index;
      throw DegenerateStateError(os.str(), step_index);
    }
  }
  return DensityMatrix::unchecked(std::move(next));
}

double innovation_increment(double dy, const ComplexMatrix& rho, const ComplexMatrix& L, double dt) {
  const Complex quad = expectation(rho, ComplexMatrix(L + L.adjoint()));
  return dy - quad.real() * dt;
}

TrajectoryRecord generate_record(const QuantumModel& model, const DensityMatrix& rho0,
                                 const Policy& policy, const SmeConfig& cfg,
                                 std::uint64_t traj_index) {
  cfg.validate();
  if (rho0.dim() != model.dim) throw InputError("generate_record: initial state dimension does not match the model");
  const std::size_t n = cfg.steps();
  const KeyedRng rng(cfg.seed, traj_index);
  const double sub_sqrt_dt = std::sqrt(cfg.dt / static_cast<double>(cfg.noise_substeps));
  const ComplexMatrix quadrature = model.L + model.L.adjoint();

  TrajectoryRecord rec;
  rec.seed = cfg.seed;
  rec.traj_index = traj_index;
  rec.scheme = cfg.scheme;
  rec.times.reserve(n + 1);
  rec.states.reserve(n + 1);
  rec.controls.reserve(n + 1);
  rec.record_y.reserve(n + 1);
  rec.innovations_W.reserve(n + 1);

  rec.times.push_back(0.0);
  rec.states.push_back(rho0);
  rec.record_y.push_back(0.0);
  rec.innovations_W.push_back(0.0);

  for (std::size_t k = 0;; ++k) {
    const double t = rec.times.back();
    const PolicyInput in{t, k, rec.states.back(), std::span<const double>(rec.record_y),
                         std::span<const double>(rec.innovations_W)};
    RealVector u = policy(in);
    if (static_cast<std::size_t>(u.size()) != model.Hc.size())
      throw InputError("policy returned a control of the wrong length");
    rec.controls.push_back(u);
    if (k == n) break;

    double dW = 0.0;
    for (std::size_t j = 0; j < cfg.noise_substeps; ++j) dW += rng.normal(k * cfg.noise_substeps + j);
    dW *= sub_sqrt_dt;
    const double dy = expectation(rec.states.back(), quadrature).real() * cfg.dt + dW;
    rec.states.push_back(step_sme(rec.states.back(), u, dW, model, cfg, static_cast<long>(k)));
    rec.record_y.push_back(rec.record_y.back() + dy);
    rec.innovations_W.push_back(rec.innovations_W.back() + dW);
    // Exact grid times avoid drift from repeated addition.
    rec.times.push_back(k + 1 == n ? cfg.T : static_cast<double>(k + 1) * cfg.dt);
  }
  return rec;
}

double trajectory_cost(const TrajectoryRecord& traj, const CostSpec& cost) {
  double J = 0.0;
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    const double dt = traj.times[k + 1] - traj.times[k];
    J += expectation(traj.states[k], cost.running_op(traj.times[k], traj.controls[k])).real() * dt;
  }
  J += expectation(traj.states.back(), cost.terminal_op).real();
  return J;
}

double filter_observable_check(const TrajectoryRecord& traj, const ComplexMatrix& X,
                               const QuantumModel& model) {
  if (!is_hermitian(X, 1e-10)) throw InputError("filter_observable_check: X must be Hermitian");
  const ComplexMatrix& L = model.L;
  const ComplexMatrix quadrature = L + L.adjoint();
  const ComplexMatrix gain_op = X * L + L.adjoint() * X;

  double pi = expectation(traj.states.front(), X).real();
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    const auto& rho = traj.states[k];
    const double dt = traj.times[k + 1] - traj.times[k];
    const double drift = expectation(rho, heisenberg_generator(model, traj.controls[k], X)).real();
    const double gain = expectation(rho, gain_op).real() - expectation(rho, quadrature).real() * pi;
    const double dW = traj.dW(k);
    pi += drift * dt + gain * dW;
    if (traj.scheme == SmeScheme::Milstein) {
      const ComplexMatrix sigma = fluctuation(L, rho.mat());
      pi += 0.5 * (dW * dW - dt) * expectation(fluctuation_derivative(L, rho.mat(), sigma), X).real();
    }
    worst = std::max(worst, std::abs(pi - expectation(traj.states[k + 1], X).real()));
  }
  return worst;
}

void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& traj) {
  const Eigen::Index dim = traj.states.empty() ? 0 : traj.states.front().dim();
  const Eigen::Index nu = traj.controls.empty() ? 0 : traj.controls.front().size();
  os << "t,y,W";
  for (Eigen::Index k = 0; k < nu; ++k) os << ",u_" << k;
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j < dim; ++j) os << ",rho_re_" << i << "_" << j;
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j < dim; ++j) os << ",rho_im_" << i << "_" << j;
  os << "\n";
  for (std::size_t k = 0; k < traj.size(); ++k) {
    os << io::fmt(traj.times[k]) << ',' << io::fmt(traj.record_y[k]) << ','
       << io::fmt(traj.innovations_W[k]);
    for (Eigen::Index c = 0; c < nu; ++c) os << ',' << io::fmt(traj.controls[k][c]);
    const auto& m = traj.states[k].mat();
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) os << ',' << io::fmt(m(i, j).real());
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) os << ',' << io::fmt(m(i, j).imag());
    os << "\n";
  }
}

}  // namespace qpmp
