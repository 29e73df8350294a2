#include "qpmp/moments.hpp"

#include <cmath>
#include <numbers>

#include "qpmp/errors.hpp"

namespace qpmp {

namespace {

constexpr double kRealTol = 1e-10;
constexpr double kPsdTol = 1e-9;

std::string shape(const auto& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

bool finite(const RealMatrix& m) { return m.allFinite(); }

double min_eig_sym(const RealMatrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<RealMatrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

std::vector<std::string> QuadraticConstruction::violations(double tol) const {
  std::vector<std::string> out;
  const Eigen::Index n = R_param.rows();
  if (n == 0 || n % 2 != 0 || R_param.cols() != n) {
    out.push_back("R_param must be 2m x 2m, got " + shape(R_param));
    return out;
  }
  const Eigen::Index m = n / 2;
  if (!R_param.allFinite()) out.push_back("R_param has non-finite entries");
  const RealMatrix R11 = R_param.topLeftCorner(m, m), R12 = R_param.topRightCorner(m, m);
  const RealMatrix R21 = R_param.bottomLeftCorner(m, m), R22 = R_param.bottomRightCorner(m, m);
  if ((R11.transpose() - R22).cwiseAbs().maxCoeff() > tol) out.push_back("R11^T = R22");
  if ((R12.transpose() - R12).cwiseAbs().maxCoeff() > tol) out.push_back("R12^T = R12");
  if ((R21.transpose() - R21).cwiseAbs().maxCoeff() > tol) out.push_back("R21^T = R21");
  if (K_ham.rows() != n) {
    out.push_back("K_ham must have 2m rows, got " + shape(K_ham));
  } else if (K_ham.cols() > 0) {
    const RealMatrix diff = K_ham.topRows(m).real() - K_ham.bottomRows(m).real();
    if (diff.cwiseAbs().maxCoeff() > tol) out.push_back("Re(K-) = Re(K+)");
  }
  if (Gamma.cols() != n) out.push_back("Gamma must have 2m columns, got " + shape(Gamma));
  if (!(hbar > 0) || !std::isfinite(hbar)) out.push_back("hbar must be positive");
  return out;
}

ComplexMatrix symplectic_matrix(Eigen::Index m) {
  ComplexMatrix S = ComplexMatrix::Zero(2 * m, 2 * m);
  S.topRightCorner(m, m).setIdentity();
  S.bottomLeftCorner(m, m) = -ComplexMatrix::Identity(m, m);
  return S;
}

ComplexMatrix exchange_matrix(Eigen::Index m) {
  ComplexMatrix J = ComplexMatrix::Zero(2 * m, 2 * m);
  J.topRightCorner(m, m).setIdentity();
  J.bottomLeftCorner(m, m).setIdentity();
  return J;
}

ComplexMatrix coupling_correction(const ComplexMatrix& Gamma) {
  const Eigen::Index n = Gamma.cols();
  if (n % 2 != 0) throw InputError("Gamma must have 2m columns");
  const ComplexMatrix J = exchange_matrix(n / 2);
  return J * Gamma.adjoint() * Gamma - Gamma.transpose() * Gamma.conjugate() * J;
}

AnnihilatorAB build_AB(const QuadraticConstruction& c) {
  const auto v = c.violations();
  if (!v.empty()) throw InputError("linear model construction violates " + v.front());
  const Eigen::Index m = c.modes();
  const ComplexMatrix S = symplectic_matrix(m);
  const ComplexMatrix R = c.R_param.cast<Complex>();
  const Complex i(0.0, 1.0);
  AnnihilatorAB out;
  out.A = (i / (2 * c.hbar)) * (-S * (R.transpose() + R + coupling_correction(c.Gamma)));
  out.B = -(i / (2 * c.hbar)) * (S * (c.K_ham + c.K_ham.conjugate()));
  return out;
}

ComplexMatrix quadrature_transform(Eigen::Index m) {
  const double s = 1.0 / std::numbers::sqrt2;
  const Complex i(0.0, 1.0);
  ComplexMatrix T(2 * m, 2 * m);
  const ComplexMatrix I = ComplexMatrix::Identity(m, m);
  T << s * I, s * I, -i * s * I, i * s * I;
  return T;
}

ComplexMatrix measurement_row(const ComplexMatrix& Gamma) {
  return Gamma + Gamma.conjugate() * exchange_matrix(Gamma.cols() / 2);
}

LinearModel LinearModel::from_construction(const QuadraticConstruction& c) {
  const AnnihilatorAB ab = build_AB(c);
  const ComplexMatrix T = quadrature_transform(c.modes());
  const ComplexMatrix Tinv = T.inverse();
  const ComplexMatrix Aq = T * ab.A * Tinv, Bq = T * ab.B, Cq = measurement_row(c.Gamma) * Tinv;
  auto real_part = [](const ComplexMatrix& m, const char* name) {
    if (m.size() && m.imag().cwiseAbs().maxCoeff() > kRealTol)
      throw InputError(std::string("construction gives a complex ") + name +
                       " in quadrature coordinates");
    return RealMatrix(m.real());
  };
  LinearModel out;
  out.A = real_part(Aq, "A");
  out.B = real_part(Bq, "B");
  out.C = real_part(Cq, "C");
  const Eigen::Index n = out.A.rows(), q = out.C.rows();
  out.D = RealMatrix::Zero(q, out.B.cols());
  out.F = RealMatrix::Zero(n, 0);
  out.G = RealMatrix::Identity(q, q);
  out.M_cov = RealMatrix::Zero(n, q);
  out.construction = c;
  return out;
}

std::vector<std::string> LinearModel::violations() const {
  std::vector<std::string> out;
  const Eigen::Index n = A.rows();
  if (n == 0 || A.cols() != n) out.push_back("A must be square and nonempty, got " + shape(A));
  if (B.rows() != n) out.push_back("B must have n rows, got " + shape(B));
  if (C.cols() != n) out.push_back("C must have n columns, got " + shape(C));
  if (M_cov.rows() != n || M_cov.cols() != C.rows())
    out.push_back("M_cov must be n x q, got " + shape(M_cov));
  if (F.rows() != n && F.size() != 0) out.push_back("F must have n rows, got " + shape(F));
  if (D.size() != 0 && (D.rows() != C.rows() || D.cols() != B.cols()))
    out.push_back("D must be q x d, got " + shape(D));
  if (G.size() != 0 && G.rows() != C.rows()) out.push_back("G must have q rows, got " + shape(G));
  for (const auto* m : {&A, &B, &C, &D, &F, &G, &M_cov})
    if (!finite(*m)) {
      out.push_back("linear model has non-finite entries");
      break;
    }
  if (construction)
    for (auto& v : construction->violations()) out.push_back("construction: " + v);
  return out;
}

void LinearModel::validate() const {
  const auto v = violations();
  if (!v.empty()) throw InputError("invalid linear model: " + v.front());
}

std::vector<std::string> MomentState::violations() const {
  std::vector<std::string> out;
  if (sigma.rows() != xhat.size() || sigma.cols() != xhat.size())
    out.push_back("sigma must be n x n");
  else if (!xhat.allFinite() || !sigma.allFinite())
    out.push_back("moment state has non-finite entries");
  else {
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > kPsdTol) out.push_back("sigma not symmetric");
    if (min_eig_sym(sigma) < -kPsdTol) out.push_back("sigma not positive semidefinite");
  }
  return out;
}

RealMatrix kalman_gain(const RealMatrix& sigma, const RealMatrix& C, const RealMatrix& M_cov) {
  if (sigma.rows() != sigma.cols() || C.cols() != sigma.rows() || M_cov.rows() != sigma.rows() ||
      M_cov.cols() != C.rows())
    throw InputError("kalman_gain: shapes sigma " + shape(sigma) + ", C " + shape(C) + ", M " +
                     shape(M_cov) + " do not conform");
  return sigma * C.transpose() + M_cov;
}

RealMatrix covariance_step(const RealMatrix& sigma, const RealMatrix& A, const RealMatrix& ktilde,
                           bool include_diffusion, const RealMatrix& FFt, double dt) {
  RealMatrix G = A * sigma + sigma * A.transpose() - ktilde * ktilde.transpose();
  if (include_diffusion && FFt.size()) G += FFt;
  RealMatrix next = sigma + dt * G;
  return 0.5 * (next + next.transpose());
}

double covariance_psd_threshold(const RealMatrix& sigma, const RealMatrix& A,
                                const RealMatrix& ktilde, bool include_diffusion,
                                const RealMatrix& FFt, double dt_cap) {
  auto ok = [&](double dt) {
    return min_eig_sym(covariance_step(sigma, A, ktilde, include_diffusion, FFt, dt)) >= -1e-12;
  };
  if (ok(dt_cap)) return dt_cap;
  double lo = 0.0, hi = dt_cap;
  while (hi - lo > 1e-6 * hi) {
    const double mid = 0.5 * (lo + hi);
    (ok(mid) ? lo : hi) = mid;
  }
  return lo;
}

MomentState moment_filter_step(const MomentState& state, const RealVector& u,
                               const RealVector& dYtilde, const LinearModel& model, double dt) {
  const Eigen::Index n = model.n();
  if (state.xhat.size() != n || state.sigma.rows() != n || state.sigma.cols() != n ||
      u.size() != model.controls() || dYtilde.size() != model.outputs())
    throw InputError("moment_filter_step: shapes do not conform to the model");
  const RealMatrix K = kalman_gain(state.sigma, model.C, model.M_cov);
  MomentState next;
  next.xhat = state.xhat + (model.A * state.xhat + model.B * u) * dt + K * dYtilde;
  next.sigma = covariance_step(state.sigma, model.A, K, model.include_diffusion, model.FFt(), dt);
  if (!next.xhat.allFinite() || !next.sigma.allFinite())
    throw NumericalError("moment filter produced non-finite values");
  return next;
}

}  // namespace qpmp
