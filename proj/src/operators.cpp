#include "qpmp/operators.hpp"

#include <cmath>
#include <sstream>

#include "qpmp/errors.hpp"

namespace qpmp {

namespace {

void require_same_dim(const ComplexMatrix& a, const ComplexMatrix& b, const char* what) {
  if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows()) {
    std::ostringstream os;
    os << what << ": dimension mismatch (" << a.rows() << "x" << a.cols() << " vs "
       << b.rows() << "x" << b.cols() << ")";
    throw InputError(os.str());
  }
}

// L rho L^dagger - 1/2 {L^dagger L, rho}
void add_dissipator(const ComplexMatrix& L, const ComplexMatrix& rho, ComplexMatrix& out) {
  const ComplexMatrix LdL = L.adjoint() * L;
  out.noalias() += L * rho * L.adjoint();
  out.noalias() -= 0.5 * (LdL * rho + rho * LdL);
}

// L^dagger X L - 1/2 {L^dagger L, X}
void add_adjoint_dissipator(const ComplexMatrix& L, const ComplexMatrix& X, ComplexMatrix& out) {
  const ComplexMatrix LdL = L.adjoint() * L;
  out.noalias() += L.adjoint() * X * L;
  out.noalias() -= 0.5 * (LdL * X + X * LdL);
}

}  // namespace

double hermiticity_defect(const ComplexMatrix& m) {
  if (m.size() == 0) return 0.0;
  return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

bool is_hermitian(const ComplexMatrix& m, double tol) {
  return m.rows() == m.cols() && hermiticity_defect(m) <= tol;
}

std::vector<std::string> DensityMatrix::violations(const ComplexMatrix& m) {
  std::vector<std::string> out;
  if (m.rows() < 1 || m.rows() != m.cols()) {
    out.push_back("density matrix must be square with dim >= 1");
    return out;
  }
  if (!m.allFinite()) {
    out.push_back("density matrix has non-finite entries");
    return out;
  }
  const double herm = hermiticity_defect(m);
  if (herm > kHermitianTol) {
    std::ostringstream os;
    os << "density matrix not Hermitian (defect " << herm << ")";
    out.push_back(os.str());
  }
  const double tr_err = std::abs(m.trace() - Complex(1.0, 0.0));
  if (tr_err > kTraceTol) {
    std::ostringstream os;
    os << "density matrix trace differs from 1 by " << tr_err;
    out.push_back(os.str());
  }
  const ComplexMatrix h = 0.5 * (m + m.adjoint());
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(h, Eigen::EigenvaluesOnly);
  const double min_eig = es.eigenvalues().minCoeff();
  if (min_eig < -kPositivityTol) {
    std::ostringstream os;
    os << "density matrix not positive (min eigenvalue " << min_eig << ")";
    out.push_back(os.str());
  }
  return out;
}

DensityMatrix::DensityMatrix(ComplexMatrix m) : mat_(std::move(m)) {
  const auto v = violations(mat_);
  if (!v.empty()) throw InputError(v.front());
}

DensityMatrix DensityMatrix::unchecked(ComplexMatrix m) {
  return DensityMatrix(std::move(m), NoCheck{});
}

DensityMatrix DensityMatrix::pure(const Eigen::VectorXcd& psi) {
  const double n = psi.norm();
  if (!(n > 0.0)) throw InputError("pure state vector has zero norm");
  const Eigen::VectorXcd v = psi / n;
  ComplexMatrix rho = v * v.adjoint();
  rho = 0.5 * (rho + rho.adjoint());
  return DensityMatrix(std::move(rho));
}

DensityMatrix DensityMatrix::maximally_mixed(Eigen::Index dim) {
  if (dim < 1) throw InputError("dimension must be >= 1");
  return DensityMatrix(ComplexMatrix::Identity(dim, dim) / static_cast<double>(dim));
}

std::vector<std::string> QuantumModel::violations(std::size_t max_dim) const {
  std::vector<std::string> out;
  if (dim < 1) {
    out.push_back("model.dim must be >= 1");
    return out;
  }
  if (static_cast<std::size_t>(dim) > max_dim) {
    std::ostringstream os;
    os << "model.dim " << dim << " exceeds the configured maximum " << max_dim;
    out.push_back(os.str());
  }
  if (!(hbar > 0.0) || !std::isfinite(hbar)) out.push_back("model.hbar must be positive");
  auto check_shape = [&](const ComplexMatrix& m, const std::string& name) {
    if (m.rows() != dim || m.cols() != dim) {
      std::ostringstream os;
      os << name << " has shape " << m.rows() << "x" << m.cols() << ", expected " << dim
         << "x" << dim;
      out.push_back(os.str());
      return false;
    }
    return true;
  };
  if (check_shape(H0, "H0") && !is_hermitian(H0)) out.push_back("H0 is not Hermitian");
  for (std::size_t k = 0; k < Hc.size(); ++k) {
    const std::string name = "Hc[" + std::to_string(k) + "]";
    if (check_shape(Hc[k], name) && !is_hermitian(Hc[k])) out.push_back(name + " is not Hermitian");
  }
  check_shape(L, "L");
  for (std::size_t k = 0; k < L_extra.size(); ++k) check_shape(L_extra[k], "L_extra[" + std::to_string(k) + "]");
  return out;
}

void QuantumModel::validate(std::size_t max_dim) const {
  const auto v = violations(max_dim);
  if (!v.empty()) throw InputError(v.front());
}

ComplexMatrix QuantumModel::hamiltonian(const RealVector& u) const {
  if (static_cast<std::size_t>(u.size()) != Hc.size()) {
    std::ostringstream os;
    os << "control vector has length " << u.size() << " but the model has " << Hc.size()
       << " control Hamiltonians";
    throw InputError(os.str());
  }
  ComplexMatrix H = H0;
  for (std::size_t k = 0; k < Hc.size(); ++k) H += u[static_cast<Eigen::Index>(k)] * Hc[k];
  return H;
}

ComplexMatrix commutator(const ComplexMatrix& a, const ComplexMatrix& b) {
  require_same_dim(a, b, "commutator");
  return a * b - b * a;
}

ComplexMatrix lindblad_drift(const QuantumModel& model, const RealVector& u,
                             const ComplexMatrix& rho) {
  require_same_dim(model.H0, rho, "lindblad_drift");
  const ComplexMatrix H = model.hamiltonian(u);
  const Complex minus_i_over_hbar(0.0, -1.0 / model.hbar);
  ComplexMatrix w = minus_i_over_hbar * (H * rho - rho * H);
  require_same_dim(model.L, rho, "lindblad_drift");
  add_dissipator(model.L, rho, w);
  for (const auto& Lk : model.L_extra) {
    require_same_dim(Lk, rho, "lindblad_drift");
    add_dissipator(Lk, rho, w);
  }
  return w;
}

ComplexMatrix heisenberg_generator(const QuantumModel& model, const RealVector& u,
                                   const ComplexMatrix& X) {
  require_same_dim(model.H0, X, "heisenberg_generator");
  const ComplexMatrix H = model.hamiltonian(u);
  const Complex i_over_hbar(0.0, 1.0 / model.hbar);
  ComplexMatrix g = i_over_hbar * (H * X - X * H);
  add_adjoint_dissipator(model.L, X, g);
  for (const auto& Lk : model.L_extra) add_adjoint_dissipator(Lk, X, g);
  return g;
}

ComplexMatrix fluctuation(const ComplexMatrix& L, const ComplexMatrix& rho) {
  require_same_dim(L, rho, "fluctuation");
  const ComplexMatrix Lrho = L * rho;
  // tr(rho (L + L^dagger)) = 2 Re tr(L rho)
  const double quad = 2.0 * Lrho.trace().real();
  return Lrho + Lrho.adjoint() - quad * rho;
}

Complex expectation(const ComplexMatrix& rho, const ComplexMatrix& X) {
  require_same_dim(rho, X, "expectation");
  // tr(rho X) without forming the product
  return (rho.transpose().cwiseProduct(X)).sum();
}

DensityMatrix project_physical(const ComplexMatrix& m) {
  if (m.rows() < 1 || m.rows() != m.cols()) throw InputError("project_physical: matrix must be square");
  if (!m.allFinite()) throw NumericalError("project_physical: non-finite entries");
  const double herm = hermiticity_defect(m);
  if (herm > 0.1) {
    std::ostringstream os;
    os << "project_physical: input too far from Hermitian (defect " << herm << ")";
    throw InputError(os.str());
  }
  const ComplexMatrix h = 0.5 * (m + m.adjoint());
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(h);
  RealVector lambda = es.eigenvalues().cwiseMax(0.0);
  const double tr = lambda.sum();
  if (tr <= 1e-14) throw DegenerateStateError("project_physical: trace after clipping is zero");
  lambda /= tr;
  const auto& V = es.eigenvectors();
  ComplexMatrix rho = V * lambda.cast<Complex>().asDiagonal() * V.adjoint();
  rho = 0.5 * (rho + rho.adjoint());
  // Diagonal of a Hermitian matrix is real; remove rounding residue so the
  // trace is exactly representable.
  for (Eigen::Index i = 0; i < rho.rows(); ++i) rho(i, i) = rho(i, i).real();
  return DensityMatrix::unchecked(std::move(rho));
}

namespace ops {

ComplexMatrix identity(Eigen::Index dim) { return ComplexMatrix::Identity(dim, dim); }

ComplexMatrix sigma_x() {
  ComplexMatrix s(2, 2);
  s << 0, 1, 1, 0;
  return s;
}

ComplexMatrix sigma_y() {
  ComplexMatrix s(2, 2);
  s << Complex(0, 0), Complex(0, -1), Complex(0, 1), Complex(0, 0);
  return s;
}

ComplexMatrix sigma_z() {
  ComplexMatrix s(2, 2);
  s << 1, 0, 0, -1;
  return s;
}

ComplexMatrix projector(Eigen::Index dim, Eigen::Index k) {
  ComplexMatrix p = ComplexMatrix::Zero(dim, dim);
  p(k, k) = 1.0;
  return p;
}

ComplexMatrix annihilation(Eigen::Index cutoff) {
  ComplexMatrix a = ComplexMatrix::Zero(cutoff, cutoff);
  for (Eigen::Index n = 1; n < cutoff; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  return a;
}

ComplexMatrix creation(Eigen::Index cutoff) { return annihilation(cutoff).adjoint(); }

ComplexMatrix position(Eigen::Index cutoff) {
  const ComplexMatrix a = annihilation(cutoff);
  return (a + a.adjoint()) / std::sqrt(2.0);
}

ComplexMatrix momentum(Eigen::Index cutoff) {
  const ComplexMatrix a = annihilation(cutoff);
  return (a - a.adjoint()) / Complex(0.0, std::sqrt(2.0));
}

Eigen::VectorXcd coherent_state(Eigen::Index cutoff, Complex alpha) {
  Eigen::VectorXcd psi(cutoff);
  Complex term = 1.0;
  psi(0) = term;
  for (Eigen::Index n = 1; n < cutoff; ++n) {
    term *= alpha / std::sqrt(static_cast<double>(n));
    psi(n) = term;
  }
  return psi / psi.norm();
}

}  // namespace ops

}  // namespace qpmp
