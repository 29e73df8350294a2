#pragma once

#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qpmp {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

inline constexpr double kHermitianTol = 1e-12;
inline constexpr double kTraceTol = 1e-12;
inline constexpr double kPositivityTol = 1e-10;
inline constexpr std::size_t kDefaultMaxDim = 64;

/// Largest absolute entry of m - m^dagger.
double hermiticity_defect(const ComplexMatrix& m);
bool is_hermitian(const ComplexMatrix& m, double tol = kHermitianTol);

/// Hermitian, positive semidefinite, unit-trace matrix.
///
/// The checked constructor enforces all three invariants at the tolerance
/// constants above. `unchecked` exists for raw integrator output (for
/// example when per-step projection is disabled); such states may drift.
class DensityMatrix {
 public:
  explicit DensityMatrix(ComplexMatrix m);
  static DensityMatrix unchecked(ComplexMatrix m);

  /// Lists every violated invariant; empty when `m` is a valid state.
  static std::vector<std::string> violations(const ComplexMatrix& m);

  const ComplexMatrix& mat() const { return mat_; }
  Eigen::Index dim() const { return mat_.rows(); }

  /// Pure state |psi><psi| from a (not necessarily normalized) vector.
  static DensityMatrix pure(const Eigen::VectorXcd& psi);
  static DensityMatrix maximally_mixed(Eigen::Index dim);

 private:
  struct NoCheck {};
  DensityMatrix(ComplexMatrix m, NoCheck) : mat_(std::move(m)) {}
  ComplexMatrix mat_;
};

/// Open system with drift Hamiltonian, control Hamiltonians, one measured
/// coupling operator and optional unmeasured decoherence channels.
struct QuantumModel {
  Eigen::Index dim = 2;
  ComplexMatrix H0;
  std::vector<ComplexMatrix> Hc;
  ComplexMatrix L;
  std::vector<ComplexMatrix> L_extra;
  double hbar = 1.0;

  /// Throws InputError naming the first violated invariant.
  void validate(std::size_t max_dim = kDefaultMaxDim) const;
  std::vector<std::string> violations(std::size_t max_dim = kDefaultMaxDim) const;

  /// H(u) = H0 + sum_k u_k Hc_k.
  ComplexMatrix hamiltonian(const RealVector& u) const;
};

ComplexMatrix commutator(const ComplexMatrix& a, const ComplexMatrix& b);

/// Unconditional (Lindblad) drift w(u, rho), summed over L and L_extra.
ComplexMatrix lindblad_drift(const QuantumModel& model, const RealVector& u,
                             const ComplexMatrix& rho);
inline ComplexMatrix lindblad_drift(const QuantumModel& model, const RealVector& u,
                                    const DensityMatrix& rho) {
  return lindblad_drift(model, u, rho.mat());
}

/// Heisenberg-picture generator applied to an observable: the adjoint of
/// lindblad_drift, so tr(w(rho) X) = tr(rho heisenberg_generator(X)).
ComplexMatrix heisenberg_generator(const QuantumModel& model, const RealVector& u,
                                   const ComplexMatrix& X);

/// Measurement back-action sigma(rho) = L rho + rho L^dagger - <L + L^dagger> rho.
ComplexMatrix fluctuation(const ComplexMatrix& L, const ComplexMatrix& rho);
inline ComplexMatrix fluctuation(const ComplexMatrix& L, const DensityMatrix& rho) {
  return fluctuation(L, rho.mat());
}

/// tr(rho X).
Complex expectation(const ComplexMatrix& rho, const ComplexMatrix& X);
inline Complex expectation(const DensityMatrix& rho, const ComplexMatrix& X) {
  return expectation(rho.mat(), X);
}

/// Nearest state in the clip-and-renormalize sense: Hermitize, clip negative
/// eigenvalues, rescale to unit trace. Rejects inputs further than 0.1 from
/// Hermitian and throws DegenerateStateError if nothing positive remains.
DensityMatrix project_physical(const ComplexMatrix& m);

namespace ops {

ComplexMatrix identity(Eigen::Index dim);
ComplexMatrix sigma_x();
ComplexMatrix sigma_y();
ComplexMatrix sigma_z();
/// |k><k| in dimension dim.
ComplexMatrix projector(Eigen::Index dim, Eigen::Index k);

/// Truncated single-mode ladder operators on Fock levels 0..cutoff-1.
ComplexMatrix annihilation(Eigen::Index cutoff);
ComplexMatrix creation(Eigen::Index cutoff);
/// x = (a + a^dagger)/sqrt(2), p = (a - a^dagger)/(i sqrt(2)).
ComplexMatrix position(Eigen::Index cutoff);
ComplexMatrix momentum(Eigen::Index cutoff);
/// Coherent state |alpha> truncated at cutoff, renormalized.
Eigen::VectorXcd coherent_state(Eigen::Index cutoff, Complex alpha);

}  // namespace ops

}  // namespace qpmp
