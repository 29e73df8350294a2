#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qpmp/operators.hpp"

namespace qpmp {

/// Quadratic system Hamiltonian 1/2 X^T R X, linear control Hamiltonian
/// 1/2 u^T (K^T + K^dagger) X and coupling L = Gamma X, all over the
/// annihilator/creator stack X = (a_1..a_m, a_1^dagger..a_m^dagger).
struct QuadraticConstruction {
  RealMatrix R_param;     // 2m x 2m
  ComplexMatrix K_ham;    // 2m x d
  ComplexMatrix Gamma;    // channels x 2m
  double hbar = 1.0;

  Eigen::Index modes() const { return R_param.rows() / 2; }
  /// Names of violated Hermiticity equations, e.g. "R11^T = R22".
  std::vector<std::string> violations(double tol = 1e-10) const;
};

/// [[0, I], [-I, 0]] and [[0, I], [I, 0]] for m modes.
ComplexMatrix symplectic_matrix(Eigen::Index m);
ComplexMatrix exchange_matrix(Eigen::Index m);

/// J Gamma^dagger Gamma - Gamma^T conj(Gamma) J.
ComplexMatrix coupling_correction(const ComplexMatrix& Gamma);

struct AnnihilatorAB {
  ComplexMatrix A;
  ComplexMatrix B;
};

/// A = (i/2 hbar)(-S (R^T + R + F(J Gamma^dagger Gamma))), B = -(i/2 hbar) S (K + conj K).
/// Throws InputError naming the first violated Hermiticity equation.
AnnihilatorAB build_AB(const QuadraticConstruction& c);

/// T with (x, p) = T (a, a^dagger), x = (a + a^dagger)/sqrt 2, p = (a - a^dagger)/(i sqrt 2).
ComplexMatrix quadrature_transform(Eigen::Index m);

/// Mean-field matrix of <L + L^dagger> in the annihilator basis: Gamma + conj(Gamma) J.
ComplexMatrix measurement_row(const ComplexMatrix& Gamma);

/// dXhat = (A Xhat + B u) dt + Ktilde dYtilde with Ktilde = Sigma C^T + M_cov,
/// in real quadrature coordinates. F enters the covariance only when
/// include_diffusion is set: Sigma' = A Sigma + Sigma A^T - Ktilde Ktilde^T (+ F F^T).
struct LinearModel {
  RealMatrix A;       // n x n
  RealMatrix B;       // n x d
  RealMatrix C;       // q x n
  RealMatrix D;       // q x d
  RealMatrix F;       // n x k
  RealMatrix G;       // q x q
  RealMatrix M_cov;   // n x q
  bool include_diffusion = false;
  std::optional<QuadraticConstruction> construction;

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index controls() const { return B.cols(); }
  Eigen::Index outputs() const { return C.rows(); }
  RealMatrix FFt() const { return F * F.transpose(); }

  std::vector<std::string> violations() const;
  void validate() const;

  /// Real quadrature model from a construction. D = 0, G = I, M_cov = 0,
  /// F = 0; throws InputError if the transformed matrices are not real.
  static LinearModel from_construction(const QuadraticConstruction& c);
};

struct MomentState {
  RealVector xhat;
  RealMatrix sigma;

  /// Symmetric and PSD within 1e-9.
  std::vector<std::string> violations() const;
};

/// Sigma C^T + M. Throws InputError on shape mismatch.
RealMatrix kalman_gain(const RealMatrix& sigma, const RealMatrix& C, const RealMatrix& M_cov);

/// Sigma + (A Sigma + Sigma A^T - Ktilde Ktilde^T (+ FFt)) dt, symmetrized.
RealMatrix covariance_step(const RealMatrix& sigma, const RealMatrix& A, const RealMatrix& ktilde,
                           bool include_diffusion, const RealMatrix& FFt, double dt);

/// Largest dt (bisection to 1e-6 relative, capped at dt_cap) for which one
/// covariance_step from sigma stays PSD within 1e-12.
double covariance_psd_threshold(const RealMatrix& sigma, const RealMatrix& A,
                                const RealMatrix& ktilde, bool include_diffusion,
                                const RealMatrix& FFt, double dt_cap);

/// Joint Euler step of mean and covariance with Ktilde from the current Sigma.
/// Throws NumericalError on non-finite output.
MomentState moment_filter_step(const MomentState& state, const RealVector& u,
                               const RealVector& dYtilde, const LinearModel& model, double dt);

}  // namespace qpmp
