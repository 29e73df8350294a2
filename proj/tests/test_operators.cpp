#include <random>

#include "doctest.h"
#include "qpmp/errors.hpp"
#include "qpmp/operators.hpp"
#include "test_support.hpp"

using namespace qpmp;
using qpmp::testing::max_abs;

TEST_CASE("commutator of Pauli matrices") {
  const ComplexMatrix c = commutator(ops::sigma_x(), ops::sigma_y());
  CHECK(max_abs(c - Complex(0, 2) * ops::sigma_z()) == 0.0);
  CHECK(max_abs(commutator(ops::sigma_x(), ops::sigma_x())) == 0.0);
  CHECK_THROWS_AS(commutator(ops::sigma_x(), ops::identity(3)), InputError);
}

TEST_CASE("truncated ladder operators satisfy [a, a^dagger] = I below the cutoff") {
  const Eigen::Index cutoff = 20;
  const ComplexMatrix c = commutator(ops::annihilation(cutoff), ops::creation(cutoff));
  // Built entrywise: a|n> = sqrt(n)|n-1>, so [a,a^dagger] = diag(1,...,1, -(cutoff-1)).
  for (Eigen::Index i = 0; i < cutoff; ++i)
    for (Eigen::Index j = 0; j < cutoff; ++j) {
      const Complex expected = (i != j) ? 0.0 : (i + 1 < cutoff ? 1.0 : -(cutoff - 1.0));
      CHECK(std::abs(c(i, j) - expected) < 1e-12);
    }
  const ComplexMatrix aa = commutator(ops::annihilation(cutoff), ops::annihilation(cutoff));
  CHECK(max_abs(aa) == 0.0);
}

TEST_CASE("commutator is antisymmetric") {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = qpmp::testing::random_complex(4, gen);
    const auto b = qpmp::testing::random_complex(4, gen);
    CHECK(max_abs(commutator(a, b) + commutator(b, a)) == 0.0);
  }
}

TEST_CASE("lindblad drift examples") {
  QuantumModel m;
  m.dim = 2;
  m.H0 = ComplexMatrix::Zero(2, 2);
  m.L = ComplexMatrix::Zero(2, 2);
  std::mt19937_64 gen(3);
  const auto rho = qpmp::testing::random_density(2, gen);
  CHECK(max_abs(lindblad_drift(m, RealVector(), rho)) == 0.0);

  m.L = ops::sigma_z();
  CHECK(max_abs(lindblad_drift(m, RealVector(), DensityMatrix::maximally_mixed(2))) < 1e-15);

  CHECK_THROWS_AS(lindblad_drift(m, RealVector::Ones(1), rho), InputError);
}

TEST_CASE("drift and fluctuation are Hermitian and trace-free for random inputs") {
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index dim = 2 + trial % 4;
    QuantumModel m;
    m.dim = dim;
    m.H0 = qpmp::testing::random_hermitian(dim, gen);
    m.Hc = {qpmp::testing::random_hermitian(dim, gen)};
    m.L = qpmp::testing::random_complex(dim, gen);
    m.L_extra = {qpmp::testing::random_complex(dim, gen)};
    const auto rho = qpmp::testing::random_density(dim, gen);
    RealVector u(1);
    u << 0.7;
    const ComplexMatrix w = lindblad_drift(m, u, rho);
    const ComplexMatrix s = fluctuation(m.L, rho);
    const double scale = 1.0 + max_abs(w);
    CHECK(hermiticity_defect(w) <= 1e-12 * scale);
    CHECK(std::abs(w.trace()) <= 1e-12 * scale);
    CHECK(hermiticity_defect(s) <= 1e-12 * (1.0 + max_abs(s)));
    CHECK(std::abs(s.trace()) <= 1e-12 * (1.0 + max_abs(s)));

    // Heisenberg generator is the adjoint of the drift.
    const ComplexMatrix X = qpmp::testing::random_hermitian(dim, gen);
    const Complex lhs = expectation(w, X);
    const Complex rhs = expectation(rho, heisenberg_generator(m, u, X));
    CHECK(std::abs(lhs - rhs) < 1e-10 * scale);
  }
}

TEST_CASE("fluctuation examples") {
  const auto up = DensityMatrix::pure(Eigen::Vector2cd(1, 0));
  CHECK(max_abs(fluctuation(ops::sigma_z(), up)) == 0.0);
  const ComplexMatrix s = fluctuation(ops::sigma_z(), DensityMatrix::maximally_mixed(2));
  CHECK(max_abs(s - ops::sigma_z()) < 1e-15);
  CHECK_THROWS_AS(fluctuation(ops::identity(3), up), InputError);
}

TEST_CASE("expectation examples and linearity") {
  std::mt19937_64 gen(5);
  const auto rho = qpmp::testing::random_density(3, gen);
  CHECK(std::abs(expectation(rho, ops::identity(3)) - 1.0) < 1e-12);
  const auto up = DensityMatrix::pure(Eigen::Vector2cd(1, 0));
  CHECK(std::abs(expectation(up, ops::sigma_z()) - 1.0) < 1e-15);
  CHECK(std::abs(expectation(DensityMatrix::maximally_mixed(2), ops::sigma_x())) < 1e-15);

  for (int trial = 0; trial < 20; ++trial) {
    const auto r1 = qpmp::testing::random_density(3, gen).mat();
    const auto r2 = qpmp::testing::random_density(3, gen).mat();
    const auto X = qpmp::testing::random_hermitian(3, gen);
    const auto Y = qpmp::testing::random_hermitian(3, gen);
    const double a = 0.3, b = -1.7;
    CHECK(std::abs(expectation(r1, a * X + b * Y) - (a * expectation(r1, X) + b * expectation(r1, Y))) < 1e-10);
    CHECK(std::abs(expectation(a * r1 + b * r2, X) - (a * expectation(r1, X) + b * expectation(r2, X))) < 1e-10);
    CHECK(std::abs(expectation(r1, X).imag()) < 1e-12);
  }
}

TEST_CASE("project_physical examples") {
  std::mt19937_64 gen(9);
  const auto rho = qpmp::testing::random_density(4, gen);
  CHECK(max_abs(project_physical(rho.mat()).mat() - rho.mat()) < 1e-12);

  ComplexMatrix m = ComplexMatrix::Zero(2, 2);
  m(0, 0) = 1.1;
  m(1, 1) = -0.1;
  CHECK(max_abs(project_physical(m).mat() - ops::projector(2, 0)) < 1e-15);

  m(0, 0) = 0.6;
  m(1, 1) = 0.6;
  CHECK(max_abs(project_physical(m).mat() - 0.5 * ops::identity(2)) < 1e-15);

  CHECK_THROWS_AS(project_physical(-ops::identity(2)), DegenerateStateError);
  CHECK_THROWS_AS(project_physical(qpmp::testing::random_complex(2, gen) * 3.0), InputError);
}

TEST_CASE("project_physical is idempotent and returns valid states") {
  std::mt19937_64 gen(13);
  for (int trial = 0; trial < 30; ++trial) {
    ComplexMatrix m = qpmp::testing::random_hermitian(3, gen);
    m += 0.01 * qpmp::testing::random_complex(3, gen);
    m += 3.0 * ops::identity(3);
    const auto once = project_physical(m);
    CHECK(DensityMatrix::violations(once.mat()).empty());
    CHECK(max_abs(project_physical(once.mat()).mat() - once.mat()) < 1e-12);
  }
}

TEST_CASE("density matrix and model validation") {
  CHECK_THROWS_AS(DensityMatrix(ops::identity(2)), InputError);
  CHECK_NOTHROW(DensityMatrix(0.5 * ops::identity(2)));
  ComplexMatrix bad = 0.5 * ops::identity(2);
  bad(0, 1) = 0.1;
  CHECK_FALSE(DensityMatrix::violations(bad).empty());

  auto m = qpmp::testing::qubit_model(1.0);
  CHECK(m.violations().empty());
  m.Hc = {ops::sigma_x() * Complex(0, 1)};
  CHECK_FALSE(m.violations().empty());
  m.Hc = {ops::identity(3)};
  CHECK_FALSE(m.violations().empty());
  auto big = qpmp::testing::qubit_model(1.0);
  big.dim = 65;
  CHECK_FALSE(big.violations().empty());
}
