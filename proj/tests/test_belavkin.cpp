#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "qpmp/belavkin.hpp"
#include "qpmp/errors.hpp"
#include "test_support.hpp"

using namespace qpmp;
using qpmp::testing::max_abs;

namespace {

DensityMatrix ket0() { return DensityMatrix::pure(Eigen::Vector2cd(1, 0)); }
DensityMatrix ket_plus() { return DensityMatrix::pure(Eigen::Vector2cd(1, 1)); }

SmeConfig cfg(double dt, double T, std::uint64_t seed = 1, bool normalize = true) {
  SmeConfig c;
  c.dt = dt;
  c.T = T;
  c.seed = seed;
  c.normalize_each_step = normalize;
  return c;
}

QuantumModel rabi_measured(double kappa, double omega) {
  return qpmp::testing::qubit_model(kappa, 0.5 * omega * ops::sigma_x());
}

}  // namespace

TEST_CASE("config validation") {
  CHECK(cfg(1e-3, 1.0).violations().empty());
  CHECK(cfg(1e-3, 1.0).steps() == 1000);
  CHECK_FALSE(cfg(0.3, 1.0).violations().empty());
  CHECK_FALSE(cfg(2.0, 1.0).violations().empty());
  CHECK_FALSE(cfg(-1.0, 1.0).violations().empty());
}

TEST_CASE("step_sme examples") {
  QuantumModel zero;
  zero.dim = 2;
  zero.H0 = ComplexMatrix::Zero(2, 2);
  zero.L = ComplexMatrix::Zero(2, 2);
  std::mt19937_64 gen(1);
  const auto rho = qpmp::testing::random_density(2, gen);
  CHECK(max_abs(step_sme(rho, RealVector(), 0.37, zero, cfg(1e-3, 1.0)).mat() - rho.mat()) < 1e-12);

  const auto meas = qpmp::testing::qubit_model(1.0);
  for (double dW : {-0.3, 0.0, 0.2})
    CHECK(max_abs(step_sme(ket0(), RealVector(), dW, meas, cfg(1e-3, 1.0)).mat() - ket0().mat()) < 1e-15);

  // w(I/2) = 0 and sigma(I/2) = sigma_z, so one step adds 0.05 sigma_z.
  const auto next = step_sme(DensityMatrix::maximally_mixed(2), RealVector(), 0.05, meas, cfg(1e-3, 1.0));
  ComplexMatrix expected = ComplexMatrix::Zero(2, 2);
  expected(0, 0) = 0.55;
  expected(1, 1) = 0.45;
  CHECK(max_abs(next.mat() - expected) < 1e-14);

  CHECK_THROWS_AS(step_sme(ket0(), RealVector(), std::nan(""), meas, cfg(1e-3, 1.0), 17), NumericalError);
  try {
    step_sme(ket0(), RealVector(), INFINITY, meas, cfg(1e-3, 1.0), 17);
  } catch (const NumericalError& e) {
    CHECK(e.step() == 17);
  }
}

TEST_CASE("innovation increment examples") {
  const auto meas = qpmp::testing::qubit_model(1.0);
  const auto rho = DensityMatrix::maximally_mixed(2);
  CHECK(innovation_increment(0.0, ket0().mat(), meas.L, 0.01) == doctest::Approx(-0.02));
  CHECK(std::abs(innovation_increment(0.02, ket0().mat(), meas.L, 0.01)) < 1e-15);
  CHECK(innovation_increment(0.3, rho.mat(), ComplexMatrix::Zero(2, 2), 0.01) == 0.3);
  CHECK(innovation_increment(0.05, ket0().mat(), ops::sigma_z(), 0.01) == doctest::Approx(0.03).epsilon(1e-12));
}

TEST_CASE("generate_record is deterministic and keyed by trajectory index") {
  const auto model = rabi_measured(1.0, 2.0);
  const auto c = cfg(1e-3, 0.5, 7);
  const auto a = generate_record(model, ket0(), constant_policy(RealVector()), c, 3);
  const auto b = generate_record(model, ket0(), constant_policy(RealVector()), c, 3);
  std::ostringstream sa, sb;
  write_trajectory_csv(sa, a);
  write_trajectory_csv(sb, b);
  CHECK(sa.str() == sb.str());
  const auto other = generate_record(model, ket0(), constant_policy(RealVector()), c, 4);
  CHECK(other.innovations_W.back() != a.innovations_W.back());

  CHECK(a.times.front() == 0.0);
  CHECK(a.times.back() == 0.5);
  CHECK(a.size() == 501);
  CHECK(a.states.size() == a.size());
  CHECK(a.controls.size() == a.size());
  CHECK(a.record_y.front() == 0.0);
  CHECK(a.innovations_W.front() == 0.0);
}

TEST_CASE("record y is consistent with the innovations") {
  const auto model = rabi_measured(0.8, 1.0);
  const auto c = cfg(1e-3, 0.2, 5);
  const auto rec = generate_record(model, ket_plus(), constant_policy(RealVector()), c);
  for (std::size_t k = 0; k + 1 < rec.size(); ++k) {
    const double dy = rec.record_y[k + 1] - rec.record_y[k];
    CHECK(std::abs(innovation_increment(dy, rec.states[k].mat(), model.L, c.dt) - rec.dW(k)) < 1e-12);
  }
}

TEST_CASE("no coupling: states constant and record is a random walk") {
  QuantumModel zero;
  zero.dim = 2;
  zero.H0 = ComplexMatrix::Zero(2, 2);
  zero.L = ComplexMatrix::Zero(2, 2);
  auto c = cfg(1e-2, 1.0, 99);
  double sum_sq = 0.0;
  std::size_t count = 0;
  for (std::uint64_t traj = 0; traj < 50; ++traj) {
    const auto rec = generate_record(zero, ket_plus(), constant_policy(RealVector()), c, traj);
    for (std::size_t k = 0; k < rec.size(); ++k) CHECK(max_abs(rec.states[k].mat() - ket_plus().mat()) < 1e-12);
    for (std::size_t k = 0; k + 1 < rec.size(); ++k) {
      const double dy = rec.record_y[k + 1] - rec.record_y[k];
      sum_sq += dy * dy;
      ++count;
    }
  }
  // Increments ~ N(0, dt): sample second moment within 5% for 5000 draws.
  CHECK(sum_sq / count == doctest::Approx(c.dt).epsilon(0.05));
}

TEST_CASE("measurement collapses the maximally mixed qubit") {
  const auto model = qpmp::testing::qubit_model(1.0);
  const auto c = cfg(1e-3, 5.0, 2024);
  int collapsed = 0;
  const int n = 500;
  for (int traj = 0; traj < n; ++traj) {
    const auto rec = generate_record(model, DensityMatrix::maximally_mixed(2), constant_policy(RealVector()), c, traj);
    if (std::abs(expectation(rec.states.back(), ops::sigma_z()).real()) > 0.9) ++collapsed;
  }
  MESSAGE("collapsed fraction " << static_cast<double>(collapsed) / n);
  CHECK(static_cast<double>(collapsed) / n > 0.8);
}

TEST_CASE("trajectory cost examples") {
  const auto model = qpmp::testing::qubit_model(1.0);
  const auto rec = generate_record(model, ket0(), constant_policy(RealVector()), cfg(1e-2, 1.0));
  CostSpec unit = CostSpec::zero(2);
  unit.terminal_op = ops::identity(2);
  CHECK(trajectory_cost(rec, unit) == doctest::Approx(1.0).epsilon(1e-12));

  CostSpec target = CostSpec::zero(2);
  target.terminal_op = ops::projector(2, 1);
  CHECK(std::abs(trajectory_cost(rec, target)) < 1e-12);

  CostSpec running{[](double, const RealVector&) { return ops::identity(2); }, ComplexMatrix::Zero(2, 2)};
  CHECK(std::abs(trajectory_cost(rec, running) - 1.0) < 1e-9);
}

TEST_CASE("trajectory cost is monotone in the running cost operator") {
  std::mt19937_64 gen(31);
  const auto model = rabi_measured(1.0, 3.0);
  const auto rec = generate_record(model, ket_plus(), constant_policy(RealVector()), cfg(1e-3, 0.5, 3));
  for (int trial = 0; trial < 10; ++trial) {
    const ComplexMatrix g = qpmp::testing::random_complex(2, gen);
    const ComplexMatrix C1 = g * g.adjoint();
    const ComplexMatrix h = qpmp::testing::random_complex(2, gen);
    const ComplexMatrix C2 = C1 + h * h.adjoint();
    const CostSpec low{[C1](double, const RealVector&) { return C1; }, ComplexMatrix::Zero(2, 2)};
    const CostSpec high{[C2](double, const RealVector&) { return C2; }, ComplexMatrix::Zero(2, 2)};
    CHECK(trajectory_cost(rec, low) >= 0.0);
    CHECK(trajectory_cost(rec, low) <= trajectory_cost(rec, high));
  }
}

TEST_CASE("physicality and trace preservation") {
  const auto model = rabi_measured(1.0, 2.0);
  SUBCASE("projection on") {
    for (std::uint64_t traj = 0; traj < 5; ++traj) {
      const auto rec = generate_record(model, DensityMatrix::maximally_mixed(2), constant_policy(RealVector()),
                                       cfg(1e-3, 1.0, 8), traj);
      for (const auto& s : rec.states) CHECK(DensityMatrix::violations(s.mat()).empty());
    }
  }
  SUBCASE("projection off keeps the trace within the empirical bound") {
    const auto c = cfg(1e-3, 1.0, 8, false);
    const auto rec = generate_record(model, DensityMatrix::maximally_mixed(2), constant_policy(RealVector()), c);
    for (const auto& s : rec.states)
      CHECK(std::abs(s.mat().trace().real() - 1.0) <= 10.0 * c.dt * static_cast<double>(c.steps()));
  }
}

TEST_CASE("filter observable check examples") {
  const auto model = rabi_measured(1.0, 2.0);
  const auto rec = generate_record(model, ket_plus(), constant_policy(RealVector()), cfg(1e-3, 1.0, 4));
  CHECK(filter_observable_check(rec, ops::identity(2), model) < 1e-10);

  QuantumModel frozen;
  frozen.dim = 2;
  frozen.H0 = ComplexMatrix::Zero(2, 2);
  frozen.L = ComplexMatrix::Zero(2, 2);
  const auto still = generate_record(frozen, ket_plus(), constant_policy(RealVector()), cfg(1e-3, 1.0, 4));
  CHECK(filter_observable_check(still, ops::sigma_z(), frozen) < 1e-10);
  CHECK(filter_observable_check(still, ops::sigma_x(), frozen) < 1e-10);

  CHECK_THROWS_AS(filter_observable_check(rec, Complex(0, 1) * ops::sigma_x(), model), InputError);
}

TEST_CASE("filter observable check converges under refinement on a shared path") {
  const auto model = rabi_measured(1.0, 2.0);
  double previous = 0.0;
  for (int level = 0; level < 3; ++level) {
    const std::size_t sub = std::size_t{1} << (2 - level);
    auto c = cfg(1e-3 / static_cast<double>(std::size_t{1} << level), 1.0, 4);
    c.noise_substeps = sub;
    double worst = 0.0;
    for (std::uint64_t traj = 0; traj < 20; ++traj) {
      const auto rec = generate_record(model, DensityMatrix::maximally_mixed(2), constant_policy(RealVector()), c, traj);
      worst = std::max(worst, filter_observable_check(rec, ops::sigma_z(), model));
    }
    if (level == 0) CHECK(worst <= 5e-2);
    if (level > 0) CHECK(worst < previous);
    previous = worst;
  }
}

TEST_CASE("filter observable check is exact without projection") {
  const auto model = rabi_measured(1.0, 2.0);
  for (auto scheme : {SmeScheme::EulerMaruyama, SmeScheme::Milstein}) {
    auto c = cfg(1e-3, 0.5, 4, false);
    c.scheme = scheme;
    const auto rec = generate_record(model, ket_plus(), constant_policy(RealVector()), c);
    CHECK(filter_observable_check(rec, ops::sigma_z(), model) < 1e-10);
    CHECK(filter_observable_check(rec, ops::sigma_x(), model) < 1e-10);
  }
}

TEST_CASE("fluctuation derivative matches central differences") {
  std::mt19937_64 gen(77);
  for (int trial = 0; trial < 20; ++trial) {
    const auto rho = qpmp::testing::random_density(3, gen).mat();
    const ComplexMatrix L = qpmp::testing::random_complex(3, gen);
    const ComplexMatrix delta = qpmp::testing::random_hermitian(3, gen);
    const double eps = 1e-5;
    const ComplexMatrix fd = (fluctuation(L, ComplexMatrix(rho + eps * delta)) -
                              fluctuation(L, ComplexMatrix(rho - eps * delta))) / (2 * eps);
    CHECK(max_abs(fd - fluctuation_derivative(L, rho, delta)) < 1e-8);
  }
}

TEST_CASE("noise substeps reproduce the refined Brownian path") {
  const auto model = rabi_measured(1.0, 2.0);
  auto coarse = cfg(1e-3, 0.5, 12);
  coarse.noise_substeps = 2;
  const auto fine = cfg(5e-4, 0.5, 12);
  const auto a = generate_record(model, ket_plus(), constant_policy(RealVector()), coarse, 2);
  const auto b = generate_record(model, ket_plus(), constant_policy(RealVector()), fine, 2);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a.innovations_W[k] == doctest::Approx(b.innovations_W[2 * k]).epsilon(1e-12));
}

TEST_CASE("purity is preserved to first order in dt") {
  const auto model = rabi_measured(1.0, 2.0);
  double worst_coarse = 0.0, worst_fine = 0.0;
  for (std::uint64_t traj = 0; traj < 5; ++traj) {
    auto coarse = cfg(2e-4, 0.5, 21);
    coarse.noise_substeps = 2;
    const auto fine = cfg(1e-4, 0.5, 21);
    for (const auto& s : generate_record(model, ket_plus(), constant_policy(RealVector()), coarse, traj).states)
      worst_coarse = std::max(worst_coarse, 1.0 - (s.mat() * s.mat()).trace().real());
    for (const auto& s : generate_record(model, ket_plus(), constant_policy(RealVector()), fine, traj).states)
      worst_fine = std::max(worst_fine, 1.0 - (s.mat() * s.mat()).trace().real());
  }
  CHECK(worst_fine <= 1e-3);
  CHECK(worst_fine < worst_coarse);
}

TEST_CASE("Euler-Maruyama remains available") {
  const auto model = rabi_measured(1.0, 2.0);
  auto c = cfg(1e-3, 1.0);
  c.scheme = SmeScheme::EulerMaruyama;
  const auto next = step_sme(DensityMatrix::maximally_mixed(2), RealVector(), 0.05, qpmp::testing::qubit_model(1.0), c);
  CHECK(std::abs(next.mat()(0, 0).real() - 0.55) < 1e-14);
  const auto ket = DensityMatrix::pure(Eigen::Vector2cd(1, 1));
  const auto em = step_sme(ket, RealVector(), 0.05, model, c);
  c.scheme = SmeScheme::Milstein;
  const auto mil = step_sme(ket, RealVector(), 0.05, model, c);
  CHECK(max_abs(em.mat() - mil.mat()) > 1e-6);
}
