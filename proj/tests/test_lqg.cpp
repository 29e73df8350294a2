#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "qpmp/errors.hpp"
#include "qpmp/lqg.hpp"

using namespace qpmp;

namespace {

RealMatrix scalar(double v) { return RealMatrix::Constant(1, 1, v); }

LinearModel scalar_model(double m_cov = 0.0) {
  LinearModel lm;
  lm.A = scalar(0);
  lm.B = scalar(1);
  lm.C = scalar(0);
  lm.M_cov = scalar(m_cov);
  lm.F = scalar(m_cov);
  lm.include_diffusion = true;
  return lm;
}

LqgSpec tanh_spec(double dt = 1e-3) {
  auto s = LqgSpec::constant(scalar(1), scalar(1), scalar(0), 2.0, dt);
  s.x0 = RealVector::Constant(1, 1.0);
  return s;
}

RealMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  RealMatrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(gen);
  return m;
}

/// Random stable 4-state, 2-control, 2-output model with noise.
std::pair<LinearModel, LqgSpec> random_problem(std::mt19937_64& gen) {
  LinearModel lm;
  lm.A = random_matrix(4, 4, gen);
  const double shift = Eigen::EigenSolver<RealMatrix>(lm.A).eigenvalues().real().maxCoeff();
  lm.A -= (shift + 0.5) * RealMatrix::Identity(4, 4);
  lm.B = random_matrix(4, 2, gen);
  lm.C = random_matrix(2, 4, gen);
  lm.M_cov = 0.1 * random_matrix(4, 2, gen);
  lm.F = 0.3 * random_matrix(4, 4, gen);
  lm.include_diffusion = true;
  const RealMatrix q = random_matrix(4, 4, gen), r = random_matrix(2, 2, gen), f = random_matrix(4, 4, gen);
  auto spec = LqgSpec::constant(q * q.transpose(), r * r.transpose() + 0.5 * RealMatrix::Identity(2, 2),
                                0.2 * f * f.transpose(), 1.0, 1e-3);
  spec.x0 = random_matrix(4, 1, gen);
  spec.sigma0 = RealMatrix::Identity(4, 4) * 0.3;
  return {lm, spec};
}

}  // namespace

TEST_CASE("scalar Riccati closed form") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto sol = riccati_backward(scalar_model(), tanh_spec());
  const double took = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double err = 0.0, phi = 0.0;
  for (std::size_t k = 0; k < sol.time_points.size(); ++k) {
    err = std::max(err, std::abs(sol.K[k](0, 0) - std::tanh(2.0 - sol.time_points[k])));
    phi = std::max(phi, std::abs(sol.phi[k][0]));
  }
  CHECK(err <= 1e-6);
  CHECK(phi <= 1e-12);
  CHECK(took < 1.0);
  CHECK(sol.K.back()(0, 0) == 0.0);
  CHECK(sol.c.back() == 0.0);
}

TEST_CASE("trace term of the value function") {
  // C = 0, M = m and F F^T = m^2 keep Sigma = 0 and Ktilde = m, so
  // c(0) = 1/2 m^2 int_0^2 tanh(2 - t) dt = 1/2 m^2 ln cosh 2.
  const double m = 0.5;
  const auto sol = riccati_backward(scalar_model(m), tanh_spec());
  CHECK(sol.c[0] == doctest::Approx(0.5 * m * m * std::log(std::cosh(2.0))).epsilon(1e-9));
  for (const auto& s : sol.sigma) CHECK(std::abs(s(0, 0)) < 1e-14);
}

TEST_CASE("zero weights give the zero solution") {
  std::mt19937_64 gen(1);
  auto [lm, spec] = random_problem(gen);
  spec.Q_run = [](double) { return RealMatrix::Zero(4, 4); };
  spec.F_term = RealMatrix::Zero(4, 4);
  const auto sol = riccati_backward(lm, spec);
  for (std::size_t k = 0; k < sol.time_points.size(); ++k) {
    REQUIRE(sol.K[k].isZero(0.0));
    REQUIRE(sol.phi[k].isZero(0.0));
    REQUIRE(sol.c[k] == 0.0);
  }
  MomentState s{spec.x0, RealMatrix::Zero(4, 4)};
  CHECK(feedback(s, sol, 0.3, lm, spec).isZero(0.0));
  CHECK(value_function(0.3, s, sol) == 0.0);
  const auto traj = closed_loop_simulate(lm, spec, sol, {true, 3});
  const auto res = pmp_moment_residual(traj, sol, lm, spec);
  CHECK(res.max_step_residual == 0.0);
  CHECK(res.terminal_residual == 0.0);
  CHECK(res.max_costate_norm == 0.0);
}

TEST_CASE("Riccati solution invariants") {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 3; ++trial) {
    const auto [lm, spec] = random_problem(gen);
    const auto sol = riccati_backward(lm, spec);
    CHECK((sol.K.back() - spec.F_term).cwiseAbs().maxCoeff() == 0.0);
    for (std::size_t k = 0; k < sol.time_points.size(); ++k) {
      REQUIRE((sol.K[k] - sol.K[k].transpose()).cwiseAbs().maxCoeff() <= 1e-10);
      REQUIRE(Eigen::SelfAdjointEigenSolver<RealMatrix>(sol.K[k]).eigenvalues().minCoeff() >= -1e-9);
      REQUIRE(sol.phi[k].cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("Riccati matching identity at random points") {
  std::mt19937_64 gen(3);
  const auto [lm, spec] = random_problem(gen);
  const auto sol = riccati_backward(lm, spec);
  std::uniform_real_distribution<double> time(0.0, spec.T);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const RealVector x = random_matrix(4, 1, gen);
    worst = std::max(worst, riccati_matching_residual(sol, lm, spec, time(gen), x));
  }
  MESSAGE("worst matching residual " << worst);
  CHECK(worst <= 1e-6);
}

TEST_CASE("feedback examples") {
  const auto lm = scalar_model();
  const auto spec = tanh_spec();
  const auto sol = riccati_backward(lm, spec);
  const MomentState one{RealVector::Constant(1, 1.0), scalar(0)};
  CHECK(feedback(one, sol, 0.0, lm, spec)[0] == doctest::Approx(-std::tanh(2.0)).epsilon(1e-9));
  CHECK(feedback(one, sol, 0.0, lm, spec)[0] == doctest::Approx(-0.9640).epsilon(1e-4));
  // Off-node times interpolate linearly.
  const double t = 0.7004;
  CHECK(feedback(one, sol, t, lm, spec)[0] == doctest::Approx(-std::tanh(2.0 - t)).epsilon(1e-7));
  CHECK_THROWS_AS(feedback(one, sol, 2.5, lm, spec), InputError);

  // R = I, B = I: u = -K X.
  std::mt19937_64 gen(4);
  LinearModel id;
  id.A = random_matrix(3, 3, gen);
  id.B = RealMatrix::Identity(3, 3);
  id.C = RealMatrix::Zero(1, 3);
  id.M_cov = RealMatrix::Zero(3, 1);
  auto s3 = LqgSpec::constant(RealMatrix::Identity(3, 3), RealMatrix::Identity(3, 3),
                              RealMatrix::Identity(3, 3), 1.0, 1e-2);
  const auto sol3 = riccati_backward(id, s3);
  const MomentState x{random_matrix(3, 1, gen), RealMatrix::Zero(3, 3)};
  CHECK((feedback(x, sol3, 0.2, id, s3) + sol3.K_at(0.2) * x.xhat).norm() < 1e-14);
}

TEST_CASE("value function examples") {
  std::mt19937_64 gen(5);
  const auto [lm, spec] = random_problem(gen);
  const auto sol = riccati_backward(lm, spec);
  const MomentState zero{RealVector::Zero(4), RealMatrix::Zero(4, 4)};
  CHECK(value_function(0.4, zero, sol) == doctest::Approx(sol.c_at(0.4)));
  std::uniform_real_distribution<double> time(0.0, spec.T);
  for (int i = 0; i < 50; ++i) {
    const double t = time(gen);
    const RealVector x = random_matrix(4, 1, gen);
    const RealVector p = sol.K_at(t) * x + sol.phi_at(t);
    for (int a = 0; a < 4; ++a) {
      const double e = 1e-5;
      MomentState plus{x, zero.sigma}, minus{x, zero.sigma};
      plus.xhat[a] += e;
      minus.xhat[a] -= e;
      const double fd = (value_function(t, plus, sol) - value_function(t, minus, sol)) / (2 * e);
      CHECK(std::abs(fd - p[a]) <= 1e-7);
    }
  }
}

TEST_CASE("closed loop determinism and LQR identity") {
  const auto lm = scalar_model(0.5);
  const auto spec = tanh_spec();
  const auto sol = riccati_backward(lm, spec);
  const auto a = closed_loop_simulate(lm, spec, sol, {true, 11, 4});
  const auto b = closed_loop_simulate(lm, spec, sol, {true, 11, 4});
  CHECK(a.cost == b.cost);
  CHECK(a.xhat == b.xhat);
  const auto c = closed_loop_simulate(lm, spec, sol, {true, 11, 5});
  CHECK(a.cost != c.cost);

  ClosedLoopOptions quiet;
  quiet.noise = false;
  const auto det = closed_loop_simulate(lm, spec, sol, quiet);
  MESSAGE("noise-off cost " << det.cost << " vs " << 0.5 * std::tanh(2.0));
  CHECK(std::abs(det.cost - 0.5 * std::tanh(2.0)) <= 1e-3 * 0.5 * std::tanh(2.0));
  CHECK(closed_loop_simulate(lm, spec, sol, quiet).cost == det.cost);

  // Hurwitz A, no state weight: cost is the control energy, reproducible.
  LinearModel stable = lm;
  stable.A = scalar(-1);
  auto spec0 = LqgSpec::constant(scalar(0), scalar(1), scalar(0), 2.0, 1e-3);
  spec0.x0 = RealVector::Constant(1, 1.0);
  const auto sol0 = riccati_backward(stable, spec0);
  ClosedLoopOptions offset = quiet;
  offset.control_offset = [](double t) { return RealVector::Constant(1, std::sin(t)); };
  const auto e1 = closed_loop_simulate(stable, spec0, sol0, offset);
  double energy = 0.0;
  for (std::size_t k = 0; k + 1 < e1.controls.size(); ++k)
    energy += 0.5 * e1.controls[k].squaredNorm() * sol0.dt();
  CHECK(std::abs(e1.cost - energy) <= 1e-12);
  CHECK(std::abs(closed_loop_simulate(stable, spec0, sol0, offset).cost - e1.cost) <= 1e-9);
}

TEST_CASE("PMP residuals along closed loops") {
  const auto lm = scalar_model(0.5);
  const auto spec = tanh_spec();
  const auto sol = riccati_backward(lm, spec);
  ClosedLoopOptions quiet;
  quiet.noise = false;
  const auto det = pmp_moment_residual(closed_loop_simulate(lm, spec, sol, quiet), sol, lm, spec);
  CHECK(det.max_step_residual <= 1e-6);
  CHECK(det.terminal_residual == 0.0);
  const auto noisy = pmp_moment_residual(closed_loop_simulate(lm, spec, sol, {true, 1}), sol, lm, spec);
  MESSAGE("noisy step residual " << noisy.max_step_residual);
  CHECK(noisy.max_step_residual <= 1e-6);
  CHECK(noisy.terminal_residual == 0.0);
}

TEST_CASE("Hamiltonian argmin lies next to -R^-1 B^T p") {
  std::mt19937_64 gen(6);
  const auto [lm, spec] = random_problem(gen);
  const auto sol = riccati_backward(lm, spec);
  const double spacing = 0.05;
  std::uniform_real_distribution<double> time(0.0, spec.T);
  for (int i = 0; i < 100; ++i) {
    const double t = time(gen);
    const RealVector x = random_matrix(4, 1, gen), p = random_matrix(4, 1, gen);
    const RealMatrix q = random_matrix(4, 4, gen);
    const RealVector analytic = -spec.R_run(t).llt().solve(lm.B.transpose() * p);
    std::vector<RealVector> grid;
    const Eigen::Vector2d lo = (analytic.array() - 1.0).matrix();
    for (int a = 0; a <= 40; ++a)
      for (int b = 0; b <= 40; ++b) grid.push_back(lo + spacing * Eigen::Vector2d(a, b));
    const RealMatrix kt = kalman_gain(sol.sigma_at(t), lm.C, lm.M_cov);
    const RealVector best = lqg_grid_argmin(t, x, p, q, kt, lm, spec, grid);
    CHECK((best - analytic).cwiseAbs().maxCoeff() <= spacing);
  }
}

TEST_CASE("ill-conditioned and invalid weights") {
  auto spec = LqgSpec::constant(scalar(1), scalar(-1), scalar(0), 1.0, 1e-2);
  CHECK_THROWS_AS(riccati_backward(scalar_model(), spec), ConfigError);
  LinearModel two;
  two.A = RealMatrix::Zero(2, 2);
  two.B = RealMatrix::Identity(2, 2);
  two.C = RealMatrix::Zero(1, 2);
  two.M_cov = RealMatrix::Zero(2, 1);
  RealMatrix R(2, 2);
  R << 1, 0, 0, 1e-13;
  auto bad = LqgSpec::constant(RealMatrix::Identity(2, 2), R, RealMatrix::Zero(2, 2), 1.0, 1e-2);
  CHECK_THROWS_AS(riccati_backward(two, bad), IllConditionedError);
  auto odd = tanh_spec(0.3);
  CHECK_THROWS_AS(riccati_backward(scalar_model(), odd), ConfigError);
  auto neg = tanh_spec();
  neg.F_term = scalar(-1);
  CHECK_FALSE(neg.violations(1, 1).empty());
}

TEST_CASE("Riccati export") {
  const auto sol = riccati_backward(scalar_model(0.5), tanh_spec(0.5));
  std::ostringstream os;
  write_riccati_csv(os, sol);
  const std::string csv = os.str();
  CHECK(csv.rfind("t,K_0_0,phi_0,c\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  const auto doc = controller_summary(sol, scalar_model(0.5), tanh_spec(0.5));
  REQUIRE(doc.get("expected_cost"));
  REQUIRE(doc.get("gain0_0_0"));
  CHECK(std::stod(*doc.get("expected_cost")) == doctest::Approx(0.5 * sol.K[0](0, 0) + sol.c[0]));
}
