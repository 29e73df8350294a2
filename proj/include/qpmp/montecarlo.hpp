#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "qpmp/belavkin.hpp"
#include "qpmp/io.hpp"
#include "qpmp/lqg.hpp"

namespace qpmp {

/// Additive control perturbation delta(t); empty means none.
using ControlOffset = std::function<RealVector(double t)>;

/// A closed-loop experiment whose realized cost is a pure function of
/// (seed, trajectory index, offset). Trajectories sharing (seed, index)
/// share their noise, which is what paired comparisons rely on.
struct Scenario {
  std::string name;
  double T = 1.0;
  Eigen::Index controls = 0;
  std::function<double(std::uint64_t seed, std::uint64_t traj, const ControlOffset& offset)> run;
};

/// LQG closed loop under the Riccati feedback law.
Scenario lqg_scenario(LinearModel model, LqgSpec spec, RiccatiSolution sol, bool noise = true);

/// Belavkin filter under `policy`, cost from `cost`. cfg.seed is ignored;
/// the ensemble seed is used instead.
Scenario sme_scenario(QuantumModel model, DensityMatrix rho0, Policy policy, CostSpec cost,
                      SmeConfig cfg);

struct EnsembleOptions {
  std::size_t n_traj = 100;
  std::uint64_t seed = 0;
  /// 0 picks std::thread::hardware_concurrency().
  std::size_t workers = 1;
};

struct EnsembleReport {
  std::size_t n_traj = 0;
  double mean_cost = 0.0;
  double stderr_cost = 0.0;
  std::uint64_t seed = 0;
  /// Successful trajectories in index order.
  std::vector<double> per_traj_costs;
  std::vector<std::uint64_t> failed_indices;
  std::vector<std::string> failure_messages;

  std::size_t failures() const { return failed_indices.size(); }
  bool warning() const { return !failed_indices.empty(); }
};

EnsembleReport ensemble_cost(const Scenario& scenario, const EnsembleOptions& opts,
                             const ControlOffset& offset = {});

/// Piecewise-constant direction on equal subintervals of [0, T].
struct Direction {
  double T = 1.0;
  /// pieces x controls coefficients, jointly in the unit ball.
  RealMatrix coefficients;

  RealVector operator()(double t) const;
};

Direction random_direction(std::uint64_t seed, std::uint64_t index, double T, Eigen::Index controls,
                           std::size_t pieces = 8);

struct PerturbationOptions {
  double epsilon = 0.1;
  std::size_t n_directions = 20;
  std::size_t pieces = 8;
  EnsembleOptions ensemble;
};

struct DirectionResult {
  Direction direction;
  double delta = 0.0;
  double paired_stderr = 0.0;
  std::size_t failures = 0;
};

struct PerturbationReport {
  double epsilon = 0.0;
  std::size_t n_traj = 0;
  std::uint64_t seed = 0;
  EnsembleReport baseline;
  std::vector<DirectionResult> directions;

  /// min over directions of delta + k * paired_stderr.
  double min_lower_bound(double k = 2.0) const;
  std::size_t failures() const;
};

PerturbationReport perturbation_test(const Scenario& scenario, const PerturbationOptions& opts);

io::KeyValueDoc to_key_values(const EnsembleReport& r);
io::KeyValueDoc to_key_values(const PerturbationReport& r);
void write_costs_csv(std::ostream& os, const EnsembleReport& r);
void write_deltas_csv(std::ostream& os, const PerturbationReport& r);

}  // namespace qpmp
