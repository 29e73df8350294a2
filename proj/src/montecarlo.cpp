#include "qpmp/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <thread>

#include "qpmp/errors.hpp"
#include "qpmp/rng.hpp"

namespace qpmp {

namespace {

// Reserved stream for direction draws, disjoint from trajectory indices in practice.
constexpr std::uint64_t kDirectionStream = 0xD1EC7104ULL << 32;

struct Outcome {
  double cost = 0.0;
  bool ok = false;
  std::string error;
};

Outcome guarded(const Scenario& s, std::uint64_t seed, std::uint64_t i, const ControlOffset& off) {
  Outcome o;
  try {
    o.cost = s.run(seed, i, off);
    o.ok = std::isfinite(o.cost);
    if (!o.ok) o.error = "non-finite cost";
  } catch (const NumericalError& e) {
    o.error = e.what();
  }
  return o;
}

std::size_t resolve_workers(std::size_t w, std::size_t jobs) {
  if (w == 0) w = std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(w, jobs));
}

// Runs body(i) for i in [0, n). Results are stored by index, so the caller's
// reduction order never depends on scheduling.
template <class Body>
void parallel_for(std::size_t n, std::size_t workers, Body body) {
  workers = resolve_workers(workers, n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::pair<double, double> mean_and_stderr(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  if (xs.empty()) return {std::nan(""), std::nan("")};
  // Shifted by the first sample so constant data is reproduced exactly.
  const double x0 = xs.front();
  double shift = 0.0;
  for (double x : xs) shift += x - x0;
  shift /= n;
  if (xs.size() < 2) return {x0, std::nan("")};
  double ss = 0.0;
  for (double x : xs) ss += (x - x0 - shift) * (x - x0 - shift);
  return {x0 + shift, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace

Scenario lqg_scenario(LinearModel model, LqgSpec spec, RiccatiSolution sol, bool noise) {
  Scenario s;
  s.name = noise ? "lqg" : "lqg_noise_off";
  s.T = spec.T;
  s.controls = model.controls();
  s.run = [model = std::move(model), spec = std::move(spec), sol = std::move(sol), noise](
              std::uint64_t seed, std::uint64_t traj, const ControlOffset& offset) {
    ClosedLoopOptions o;
    o.noise = noise;
    o.seed = seed;
    o.traj_index = traj;
    o.control_offset = offset;
    o.record = false;
    return closed_loop_simulate(model, spec, sol, o).cost;
  };
  return s;
}

Scenario sme_scenario(QuantumModel model, DensityMatrix rho0, Policy policy, CostSpec cost,
                      SmeConfig cfg) {
  cfg.validate();
  Scenario s;
  s.name = "sme";
  s.T = cfg.T;
  s.controls = static_cast<Eigen::Index>(model.Hc.size());
  s.run = [model = std::move(model), rho0 = std::move(rho0), policy = std::move(policy),
           cost = std::move(cost), cfg](std::uint64_t seed, std::uint64_t traj,
                                       const ControlOffset& offset) {
    SmeConfig c = cfg;
    c.seed = seed;
    Policy p = policy;
    if (offset) p = [&](const PolicyInput& in) { return RealVector(policy(in) + offset(in.t)); };
    return trajectory_cost(generate_record(model, rho0, p, c, traj), cost);
  };
  return s;
}

EnsembleReport ensemble_cost(const Scenario& scenario, const EnsembleOptions& opts,
                             const ControlOffset& offset) {
  if (opts.n_traj < 2) throw InputError("ensemble_cost: n_traj must be at least 2");
  std::vector<Outcome> out(opts.n_traj);
  parallel_for(opts.n_traj, opts.workers,
               [&](std::size_t i) { out[i] = guarded(scenario, opts.seed, i, offset); });
  EnsembleReport r;
  r.n_traj = opts.n_traj;
  r.seed = opts.seed;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].ok) {
      r.per_traj_costs.push_back(out[i].cost);
    } else {
      r.failed_indices.push_back(i);
      r.failure_messages.push_back(out[i].error);
    }
  }
  std::tie(r.mean_cost, r.stderr_cost) = mean_and_stderr(r.per_traj_costs);
  return r;
}

RealVector Direction::operator()(double t) const {
  const auto pieces = coefficients.rows();
  long j = static_cast<long>(std::floor(t / T * static_cast<double>(pieces)));
  j = std::clamp<long>(j, 0, pieces - 1);
  return coefficients.row(j).transpose();
}

Direction random_direction(std::uint64_t seed, std::uint64_t index, double T, Eigen::Index controls,
                           std::size_t pieces) {
  if (pieces == 0 || controls <= 0 || !(T > 0))
    throw InputError("random_direction: need pieces >= 1, controls >= 1, T > 0");
  const KeyedRng rng(seed, kDirectionStream + index);
  const auto rows = static_cast<Eigen::Index>(pieces);
  RealMatrix c(rows, controls);
  std::uint64_t lane = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < controls; ++j) c(i, j) = rng.normal(0, lane++);
  // Uniform in the unit ball: Gaussian direction, radius U^(1/dim).
  const double radius = std::pow(rng.uniform(1), 1.0 / static_cast<double>(c.size()));
  c *= radius / c.norm();
  return {T, c};
}

double PerturbationReport::min_lower_bound(double k) const {
  double best = INFINITY;
  for (const auto& d : directions) best = std::min(best, d.delta + k * d.paired_stderr);
  return best;
}

std::size_t PerturbationReport::failures() const {
  std::size_t f = baseline.failures();
  for (const auto& d : directions) f += d.failures;
  return f;
}

PerturbationReport perturbation_test(const Scenario& scenario, const PerturbationOptions& opts) {
  if (!(opts.epsilon >= 0) || !std::isfinite(opts.epsilon))
    throw InputError("perturbation_test: epsilon must be finite and >= 0");
  const auto& eo = opts.ensemble;
  if (eo.n_traj < 2) throw InputError("perturbation_test: n_traj must be at least 2");
  PerturbationReport rep;
  rep.epsilon = opts.epsilon;
  rep.n_traj = eo.n_traj;
  rep.seed = eo.seed;
  std::vector<ControlOffset> offsets;
  for (std::size_t d = 0; d < opts.n_directions; ++d) {
    DirectionResult dr;
    dr.direction = random_direction(eo.seed, d, scenario.T, scenario.controls, opts.pieces);
    rep.directions.push_back(dr);
    offsets.push_back([dir = dr.direction, eps = opts.epsilon](double t) {
      return RealVector(eps * dir(t));
    });
  }

  const std::size_t D = opts.n_directions, n = eo.n_traj;
  std::vector<Outcome> base(n), pert(n * D);
  parallel_for(n, eo.workers, [&](std::size_t i) {
    base[i] = guarded(scenario, eo.seed, i, {});
    if (!base[i].ok) return;
    for (std::size_t d = 0; d < D; ++d) pert[d * n + i] = guarded(scenario, eo.seed, i, offsets[d]);
  });

  rep.baseline.n_traj = n;
  rep.baseline.seed = eo.seed;
  for (std::size_t i = 0; i < n; ++i) {
    if (base[i].ok) {
      rep.baseline.per_traj_costs.push_back(base[i].cost);
    } else {
      rep.baseline.failed_indices.push_back(i);
      rep.baseline.failure_messages.push_back(base[i].error);
    }
  }
  std::tie(rep.baseline.mean_cost, rep.baseline.stderr_cost) =
      mean_and_stderr(rep.baseline.per_traj_costs);

  for (std::size_t d = 0; d < D; ++d) {
    std::vector<double> diffs;
    for (std::size_t i = 0; i < n; ++i) {
      if (!base[i].ok) continue;
      const Outcome& o = pert[d * n + i];
      if (o.ok)
        diffs.push_back(o.cost - base[i].cost);
      else
        ++rep.directions[d].failures;
    }
    std::tie(rep.directions[d].delta, rep.directions[d].paired_stderr) = mean_and_stderr(diffs);
  }
  return rep;
}

io::KeyValueDoc to_key_values(const EnsembleReport& r) {
  io::KeyValueDoc doc;
  doc.set("n_traj", r.n_traj);
  doc.set("seed", static_cast<unsigned long long>(r.seed));
  doc.set("mean_cost", r.mean_cost);
  doc.set("stderr", r.stderr_cost);
  doc.set("successes", r.per_traj_costs.size());
  doc.set("failures", r.failures());
  doc.set("warning", r.warning());
  return doc;
}

io::KeyValueDoc to_key_values(const PerturbationReport& r) {
  io::KeyValueDoc doc;
  doc.set("epsilon", r.epsilon);
  doc.set("n_traj", r.n_traj);
  doc.set("seed", static_cast<unsigned long long>(r.seed));
  doc.set("n_directions", r.directions.size());
  doc.set("baseline_mean_cost", r.baseline.mean_cost);
  doc.set("baseline_stderr", r.baseline.stderr_cost);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& d : r.directions) {
    lo = std::min(lo, d.delta);
    hi = std::max(hi, d.delta);
  }
  doc.set("min_delta", lo);
  doc.set("max_delta", hi);
  doc.set("min_delta_plus_2se", r.min_lower_bound(2.0));
  doc.set("failures", r.failures());
  return doc;
}

void write_costs_csv(std::ostream& os, const EnsembleReport& r) {
  os << "traj,cost\n";
  std::size_t f = 0, s = 0;
  for (std::size_t i = 0; i < r.n_traj; ++i) {
    if (f < r.failed_indices.size() && r.failed_indices[f] == i) {
      os << i << ",nan\n";
      ++f;
    } else {
      os << i << ',' << io::fmt(r.per_traj_costs[s++]) << '\n';
    }
  }
}

void write_deltas_csv(std::ostream& os, const PerturbationReport& r) {
  os << "direction,delta,paired_stderr,failures\n";
  for (std::size_t d = 0; d < r.directions.size(); ++d) {
    const auto& x = r.directions[d];
    os << d << ',' << io::fmt(x.delta) << ',' << io::fmt(x.paired_stderr) << ',' << x.failures << '\n';
  }
}

}  // namespace qpmp
