#include "qpmp/pipeline.hpp"

#include <cstdio>
#include <sstream>

#include "qpmp/errors.hpp"
#include "qpmp/montecarlo.hpp"
#include "qpmp/pontryagin.hpp"

namespace qpmp {

namespace {

namespace fs = std::filesystem;

struct Output {
  fs::path dir;
  std::vector<std::pair<std::string, std::string>> files;

  void add(const std::string& name, std::string content) { files.emplace_back(name, std::move(content)); }
};

Policy make_policy(const ScenarioConfig& c, const std::optional<ValueGrid>& grid) {
  if (c.policy == "greedy") return greedy_policy(*grid, c.qmodel, c.cost(), c.u_grid);
  return constant_policy(c.control);
}

std::optional<ValueGrid> maybe_grid(const ScenarioConfig& c) {
  if (c.kind == ScenarioKind::QubitHjb || c.kind == ScenarioKind::PmpCheck || c.policy == "greedy")
    return solve_hjb_grid(c.qmodel, c.cost(), c.u_grid, c.grid);
  return std::nullopt;
}

void run_qubit_filter(const ScenarioConfig& c, Output& out, RunOutcome& r) {
  const auto grid = maybe_grid(c);
  const Policy pol = make_policy(c, grid);
  const CostSpec cost = c.cost();
  const bool qubit = c.qmodel.dim == 2;
  const auto d = static_cast<Eigen::Index>(c.qmodel.Hc.size());
  std::ostringstream csv;
  csv << "traj,t";
  for (Eigen::Index j = 0; j < d; ++j) csv << ",u_" << j;
  csv << ",y,W,purity";
  if (qubit) csv << ",rx,ry,rz";
  csv << '\n';
  double max_trace = 0.0, min_eig = INFINITY, max_impurity = 0.0, mean_cost = 0.0, mean_WT = 0.0;
  for (std::size_t j = 0; j < c.n_traj; ++j) {
    const auto rec = generate_record(c.qmodel, *c.rho0, pol, c.sme, j);
    mean_cost += trajectory_cost(rec, cost) / static_cast<double>(c.n_traj);
    mean_WT += rec.innovations_W.back() / static_cast<double>(c.n_traj);
    for (std::size_t k = 0; k < rec.size(); ++k) {
      const ComplexMatrix& rho = rec.states[k].mat();
      const double purity = (rho * rho).trace().real();
      max_trace = std::max(max_trace, std::abs(rho.trace() - 1.0));
      min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<ComplexMatrix>(rho).eigenvalues().minCoeff());
      max_impurity = std::max(max_impurity, 1.0 - purity);
      csv << j << ',' << io::fmt(rec.times[k]);
      for (Eigen::Index i = 0; i < d; ++i) csv << ',' << io::fmt(rec.controls[k][i]);
      csv << ',' << io::fmt(rec.record_y[k]) << ',' << io::fmt(rec.innovations_W[k]) << ','
          << io::fmt(purity);
      if (qubit) {
        const Vec3 b = bloch_from_density(rec.states[k]).r();
        csv << ',' << io::fmt(b[0]) << ',' << io::fmt(b[1]) << ',' << io::fmt(b[2]);
      }
      csv << '\n';
    }
  }
  out.add("trajectories.csv", csv.str());
  r.summary.set("n_traj", c.n_traj);
  r.summary.set("steps", c.sme.steps());
  r.summary.set("dim", static_cast<long long>(c.qmodel.dim));
  r.summary.set("policy", c.policy);
  r.summary.set("max_trace_defect", max_trace);
  r.summary.set("min_eigenvalue", min_eig);
  r.summary.set("max_impurity", max_impurity);
  r.summary.set("mean_W_T", mean_WT);
  r.summary.set("mean_cost", mean_cost);
  r.result_key = "mean_cost";
  r.result = mean_cost;
}

void run_qubit_hjb(const ScenarioConfig& c, Output& out, RunOutcome& r) {
  const auto grid = maybe_grid(c);
  std::ostringstream csv;
  write_value_grid_csv(csv, *grid, c.slice_stride);
  out.add("value_grid.csv", csv.str());
  r.summary = value_grid_summary(*grid, c.slice_stride);
  r.summary.set("max_admissible_dt", max_admissible_dt(c.qmodel, c.grid));
  const Vec3 r0 = c.rho0 ? bloch_from_density(*c.rho0).r() : Vec3::Zero();
  r.summary.set("r0", io::fmt(r0[0]) + " " + io::fmt(r0[1]) + " " + io::fmt(r0[2]));
  const double S0 = grid->interpolate(0.0, r0);
  r.summary.set("S0", S0);
  r.result_key = "S0";
  r.result = S0;
}

void run_pmp_check(const ScenarioConfig& c, Output& out, RunOutcome& r) {
  const auto grid = maybe_grid(c);
  const CostSpec cost = c.cost();
  const Policy pol = greedy_policy(*grid, c.qmodel, cost, c.u_grid);
  std::ostringstream csv;
  csv << "traj,terminal_residual,terminal_grid_residual,max_backward_residual,"
         "mean_backward_residual,mean_relative_residual\n";
  double rel = 0.0, term = 0.0, term_grid = 0.0, worst = 0.0;
  const double n = static_cast<double>(c.n_traj);
  for (std::size_t j = 0; j < c.n_traj; ++j) {
    const auto res = fbsde_residual(generate_record(c.qmodel, *c.rho0, pol, c.sme, j), *grid, c.qmodel,
                                    cost, c.u_grid);
    csv << j << ',' << io::fmt(res.terminal_residual) << ',' << io::fmt(res.terminal_grid_residual)
        << ',' << io::fmt(res.max_backward_residual) << ',' << io::fmt(res.mean_backward_residual)
        << ',' << io::fmt(res.mean_relative_residual) << '\n';
    rel += res.mean_relative_residual / n;
    term += res.terminal_residual / n;
    term_grid = std::max(term_grid, res.terminal_grid_residual);
    worst = std::max(worst, res.max_backward_residual);
  }
  out.add("fbsde.csv", csv.str());
  const double h = grid->h();
  r.summary.set("n_traj", c.n_traj);
  r.summary.set("grid_h", h);
  r.summary.set("grid_dt", c.grid.dt());
  r.summary.set("sde_dt", c.sme.dt);
  r.summary.set("hamiltonian_sign", to_string(c.grid.convention));
  r.summary.set("mean_relative_residual", rel);
  r.summary.set("mean_terminal_residual", term);
  r.summary.set("terminal_bound_10h2", 10 * h * h);
  r.summary.set("max_terminal_grid_residual", term_grid);
  r.summary.set("max_backward_residual", worst);
  r.result_key = "mean_relative_residual";
  r.result = rel;
}

void run_linear_lqg(const ScenarioConfig& c, Output& out, RunOutcome& r) {
  const auto sol = riccati_backward(c.lmodel, c.lqg);
  std::ostringstream rcsv;
  write_riccati_csv(rcsv, sol);
  out.add("riccati.csv", rcsv.str());
  ClosedLoopOptions o;
  o.noise = c.noise;
  o.seed = c.seed;
  const auto traj = closed_loop_simulate(c.lmodel, c.lqg, sol, o);
  std::ostringstream ccsv;
  const Eigen::Index n = c.lmodel.n(), d = c.lmodel.controls();
  ccsv << "t";
  for (Eigen::Index i = 0; i < n; ++i) ccsv << ",xhat_" << i;
  for (Eigen::Index i = 0; i < d; ++i) ccsv << ",u_" << i;
  ccsv << '\n';
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    ccsv << io::fmt(traj.times[k]);
    for (Eigen::Index i = 0; i < n; ++i) ccsv << ',' << io::fmt(traj.xhat[k][i]);
    for (Eigen::Index i = 0; i < d; ++i) ccsv << ',' << io::fmt(traj.controls[k][i]);
    ccsv << '\n';
  }
  out.add("closed_loop.csv", ccsv.str());
  r.summary = controller_summary(sol, c.lmodel, c.lqg);
  r.summary.set("closed_loop_noise", c.noise);
  r.summary.set("closed_loop_cost", traj.cost);
  const auto pmp = pmp_moment_residual(traj, sol, c.lmodel, c.lqg);
  r.summary.set("pmp_max_step_residual", pmp.max_step_residual);
  r.summary.set("pmp_terminal_residual", pmp.terminal_residual);
  if (sol.steps() >= 4)
    r.summary.set("matching_residual_x0_mid",
                  riccati_matching_residual(sol, c.lmodel, c.lqg, 0.5 * c.lqg.T, c.lqg.x0));
  r.result_key = "K0_0_0";
  r.result = sol.K[0](0, 0);
}

Scenario make_scenario(const ScenarioConfig& c, std::optional<ValueGrid>& grid,
                       std::optional<RiccatiSolution>& sol) {
  if (c.quantum) {
    grid = maybe_grid(c);
    // The grid outlives the scenario: both are owned by the caller.
    return sme_scenario(c.qmodel, *c.rho0, make_policy(c, grid), c.cost(), c.sme);
  }
  sol = riccati_backward(c.lmodel, c.lqg);
  return lqg_scenario(c.lmodel, c.lqg, *sol, c.noise);
}

void set_prediction(const ScenarioConfig& c, const std::optional<RiccatiSolution>& sol, RunOutcome& r,
                    double mean, double se) {
  if (!sol) return;
  const MomentState s0{c.lqg.x0, c.lqg.sigma0.size() ? c.lqg.sigma0 : RealMatrix::Zero(c.lmodel.n(), c.lmodel.n())};
  const double predicted = value_function(0.0, s0, *sol);
  r.summary.set("predicted_cost", predicted);
  r.summary.set("z_score", se > 0 ? (mean - predicted) / se : 0.0);
}

void run_mc_cost(const ScenarioConfig& c, Output& out, RunOutcome& r) {
  std::optional<ValueGrid> grid;
  std::optional<RiccatiSolution> sol;
  const Scenario sc = make_scenario(c, grid, sol);
  const auto rep = ensemble_cost(sc, {c.n_traj, c.seed, c.workers});
  std::ostringstream csv;
  write_costs_csv(csv, rep);
  out.add("costs.csv", csv.str());
  r.summary = to_key_values(rep);
  r.summary.set("scenario", sc.name);
  set_prediction(c, sol, r, rep.mean_cost, rep.stderr_cost);
  r.result_key = "mean_cost";
  r.result = rep.mean_cost;
}

void run_perturb_test(const ScenarioConfig& c, Output& out, RunOutcome& r) {
  std::optional<ValueGrid> grid;
  std::optional<RiccatiSolution> sol;
  const Scenario sc = make_scenario(c, grid, sol);
  PerturbationOptions o;
  o.epsilon = c.epsilon;
  o.n_directions = c.n_directions;
  o.pieces = c.pieces;
  o.ensemble = {c.n_traj, c.seed, c.workers};
  const auto rep = perturbation_test(sc, o);
  std::ostringstream csv;
  write_deltas_csv(csv, rep);
  out.add("deltas.csv", csv.str());
  r.summary = to_key_values(rep);
  r.summary.set("scenario", sc.name);
  r.summary.set("locally_optimal", rep.min_lower_bound(2.0) >= 0.0);
  set_prediction(c, sol, r, rep.baseline.mean_cost, rep.baseline.stderr_cost);
  r.result_key = "min_delta_plus_2se";
  r.result = rep.min_lower_bound(2.0);
}

std::string render_summary(const RunOutcome& r) {
  io::KeyValueDoc doc;
  doc.set("kind", r.kind);
  doc.set("result_key", r.result_key);
  doc.set("result", r.result);
  for (const auto& [k, v] : r.summary.entries()) doc.set(k, v);
  return doc.render();
}

}  // namespace

RunOutcome run_scenario(const ScenarioConfig& c) {
  if (!c.violations.empty()) throw ConfigError(c.violations.front());
  RunOutcome r;
  r.kind = to_string(c.kind);
  r.output_dir = c.output_dir;
  Output out;
  switch (c.kind) {
    case ScenarioKind::QubitFilter: run_qubit_filter(c, out, r); break;
    case ScenarioKind::QubitHjb: run_qubit_hjb(c, out, r); break;
    case ScenarioKind::PmpCheck: run_pmp_check(c, out, r); break;
    case ScenarioKind::LinearLqg: run_linear_lqg(c, out, r); break;
    case ScenarioKind::McCost: run_mc_cost(c, out, r); break;
    case ScenarioKind::PerturbTest: run_perturb_test(c, out, r); break;
  }
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + c.output_dir.string() + ": " + ec.message());
  out.add("manifest.json", render_config(c.resolved));
  out.add("summary.txt", render_summary(r));
  for (const auto& [name, content] : out.files) {
    io::write_file(c.output_dir / name, content);
    r.files.push_back(name);
  }
  return r;
}

RunOutcome load_report(const fs::path& dir) {
  const std::string manifest = io::read_file(dir / "manifest.json");
  nlohmann::ordered_json m;
  try {
    m = nlohmann::ordered_json::parse(manifest);
  } catch (const nlohmann::ordered_json::parse_error& e) {
    throw ConfigError(std::string("manifest.json: invalid JSON: ") + e.what());
  }
  const auto doc = io::KeyValueDoc::parse(io::read_file(dir / "summary.txt"));
  RunOutcome r;
  r.output_dir = dir;
  for (const char* k : {"kind", "result_key", "result"})
    if (!doc.get(k)) throw ConfigError(std::string("summary.txt: missing key ") + k);
  r.kind = *doc.get("kind");
  if (!m.contains("kind") || m["kind"] != r.kind)
    throw ConfigError("manifest.json and summary.txt disagree on the scenario kind");
  r.result_key = *doc.get("result_key");
  r.result = std::stod(*doc.get("result"));
  for (const auto& [k, v] : doc.entries())
    if (k != "kind" && k != "result_key" && k != "result") r.summary.set(k, v);
  return r;
}

std::string summary_line(const RunOutcome& r, double wall_seconds) {
  char wall[32];
  std::snprintf(wall, sizeof wall, "%.3f", wall_seconds);
  char value[32];
  std::snprintf(value, sizeof value, "%.6g", r.result);
  return r.kind + " " + r.result_key + "=" + value + " wall=" + wall + "s";
}

}  // namespace qpmp
