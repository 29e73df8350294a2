#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qpmp/belavkin.hpp"
#include "qpmp/hjb.hpp"
#include "qpmp/lqg.hpp"
#include "qpmp/moments.hpp"

namespace qpmp {

enum class ScenarioKind { QubitFilter, QubitHjb, PmpCheck, LinearLqg, McCost, PerturbTest };

const char* to_string(ScenarioKind k);
std::optional<ScenarioKind> scenario_kind_from_string(const std::string& s);

/// A parsed scenario with every default filled in. `resolved` echoes the
/// complete configuration in canonical form (matrices written out
/// numerically) and is itself a valid config.
struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::QubitFilter;
  std::uint64_t seed = 0;
  bool quantum = true;

  QuantumModel qmodel;
  std::optional<DensityMatrix> rho0;
  ComplexMatrix running_cost;
  double control_penalty = 0.0;
  ComplexMatrix terminal_cost;
  SmeConfig sme;
  HjbGridSpec grid;
  std::vector<RealVector> u_grid;
  /// "constant" or "greedy".
  std::string policy = "constant";
  RealVector control;
  std::size_t slice_stride = 1;

  LinearModel lmodel;
  LqgSpec lqg;
  RealMatrix Q, R;
  bool noise = true;

  std::size_t n_traj = 1;
  std::size_t workers = 1;
  double epsilon = 0.1;
  std::size_t n_directions = 20;
  std::size_t pieces = 8;

  std::filesystem::path output_dir;
  nlohmann::ordered_json resolved;
  /// Every violated invariant, each naming its field.
  std::vector<std::string> violations;

  CostSpec cost() const { return CostSpec::quadratic(running_cost, control_penalty, terminal_cost); }
};

/// Parses and checks without executing anything. Never throws on bad
/// content; problems are collected in `violations`.
ScenarioConfig resolve_config(const nlohmann::ordered_json& doc,
                              const std::filesystem::path& default_output_dir);

/// Reads a JSON config file. Throws IoError if unreadable; syntax errors
/// become a violation.
ScenarioConfig load_config(const std::filesystem::path& path);

/// Matrix blocks: list of rows whose entries are numbers or [re, im] pairs,
/// or {"op": name, "dim": n, "scale": s, "k": i} for named operators.
ComplexMatrix parse_matrix(const nlohmann::ordered_json& v, const std::string& field);
nlohmann::ordered_json matrix_to_json(const ComplexMatrix& m);
nlohmann::ordered_json matrix_to_json(const RealMatrix& m);

/// Indented JSON with arrays that hold no objects kept on one line.
std::string render_config(const nlohmann::ordered_json& doc);

}  // namespace qpmp
