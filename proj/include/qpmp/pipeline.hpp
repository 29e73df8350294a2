#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "qpmp/config.hpp"
#include "qpmp/io.hpp"

namespace qpmp {

struct RunOutcome {
  std::string kind;
  std::string result_key;
  double result = 0.0;
  std::filesystem::path output_dir;
  io::KeyValueDoc summary;
  std::vector<std::string> files;
};

/// Executes a validated scenario and writes manifest.json, summary.txt and
/// the kind's data files into c.output_dir. Throws ConfigError if c has
/// violations, NumericalError on numerical failure and IoError on I/O failure.
RunOutcome run_scenario(const ScenarioConfig& c);

/// Re-reads summary.txt (and checks manifest.json) from a previous run.
RunOutcome load_report(const std::filesystem::path& dir);

/// `<kind> <result_key>=<result> wall=<seconds>s`.
std::string summary_line(const RunOutcome& r, double wall_seconds);

}  // namespace qpmp
