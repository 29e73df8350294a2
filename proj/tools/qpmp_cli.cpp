// qpmp: validate, run and report measurement-feedback control scenarios.
#include <chrono>
#include <iostream>

#include "CLI11.hpp"
#include "qpmp/errors.hpp"
#include "qpmp/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kNumerical = 3;
constexpr int kIo = 4;

int validate(const std::string& path) {
  const auto c = qpmp::load_config(path);
  if (c.violations.empty()) {
    std::cout << path << ": ok (" << qpmp::to_string(c.kind) << ")\n";
    return kOk;
  }
  std::cerr << path << ": " << c.violations.size() << " violation(s)\n";
  for (const auto& v : c.violations) std::cerr << "  " << v << '\n';
  return kConfig;
}

int run(const std::string& path, const std::string& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = qpmp::load_config(path);
  if (!c.violations.empty()) {
    for (const auto& v : c.violations) std::cerr << "config error: " << v << '\n';
    return kConfig;
  }
  if (!out_dir.empty()) {
    c.output_dir = out_dir;
    c.resolved["output"]["dir"] = out_dir;
  }
  const auto r = qpmp::run_scenario(c);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << qpmp::summary_line(r, wall) << '\n';
  return kOk;
}

int report(const std::string& dir) {
  const auto r = qpmp::load_report(dir);
  std::cout << r.kind << ' ' << r.result_key << '=' << qpmp::io::fmt(r.result) << '\n';
  std::cout << r.summary.render();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measurement-based quantum feedback control: filters, value grids, LQG synthesis."};
  app.require_subcommand(1);
  std::string file, out_dir, dir;
  auto* v = app.add_subcommand("validate", "Check a scenario config without running it");
  v->add_option("file", file, "Scenario config (JSON)")->required();
  auto* r = app.add_subcommand("run", "Run a scenario and write its outputs");
  r->add_option("file", file, "Scenario config (JSON)")->required();
  r->add_option("--out", out_dir, "Override output.dir");
  auto* p = app.add_subcommand("report", "Re-render the summary of a previous run");
  p->add_option("dir", dir, "Output directory of a run")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  try {
    if (v->parsed()) return validate(file);
    if (r->parsed()) return run(file, out_dir);
    return report(dir);
  } catch (const qpmp::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const qpmp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const qpmp::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const qpmp::InputError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  }
}
