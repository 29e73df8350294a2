#include "qpmp/config.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "qpmp/errors.hpp"
#include "qpmp/io.hpp"

namespace qpmp {

using json = nlohmann::ordered_json;

namespace {

constexpr double kMaxCondition = 1e12;
constexpr std::size_t kMaxGridPoints = 100000;

std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// Entry: number or [re, im].
Complex parse_entry(const json& v, const std::string& field) {
  if (v.is_number()) return {v.get<double>(), 0.0};
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number())
    return {v[0].get<double>(), v[1].get<double>()};
  throw ConfigError(field + ": entries must be numbers or [re, im] pairs");
}

json entry_to_json(Complex z) {
  if (z.imag() == 0.0) return z.real();
  return json::array({z.real(), z.imag()});
}

ComplexMatrix named_operator(const json& v, const std::string& field) {
  static const std::set<std::string> keys{"op", "dim", "scale", "k"};
  for (const auto& [k, _] : v.items())
    if (!keys.count(k)) throw ConfigError(field + "." + k + ": unknown key");
  if (!v.contains("op") || !v["op"].is_string()) throw ConfigError(field + ".op: required string");
  const std::string op = v["op"].get<std::string>();
  Eigen::Index dim = 2;
  if (v.contains("dim")) {
    if (!v["dim"].is_number_integer() || v["dim"].get<long long>() < 1 ||
        v["dim"].get<long long>() > static_cast<long long>(kDefaultMaxDim))
      throw ConfigError(field + ".dim: must be an integer in [1, " +
                        std::to_string(kDefaultMaxDim) + "]");
    dim = v["dim"].get<Eigen::Index>();
  }
  const Complex scale = v.contains("scale") ? parse_entry(v["scale"], field + ".scale") : Complex(1.0);
  auto pauli = [&](ComplexMatrix m) {
    if (dim != 2) throw ConfigError(field + ": " + op + " requires dim 2");
    return m;
  };
  ComplexMatrix m;
  if (op == "sigma_x") m = pauli(ops::sigma_x());
  else if (op == "sigma_y") m = pauli(ops::sigma_y());
  else if (op == "sigma_z") m = pauli(ops::sigma_z());
  else if (op == "sigma_minus") m = pauli(ops::annihilation(2));
  else if (op == "sigma_plus") m = pauli(ops::creation(2));
  else if (op == "identity") m = ops::identity(dim);
  else if (op == "zero") m = ComplexMatrix::Zero(dim, dim);
  else if (op == "annihilation") m = ops::annihilation(dim);
  else if (op == "creation") m = ops::creation(dim);
  else if (op == "number") m = ops::creation(dim) * ops::annihilation(dim);
  else if (op == "position") m = ops::position(dim);
  else if (op == "momentum") m = ops::momentum(dim);
  else if (op == "projector") {
    if (!v.contains("k") || !v["k"].is_number_integer() || v["k"].get<long long>() < 0 ||
        v["k"].get<long long>() >= dim)
      throw ConfigError(field + ".k: projector needs an integer k in [0, dim)");
    m = ops::projector(dim, v["k"].get<Eigen::Index>());
  } else {
    throw ConfigError(field + ".op: unknown operator '" + op + "'");
  }
  if (v.contains("k") && op != "projector") throw ConfigError(field + ".k: only valid for projector");
  return scale * m;
}

Eigen::VectorXcd parse_cvector(const json& v, const std::string& field, bool allow_empty = false) {
  if (v.is_number()) return Eigen::VectorXcd::Constant(1, Complex(v.get<double>(), 0.0));
  if (v.is_object()) {
    static const std::set<std::string> keys{"coherent", "basis", "dim"};
    for (const auto& [k, _] : v.items())
      if (!keys.count(k)) throw ConfigError(field + "." + k + ": unknown key");
    if (!v.contains("dim") || !v["dim"].is_number_integer() || v["dim"].get<long long>() < 1 ||
        v["dim"].get<long long>() > static_cast<long long>(kDefaultMaxDim))
      throw ConfigError(field + ".dim: required integer in [1, " + std::to_string(kDefaultMaxDim) + "]");
    const auto dim = v["dim"].get<Eigen::Index>();
    if (v.contains("coherent") == v.contains("basis"))
      throw ConfigError(field + ": give exactly one of coherent, basis");
    if (v.contains("coherent")) return ops::coherent_state(dim, parse_entry(v["coherent"], field + ".coherent"));
    if (!v["basis"].is_number_integer() || v["basis"].get<long long>() < 0 ||
        v["basis"].get<long long>() >= dim)
      throw ConfigError(field + ".basis: must be an integer in [0, dim)");
    Eigen::VectorXcd e = Eigen::VectorXcd::Zero(dim);
    e[v["basis"].get<Eigen::Index>()] = 1.0;
    return e;
  }
  if (!v.is_array() || (v.empty() && !allow_empty)) throw ConfigError(field + ": expected a non-empty list");
  Eigen::VectorXcd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = parse_entry(v[i], field + "[" + std::to_string(i) + "]");
  return out;
}

RealVector real_part_checked(const Eigen::VectorXcd& z, const std::string& field) {
  if (z.size() && z.imag().cwiseAbs().maxCoeff() != 0.0) throw ConfigError(field + ": must be real");
  return z.real();
}

RealMatrix real_part_checked(const ComplexMatrix& z, const std::string& field) {
  if (z.size() && z.imag().cwiseAbs().maxCoeff() != 0.0) throw ConfigError(field + ": must be real");
  return z.real();
}

json vector_to_json(const RealVector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json vector_to_json(const Eigen::VectorXcd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(entry_to_json(v[i]));
  return a;
}

/// View of one config object. Getters record the resolved value in `out`
/// and report problems into the shared violation list.
class Block {
 public:
  Block(const json* src, std::string prefix, std::vector<std::string>& errs)
      : src_(src), prefix_(std::move(prefix)), errs_(errs) {
    if (src_ && !src_->is_object()) {
      error("", "must be an object");
      src_ = nullptr;
    }
  }

  json out = json::object();

  std::string path(const std::string& k) const {
    if (k.empty()) return prefix_;
    return prefix_.empty() ? k : prefix_ + "." + k;
  }
  void error(const std::string& k, const std::string& msg) { errs_.push_back(path(k) + ": " + msg); }
  bool present() const { return src_ != nullptr; }
  bool has(const std::string& k) const { return src_ && src_->contains(k); }

  const json* raw(const std::string& k) {
    seen_.insert(k);
    if (!src_) return nullptr;
    auto it = src_->find(k);
    return it == src_->end() ? nullptr : &*it;
  }

  /// Rejects any key the resolver did not read.
  void reject(const std::string& k, const std::string& why) {
    seen_.insert(k);
    if (has(k)) error(k, why);
  }

  Block sub(const std::string& k, bool required) {
    const json* v = raw(k);
    if (!v && required) error(k, "required block is missing");
    return Block(v, path(k), errs_);
  }

  void attach(const std::string& k, Block& b) {
    b.finish();
    out[k] = b.out;
  }

  void finish() {
    if (!src_) return;
    for (const auto& [k, _] : src_->items())
      if (!seen_.count(k)) error(k, "unknown key");
  }

  double real(const std::string& k, std::optional<double> def, double lo = -INFINITY,
              bool strict = false) {
    const json* v = raw(k);
    double x = def.value_or(0.0);
    if (!v) {
      if (!def) error(k, "required");
    } else if (!v->is_number()) {
      error(k, "expected a number");
    } else {
      x = v->get<double>();
      if (!std::isfinite(x) || x < lo || (strict && x == lo)) {
        error(k, std::string("must be ") + (strict ? "> " : ">= ") + num(lo));
        x = def.value_or(x);
      }
    }
    out[k] = x;
    return x;
  }

  long long integer(const std::string& k, long long def, long long lo, long long hi) {
    const json* v = raw(k);
    long long x = def;
    if (v) {
      if (!v->is_number_integer()) {
        error(k, "expected an integer");
      } else if (v->is_number_unsigned() && v->get<unsigned long long>() >
                                                static_cast<unsigned long long>(hi)) {
        error(k, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      } else if (v->get<long long>() < lo || v->get<long long>() > hi) {
        error(k, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      } else {
        x = v->get<long long>();
      }
    }
    out[k] = x;
    return x;
  }

  std::uint64_t seed(const std::string& k) {
    const json* v = raw(k);
    std::uint64_t x = 0;
    if (v) {
      if (v->is_number_unsigned()) x = v->get<std::uint64_t>();
      else error(k, "must be a non-negative integer");
    }
    out[k] = x;
    return x;
  }

  bool boolean(const std::string& k, bool def) {
    const json* v = raw(k);
    bool x = def;
    if (v) {
      if (v->is_boolean()) x = v->get<bool>();
      else error(k, "expected true or false");
    }
    out[k] = x;
    return x;
  }

  std::string choice(const std::string& k, std::optional<std::string> def,
                     const std::vector<std::string>& allowed) {
    const json* v = raw(k);
    std::string x = def.value_or("");
    auto list = [&] {
      std::string s;
      for (const auto& a : allowed) s += (s.empty() ? "" : ", ") + a;
      return s;
    };
    if (!v) {
      if (!def) error(k, "required, one of " + list());
    } else if (!v->is_string() ||
               std::find(allowed.begin(), allowed.end(), v->get<std::string>()) == allowed.end()) {
      error(k, "must be one of " + list());
    } else {
      x = v->get<std::string>();
    }
    if (!x.empty()) out[k] = x;
    return x;
  }

  std::string text(const std::string& k, const std::string& def) {
    const json* v = raw(k);
    std::string x = def;
    if (v) {
      if (v->is_string() && !v->get<std::string>().empty()) x = v->get<std::string>();
      else error(k, "expected a non-empty string");
    }
    out[k] = x;
    return x;
  }

  std::optional<ComplexMatrix> cmatrix(const std::string& k, std::optional<ComplexMatrix> def) {
    const json* v = raw(k);
    std::optional<ComplexMatrix> m = def;
    if (!v) {
      if (!def) error(k, "required");
    } else {
      try {
        m = parse_matrix(*v, path(k));
      } catch (const ConfigError& e) {
        errs_.push_back(e.what());
        m.reset();
      }
    }
    if (m) out[k] = matrix_to_json(*m);
    return m;
  }

  std::optional<RealMatrix> rmatrix(const std::string& k, std::optional<RealMatrix> def) {
    const json* v = raw(k);
    std::optional<RealMatrix> m = def;
    if (!v) {
      if (!def) error(k, "required");
    } else {
      try {
        m = real_part_checked(parse_matrix(*v, path(k)), path(k));
      } catch (const ConfigError& e) {
        errs_.push_back(e.what());
        m.reset();
      }
    }
    if (m) out[k] = matrix_to_json(*m);
    return m;
  }

  std::vector<ComplexMatrix> cmatrix_list(const std::string& k) {
    const json* v = raw(k);
    std::vector<ComplexMatrix> ms;
    json a = json::array();
    if (v) {
      if (!v->is_array()) {
        error(k, "expected a list of matrices");
      } else {
        for (std::size_t i = 0; i < v->size(); ++i) {
          try {
            ms.push_back(parse_matrix((*v)[i], path(k) + "[" + std::to_string(i) + "]"));
            a.push_back(matrix_to_json(ms.back()));
          } catch (const ConfigError& e) {
            errs_.push_back(e.what());
          }
        }
      }
    }
    out[k] = a;
    return ms;
  }

  std::optional<RealVector> rvector(const std::string& k, std::optional<RealVector> def,
                                    bool allow_empty = false) {
    const json* v = raw(k);
    std::optional<RealVector> x = def;
    if (!v) {
      if (!def) error(k, "required");
    } else {
      try {
        x = real_part_checked(parse_cvector(*v, path(k), allow_empty), path(k));
      } catch (const ConfigError& e) {
        errs_.push_back(e.what());
        x.reset();
      }
    }
    if (x) out[k] = vector_to_json(*x);
    return x;
  }

  std::optional<Eigen::VectorXcd> cvector(const std::string& k) {
    const json* v = raw(k);
    if (!v) return std::nullopt;
    try {
      Eigen::VectorXcd x = parse_cvector(*v, path(k));
      out[k] = vector_to_json(x);
      return x;
    } catch (const ConfigError& e) {
      errs_.push_back(e.what());
      return std::nullopt;
    }
  }

 private:
  const json* src_;
  std::string prefix_;
  std::vector<std::string>& errs_;
  std::set<std::string> seen_;
};

void add_prefixed(std::vector<std::string>& errs, const std::vector<std::string>& v,
                  const std::string& prefix) {
  for (const auto& s : v)
    errs.push_back(s.rfind(prefix, 0) == 0 ? s : prefix + ": " + s);
}

bool uses_sme(ScenarioKind k) {
  return k == ScenarioKind::QubitFilter || k == ScenarioKind::PmpCheck ||
         k == ScenarioKind::McCost || k == ScenarioKind::PerturbTest;
}

bool is_ensemble(ScenarioKind k) { return k == ScenarioKind::McCost || k == ScenarioKind::PerturbTest; }

std::vector<RealVector> tensor_grid(Block& g, Eigen::Index d) {
  // Scalars apply to every component.
  auto per_component = [&](const std::string& key, double def) -> std::optional<RealVector> {
    const json* v = g.raw(key);
    RealVector x = RealVector::Constant(d, def);
    if (v) {
      if (v->is_number()) {
        x.setConstant(v->get<double>());
      } else if (v->is_array() && static_cast<Eigen::Index>(v->size()) == d &&
                 std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_number(); })) {
        for (Eigen::Index i = 0; i < d; ++i) x[i] = (*v)[static_cast<std::size_t>(i)].get<double>();
      } else {
        g.error(key, "expected a number or a list of " + std::to_string(d) + " numbers");
        return std::nullopt;
      }
    }
    g.out[key] = vector_to_json(x);
    return x;
  };
  const auto lo = per_component("min", -2.0);
  const auto hi = per_component("max", 2.0);
  const auto pts = per_component("points", 11.0);
  if (!lo || !hi || !pts) return {};
  std::size_t total = 1;
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!((*lo)[i] <= (*hi)[i])) {
      g.error("min", "must not exceed max");
      return {};
    }
    const double p = (*pts)[i];
    if (p < 1 || p != std::floor(p) || p > 10000) {
      g.error("points", "must be integers in [1, 10000]");
      return {};
    }
    if (p == 1 && (*lo)[i] != (*hi)[i]) {
      g.error("points", "a single point needs min = max");
      return {};
    }
    total *= static_cast<std::size_t>(p);
    if (total > kMaxGridPoints) {
      g.error("points", "grid exceeds " + std::to_string(kMaxGridPoints) + " points");
      return {};
    }
  }
  json counts = json::array();
  for (Eigen::Index i = 0; i < d; ++i) counts.push_back(static_cast<long long>((*pts)[i]));
  g.out["points"] = counts;
  std::vector<RealVector> grid;
  std::vector<long> idx(static_cast<std::size_t>(d), 0);
  for (std::size_t c = 0; c < total; ++c) {
    RealVector u(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const long p = static_cast<long>((*pts)[i]);
      const long j = idx[static_cast<std::size_t>(i)];
      u[i] = p == 1 ? (*lo)[i] : (*lo)[i] + ((*hi)[i] - (*lo)[i]) * static_cast<double>(j) / (p - 1);
    }
    grid.push_back(u);
    for (Eigen::Index i = d - 1; i >= 0; --i) {
      auto& j = idx[static_cast<std::size_t>(i)];
      if (++j < static_cast<long>((*pts)[i])) break;
      j = 0;
    }
  }
  return grid;
}

void resolve_quantum(ScenarioConfig& c, Block& top) {
  auto& errs = c.violations;
  const ScenarioKind kind = c.kind;
  Block model = top.sub("model", true);
  model.choice("type", "quantum", {"quantum", "linear"});
  const auto H0 = model.cmatrix("H0", std::nullopt);
  c.qmodel.Hc = model.cmatrix_list("Hc");
  const auto L = model.cmatrix("L", std::nullopt);
  c.qmodel.L_extra = model.cmatrix_list("L_extra");
  c.qmodel.hbar = model.real("hbar", 1.0, 0.0, true);
  top.attach("model", model);
  if (!H0 || !L) return;
  c.qmodel.H0 = *H0;
  c.qmodel.L = *L;
  c.qmodel.dim = H0->rows();
  const Eigen::Index dim = c.qmodel.dim;
  const auto d = static_cast<Eigen::Index>(c.qmodel.Hc.size());
  const auto model_errs = c.qmodel.violations();
  for (const auto& s : model_errs) errs.push_back(s.rfind("model", 0) == 0 ? s : "model." + s);
  const bool model_ok = model_errs.empty() && H0->rows() == H0->cols();

  Block cost = top.sub("cost", false);
  const ComplexMatrix zero = ComplexMatrix::Zero(dim, dim);
  c.running_cost = cost.cmatrix("running", zero).value_or(zero);
  c.control_penalty = cost.real("control_penalty", 0.0, 0.0);
  c.terminal_cost = cost.cmatrix("terminal", zero).value_or(zero);
  top.attach("cost", cost);
  bool cost_ok = true;
  for (const auto* m : {&c.running_cost, &c.terminal_cost}) {
    if (m->rows() != dim || m->cols() != dim) {
      errs.push_back(std::string("cost.") + (m == &c.running_cost ? "running" : "terminal") +
                     ": must be " + std::to_string(dim) + "x" + std::to_string(dim));
      cost_ok = false;
    }
  }

  const bool needs_state = kind != ScenarioKind::QubitHjb;
  Block init = top.sub("initial_state", needs_state);
  {
    const int given = init.has("bloch") + init.has("psi") + init.has("rho");
    if (init.present() && given != 1) init.error("", "give exactly one of bloch, psi, rho");
    std::optional<ComplexMatrix> rho;
    if (init.has("bloch")) {
      const auto r = init.rvector("bloch", std::nullopt);
      if (r && r->size() != 3) init.error("bloch", "expected 3 components");
      else if (r && r->norm() > 1.0 + 1e-9) init.error("bloch", "must satisfy |r| <= 1");
      else if (r) rho = bloch_matrix(Vec3((*r)[0], (*r)[1], (*r)[2]));
    } else if (init.has("psi")) {
      const auto psi = init.cvector("psi");
      if (psi && psi->norm() == 0.0) init.error("psi", "must be nonzero");
      else if (psi) rho = DensityMatrix::pure(*psi).mat();
    } else if (init.has("rho")) {
      rho = init.cmatrix("rho", std::nullopt);
    }
    init.raw("bloch");
    init.raw("psi");
    init.raw("rho");
    if (rho) {
      if (rho->rows() != dim || rho->cols() != dim) {
        init.error("", "state dimension " + std::to_string(rho->rows()) + " does not match model dim " +
                           std::to_string(dim));
      } else {
        const auto v = DensityMatrix::violations(*rho);
        add_prefixed(errs, v, "initial_state");
        if (v.empty()) c.rho0 = DensityMatrix(*rho);
      }
    }
  }
  if (init.present()) top.attach("initial_state", init);

  Block nm = top.sub("numerics", false);
  const bool hjb_kind = kind == ScenarioKind::QubitHjb || kind == ScenarioKind::PmpCheck;
  const bool has_policy = kind == ScenarioKind::QubitFilter || is_ensemble(kind);
  if (has_policy) c.policy = nm.choice("policy", "constant", {"constant", "greedy"});
  else c.policy = "greedy";
  const bool uses_grid = hjb_kind || c.policy == "greedy";
  if (has_policy && c.policy == "constant") {
    c.control = nm.rvector("control", RealVector::Zero(d), true).value_or(RealVector::Zero(d));
    if (c.control.size() != d) {
      nm.error("control", "expected " + std::to_string(d) + " components (one per Hc)");
      c.control = RealVector::Zero(d);
    }
  } else {
    nm.reject("control", "only valid with policy = constant");
  }

  const double T = nm.real("T", hjb_kind ? 0.15 : 1.0, 0.0, true);
  if (uses_grid) {
    c.grid.T = T;
    c.grid.n_axis = static_cast<int>(nm.integer("n_axis", 21, 3, 201));
    c.grid.time_steps = static_cast<std::size_t>(nm.integer("time_steps", 200, 1, 10000000));
    c.grid.convention = hamiltonian_sign_from_string(
        nm.choice("hamiltonian_sign", "standard", {"standard", "flipped"}));
    c.grid.boundary = boundary_stencil_from_string(
        nm.choice("boundary_stencil", "filled", {"filled", "one_sided"}));
    Block g = nm.sub("u_grid", false);
    c.u_grid = tensor_grid(g, d);
    nm.attach("u_grid", g);
    if (dim != 2) errs.push_back("model: the value-grid pipeline needs a qubit (dim 2), got dim " + std::to_string(dim));
    if (model_ok && dim == 2) {
      const double dt_max = max_admissible_dt(c.qmodel, c.grid);
      if (c.grid.dt() > dt_max) {
        const auto need = static_cast<long long>(std::ceil(T / dt_max));
        errs.push_back("numerics.time_steps: HJB step dt = " + num(c.grid.dt()) +
                       " fails the stability guard dt <= h^2/(6 max|s|^2 + eps); requires dt <= " +
                       num(dt_max) + " (time_steps >= " + std::to_string(need) + ")");
      }
    }
  } else {
    for (const char* k : {"n_axis", "time_steps", "hamiltonian_sign", "boundary_stencil", "u_grid"})
      nm.reject(k, "only valid when a value grid is solved");
  }
  if (kind == ScenarioKind::QubitHjb) {
    const auto def = static_cast<long long>(std::max<std::size_t>(1, c.grid.time_steps / 8));
    c.slice_stride = static_cast<std::size_t>(nm.integer("slice_stride", def, 1, 10000000));
  } else {
    nm.reject("slice_stride", "only valid for qubit_hjb");
  }

  if (uses_sme(kind)) {
    const double dt_def = uses_grid ? T / static_cast<double>(c.grid.time_steps) : 1e-3;
    c.sme.T = T;
    c.sme.dt = nm.real("dt", dt_def, 0.0, true);
    c.sme.scheme = nm.choice("scheme", "milstein", {"milstein", "euler_maruyama"}) == "euler_maruyama"
                       ? SmeScheme::EulerMaruyama
                       : SmeScheme::Milstein;
    c.sme.normalize_each_step = nm.boolean("normalize_each_step", true);
    c.sme.noise_substeps = static_cast<std::size_t>(nm.integer("noise_substeps", 1, 1, 1024));
    c.sme.seed = c.seed;
    add_prefixed(errs, c.sme.violations(), "numerics");
    const long long traj_def = is_ensemble(kind) ? 100 : kind == ScenarioKind::PmpCheck ? 10 : 1;
    c.n_traj = static_cast<std::size_t>(nm.integer("n_traj", traj_def, is_ensemble(kind) ? 2 : 1, 100000000));
  } else {
    for (const char* k : {"dt", "scheme", "normalize_each_step", "noise_substeps", "n_traj"})
      nm.reject(k, "only valid when filter trajectories are simulated");
  }
  for (const char* k : {"include_diffusion", "noise"}) nm.reject(k, "only valid for linear models");

  if (is_ensemble(kind)) c.workers = static_cast<std::size_t>(nm.integer("workers", 1, 0, 1024));
  else nm.reject("workers", "only valid for mc_cost and perturb_test");
  if (kind == ScenarioKind::PerturbTest) {
    c.epsilon = nm.real("epsilon", 0.1, 0.0);
    c.n_directions = static_cast<std::size_t>(nm.integer("n_directions", 20, 1, 100000));
    c.pieces = static_cast<std::size_t>(nm.integer("pieces", 8, 1, 100000));
    if (d == 0) errs.push_back("model.Hc: perturb_test needs at least one control");
  } else {
    for (const char* k : {"epsilon", "n_directions", "pieces"}) nm.reject(k, "only valid for perturb_test");
  }
  top.attach("numerics", nm);

  if (model_ok && cost_ok) {
    const std::vector<double> times{0.0, T};
    const std::vector<RealVector> controls{RealVector::Zero(d)};
    add_prefixed(errs, c.cost().violations(dim, times, controls), "cost");
  }
}

double condition_number(const RealMatrix& R) {
  const Eigen::VectorXd ev =
      Eigen::SelfAdjointEigenSolver<RealMatrix>(0.5 * (R + R.transpose()), Eigen::EigenvaluesOnly).eigenvalues();
  if (!(ev.minCoeff() > 0)) return INFINITY;
  return ev.cwiseAbs().maxCoeff() / ev.minCoeff();
}

void resolve_linear(ScenarioConfig& c, Block& top) {
  auto& errs = c.violations;
  const ScenarioKind kind = c.kind;
  Block model = top.sub("model", true);
  model.choice("type", "linear", {"quantum", "linear"});
  LinearModel& lm = c.lmodel;
  bool shapes_ok = true;
  if (model.has("construction")) {
    for (const char* k : {"A", "B", "C", "D", "G"}) model.reject(k, "not allowed together with construction");
    Block cb = model.sub("construction", true);
    QuadraticConstruction qc;
    const auto Rp = cb.rmatrix("R_param", std::nullopt);
    const auto Kh = cb.cmatrix("K_ham", std::nullopt);
    const auto Ga = cb.cmatrix("Gamma", std::nullopt);
    qc.hbar = cb.real("hbar", 1.0, 0.0, true);
    model.attach("construction", cb);
    if (Rp && Kh && Ga) {
      qc.R_param = *Rp;
      qc.K_ham = *Kh;
      qc.Gamma = *Ga;
      const auto v = qc.violations();
      for (const auto& s : v) errs.push_back("model.construction: violates " + s);
      if (v.empty()) {
        try {
          lm = LinearModel::from_construction(qc);
        } catch (const InputError& e) {
          errs.push_back(std::string("model.construction: ") + e.what());
          shapes_ok = false;
        }
      } else {
        shapes_ok = false;
      }
    } else {
      shapes_ok = false;
    }
    if (shapes_ok) {
      if (auto F = model.rmatrix("F", lm.F)) lm.F = *F;
      if (auto M = model.rmatrix("M", lm.M_cov)) lm.M_cov = *M;
    } else {
      model.raw("F");
      model.raw("M");
    }
  } else {
    const auto A = model.rmatrix("A", std::nullopt);
    const auto B = model.rmatrix("B", std::nullopt);
    if (!A || !B) {
      shapes_ok = false;
    } else {
      lm.A = *A;
      lm.B = *B;
      const Eigen::Index n = A->rows();
      lm.C = model.rmatrix("C", RealMatrix::Zero(1, n)).value_or(RealMatrix::Zero(1, n));
      const Eigen::Index q = lm.C.rows();
      lm.D = model.rmatrix("D", RealMatrix::Zero(q, B->cols())).value_or(RealMatrix::Zero(q, B->cols()));
      lm.G = model.rmatrix("G", RealMatrix::Identity(q, q)).value_or(RealMatrix::Identity(q, q));
      lm.M_cov = model.rmatrix("M", RealMatrix::Zero(n, q)).value_or(RealMatrix::Zero(n, q));
      lm.F = model.rmatrix("F", RealMatrix::Zero(n, 0)).value_or(RealMatrix::Zero(n, 0));
    }
  }
  for (const char* k : {"H0", "Hc", "L", "L_extra", "hbar"}) model.reject(k, "only valid for quantum models");

  Block nm = top.sub("numerics", false);
  lm.include_diffusion = nm.boolean("include_diffusion", false);
  if (shapes_ok) {
    const auto v = lm.violations();
    for (const auto& s : v) errs.push_back("model: " + s);
    shapes_ok = v.empty();
  }
  top.attach("model", model);
  const Eigen::Index n = shapes_ok ? lm.n() : 0, d = shapes_ok ? lm.controls() : 0;

  Block cost = top.sub("cost", true);
  const auto Q = cost.rmatrix("Q", std::nullopt);
  const auto R = cost.rmatrix("R", std::nullopt);
  const auto Fterm = cost.rmatrix("F", RealMatrix::Zero(n, n));
  top.attach("cost", cost);

  Block init = top.sub("initial_state", true);
  const auto x0 = init.rvector("x0", std::nullopt);
  const auto s0 = init.rmatrix("sigma0", RealMatrix::Zero(n, n));
  top.attach("initial_state", init);

  const double T = nm.real("T", 1.0, 0.0, true);
  const double dt = nm.real("dt", 1e-3, 0.0, true);
  c.noise = nm.boolean("noise", true);
  if (is_ensemble(kind)) {
    c.n_traj = static_cast<std::size_t>(nm.integer("n_traj", 100, 2, 100000000));
    c.workers = static_cast<std::size_t>(nm.integer("workers", 1, 0, 1024));
  } else {
    for (const char* k : {"n_traj", "workers"}) nm.reject(k, "only valid for mc_cost and perturb_test");
  }
  if (kind == ScenarioKind::PerturbTest) {
    c.epsilon = nm.real("epsilon", 0.1, 0.0);
    c.n_directions = static_cast<std::size_t>(nm.integer("n_directions", 20, 1, 100000));
    c.pieces = static_cast<std::size_t>(nm.integer("pieces", 8, 1, 100000));
  } else {
    for (const char* k : {"epsilon", "n_directions", "pieces"}) nm.reject(k, "only valid for perturb_test");
  }
  for (const char* k : {"scheme", "normalize_each_step", "noise_substeps", "n_axis", "time_steps",
                        "hamiltonian_sign", "boundary_stencil", "u_grid", "slice_stride", "policy",
                        "control"})
    nm.reject(k, "only valid for quantum models");
  top.attach("numerics", nm);

  if (!shapes_ok || !Q || !R || !Fterm || !x0 || !s0) return;
  c.Q = *Q;
  c.R = *R;
  c.lqg = LqgSpec::constant(*Q, *R, *Fterm, T, dt);
  c.lqg.x0 = *x0;
  c.lqg.sigma0 = *s0;
  if (Q->rows() != n || Q->cols() != n) {
    errs.push_back("cost.Q: must be " + std::to_string(n) + "x" + std::to_string(n));
    return;
  }
  if (R->rows() != d || R->cols() != d) {
    errs.push_back("cost.R: must be " + std::to_string(d) + "x" + std::to_string(d));
    return;
  }
  const auto v = c.lqg.violations(n, d);
  for (const auto& s : v) {
    if (s.rfind("x0", 0) == 0 || s.rfind("sigma0", 0) == 0) errs.push_back("initial_state." + s);
    else if (s.rfind("T", 0) == 0) errs.push_back("numerics: " + s);
    else errs.push_back("cost: " + s);
  }
  if (v.empty() && d > 0) {
    const double cond = condition_number(*R);
    if (cond > kMaxCondition)
      errs.push_back("cost.R: ill-conditioned (condition number " + num(cond) + " > " + num(kMaxCondition) + ")");
  }
  if (s0->rows() == n) {
    const MomentState ms{*x0, *s0};
    add_prefixed(errs, ms.violations(), "initial_state.sigma0");
  }
}

}  // namespace

const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::QubitFilter: return "qubit_filter";
    case ScenarioKind::QubitHjb: return "qubit_hjb";
    case ScenarioKind::PmpCheck: return "pmp_check";
    case ScenarioKind::LinearLqg: return "linear_lqg";
    case ScenarioKind::McCost: return "mc_cost";
    case ScenarioKind::PerturbTest: return "perturb_test";
  }
  return "?";
}

std::optional<ScenarioKind> scenario_kind_from_string(const std::string& s) {
  for (auto k : {ScenarioKind::QubitFilter, ScenarioKind::QubitHjb, ScenarioKind::PmpCheck,
                 ScenarioKind::LinearLqg, ScenarioKind::McCost, ScenarioKind::PerturbTest})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

ComplexMatrix parse_matrix(const json& v, const std::string& field) {
  if (v.is_number()) return ComplexMatrix::Constant(1, 1, Complex(v.get<double>(), 0.0));
  if (v.is_object()) return named_operator(v, field);
  if (!v.is_array() || v.empty()) throw ConfigError(field + ": expected a matrix (list of rows)");
  const std::size_t rows = v.size();
  std::size_t cols = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!v[i].is_array()) throw ConfigError(field + ": row " + std::to_string(i) + " is not a list");
    if (i == 0) cols = v[i].size();
    else if (v[i].size() != cols)
      throw ConfigError(field + ": row " + std::to_string(i) + " has " + std::to_string(v[i].size()) +
                        " entries, expected " + std::to_string(cols));
  }
  ComplexMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const Complex z = parse_entry(v[i][j], field);
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) throw ConfigError(field + ": entries must be finite");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = z;
    }
  return m;
}

json matrix_to_json(const ComplexMatrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(entry_to_json(m(i, j)));
    rows.push_back(row);
  }
  return rows;
}

json matrix_to_json(const RealMatrix& m) { return matrix_to_json(ComplexMatrix(m.cast<Complex>())); }

namespace {

bool holds_object(const json& v) {
  if (v.is_object()) return true;
  if (v.is_array())
    for (const auto& e : v)
      if (holds_object(e)) return true;
  return false;
}

void render(std::string& out, const json& v, int depth) {
  if (!holds_object(v)) {
    std::string s = v.dump();
    // One space after commas between elements reads better in matrices.
    std::string spaced;
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
      spaced += s[i];
      if (s[i] == ',' && !in_str) spaced += ' ';
    }
    out += spaced;
    return;
  }
  const std::string pad(2 * (depth + 1), ' ');
  const bool obj = v.is_object();
  out += obj ? "{" : "[";
  bool first = true;
  for (auto it = v.begin(); it != v.end(); ++it) {
    out += first ? "\n" : ",\n";
    first = false;
    out += pad;
    if (obj) out += json(it.key()).dump() + ": ";
    render(out, it.value(), depth + 1);
  }
  out += "\n" + std::string(2 * depth, ' ') + (obj ? "}" : "]");
}

}  // namespace

std::string render_config(const json& doc) {
  std::string out;
  render(out, doc, 0);
  return out + "\n";
}

ScenarioConfig resolve_config(const json& doc, const std::filesystem::path& default_output_dir) {
  ScenarioConfig c;
  auto& errs = c.violations;
  if (!doc.is_object()) {
    errs.push_back("config: top level must be an object");
    return c;
  }
  Block top(&doc, "", errs);
  const std::string kind = top.choice("kind", std::nullopt,
                                      {"qubit_filter", "qubit_hjb", "pmp_check", "linear_lqg",
                                       "mc_cost", "perturb_test"});
  c.seed = top.seed("seed");
  const auto k = scenario_kind_from_string(kind);
  if (!k) {
    c.resolved = top.out;
    return c;
  }
  c.kind = *k;
  std::string type;
  if (c.kind == ScenarioKind::LinearLqg) type = "linear";
  else if (!is_ensemble(c.kind)) type = "quantum";
  if (const json* m = doc.contains("model") ? &doc["model"] : nullptr; m && m->is_object() && m->contains("type")) {
    const json& t = (*m)["type"];
    const std::string given = t.is_string() ? t.get<std::string>() : "";
    if (given == "quantum" || given == "linear") {
      if (!type.empty() && given != type) errs.push_back("model.type: " + kind + " needs a " + type + " model");
      else type = given;
    }
  } else if (type.empty()) {
    errs.push_back("model.type: required for " + kind + " (quantum or linear)");
    type = "quantum";
  }
  c.quantum = type == "quantum";
  if (c.quantum) resolve_quantum(c, top);
  else resolve_linear(c, top);

  Block out = top.sub("output", false);
  c.output_dir = out.text("dir", default_output_dir.string());
  top.attach("output", out);
  top.finish();
  c.resolved = top.out;
  return c;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  const std::filesystem::path def = std::filesystem::path("output") / path.stem();
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    ScenarioConfig c;
    c.violations.push_back(std::string("config: invalid JSON: ") + e.what());
    return c;
  }
  return resolve_config(doc, def);
}

}  // namespace qpmp
