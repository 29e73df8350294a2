#include "qpmp/hjb.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "qpmp/errors.hpp"

namespace qpmp {

namespace {

constexpr double kBallTol = 1e-9;
constexpr double kCubeTol = 1e-12;

const std::array<ComplexMatrix, 3>& paulis() {
  static const std::array<ComplexMatrix, 3> s{ops::sigma_x(), ops::sigma_y(), ops::sigma_z()};
  return s;
}

Vec3 pauli_components(const ComplexMatrix& m) {
  const auto& s = paulis();
  return {expectation(m, s[0]).real(), expectation(m, s[1]).real(),
          expectation(m, s[2]).real()};
}

void require_qubit(const QuantumModel& model, const char* who) {
  if (model.dim != 2 || model.L.rows() != 2)
    throw InputError(std::string(who) + ": Bloch chart requires a qubit model");
}

// One-dimensional stencil: value offsets (in units of h) and weights.
struct Stencil {
  int n = 0;
  std::array<int, 3> off{};
  std::array<double, 3> w{};
};

struct AxisStencils {
  Stencil first;
  Stencil second;
};

AxisStencils central(double h) {
  return {{2, {-1, 1, 0}, {-0.5 / h, 0.5 / h, 0}},
          {3, {-1, 0, 1}, {1 / (h * h), -2 / (h * h), 1 / (h * h)}}};
}

// Second-order one-sided stencils reaching two steps towards `dir`.
AxisStencils one_sided(double h, int dir) {
  const double s = static_cast<double>(dir);
  return {{3, {0, dir, 2 * dir}, {-1.5 * s / h, 2.0 * s / h, -0.5 * s / h}},
          {3, {0, dir, 2 * dir}, {1 / (h * h), -2 / (h * h), 1 / (h * h)}}};
}

AxisStencils first_order(double h, int dir) {
  const double s = static_cast<double>(dir);
  return {{2, {0, dir, 0}, {-s / h, s / h, 0}}, {0, {}, {}}};
}

}  // namespace

BlochVector::BlochVector(const Vec3& r) : r_(r) {
  if (!r.allFinite() || r.norm() > 1.0 + kBallTol)
    throw InputError("Bloch vector outside the unit ball");
}

BlochVector bloch_from_density(const DensityMatrix& rho) {
  if (rho.dim() != 2) throw InputError("bloch_from_density: dim must be 2");
  const Vec3 r = pauli_components(rho.mat());
  return BlochVector(r);
}

ComplexMatrix bloch_matrix(const Vec3& r) {
  const auto& s = paulis();
  return 0.5 * (ops::identity(2) + r[0] * s[0] + r[1] * s[1] + r[2] * s[2]);
}

DensityMatrix density_from_bloch(const BlochVector& b) {
  return DensityMatrix::unchecked(bloch_matrix(b.r()));
}

BlochDynamics bloch_dynamics(const QuantumModel& model, const RealVector& u, const Vec3& r) {
  require_qubit(model, "bloch_dynamics");
  const ComplexMatrix rho = bloch_matrix(r);
  return {pauli_components(lindblad_drift(model, u, rho)),
          pauli_components(fluctuation(model.L, rho))};
}

const char* to_string(BoundaryStencil b) {
  return b == BoundaryStencil::Filled ? "filled" : "one_sided";
}

BoundaryStencil boundary_stencil_from_string(const std::string& s) {
  if (s == "filled") return BoundaryStencil::Filled;
  if (s == "one_sided") return BoundaryStencil::OneSided;
  throw ConfigError("boundary_stencil must be 'filled' or 'one_sided', got '" + s + "'");
}

const char* to_string(HamiltonianSign s) {
  return s == HamiltonianSign::Standard ? "standard" : "flipped";
}

HamiltonianSign hamiltonian_sign_from_string(const std::string& s) {
  if (s == "standard") return HamiltonianSign::Standard;
  if (s == "flipped") return HamiltonianSign::Flipped;
  throw ConfigError("hamiltonian_sign must be 'standard' or 'flipped', got '" + s + "'");
}

ValueGrid::ValueGrid(const HjbGridSpec& spec) : spec_(spec) {
  if (spec.n_axis < 3) throw ConfigError("grid needs at least 3 nodes per axis");
  if (spec.time_steps < 1) throw ConfigError("grid needs at least one time step");
  if (!(spec.T > 0) || !std::isfinite(spec.T)) throw ConfigError("grid horizon T must be positive");
  const int n = spec.n_axis;
  const double h = spec.h();
  axis_.resize(n);
  for (int i = 0; i < n; ++i) axis_[i] = -1.0 + h * i;
  axis_.back() = 1.0;
  times_.resize(spec.time_steps + 1);
  for (std::size_t k = 0; k <= spec.time_steps; ++k)
    times_[k] = spec.T * static_cast<double>(k) / static_cast<double>(spec.time_steps);
  nodes_ = static_cast<std::size_t>(n) * n * n;
  inside_.assign(nodes_, 0);
  nearest_.assign(nodes_, 0);
  for (std::size_t m = 0; m < nodes_; ++m) inside_[m] = position(m).norm() <= 1.0 + kBallTol;

  auto to_index = [&](double x) {
    return std::clamp(static_cast<int>(std::lround((x + 1.0) / h)), 0, n - 1);
  };
  for (std::size_t m = 0; m < nodes_; ++m) {
    if (inside_[m]) {
      nearest_[m] = m;
      continue;
    }
    const Vec3 r = position(m);
    const Vec3 proj = r / r.norm();
    const int ci = to_index(proj[0]), cj = to_index(proj[1]), ck = to_index(proj[2]);
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = m;
    for (int radius = 1; arg == m; ++radius) {
      for (int di = -radius; di <= radius; ++di)
        for (int dj = -radius; dj <= radius; ++dj)
          for (int dk = -radius; dk <= radius; ++dk) {
            const int i = ci + di, j = cj + dj, k = ck + dk;
            if (i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n) continue;
            const std::size_t q = node(i, j, k);
            if (!inside_[q]) continue;
            const double d = (position(q) - r).squaredNorm();
            if (d < best) {
              best = d;
              arg = q;
            }
          }
    }
    nearest_[m] = arg;
  }
  values_.assign(nodes_ * times_.size(), 0.0);
}

Vec3 ValueGrid::position(std::size_t m) const {
  const std::size_t n = static_cast<std::size_t>(spec_.n_axis);
  const std::size_t k = m % n, j = (m / n) % n, i = m / (n * n);
  return {axis_[i], axis_[j], axis_[k]};
}

void ValueGrid::fill_outside(std::size_t s) {
  double* v = slice(s);
  for (std::size_t m = 0; m < nodes_; ++m)
    if (!inside_[m]) v[m] = v[nearest_[m]];
}

ValueGrid ValueGrid::from_field(const HjbGridSpec& spec,
                                const std::function<double(double, const Vec3&)>& field) {
  ValueGrid g(spec);
  for (std::size_t s = 0; s < g.times_.size(); ++s) {
    double* v = g.slice(s);
    for (std::size_t m = 0; m < g.nodes_; ++m) v[m] = field(g.times_[s], g.position(m));
  }
  return g;
}

double ValueGrid::interpolate(double t, const Vec3& r) const {
  if (!(t >= -kCubeTol && t <= spec_.T + kCubeTol) || !r.allFinite() ||
      r.cwiseAbs().maxCoeff() > 1.0 + kCubeTol) {
    std::ostringstream msg;
    msg << "point (t=" << t << ", r=(" << r[0] << ", " << r[1] << ", " << r[2]
        << ")) outside the value grid";
    throw InputError(msg.str());
  }
  const int n = spec_.n_axis;
  const double h = spec_.h();
  const double tau = std::clamp(t / spec_.dt(), 0.0, static_cast<double>(spec_.time_steps));
  const std::size_t s0 = std::min(static_cast<std::size_t>(tau), spec_.time_steps - 1);
  const double th = tau - static_cast<double>(s0);

  std::array<int, 3> base{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const double x = std::clamp((std::clamp(r[a], -1.0, 1.0) + 1.0) / h, 0.0,
                                static_cast<double>(n - 1));
    base[a] = std::min(static_cast<int>(x), n - 2);
    frac[a] = x - base[a];
  }
  auto spatial = [&](std::size_t s) {
    const double* v = slice(s);
    double acc = 0.0;
    for (int c = 0; c < 8; ++c) {
      const int di = (c >> 2) & 1, dj = (c >> 1) & 1, dk = c & 1;
      const double w = (di ? frac[0] : 1 - frac[0]) * (dj ? frac[1] : 1 - frac[1]) *
                       (dk ? frac[2] : 1 - frac[2]);
      if (w != 0.0) acc += w * v[node(base[0] + di, base[1] + dj, base[2] + dk)];
    }
    return acc;
  };
  const double a = spatial(s0);
  return th == 0.0 ? a : (1 - th) * a + th * spatial(s0 + 1);
}

double max_admissible_dt(const QuantumModel& model, const HjbGridSpec& spec) {
  require_qubit(model, "max_admissible_dt");
  const ValueGrid probe(HjbGridSpec{spec.n_axis, 1, 1.0, spec.convention, spec.boundary, spec.stability_eps});
  double smax = 0.0;
  for (std::size_t m = 0; m < probe.nodes_per_slice(); ++m) {
    if (!probe.inside(m)) continue;
    smax = std::max(smax, pauli_components(fluctuation(model.L, bloch_matrix(probe.position(m))))
                              .squaredNorm());
  }
  const double h = spec.h();
  return h * h / (6.0 * smax + spec.stability_eps);
}

ValueGrid solve_hjb_grid(const QuantumModel& model, const CostSpec& cost,
                         const std::vector<RealVector>& u_grid, const HjbGridSpec& spec) {
  require_qubit(model, "solve_hjb_grid");
  model.validate();
  if (u_grid.empty()) throw ConfigError("u_grid must not be empty");
  for (const auto& u : u_grid)
    if (u.size() != static_cast<Eigen::Index>(model.Hc.size()))
      throw ConfigError("u_grid entries must have one component per control Hamiltonian");

  const double dt = spec.dt();
  const double dt_max = max_admissible_dt(model, spec);
  if (dt > dt_max) {
    std::ostringstream msg;
    msg.precision(6);
    msg << "HJB grid unstable: dt = " << dt << " exceeds the explicit bound; requires dt <= "
        << dt_max << " (time_steps >= " << static_cast<std::size_t>(std::ceil(spec.T / dt_max))
        << ")";
    throw ConfigError(msg.str());
  }

  ValueGrid grid(spec);
  const int n = spec.n_axis;
  const double h = spec.h();
  const std::size_t N = grid.nodes_per_slice();
  const std::size_t nu = u_grid.size();
  const double drift_sign = spec.convention == HamiltonianSign::Standard ? 1.0 : -1.0;

  // Inside nodes and their per-node data.
  std::vector<std::size_t> nodes;
  for (std::size_t m = 0; m < N; ++m)
    if (grid.inside(m)) nodes.push_back(m);
  const std::size_t ni = nodes.size();
  std::vector<Vec3> pos(ni), diff(ni);
  std::vector<Vec3> drift(ni * nu);
  for (std::size_t q = 0; q < ni; ++q) {
    pos[q] = grid.position(nodes[q]);
    diff[q] = bloch_dynamics(model, u_grid[0], pos[q]).diffusion;
    for (std::size_t c = 0; c < nu; ++c)
      drift[q * nu + c] = pauli_components(lindblad_drift(model, u_grid[c], bloch_matrix(pos[q])));
  }

  // Stencils per inside node and axis, chosen from the validity mask.
  std::vector<std::array<AxisStencils, 3>> stencils(ni);
  for (std::size_t q = 0; q < ni; ++q) {
    const std::size_t m = nodes[q];
    const int idx[3] = {static_cast<int>(m / (n * n)), static_cast<int>((m / n) % n),
                        static_cast<int>(m % n)};
    for (int a = 0; a < 3; ++a) {
      auto ok = [&](int d) {
        int id[3] = {idx[0], idx[1], idx[2]};
        id[a] += d;
        if (id[a] < 0 || id[a] >= n) return false;
        return grid.inside(grid.node(id[0], id[1], id[2]));
      };
      const bool interior = idx[a] > 0 && idx[a] < n - 1;
      if ((ok(-1) && ok(1)) || (spec.boundary == BoundaryStencil::Filled && interior))
        stencils[q][a] = central(h);
      else if (ok(1) && ok(2))
        stencils[q][a] = one_sided(h, 1);
      else if (ok(-1) && ok(-2))
        stencils[q][a] = one_sided(h, -1);
      else if (ok(1))
        stencils[q][a] = first_order(h, 1);
      else if (ok(-1))
        stencils[q][a] = first_order(h, -1);
      else
        stencils[q][a] = {};
    }
  }
  const std::ptrdiff_t stride[3] = {static_cast<std::ptrdiff_t>(n) * n, n, 1};

  // Terminal slice.
  const Vec3 mvec = pauli_components(cost.terminal_op);
  const double m0 = 0.5 * cost.terminal_op.trace().real();
  {
    double* v = grid.slice(spec.time_steps);
    for (std::size_t m = 0; m < N; ++m) v[m] = m0 + 0.5 * mvec.dot(grid.position(m));
  }

  std::vector<double> c0(nu);
  std::vector<Vec3> cvec(nu);
  for (std::size_t s = spec.time_steps; s-- > 0;) {
    const double t_next = grid.time_points()[s + 1];
    for (std::size_t c = 0; c < nu; ++c) {
      const ComplexMatrix C = cost.running_op(t_next, u_grid[c]);
      c0[c] = 0.5 * C.trace().real();
      cvec[c] = 0.5 * pauli_components(C);
    }
    const double* next = grid.slice(s + 1);
    double* cur = grid.slice(s);
    for (std::size_t q = 0; q < ni; ++q) {
      const std::ptrdiff_t m = static_cast<std::ptrdiff_t>(nodes[q]);
      const auto& st = stencils[q];
      Vec3 p;
      Mat3 P;
      for (int a = 0; a < 3; ++a) {
        double acc = 0.0;
        for (int e = 0; e < st[a].first.n; ++e)
          acc += st[a].first.w[e] * next[m + st[a].first.off[e] * stride[a]];
        p[a] = acc;
        acc = 0.0;
        for (int e = 0; e < st[a].second.n; ++e)
          acc += st[a].second.w[e] * next[m + st[a].second.off[e] * stride[a]];
        P(a, a) = acc;
      }
      for (int a = 0; a < 3; ++a)
        for (int b = a + 1; b < 3; ++b) {
          double acc = 0.0;
          for (int e = 0; e < st[a].first.n; ++e)
            for (int f = 0; f < st[b].first.n; ++f)
              acc += st[a].first.w[e] * st[b].first.w[f] *
                     next[m + st[a].first.off[e] * stride[a] + st[b].first.off[f] * stride[b]];
          P(a, b) = P(b, a) = acc;
        }
      const double second = 0.5 * diff[q].dot(P * diff[q]);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < nu; ++c) {
        const double H = c0[c] + cvec[c].dot(pos[q]) + drift_sign * drift[q * nu + c].dot(p) + second;
        best = std::min(best, H);
      }
      cur[m] = next[m] + dt * best;
      if (!std::isfinite(cur[m]))
        throw NumericalError("HJB grid produced a non-finite value", static_cast<long>(s));
    }
    grid.fill_outside(s);
  }
  return grid;
}

BlochCostate extract_costate(const ValueGrid& grid, double t, const Vec3& r) {
  const double h = grid.h();
  // Validates the point.
  (void)grid.interpolate(t, r);
  const Vec3 rc = r.cwiseMax(-1.0).cwiseMin(1.0);
  std::array<AxisStencils, 3> st;
  for (int a = 0; a < 3; ++a) {
    if (rc[a] - h >= -1.0 - kCubeTol && rc[a] + h <= 1.0 + kCubeTol)
      st[a] = central(h);
    else if (rc[a] + h > 1.0 + kCubeTol)
      st[a] = one_sided(h, -1);
    else
      st[a] = one_sided(h, 1);
  }
  auto S = [&](const Vec3& x) { return grid.interpolate(t, x.cwiseMax(-1.0).cwiseMin(1.0)); };
  BlochCostate out;
  for (int a = 0; a < 3; ++a) {
    double acc = 0.0;
    for (int e = 0; e < st[a].first.n; ++e)
      acc += st[a].first.w[e] * S(rc + st[a].first.off[e] * h * Vec3::Unit(a));
    out.p[a] = acc;
    acc = 0.0;
    for (int e = 0; e < st[a].second.n; ++e)
      acc += st[a].second.w[e] * S(rc + st[a].second.off[e] * h * Vec3::Unit(a));
    out.P(a, a) = acc;
  }
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b) {
      double acc = 0.0;
      for (int e = 0; e < st[a].first.n; ++e)
        for (int f = 0; f < st[b].first.n; ++f)
          acc += st[a].first.w[e] * st[b].first.w[f] *
                 S(rc + st[a].first.off[e] * h * Vec3::Unit(a) +
                   st[b].first.off[f] * h * Vec3::Unit(b));
      out.P(a, b) = out.P(b, a) = acc;
    }
  return out;
}

namespace {

std::vector<std::size_t> exported_slices(const ValueGrid& grid, std::size_t stride) {
  const std::size_t last = grid.spec().time_steps;
  if (stride == 0) stride = last;
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < last; s += stride) out.push_back(s);
  out.push_back(last);
  return out;
}

}  // namespace

void write_value_grid_csv(std::ostream& os, const ValueGrid& grid, std::size_t slice_stride) {
  os << "t,rx,ry,rz,S\n";
  for (std::size_t s : exported_slices(grid, slice_stride)) {
    const std::string t = io::fmt(grid.time_points()[s]);
    for (std::size_t m = 0; m < grid.nodes_per_slice(); ++m) {
      if (!grid.inside(m)) continue;
      const Vec3 r = grid.position(m);
      os << t << ',' << io::fmt(r[0]) << ',' << io::fmt(r[1]) << ',' << io::fmt(r[2]) << ','
         << io::fmt(grid.value(s, m)) << '\n';
    }
  }
}

io::KeyValueDoc value_grid_summary(const ValueGrid& grid, std::size_t slice_stride) {
  io::KeyValueDoc doc;
  const auto& spec = grid.spec();
  doc.set("n_axis", spec.n_axis);
  doc.set("grid_h", spec.h());
  doc.set("time_steps", spec.time_steps);
  doc.set("T", spec.T);
  doc.set("dt", spec.dt());
  doc.set("hamiltonian_sign", to_string(spec.convention));
  doc.set("boundary_stencil", to_string(spec.boundary));
  std::size_t inside = 0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t m = 0; m < grid.nodes_per_slice(); ++m) {
    if (!grid.inside(m)) continue;
    ++inside;
    for (std::size_t s = 0; s <= spec.time_steps; ++s) {
      lo = std::min(lo, grid.value(s, m));
      hi = std::max(hi, grid.value(s, m));
    }
  }
  doc.set("inside_nodes", inside);
  doc.set("S_min", lo);
  doc.set("S_max", hi);
  std::string slices;
  for (std::size_t s : exported_slices(grid, slice_stride))
    slices += (slices.empty() ? "" : " ") + std::to_string(s);
  doc.set("exported_slices", slices);
  return doc;
}

}  // namespace qpmp
