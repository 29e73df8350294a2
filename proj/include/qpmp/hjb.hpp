#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "qpmp/belavkin.hpp"
#include "qpmp/io.hpp"
#include "qpmp/operators.hpp"

namespace qpmp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Qubit state in the chart rho = (I + r . sigma)/2, |r| <= 1.
class BlochVector {
 public:
  explicit BlochVector(const Vec3& r);
  const Vec3& r() const { return r_; }

 private:
  Vec3 r_;
};

BlochVector bloch_from_density(const DensityMatrix& rho);
DensityMatrix density_from_bloch(const BlochVector& b);
/// (I + r . sigma)/2 for any r, including points outside the ball.
ComplexMatrix bloch_matrix(const Vec3& r);

/// dr = drift dt + diffusion dW, the conditional master equation pushed
/// through the Bloch chart.
struct BlochDynamics {
  Vec3 drift;
  Vec3 diffusion;
};

BlochDynamics bloch_dynamics(const QuantumModel& model, const RealVector& u, const Vec3& r);

/// Sign in front of the drift term of the generalized Hamiltonian.
/// Standard: C + <b, p> + 1/2 s^T P s (classical dynamic programming).
/// Flipped:  C - <b, p> + 1/2 s^T P s (sign used in the FBSDE drift).
enum class HamiltonianSign { Standard, Flipped };

const char* to_string(HamiltonianSign s);
HamiltonianSign hamiltonian_sign_from_string(const std::string& s);

/// Spatial stencils at inside nodes whose neighbour lies outside the ball.
/// Filled: central differences reading the nearest-inside copies stored on
/// outside nodes. OneSided: second-order one-sided differences over inside
/// nodes only, falling back to first order where two are not available.
/// Both use one-sided stencils at the cube faces.
enum class BoundaryStencil { Filled, OneSided };

const char* to_string(BoundaryStencil b);
BoundaryStencil boundary_stencil_from_string(const std::string& s);

struct HjbGridSpec {
  int n_axis = 21;
  std::size_t time_steps = 200;
  double T = 0.15;
  HamiltonianSign convention = HamiltonianSign::Standard;
  BoundaryStencil boundary = BoundaryStencil::Filled;
  /// Regularizer in the stability bound dt <= h^2 / (6 max|s|^2 + eps).
  double stability_eps = 1e-12;

  double h() const { return 2.0 / static_cast<double>(n_axis - 1); }
  double dt() const { return T / static_cast<double>(time_steps); }
};

/// Largest dt accepted by the explicit scheme for this model and grid.
double max_admissible_dt(const QuantumModel& model, const HjbGridSpec& spec);

/// Value function S(t, r) on a uniform cube grid over [-1,1]^3 with
/// values outside the unit ball filled from the nearest node inside it.
class ValueGrid {
 public:
  ValueGrid(const HjbGridSpec& spec);

  /// Grid with S(t, r) = field(t, r) at every node.
  static ValueGrid from_field(const HjbGridSpec& spec,
                              const std::function<double(double, const Vec3&)>& field);

  const HjbGridSpec& spec() const { return spec_; }
  int n() const { return spec_.n_axis; }
  double h() const { return spec_.h(); }
  const std::vector<double>& time_points() const { return times_; }
  const std::vector<double>& axis() const { return axis_; }
  std::size_t nodes_per_slice() const { return nodes_; }

  std::size_t node(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * n() + j) * n() + k;
  }
  Vec3 position(std::size_t node) const;
  bool inside(std::size_t node) const { return inside_[node] != 0; }
  std::size_t nearest_inside(std::size_t node) const { return nearest_[node]; }

  double* slice(std::size_t s) { return values_.data() + s * nodes_; }
  const double* slice(std::size_t s) const { return values_.data() + s * nodes_; }
  double value(std::size_t s, std::size_t node) const { return values_[s * nodes_ + node]; }

  /// Copies inside values onto outside nodes of slice s.
  void fill_outside(std::size_t s);

  /// Trilinear in space, linear in time. Throws InputError outside the grid.
  double interpolate(double t, const Vec3& r) const;

 private:
  HjbGridSpec spec_;
  std::vector<double> times_;
  std::vector<double> axis_;
  std::size_t nodes_;
  std::vector<std::uint8_t> inside_;
  std::vector<std::size_t> nearest_;
  std::vector<double> values_;
};

/// Backward explicit time stepping of -dS/dt = min_u H(t,u,r,grad S, hess S)
/// with S(T, r) = <rho(r), M> at every node (the terminal slice is the exact
/// affine field, also outside the ball). Control minimization is exhaustive over u_grid.
/// Throws ConfigError when dt violates the stability bound.
ValueGrid solve_hjb_grid(const QuantumModel& model, const CostSpec& cost,
                         const std::vector<RealVector>& u_grid, const HjbGridSpec& spec);

/// Costate in the Bloch chart: gradient p and symmetrized Hessian P.
struct BlochCostate {
  Vec3 p;
  Mat3 P;
};

/// Finite differences of the interpolated value function at (t, r), using
/// one-sided stencils where a central one would leave the cube.
BlochCostate extract_costate(const ValueGrid& grid, double t, const Vec3& r);

/// Flat CSV `t,rx,ry,rz,S` over inside nodes for every `slice_stride`-th
/// time slice (the terminal slice is always included).
void write_value_grid_csv(std::ostream& os, const ValueGrid& grid, std::size_t slice_stride);
io::KeyValueDoc value_grid_summary(const ValueGrid& grid, std::size_t slice_stride);

}  // namespace qpmp
