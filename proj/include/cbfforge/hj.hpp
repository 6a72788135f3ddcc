#pragma once

// Grid-based solver for the discounted avoid fixed point
//   V = (1 - gamma) l + gamma * min{ l, max_a V(f(s, a)) }
// with trilinear interpolation (periodic in theta), plus the finite-horizon
// oracle and Lipschitz measurements used to check it.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cbfforge/dubins.hpp"

namespace cbfforge {

struct GridSpec {
  int nx = 61;
  int ny = 61;
  int ntheta = 31;
  double x_min = -kWorkspaceBound, x_max = kWorkspaceBound;
  double y_min = -kWorkspaceBound, y_max = kWorkspaceBound;

  void validate() const;
  double hx() const { return (x_max - x_min) / (nx - 1); }
  double hy() const { return (y_max - y_min) / (ny - 1); }
  double htheta() const;
  std::size_t size() const { return static_cast<std::size_t>(nx) * ny * ntheta; }
  // x-major: x slowest, theta fastest.
  std::size_t index(int i, int j, int k) const { return (static_cast<std::size_t>(i) * ny + j) * ntheta + k; }
  State node(int i, int j, int k) const;
  bool operator==(const GridSpec&) const = default;
};

enum class FieldKind { margin, value };

struct GridField {
  GridSpec spec;
  std::vector<double> values;
  FieldKind kind = FieldKind::margin;

  double at(int i, int j, int k) const { return values[spec.index(i, j, k)]; }
};

GridField sample_field(const GridSpec& spec, const std::function<double(const State&)>& fn,
                       FieldKind kind = FieldKind::margin);

// Trilinear, periodic in theta; x and y are clamped into the grid box.
double interpolate(const GridField& field, const State& s);

// The 25 equally spaced turn rates on [-2, 2] that the filter samples; the
// filter's two policy anchors are not known to the solver.
std::vector<double> default_action_set();
std::vector<double> equispaced_actions(int n);

struct SolveResult {
  GridField value;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  std::vector<double> residuals;
};

SolveResult value_iteration(const GridField& margin, std::span<const double> actions, double gamma, double dt,
                            double tol, int max_iters);

// Undiscounted finite-horizon sweeps V_{k+1} = min{l, max_a V_k(f(s,a))}, V_0 = l.
GridField finite_horizon_sweeps(const GridField& margin, std::span<const double> actions, double dt, int horizon);

// (1-gamma) l(z) + gamma min{l(z), V(f(z,a))} with l, V interpolated.
double q_from_value(const GridField& value, const GridField& margin, const State& z, double action, double gamma,
                    double dt);

// max over action sequences of min over time of l(s_t); exhaustive, no grid.
double brute_force_avoid_oracle(const State& s, const std::function<double(const State&)>& margin,
                                std::span<const double> actions, int horizon, double dt);

// max over axis-adjacent node pairs of |dV| / spacing (geodesic in theta).
double empirical_lipschitz(const GridField& field);

struct LipschitzReport {
  double L_ell = 0.0;
  double L_V = 0.0;
  double L_f = 0.0;
  double gamma = 0.0;
  double bound = 0.0;
  bool holds = false;
  bool converged = false;
  int iterations = 0;
};

// Requires gamma * L_f < 1; throws HypothesisViolated otherwise.
LipschitzReport verify_margin_value_bound(const GridField& margin, double gamma, double dt,
                                          std::span<const double> actions, double L_f, double tolerance = 0.05,
                                          double solve_tol = 1e-6, int max_iters = 2000);

void save_grid(const GridField& field, std::ostream& out);
void save_grid(const GridField& field, const std::string& path);
GridField load_grid(std::istream& in, FieldKind kind = FieldKind::value);
GridField load_grid(const std::string& path, FieldKind kind = FieldKind::value);
// CSV x,y,value at the theta node nearest to theta.
void write_grid_slice_csv(const GridField& field, double theta, std::ostream& out);

}  // namespace cbfforge
