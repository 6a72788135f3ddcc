#include "cbfforge/hj.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "cbfforge/error.hpp"
#include "cbfforge/parallel.hpp"

namespace cbfforge {

namespace {

constexpr double kPi = std::numbers::pi;

struct AxisWeight {
  int lo = 0;
  int hi = 0;
  double t = 0.0;  // weight of hi
};

AxisWeight clamped_axis(double v, double vmin, double h, int n) {
  double f = (v - vmin) / h;
  f = std::clamp(f, 0.0, static_cast<double>(n - 1));
  int lo = static_cast<int>(std::floor(f));
  lo = std::clamp(lo, 0, n - 2);
  return {lo, lo + 1, std::clamp(f - lo, 0.0, 1.0)};
}

AxisWeight periodic_axis(double theta, double h, int n) {
  const double f = (wrap_angle(theta) + kPi) / h;
  int lo = static_cast<int>(std::floor(f));
  double t = f - lo;
  lo %= n;
  if (lo < 0) lo += n;
  return {lo, (lo + 1) % n, std::clamp(t, 0.0, 1.0)};
}

double blend(const GridField& f, const AxisWeight& ax, const AxisWeight& ay, const AxisWeight& at) {
  const GridSpec& g = f.spec;
  const double* v = f.values.data();
  const std::size_t nt = static_cast<std::size_t>(g.ntheta);
  const std::size_t base00 = (static_cast<std::size_t>(ax.lo) * g.ny + ay.lo) * nt;
  const std::size_t base01 = (static_cast<std::size_t>(ax.lo) * g.ny + ay.hi) * nt;
  const std::size_t base10 = (static_cast<std::size_t>(ax.hi) * g.ny + ay.lo) * nt;
  const std::size_t base11 = (static_cast<std::size_t>(ax.hi) * g.ny + ay.hi) * nt;
  auto th = [&](std::size_t base) { return (1.0 - at.t) * v[base + at.lo] + at.t * v[base + at.hi]; };
  const double c0 = (1.0 - ay.t) * th(base00) + ay.t * th(base01);
  const double c1 = (1.0 - ay.t) * th(base10) + ay.t * th(base11);
  return (1.0 - ax.t) * c0 + ax.t * c1;
}

// Successor interpolation stencils. Dubins increments depend only on
// (theta, action), so the tables factor per axis.
struct SuccessorTables {
  int n_actions = 0;
  std::vector<AxisWeight> x;      // [(i * ntheta + k) * M + m]
  std::vector<AxisWeight> y;      // [(j * ntheta + k) * M + m]
  std::vector<AxisWeight> theta;  // [k * M + m]
};

SuccessorTables build_tables(const GridSpec& g, std::span<const double> actions, double dt) {
  SuccessorTables tab;
  const int M = static_cast<int>(actions.size());
  tab.n_actions = M;
  tab.x.resize(static_cast<std::size_t>(g.nx) * g.ntheta * M);
  tab.y.resize(static_cast<std::size_t>(g.ny) * g.ntheta * M);
  tab.theta.resize(static_cast<std::size_t>(g.ntheta) * M);
  for (int k = 0; k < g.ntheta; ++k) {
    const double theta = g.node(0, 0, k).theta;
    for (int m = 0; m < M; ++m) {
      const StepIncrement inc = rk4_increment(theta, actions[m], dt);
      tab.theta[static_cast<std::size_t>(k) * M + m] = periodic_axis(wrap_angle(theta + inc.dtheta), g.htheta(), g.ntheta);
      for (int i = 0; i < g.nx; ++i) {
        const double x = std::clamp(g.node(i, 0, k).x + inc.dx, -kWorkspaceBound, kWorkspaceBound);
        tab.x[(static_cast<std::size_t>(i) * g.ntheta + k) * M + m] = clamped_axis(x, g.x_min, g.hx(), g.nx);
      }
      for (int j = 0; j < g.ny; ++j) {
        const double y = std::clamp(g.node(0, j, k).y + inc.dy, -kWorkspaceBound, kWorkspaceBound);
        tab.y[(static_cast<std::size_t>(j) * g.ntheta + k) * M + m] = clamped_axis(y, g.y_min, g.hy(), g.ny);
      }
    }
  }
  return tab;
}

// One Jacobi sweep into next; returns the sup-norm change.
double sweep(const GridField& margin, const GridField& current, GridField& next, const SuccessorTables& tab,
             double gamma) {
  const GridSpec& g = margin.spec;
  const int M = tab.n_actions;
  std::vector<double> slab_residual(static_cast<std::size_t>(g.nx), 0.0);
  parallel_for(static_cast<std::size_t>(g.nx), [&](std::size_t ii) {
    const int i = static_cast<int>(ii);
    double res = 0.0;
    for (int j = 0; j < g.ny; ++j) {
      for (int k = 0; k < g.ntheta; ++k) {
        const std::size_t idx = g.index(i, j, k);
        double best = -std::numeric_limits<double>::infinity();
        for (int m = 0; m < M; ++m) {
          const auto& ax = tab.x[(static_cast<std::size_t>(i) * g.ntheta + k) * M + m];
          const auto& ay = tab.y[(static_cast<std::size_t>(j) * g.ntheta + k) * M + m];
          const auto& at = tab.theta[static_cast<std::size_t>(k) * M + m];
          best = std::max(best, blend(current, ax, ay, at));
        }
        const double l = margin.values[idx];
        // Same as (1 - gamma) l + gamma min{l, best}, but never rounds above l.
        const double v = l + gamma * (std::min(l, best) - l);
        res = std::max(res, std::abs(v - current.values[idx]));
        next.values[idx] = v;
      }
    }
    slab_residual[ii] = res;
  });
  return *std::max_element(slab_residual.begin(), slab_residual.end());
}

void require_actions(std::span<const double> actions) {
  if (actions.empty()) throw InvalidArgument("action set must not be empty");
  for (double a : actions) validate_action(a);
}

}  // namespace

void GridSpec::validate() const {
  if (nx < 3 || ny < 3) throw InvalidArgument("grid needs nx, ny >= 3");
  if (ntheta < 4) throw InvalidArgument("grid needs ntheta >= 4");
  if (!(x_max > x_min) || !(y_max > y_min)) throw InvalidArgument("grid bounds are empty");
}

double GridSpec::htheta() const { return 2.0 * kPi / ntheta; }

State GridSpec::node(int i, int j, int k) const {
  return State{x_min + i * hx(), y_min + j * hy(), -kPi + k * htheta()};
}

GridField sample_field(const GridSpec& spec, const std::function<double(const State&)>& fn, FieldKind kind) {
  spec.validate();
  GridField f{spec, std::vector<double>(spec.size()), kind};
  for (int i = 0; i < spec.nx; ++i)
    for (int j = 0; j < spec.ny; ++j)
      for (int k = 0; k < spec.ntheta; ++k) f.values[spec.index(i, j, k)] = fn(spec.node(i, j, k));
  return f;
}

double interpolate(const GridField& field, const State& s) {
  const GridSpec& g = field.spec;
  return blend(field, clamped_axis(s.x, g.x_min, g.hx(), g.nx), clamped_axis(s.y, g.y_min, g.hy(), g.ny),
               periodic_axis(s.theta, g.htheta(), g.ntheta));
}

std::vector<double> equispaced_actions(int n) {
  if (n < 2) throw InvalidArgument("need at least two equispaced actions");
  std::vector<double> a(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) a[i] = -kActionBound + 2.0 * kActionBound * i / (n - 1);
  a.back() = kActionBound;
  return a;
}

std::vector<double> default_action_set() { return equispaced_actions(25); }

SolveResult value_iteration(const GridField& margin, std::span<const double> actions, double gamma, double dt,
                            double tol, int max_iters) {
  margin.spec.validate();
  require_actions(actions);
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
  if (!(tol > 0.0)) throw InvalidArgument("tolerance must be positive");
  for (double v : margin.values)
    if (!std::isfinite(v)) throw InvalidArgument("margin field has non-finite values");

  const SuccessorTables tab = build_tables(margin.spec, actions, dt);
  SolveResult out;
  GridField current = margin;
  current.kind = FieldKind::value;
  GridField next = current;
  for (int it = 0; it < max_iters; ++it) {
    const double res = sweep(margin, current, next, tab, gamma);
    std::swap(current, next);
    out.iterations = it + 1;
    out.residual = res;
    out.residuals.push_back(res);
    if (res < tol) {
      out.converged = true;
      break;
    }
  }
  out.value = std::move(current);
  return out;
}

GridField finite_horizon_sweeps(const GridField& margin, std::span<const double> actions, double dt, int horizon) {
  margin.spec.validate();
  require_actions(actions);
  const SuccessorTables tab = build_tables(margin.spec, actions, dt);
  GridField current = margin;
  current.kind = FieldKind::value;
  GridField next = current;
  for (int h = 0; h < horizon; ++h) {
    sweep(margin, current, next, tab, 1.0);
    std::swap(current, next);
  }
  return current;
}

double q_from_value(const GridField& value, const GridField& margin, const State& z, double action, double gamma,
                    double dt) {
  if (!(value.spec == margin.spec)) throw InvalidArgument("value and margin fields must share a grid");
  const double l = interpolate(margin, z);
  const double next = interpolate(value, dynamics_step(z, action, dt));
  return l + gamma * (std::min(l, next) - l);
}

double brute_force_avoid_oracle(const State& s, const std::function<double(const State&)>& margin,
                                std::span<const double> actions, int horizon, double dt) {
  require_actions(actions);
  if (horizon < 0) throw InvalidArgument("horizon must be non-negative");
  const double n = static_cast<double>(actions.size());
  if (std::pow(n, horizon) > 1e6) throw InvalidArgument("brute-force budget exceeded: |A|^horizon > 1e6");
  const double l0 = margin(s);
  if (horizon == 0) return l0;

  std::size_t total = 1;
  for (int h = 0; h < horizon; ++h) total *= actions.size();
  double best = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> digits(static_cast<std::size_t>(horizon));
  for (std::size_t seq = 0; seq < total; ++seq) {
    std::size_t code = seq;
    for (int h = horizon - 1; h >= 0; --h) {
      digits[h] = code % actions.size();
      code /= actions.size();
    }
    State cur = s;
    double worst = l0;
    for (int h = 0; h < horizon && worst > best; ++h) {
      cur = dynamics_step(cur, actions[digits[h]], dt);
      worst = std::min(worst, margin(cur));
    }
    best = std::max(best, worst);
  }
  return best;
}

double empirical_lipschitz(const GridField& field) {
  const GridSpec& g = field.spec;
  const double hx = g.hx(), hy = g.hy(), ht = g.htheta();
  double best = 0.0;
  for (int i = 0; i < g.nx; ++i) {
    for (int j = 0; j < g.ny; ++j) {
      for (int k = 0; k < g.ntheta; ++k) {
        const double v = field.at(i, j, k);
        if (i + 1 < g.nx) best = std::max(best, std::abs(field.at(i + 1, j, k) - v) / hx);
        if (j + 1 < g.ny) best = std::max(best, std::abs(field.at(i, j + 1, k) - v) / hy);
        best = std::max(best, std::abs(field.at(i, j, (k + 1) % g.ntheta) - v) / ht);
      }
    }
  }
  return best;
}

LipschitzReport verify_margin_value_bound(const GridField& margin, double gamma, double dt,
                                          std::span<const double> actions, double L_f, double tolerance,
                                          double solve_tol, int max_iters) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must lie in [0, 1)");
  if (gamma * L_f >= 1.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "hypothesis violated: gamma * L_f = %.6g * %.6g = %.6g >= 1", gamma, L_f,
                  gamma * L_f);
    throw HypothesisViolated(buf);
  }
  LipschitzReport r;
  r.gamma = gamma;
  r.L_f = L_f;
  const SolveResult sol = value_iteration(margin, actions, gamma, dt, solve_tol, max_iters);
  r.converged = sol.converged;
  r.iterations = sol.iterations;
  r.L_ell = empirical_lipschitz(margin);
  r.L_V = empirical_lipschitz(sol.value);
  r.bound = r.L_ell * std::max(1.0, (1.0 - gamma) / (1.0 - gamma * L_f));
  r.holds = r.L_V <= r.bound * (1.0 + tolerance);
  return r;
}

void save_grid(const GridField& field, std::ostream& out) {
  const GridSpec& g = field.spec;
  out << "grid " << g.nx << ' ' << g.ny << ' ' << g.ntheta << '\n';
  char buf[40];
  for (double v : field.values) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    out << buf;
  }
}

void save_grid(const GridField& field, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write grid file '" + path + "'");
  save_grid(field, out);
  if (!out) throw IoError("failed writing grid file '" + path + "'");
}

GridField load_grid(std::istream& in, FieldKind kind) {
  std::string tag;
  GridSpec g;
  in >> tag >> g.nx >> g.ny >> g.ntheta;
  if (tag != "grid" || !in) throw IoError("grid file must start with 'grid <nx> <ny> <ntheta>'");
  g.validate();
  GridField f{g, std::vector<double>(g.size()), kind};
  std::string tok;
  for (auto& v : f.values) {
    if (!(in >> tok)) throw IoError("grid file is truncated");
    v = std::strtod(tok.c_str(), nullptr);
  }
  return f;
}

GridField load_grid(const std::string& path, FieldKind kind) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grid file '" + path + "'");
  return load_grid(in, kind);
}

void write_grid_slice_csv(const GridField& field, double theta, std::ostream& out) {
  const GridSpec& g = field.spec;
  const AxisWeight at = periodic_axis(theta, g.htheta(), g.ntheta);
  const int k = at.t < 0.5 ? at.lo : at.hi;
  out << "x,y,value\n";
  char buf[96];
  for (int i = 0; i < g.nx; ++i)
    for (int j = 0; j < g.ny; ++j) {
      const State s = g.node(i, j, k);
      std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g\n", s.x, s.y, field.at(i, j, k));
      out << buf;
    }
}

}  // namespace cbfforge
