#include "cbfforge/dubins.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>

#include "cbfforge/error.hpp"

namespace cbfforge {

namespace {

constexpr double kPi = std::numbers::pi;

bool finite_state(const State& s) { return std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.theta); }

}  // namespace

double wrap_angle(double theta) {
  double w = std::fmod(theta + kPi, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  w -= kPi;
  // fmod rounding can land exactly on +pi
  if (w >= kPi) w -= 2.0 * kPi;
  return w;
}

double angle_diff(double a, double b) { return wrap_angle(a - b); }

double state_distance(const State& a, const State& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dt = angle_diff(a.theta, b.theta);
  return std::sqrt(dx * dx + dy * dy + dt * dt);
}

double clamp_action(double a) { return std::clamp(a, -kActionBound, kActionBound); }

void validate_action(double a) {
  if (!std::isfinite(a) || a < -kActionBound || a > kActionBound)
    throw InvalidArgument("action " + std::to_string(a) + " outside [-2, 2]");
}

StepIncrement rk4_increment(double theta, double action, double dt) {
  // x and y derivatives depend only on theta, theta derivative is constant.
  const double t1 = theta;
  const double t2 = theta + 0.5 * dt * action;
  const double t4 = theta + dt * action;
  const double c1 = std::cos(t1), s1 = std::sin(t1);
  const double c2 = std::cos(t2), s2 = std::sin(t2);
  const double c4 = std::cos(t4), s4 = std::sin(t4);
  StepIncrement inc;
  inc.dx = dt * ((c1 + 4.0 * c2 + c4) / 6.0);
  inc.dy = dt * ((s1 + 4.0 * s2 + s4) / 6.0);
  inc.dtheta = dt * action;
  return inc;
}

State dynamics_step(const State& s, double action, double dt) {
  if (!finite_state(s) || !std::isfinite(action) || !std::isfinite(dt) || dt <= 0.0)
    throw InvalidArgument("dynamics_step: non-finite state, action or dt");
  const StepIncrement inc = rk4_increment(s.theta, action, dt);
  State out;
  out.x = std::clamp(s.x + inc.dx, -kWorkspaceBound, kWorkspaceBound);
  out.y = std::clamp(s.y + inc.dy, -kWorkspaceBound, kWorkspaceBound);
  out.theta = wrap_angle(s.theta + inc.dtheta);
  return out;
}

Dynamics dubins_dynamics(double dt) {
  return [dt](const State& s, double a) { return dynamics_step(s, a, dt); };
}

FailureSpec FailureSpec::dubins_default() { return FailureSpec{{{0.25, 0.65, 0.5}, {0.25, -0.65, 0.5}}}; }

double signed_distance_margin(const State& s, const FailureSpec& spec) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : spec.circles) best = std::min(best, std::hypot(s.x - c.cx, s.y - c.cy) - c.radius);
  return best;
}

bool in_failure(const State& s, const FailureSpec& spec) { return signed_distance_margin(s, spec) < 0.0; }

std::string to_string(NominalMode m) { return m == NominalMode::obstacle_blind ? "obstacle_blind" : "obstacle_aware"; }

NominalMode nominal_mode_from_string(const std::string& s) {
  if (s == "obstacle_blind") return NominalMode::obstacle_blind;
  if (s == "obstacle_aware") return NominalMode::obstacle_aware;
  throw InvalidArgument("unknown nominal mode '" + s + "'");
}

double nominal_policy(const State& s, const NominalPolicyConfig& cfg, const FailureSpec& spec, Rng* rng) {
  if (cfg.gain <= 0.0) throw InvalidArgument("nominal policy gain must be positive");
  const double heading = std::atan2(cfg.goal_y - s.y, std::max(cfg.goal_x - s.x, cfg.goal_lookahead));
  double turn = cfg.gain * angle_diff(heading, s.theta);
  if (cfg.mode == NominalMode::obstacle_aware) {
    for (const auto& c : spec.circles) {
      const double d = std::hypot(s.x - c.cx, s.y - c.cy) - c.radius;
      if (d >= cfg.repulsion_range) continue;
      const double bearing = angle_diff(std::atan2(c.cy - s.y, c.cx - s.x), s.theta);
      if (std::abs(bearing) > kPi / 2.0) continue;
      const double strength = cfg.repulsion_gain * (1.0 - std::max(d, 0.0) / cfg.repulsion_range);
      turn += bearing >= 0.0 ? -strength * kActionBound : strength * kActionBound;
    }
  }
  if (rng != nullptr && cfg.noise_std > 0.0) turn += cfg.noise_std * rng->normal();
  return clamp_action(turn);
}

TrajectoryRecord rollout(const Policy& policy, const ActionFilterFn* filter, const State& x0, int steps,
                         const FailureSpec& spec, const Dynamics& dynamics) {
  if (steps < 1) throw InvalidArgument("rollout needs at least one step");
  TrajectoryRecord rec;
  rec.states.push_back(x0);
  rec.margin_values.push_back(signed_distance_margin(x0, spec));
  if (rec.margin_values.back() < 0.0) {
    rec.collided = true;
    return rec;
  }
  State s = x0;
  for (int t = 0; t < steps; ++t) {
    const double a_nom = policy(s);
    double a_exec = a_nom;
    if (filter != nullptr) {
      FilterDecision d = (*filter)(s, a_nom);
      a_exec = clamp_action(d.action);
      rec.decisions.push_back(d);
    }
    rec.actions_nominal.push_back(a_nom);
    rec.actions_executed.push_back(a_exec);
    rec.override_magnitudes.push_back(std::abs(a_exec - a_nom));
    s = dynamics(s, a_exec);
    rec.states.push_back(s);
    rec.margin_values.push_back(signed_distance_margin(s, spec));
    if (rec.margin_values.back() < 0.0) {
      rec.collided = true;
      break;
    }
  }
  return rec;
}

void write_trajectory_csv(const TrajectoryRecord& rec, std::ostream& out) {
  const bool filtered = !rec.decisions.empty();
  out << "t,x,y,theta,a_nom,a_exec,margin,overridden";
  if (filtered) out << ",feasible_count,q_nominal,q_fallback";
  out << '\n';
  char buf[512];
  for (std::size_t t = 0; t < rec.states.size(); ++t) {
    const State& s = rec.states[t];
    if (t < rec.actions_executed.size()) {
      const bool overridden = rec.override_magnitudes[t] >= 1e-9;
      std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%d", t, s.x, s.y, s.theta,
                    rec.actions_nominal[t], rec.actions_executed[t], rec.margin_values[t], overridden ? 1 : 0);
      out << buf;
      if (filtered) {
        const auto& d = rec.decisions[t];
        std::snprintf(buf, sizeof buf, ",%d,%.10g,%.10g", d.feasible_count, d.q_nominal, d.q_fallback);
        out << buf;
      }
    } else {
      // terminal state: no action taken
      std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,,,%.10g,0", t, s.x, s.y, s.theta, rec.margin_values[t]);
      out << buf;
      if (filtered) out << ",,,";
    }
    out << '\n';
  }
}

State sample_initial_state(Rng& rng) {
  State s;
  s.x = rng.uniform(-1.5, -1.0);
  s.y = rng.uniform(-1.0, 1.0);
  s.theta = rng.uniform(-kPi / 3.0, kPi / 3.0);
  return s;
}

State sample_state_box(Rng& rng) {
  State s;
  s.x = rng.uniform(-kWorkspaceBound, kWorkspaceBound);
  s.y = rng.uniform(-kWorkspaceBound, kWorkspaceBound);
  s.theta = rng.uniform(-kPi, kPi);
  return s;
}

double estimate_dynamics_lipschitz(const Dynamics& dynamics, int n_samples, double perturbation, std::uint64_t seed) {
  if (n_samples < 1000) throw InvalidArgument("estimate_dynamics_lipschitz needs at least 1000 samples");
  if (perturbation <= 0.0) throw InvalidArgument("perturbation must be positive");
  Rng rng(seed);
  double best = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const State s = sample_state_box(rng);
    const double a = rng.uniform(-kActionBound, kActionBound);
    double d[3] = {rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (n < 1e-12) continue;
    State p{s.x + perturbation * d[0] / n, s.y + perturbation * d[1] / n, wrap_angle(s.theta + perturbation * d[2] / n)};
    const double in_dist = state_distance(p, s);
    if (in_dist <= 0.0) continue;
    best = std::max(best, state_distance(dynamics(p, a), dynamics(s, a)) / in_dist);
  }
  return best;
}

}  // namespace cbfforge
