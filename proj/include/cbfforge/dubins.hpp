#pragma once

// Dubins car benchmark: s = (x, y, theta), turn-rate action in [-2, 2],
// RK4 integration, circular obstacles.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cbfforge/rng.hpp"

namespace cbfforge {

inline constexpr double kWorkspaceBound = 1.5;
inline constexpr double kActionBound = 2.0;
inline constexpr double kDefaultDt = 0.1;

// Doubles as the latent vector z; the privileged state stands in for it.
struct State {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

// Wraps to [-pi, pi).
double wrap_angle(double theta);
// Shortest signed angular difference a - b, in [-pi, pi).
double angle_diff(double a, double b);
// Euclidean distance with geodesic distance on theta.
double state_distance(const State& a, const State& b);

double clamp_action(double a);
void validate_action(double a);

// Position increment of one RK4 step; depends only on (theta, action, dt).
struct StepIncrement {
  double dx = 0.0;
  double dy = 0.0;
  double dtheta = 0.0;
};
StepIncrement rk4_increment(double theta, double action, double dt);

// RK4 step, then hard clamp of x, y to the workspace and theta wrap.
State dynamics_step(const State& s, double action, double dt = kDefaultDt);

using Dynamics = std::function<State(const State&, double)>;
Dynamics dubins_dynamics(double dt = kDefaultDt);

struct Circle {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 1.0;
};

struct FailureSpec {
  std::vector<Circle> circles;

  static FailureSpec dubins_default();
  static FailureSpec none() { return {}; }
};

// min over circles of (distance to center - radius); +inf with no circles.
double signed_distance_margin(const State& s, const FailureSpec& spec);
bool in_failure(const State& s, const FailureSpec& spec);

enum class NominalMode { obstacle_blind, obstacle_aware };

struct NominalPolicyConfig {
  double goal_x = 1.3;
  double goal_y = 0.0;
  // Per-rollout goal y is drawn uniformly from this range by the experiment driver.
  double goal_y_min = -0.6;
  double goal_y_max = 0.6;
  double gain = 2.0;
  // The goal x acts as a goal line: the heading target never points backward
  // past it, so the car keeps driving forward instead of looping back.
  double goal_lookahead = 0.2;
  NominalMode mode = NominalMode::obstacle_blind;
  double noise_std = 0.0;
  double repulsion_gain = 1.5;
  double repulsion_range = 0.4;
  std::uint64_t seed = 0;
};

std::string to_string(NominalMode m);
NominalMode nominal_mode_from_string(const std::string& s);

// Proportional heading controller toward the goal, clamped to the action bound.
// Noise (if any) is drawn from rng; pass nullptr for the noise-free action.
double nominal_policy(const State& s, const NominalPolicyConfig& cfg, const FailureSpec& spec, Rng* rng);

using Policy = std::function<double(const State&)>;

struct FilterDecision {
  double action = 0.0;
  bool overridden = false;
  double delta_a = 0.0;
  int feasible_count = 0;
  double q_nominal = 0.0;
  double q_fallback = 0.0;
};

using ActionFilterFn = std::function<FilterDecision(const State&, double)>;

struct TrajectoryRecord {
  std::vector<State> states;
  std::vector<double> actions_nominal;
  std::vector<double> actions_executed;
  std::vector<double> margin_values;  // ground-truth signed distance per state
  std::vector<double> override_magnitudes;
  std::vector<FilterDecision> decisions;  // empty when unfiltered
  bool collided = false;
};

// Runs the policy (through the filter when given) for up to steps actions,
// stopping at the first state inside a failure circle.
TrajectoryRecord rollout(const Policy& policy, const ActionFilterFn* filter, const State& x0, int steps,
                         const FailureSpec& spec, const Dynamics& dynamics);

// CSV: t,x,y,theta,a_nom,a_exec,margin,overridden[,feasible_count,q_nominal,q_fallback]
void write_trajectory_csv(const TrajectoryRecord& rec, std::ostream& out);

// Uniform over x in [-1.5,-1], y in [-1,1], theta in [-pi/3, pi/3].
State sample_initial_state(Rng& rng);
// Uniform over the full state box.
State sample_state_box(Rng& rng);

// max over sampled (s, a, unit d) of dist(f(s + h d, a), f(s, a)) / h.
double estimate_dynamics_lipschitz(const Dynamics& dynamics, int n_samples, double perturbation, std::uint64_t seed);

}  // namespace cbfforge
