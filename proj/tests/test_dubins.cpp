#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "cbfforge/dubins.hpp"
#include "cbfforge/error.hpp"

using namespace cbfforge;
using std::numbers::pi;

namespace {

// Largest singular value of the finite-difference Jacobian of one step, over
// a 10x10x10 lattice of interior states and a handful of actions.
double max_jacobian_norm(double dt) {
  double best = 0.0;
  const double h = 1e-6;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j)
      for (int k = 0; k < 10; ++k)
        for (double a : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
          const State s{-1.3 + 2.6 * i / 9.0, -1.3 + 2.6 * j / 9.0, -pi + 2.0 * pi * k / 10.0};
          Eigen::Matrix3d J;
          for (int c = 0; c < 3; ++c) {
            State up = s, down = s;
            double* u = c == 0 ? &up.x : c == 1 ? &up.y : &up.theta;
            double* d = c == 0 ? &down.x : c == 1 ? &down.y : &down.theta;
            *u += h;
            *d -= h;
            const State fu = dynamics_step(up, a, dt), fd = dynamics_step(down, a, dt);
            J(0, c) = (fu.x - fd.x) / (2 * h);
            J(1, c) = (fu.y - fd.y) / (2 * h);
            J(2, c) = angle_diff(fu.theta, fd.theta) / (2 * h);
          }
          best = std::max(best, Eigen::JacobiSVD<Eigen::Matrix3d>(J).singularValues()(0));
        }
  return best;
}

}  // namespace

TEST_CASE("dynamics step examples") {
  const State a = dynamics_step({0, 0, 0}, 0.0, 0.1);
  CHECK(a.x == 0.1);
  CHECK(a.y == 0.0);
  CHECK(a.theta == 0.0);

  const State b = dynamics_step({0, 0, pi}, 0.0, 0.1);
  CHECK(b.x == doctest::Approx(-0.1).epsilon(1e-15));
  CHECK(std::abs(b.y) < 1e-15);
  CHECK(b.theta == doctest::Approx(-pi));  // pi wraps to -pi

  // Closed-form arc for a constant turn rate.
  const State c = dynamics_step({0, 0, 0}, 2.0, 0.1);
  CHECK(std::abs(c.x - std::sin(0.2) / 2.0) < 1e-6);
  CHECK(std::abs(c.y - (1.0 - std::cos(0.2)) / 2.0) < 1e-6);
  CHECK(c.theta == doctest::Approx(0.2));
}

TEST_CASE("straight-line steps move exactly dt along the heading") {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const State s{rng.uniform(-1.3, 1.3), rng.uniform(-1.3, 1.3), rng.uniform(-pi, pi)};
    const State n = dynamics_step(s, 0.0, 0.1);
    CHECK(n.theta == s.theta);
    CHECK(n.x == doctest::Approx(s.x + 0.1 * std::cos(s.theta)).epsilon(1e-14));
    CHECK(n.y == doctest::Approx(s.y + 0.1 * std::sin(s.theta)).epsilon(1e-14));
  }
}

TEST_CASE("workspace clamp and angle wrap") {
  const State s = dynamics_step({1.48, -1.49, -pi / 4}, 0.0, 0.1);
  CHECK(s.x == 1.5);
  CHECK(s.y == -1.5);
  Rng rng(4);
  for (int t = 0; t < 1000; ++t) {
    const State z = dynamics_step(sample_state_box(rng), rng.uniform(-2, 2), 0.1);
    CHECK(std::abs(z.x) <= 1.5);
    CHECK(std::abs(z.y) <= 1.5);
    CHECK(z.theta >= -pi);
    CHECK(z.theta < pi);
  }
  CHECK(wrap_angle(pi) == doctest::Approx(-pi));
  CHECK(wrap_angle(3 * pi + 0.1) == doctest::Approx(-pi + 0.1));
  CHECK(angle_diff(pi - 0.1, -pi + 0.1) == doctest::Approx(-0.2));
  CHECK(state_distance({0, 0, pi - 0.05}, {0, 0, -pi + 0.05}) == doctest::Approx(0.1));
}

TEST_CASE("action validation") {
  CHECK_NOTHROW(validate_action(2.0));
  CHECK_NOTHROW(validate_action(-2.0));
  CHECK_THROWS_AS(validate_action(2.0001), InvalidArgument);
  CHECK_THROWS_AS(validate_action(std::nan("")), InvalidArgument);
  CHECK(clamp_action(7.0) == 2.0);
}

TEST_CASE("signed distance margin") {
  const FailureSpec spec = FailureSpec::dubins_default();
  CHECK(signed_distance_margin({0.25, 0.65, 1.0}, spec) == doctest::Approx(-0.5));
  CHECK(signed_distance_margin({0.25, 0.15, -2.0}, spec) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(signed_distance_margin({-1.5, 0, 0}, spec) == doctest::Approx(1.3668154702594468).epsilon(1e-12));
  CHECK(std::isinf(signed_distance_margin({0, 0, 0}, FailureSpec::none())));
}

TEST_CASE("margin sign matches strict circle membership on a 201x201 lattice") {
  const FailureSpec spec = FailureSpec::dubins_default();
  for (int i = 0; i <= 200; ++i)
    for (int j = 0; j <= 200; ++j) {
      const double x = -1.5 + 3.0 * i / 200.0, y = -1.5 + 3.0 * j / 200.0;
      bool inside = false;
      for (const Circle& c : spec.circles)
        inside = inside || (x - c.cx) * (x - c.cx) + (y - c.cy) * (y - c.cy) < c.radius * c.radius;
      const State s{x, y, 0.0};
      CHECK((signed_distance_margin(s, spec) < 0.0) == inside);
      CHECK(in_failure(s, spec) == inside);
    }
}

TEST_CASE("signed distance margin is 1-Lipschitz in position") {
  const FailureSpec spec = FailureSpec::dubins_default();
  Rng rng(6);
  for (int t = 0; t < 5000; ++t) {
    const State a = sample_state_box(rng), b = sample_state_box(rng);
    const double dl = std::abs(signed_distance_margin(a, spec) - signed_distance_margin(b, spec));
    CHECK(dl <= std::hypot(a.x - b.x, a.y - b.y) + 1e-12);
  }
}

TEST_CASE("nominal policy") {
  const FailureSpec spec = FailureSpec::dubins_default();
  NominalPolicyConfig cfg;
  cfg.goal_x = 1.3;
  cfg.goal_y = 0.0;
  cfg.gain = 2.0;
  CHECK(nominal_policy({-1, 0, 0}, cfg, spec, nullptr) == 0.0);
  CHECK(nominal_policy({-1, 0, pi / 2}, cfg, spec, nullptr) == -2.0);

  // Past the goal line the heading target stays forward.
  CHECK(nominal_policy({1.45, 0, 0}, cfg, spec, nullptr) == 0.0);

  cfg.noise_std = 0.3;
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const double a = nominal_policy(sample_state_box(rng), cfg, spec, &rng);
    CHECK(std::abs(a) <= 2.0);
  }
  CHECK(nominal_mode_from_string(to_string(NominalMode::obstacle_aware)) == NominalMode::obstacle_aware);
}

TEST_CASE("obstacle-aware mode steers away from a circle ahead") {
  const FailureSpec spec = FailureSpec::dubins_default();
  NominalPolicyConfig cfg;
  cfg.goal_y = 0.65;
  cfg.mode = NominalMode::obstacle_aware;
  // Heading at the upper circle, 0.25 from its edge: the blind policy drifts
  // toward the goal (slightly left), the aware one turns right, away from it.
  const State s{-0.5, 0.6, 0.0};
  NominalPolicyConfig blind = cfg;
  blind.mode = NominalMode::obstacle_blind;
  CHECK(nominal_policy(s, blind, spec, nullptr) > 0.0);
  CHECK(nominal_policy(s, cfg, spec, nullptr) < 0.0);
}

TEST_CASE("rollout bookkeeping") {
  const FailureSpec spec = FailureSpec::dubins_default();
  const Policy zero = [](const State&) { return 0.0; };

  const TrajectoryRecord one = rollout(zero, nullptr, {0, 0, 0}, 1, spec, dubins_dynamics());
  REQUIRE(one.states.size() == 2);
  CHECK(one.states[1].x == 0.1);
  CHECK_FALSE(one.collided);
  CHECK(one.actions_executed == std::vector<double>{0.0});

  const TrajectoryRecord dead = rollout(zero, nullptr, {0.25, 0.65, 0}, 10, spec, dubins_dynamics());
  CHECK(dead.collided);
  CHECK(dead.actions_executed.empty());
  CHECK(dead.states.size() == 1);

  CHECK_THROWS_AS(rollout(zero, nullptr, {0, 0, 0}, 0, spec, dubins_dynamics()), InvalidArgument);
}

TEST_CASE("pass-through filter reproduces the unfiltered rollout") {
  const FailureSpec spec = FailureSpec::dubins_default();
  NominalPolicyConfig cfg;
  cfg.gain = 3.0;
  const Policy pol = [&](const State& s) { return nominal_policy(s, cfg, spec, nullptr); };
  const ActionFilterFn pass = [](const State&, double a) {
    FilterDecision d;
    d.action = a;
    return d;
  };
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const State x0 = sample_initial_state(rng);
    const auto a = rollout(pol, nullptr, x0, 60, spec, dubins_dynamics());
    const auto b = rollout(pol, &pass, x0, 60, spec, dubins_dynamics());
    CHECK(a.actions_executed == b.actions_executed);
    CHECK(a.margin_values == b.margin_values);
    CHECK(a.collided == b.collided);
    for (double m : b.override_magnitudes) CHECK(m == 0.0);
  }
}

TEST_CASE("a filtered rollout never executes an out-of-range action") {
  const FailureSpec spec = FailureSpec::none();
  const Policy pol = [](const State&) { return 0.0; };
  const ActionFilterFn wild = [](const State& s, double) {
    FilterDecision d;
    d.action = s.x > 0 ? 9.0 : -9.0;
    return d;
  };
  const auto rec = rollout(pol, &wild, {-0.05, 0, 0}, 30, spec, dubins_dynamics());
  for (double a : rec.actions_executed) CHECK(std::abs(a) <= 2.0);
}

TEST_CASE("initial-condition sampler covers its box only") {
  Rng rng(10);
  for (int t = 0; t < 2000; ++t) {
    const State s = sample_initial_state(rng);
    CHECK(s.x >= -1.5);
    CHECK(s.x <= -1.0);
    CHECK(std::abs(s.y) <= 1.0);
    CHECK(std::abs(s.theta) <= pi / 3);
  }
}

TEST_CASE("trajectory csv columns") {
  const TrajectoryRecord rec =
      rollout([](const State&) { return 0.0; }, nullptr, {0, 0, 0}, 2, FailureSpec::none(), dubins_dynamics());
  std::ostringstream out;
  write_trajectory_csv(rec, out);
  CHECK(out.str().rfind("t,x,y,theta,a_nom,a_exec,margin,overridden\n", 0) == 0);
}

TEST_CASE("dynamics Lipschitz estimate") {
  const Dynamics frozen = [](const State& s, double) { return s; };
  CHECK(estimate_dynamics_lipschitz(frozen, 2000, 1e-4, 0) == doctest::Approx(1.0).epsilon(1e-9));

  const Dynamics spin = [](const State& s, double a) { return State{s.x, s.y, wrap_angle(s.theta + a * 0.1)}; };
  CHECK(estimate_dynamics_lipschitz(spin, 2000, 1e-4, 0) == doctest::Approx(1.0).epsilon(1e-9));

  const double L_f = estimate_dynamics_lipschitz(dubins_dynamics(0.1), 20000, 1e-4, 0);
  // Reference from the seed-0 estimator run.
  CHECK(L_f == doctest::Approx(1.0512295695924259).epsilon(1e-12));
  const double jac = max_jacobian_norm(0.1);
  MESSAGE("L_f estimate " << L_f << ", max Jacobian spectral norm " << jac);
  CHECK(L_f <= jac * (1.0 + 1e-3));
  CHECK(L_f >= jac * 0.97);

  CHECK_THROWS_AS(estimate_dynamics_lipschitz(frozen, 10, 1e-4, 0), InvalidArgument);
}
