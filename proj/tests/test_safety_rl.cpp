#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "cbfforge/error.hpp"
#include "cbfforge/safety_rl.hpp"

using namespace cbfforge;
namespace fs = std::filesystem;

namespace {

Transition make(double x, TransitionSource src = TransitionSource::fallback_policy) {
  Transition t;
  t.z = {x, 0.0, 0.0};
  t.source = src;
  return t;
}

RlConfig tiny_config() {
  RlConfig c;
  c.iterations = 200;
  c.batch_size = 32;
  c.buffer_capacity = 2000;
  c.actor_hidden = {16};
  c.critic_hidden = {16};
  c.log_every = 50;
  c.checkpoint_every = 100;
  return c;
}

NominalPolicyConfig fixed_goal() {
  NominalPolicyConfig n;
  n.gain = 3.0;
  n.goal_y_min = n.goal_y_max = 0.0;
  return n;
}

// Exposes the grid oracle itself as a safety model.
class OracleModel : public SafetyModel {
 public:
  OracleModel(const GridField& v, const GridField& m, const MlpNet& actor) : v_(v), m_(m), actor_(actor) {}
  void q_batch(std::span<const State> s, std::span<const double> a, std::span<double> out) const override {
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = q_from_value(v_, m_, s[i], a[i], 0.995, 0.1);
  }
  void fallback_batch(std::span<const State> s, std::span<double> out) const override { actor_actions(actor_, s, out); }

 private:
  const GridField& v_;
  const GridField& m_;
  const MlpNet& actor_;
};

}  // namespace

TEST_CASE("Bellman targets") {
  CHECK(bellman_target(1.0, 1.0, 0.995) == doctest::Approx(1.0));
  CHECK(bellman_target(-1.0, 1.0, 0.995) == doctest::Approx(-1.0));
  CHECK(bellman_target(0.5, 0.2, 0.995) == doctest::Approx(0.2015));
}

TEST_CASE("replay buffer is a bounded FIFO") {
  ReplayBuffer buf(3);
  for (int i = 0; i < 5; ++i) buf.push(make(i, i % 2 ? TransitionSource::nominal_policy : TransitionSource::fallback_policy));
  REQUIRE(buf.size() == 3);
  CHECK(buf.capacity() == 3);
  CHECK(buf[0].z.x == 2.0);
  CHECK(buf[2].z.x == 4.0);
  CHECK(buf.pushed(TransitionSource::nominal_policy) == 2);
  CHECK(buf.pushed(TransitionSource::fallback_policy) == 3);
  CHECK(buf.nominal_fraction() == doctest::Approx(1.0 / 3.0));  // only x = 3 remains nominal

  Rng rng(1);
  const auto batch = buf.sample(10, rng);
  CHECK(batch.size() == 10);
  for (const Transition* t : batch) CHECK(t->z.x >= 2.0);
}

TEST_CASE("episode collection") {
  const FailureSpec spec = FailureSpec::dubins_default();
  const MarginFn sd = [&](const State& s) { return signed_distance_margin(s, spec); };
  RlConfig cfg = tiny_config();
  const SafetyAgent agent = SafetyAgent::create(cfg);

  SUBCASE("fallback only when mixing is off") {
    cfg.mix_nominal = false;
    ReplayBuffer buf(1000);
    Rng rng(2);
    for (int e = 0; e < 50; ++e) collect_episode(agent.actor, fixed_goal(), spec, sd, buf, cfg, 0.3, rng);
    CHECK(buf.size() == 400);
    CHECK(buf.pushed(TransitionSource::nominal_policy) == 0);
  }
  SUBCASE("one-step episodes take a' from the same source at z'") {
    cfg.episode_len = 1;
    NominalPolicyConfig ncfg = fixed_goal();
    ncfg.noise_std = 0.0;
    ReplayBuffer buf(1000);
    Rng rng(3);
    for (int e = 0; e < 200; ++e) CHECK(collect_episode(agent.actor, ncfg, spec, sd, buf, cfg, 0.0, rng) == 1);
    REQUIRE(buf.size() == 200);
    int nominal = 0;
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const Transition& t = buf[i];
      if (t.source == TransitionSource::nominal_policy) {
        ++nominal;
        CHECK(t.a == nominal_policy(t.z, ncfg, spec, nullptr));
        CHECK(t.a_next == nominal_policy(t.z_next, ncfg, spec, nullptr));
      } else {
        CHECK(t.a == actor_action(agent.actor, t.z));
        CHECK(t.a_next == actor_action(agent.actor, t.z_next));
      }
    }
    CHECK(nominal > 0);
    CHECK(nominal < 200);
  }
  SUBCASE("transitions chain through the true dynamics with tanh labels") {
    ReplayBuffer buf(1000);
    Rng rng(4);
    collect_episode(agent.actor, fixed_goal(), spec, sd, buf, cfg, 0.3, rng);
    REQUIRE(buf.size() == 8);
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const Transition& t = buf[i];
      const State n = dynamics_step(t.z, t.a, cfg.dt);
      CHECK(t.z_next.x == n.x);
      CHECK(t.z_next.theta == n.theta);
      CHECK(t.l == std::tanh(sd(t.z)));
      CHECK(std::abs(t.l) <= 1.0);
      CHECK(std::abs(t.a) <= 2.0);
      if (i + 1 < buf.size()) {
        CHECK(buf[i + 1].z.x == t.z_next.x);
        CHECK(buf[i + 1].a == t.a_next);
        CHECK(buf[i + 1].source == t.source);
      }
    }
  }
  SUBCASE("mixing splits episodes evenly") {
    cfg.episode_len = 1;
    ReplayBuffer buf(20000);
    Rng rng(5);
    for (int e = 0; e < 10000; ++e) collect_episode(agent.actor, fixed_goal(), spec, sd, buf, cfg, 0.3, rng);
    const double frac = static_cast<double>(buf.pushed(TransitionSource::nominal_policy)) / 10000.0;
    CHECK(frac >= 0.45);
    CHECK(frac <= 0.55);
  }
}

TEST_CASE("critic update regresses onto the Bellman target") {
  RlConfig cfg = tiny_config();
  SafetyAgent agent = SafetyAgent::create(cfg);
  std::vector<Transition> store;
  Rng rng(6);
  for (int i = 0; i < 16; ++i) {
    Transition t;
    t.z = sample_state_box(rng);
    t.a = rng.uniform(-2, 2);
    t.l = rng.uniform(-1, 1);
    t.z_next = dynamics_step(t.z, t.a);
    t.a_next = rng.uniform(-2, 2);
    t.source = i % 2 ? TransitionSource::nominal_policy : TransitionSource::fallback_policy;
    store.push_back(t);
  }
  std::vector<const Transition*> batch;
  for (const auto& t : store) batch.push_back(&t);

  auto expected_loss = [&](const SafetyAgent& ag, NominalBootstrap mode) {
    double loss = 0.0;
    for (const Transition* t : batch) {
      const bool stored = t->source == TransitionSource::nominal_policy && mode == NominalBootstrap::stored_action;
      const double a_next = stored ? t->a_next : actor_action(ag.target_actor, t->z_next);
      const double y = bellman_target(t->l, critic_value(ag.target_critic, t->z_next, a_next), cfg.gamma);
      const double e = critic_value(ag.critic, t->z, t->a) - y;
      loss += e * e / batch.size();
    }
    return loss;
  };

  for (NominalBootstrap mode : {NominalBootstrap::target_actor, NominalBootstrap::stored_action}) {
    cfg.nominal_bootstrap = mode;
    SafetyAgent a = agent;
    const double want = expected_loss(a, mode);
    const double other = expected_loss(a, mode == NominalBootstrap::target_actor ? NominalBootstrap::stored_action
                                                                                   : NominalBootstrap::target_actor);
    const MlpNet target_before = a.target_critic;
    const double got = critic_update(a, batch, cfg);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    CHECK(std::abs(got - other) > 1e-9);
    // Target moved by tau toward the updated critic.
    MlpNet blended = target_before;
    soft_update(blended, a.critic, cfg.tau);
    CHECK(blended.params.flatten() == a.target_critic.params.flatten());
  }

  // A few hundred steps on a fixed batch drive the loss down.
  SafetyAgent b = agent;
  const double first = critic_update(b, batch, cfg);
  double last = first;
  for (int i = 0; i < 300; ++i) last = critic_update(b, batch, cfg);
  CHECK(last < first);

  CHECK_THROWS_AS(critic_update(b, std::span<const Transition* const>{}, cfg), InvalidArgument);
  CHECK(nominal_bootstrap_from_string(to_string(NominalBootstrap::stored_action)) == NominalBootstrap::stored_action);
  CHECK_THROWS_AS(nominal_bootstrap_from_string("current_actor"), InvalidArgument);
}

TEST_CASE("actor update on toy critics") {
  RlConfig cfg = tiny_config();
  const std::vector<State> states = {{0.1, -0.2, 0.3}};

  SUBCASE("peaked critic pulls the action to its maximizer") {
    const CriticGradFn peak = [](std::span<const State>, std::span<const double> a, std::span<double> v,
                                 std::span<double> g) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        v[i] = -(a[i] - 0.7) * (a[i] - 0.7);
        g[i] = -2.0 * (a[i] - 0.7);
      }
    };
    SafetyAgent agent = SafetyAgent::create(cfg);
    AdamState opt = AdamState::for_net(agent.actor, 1e-2);
    for (int i = 0; i < 2000; ++i) actor_update(agent.actor, opt, peak, states);
    CHECK(actor_action(agent.actor, states[0]) == doctest::Approx(0.7).epsilon(1e-3));
  }
  SUBCASE("increasing critic saturates the action at +2") {
    const CriticGradFn up = [](std::span<const State>, std::span<const double> a, std::span<double> v,
                               std::span<double> g) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        v[i] = a[i];
        g[i] = 1.0;
      }
    };
    SafetyAgent agent = SafetyAgent::create(cfg);
    AdamState opt = AdamState::for_net(agent.actor, 1e-2);
    for (int i = 0; i < 2000; ++i) actor_update(agent.actor, opt, up, states);
    CHECK(actor_action(agent.actor, states[0]) > 1.99);
  }
  SUBCASE("flat critic leaves the actor where it is") {
    const CriticGradFn flat = [](std::span<const State>, std::span<const double> a, std::span<double> v,
                                 std::span<double> g) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        v[i] = 0.3;
        g[i] = 0.0;
      }
    };
    SafetyAgent agent = SafetyAgent::create(cfg);
    const auto before = agent.actor.params.flatten();
    AdamState opt = AdamState::for_net(agent.actor, 1e-2);
    const double loss = actor_update(agent.actor, opt, flat, states);
    CHECK(loss == doctest::Approx(-0.3));
    CHECK(agent.actor.params.flatten() == before);
  }
  SUBCASE("critic gradient helper matches finite differences in the action") {
    const SafetyAgent agent = SafetyAgent::create(cfg);
    const CriticGradFn fn = critic_grad_fn(agent.critic);
    Rng rng(7);
    std::vector<State> z(20);
    std::vector<double> a(20), v(20), g(20);
    for (int i = 0; i < 20; ++i) {
      z[i] = sample_state_box(rng);
      a[i] = rng.uniform(-1.9, 1.9);
    }
    fn(z, a, v, g);
    for (int i = 0; i < 20; ++i) {
      CHECK(v[i] == doctest::Approx(critic_value(agent.critic, z[i], a[i])));
      const double h = 1e-6;
      const double fd = (critic_value(agent.critic, z[i], a[i] + h) - critic_value(agent.critic, z[i], a[i] - h)) / (2 * h);
      CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("training") {
  const FailureSpec spec = FailureSpec::dubins_default();
  const MarginFn sd = [&](const State& s) { return signed_distance_margin(s, spec); };

  SUBCASE("bit-reproducible for a fixed seed") {
    const RlConfig cfg = tiny_config();
    const RlTrainResult a = train_safety_rl(sd, fixed_goal(), spec, cfg);
    const RlTrainResult b = train_safety_rl(sd, fixed_goal(), spec, cfg);
    CHECK(a.critic.params.flatten() == b.critic.params.flatten());
    CHECK(a.actor.params.flatten() == b.actor.params.flatten());
    REQUIRE(a.curve.size() == 4);
    CHECK(a.curve.back().iter == 200);
    for (std::size_t i = 0; i < a.curve.size(); ++i) CHECK(a.curve[i].critic_loss == b.curve[i].critic_loss);

    std::ostringstream out;
    write_rl_curve_csv(a.curve, out);
    CHECK(out.str().rfind("iter,critic_loss,actor_loss,buffer_nominal_frac\n", 0) == 0);
  }
  SUBCASE("divergence aborts with diagnostics") {
    RlConfig cfg = tiny_config();
    cfg.divergence_threshold = 1e-12;
    try {
      train_safety_rl(sd, fixed_goal(), spec, cfg);
      FAIL("expected divergence");
    } catch (const Divergence& e) {
      CHECK(std::string(e.what()).find("iteration 1") != std::string::npos);
    }
  }
  SUBCASE("checkpoints land in the requested directory") {
    const fs::path dir = fs::temp_directory_path() / "cbfforge_rl_ckpt_test";
    fs::remove_all(dir);
    train_safety_rl(sd, fixed_goal(), spec, tiny_config(), dir.string());
    CHECK(fs::exists(dir / "actor_100.mlp"));
    CHECK(fs::exists(dir / "critic_200.mlp"));
    fs::remove_all(dir);
  }
  SUBCASE("obstacle-free world: the critic settles on the margin level") {
    RlConfig cfg = tiny_config();
    // From below, the target approaches l at rate tau (1 - gamma) per iteration.
    cfg.iterations = 3000;
    cfg.critic_lr = 1e-3;
    cfg.gamma = 0.9;
    cfg.tau = 0.05;
    const MarginFn half = [](const State&) { return 0.5; };
    const RlTrainResult r = train_safety_rl(half, fixed_goal(), FailureSpec::none(), cfg);
    Rng rng(8);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double q = critic_value(r.critic, sample_state_box(rng), rng.uniform(-2, 2));
      CHECK(q > 0.0);
      worst = std::max(worst, std::abs(q - std::tanh(0.5)));
    }
    MESSAGE("max |Q - tanh(0.5)| = " << worst);
    CHECK(worst < 0.05);
  }
  SUBCASE("config validation") {
    RlConfig cfg = tiny_config();
    cfg.gamma = 1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = tiny_config();
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  }
}

TEST_CASE("critic error against the grid oracle") {
  GridSpec g;
  g.nx = g.ny = 15;
  g.ntheta = 8;
  const FailureSpec spec = FailureSpec::dubins_default();
  const GridField margin = sample_field(g, [&](const State& s) { return std::tanh(signed_distance_margin(s, spec)); });
  const SolveResult sol = value_iteration(margin, default_action_set(), 0.995, 0.1, 1e-5, 3000);
  const SafetyAgent agent = SafetyAgent::create(tiny_config());
  const OracleModel exact(sol.value, margin, agent.actor);
  for (TransitionSource src : {TransitionSource::nominal_policy, TransitionSource::fallback_policy})
    CHECK(critic_error_vs_oracle(exact, sol.value, margin, 0.995, 0.1, src, fixed_goal(), spec, 2000, 1) == 0.0);

  const NeuralSafetyModel neural(agent.critic, agent.actor);
  CHECK(critic_error_vs_oracle(neural, sol.value, margin, 0.995, 0.1, TransitionSource::fallback_policy, fixed_goal(),
                               spec, 2000, 1) > 0.0);
  CHECK_THROWS_AS(NeuralSafetyModel(agent.actor, agent.actor), InvalidArgument);
}
