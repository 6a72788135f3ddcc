#include "cbfforge/safety_rl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <ostream>

#include "cbfforge/error.hpp"

namespace cbfforge {

namespace {

std::vector<int> dims_of(int in, const std::vector<int>& hidden) {
  std::vector<int> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  return dims;
}

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InvalidArgument("replay buffer capacity must be positive");
}

void ReplayBuffer::push(const Transition& t) {
  if (entries_.size() == capacity_) {
    if (entries_.front().source == TransitionSource::nominal_policy) --stored_nominal_;
    entries_.pop_front();
  }
  entries_.push_back(t);
  if (t.source == TransitionSource::nominal_policy) {
    ++pushed_nominal_;
    ++stored_nominal_;
  } else {
    ++pushed_fallback_;
  }
}

std::uint64_t ReplayBuffer::pushed(TransitionSource s) const {
  return s == TransitionSource::nominal_policy ? pushed_nominal_ : pushed_fallback_;
}

double ReplayBuffer::nominal_fraction() const {
  return entries_.empty() ? 0.0 : static_cast<double>(stored_nominal_) / static_cast<double>(entries_.size());
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (entries_.empty()) throw InvalidArgument("cannot sample from an empty replay buffer");
  std::vector<const Transition*> out(n);
  for (auto& p : out) p = &entries_[rng.index(entries_.size())];
  return out;
}

std::string to_string(NominalBootstrap b) {
  return b == NominalBootstrap::target_actor ? "target_actor" : "stored_action";
}

NominalBootstrap nominal_bootstrap_from_string(const std::string& s) {
  if (s == "target_actor") return NominalBootstrap::target_actor;
  if (s == "stored_action") return NominalBootstrap::stored_action;
  throw InvalidArgument("unknown nominal bootstrap '" + s + "'");
}

void RlConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("rl gamma must lie in (0, 1)");
  if (!(critic_lr > 0.0 && actor_lr > 0.0 && tau > 0.0 && tau <= 1.0))
    throw InvalidArgument("rl learning rates and tau must be positive (tau <= 1)");
  if (batch_size <= 0 || buffer_capacity <= 0 || iterations <= 0 || episode_len <= 0 || episodes_per_iteration <= 0)
    throw InvalidArgument("rl batch_size, buffer_capacity, iterations, episode_len, episodes_per_iteration must be positive");
  if (exploration_std < 0.0 || exploration_std_final < 0.0) throw InvalidArgument("exploration noise must be non-negative");
  if (checkpoint_every <= 0 || log_every <= 0) throw InvalidArgument("checkpoint_every and log_every must be positive");
}

Eigen::MatrixXd critic_features(std::span<const State> states, std::span<const double> actions) {
  if (states.size() != actions.size()) throw InvalidArgument("critic_features: size mismatch");
  Eigen::MatrixXd m(5, static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    m(0, c) = states[i].x;
    m(1, c) = states[i].y;
    m(2, c) = std::cos(states[i].theta);
    m(3, c) = std::sin(states[i].theta);
    m(4, c) = actions[i] / kActionBound;
  }
  return m;
}

Eigen::MatrixXd actor_features(std::span<const State> states) {
  Eigen::MatrixXd m(4, static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    m(0, c) = states[i].x;
    m(1, c) = states[i].y;
    m(2, c) = std::cos(states[i].theta);
    m(3, c) = std::sin(states[i].theta);
  }
  return m;
}

double actor_action(const MlpNet& actor, const State& z) {
  double out = 0.0;
  actor_actions(actor, std::span<const State>(&z, 1), std::span<double>(&out, 1));
  return out;
}

void actor_actions(const MlpNet& actor, std::span<const State> states, std::span<double> out) {
  if (states.size() != out.size()) throw InvalidArgument("actor_actions: size mismatch");
  const Eigen::MatrixXd y = mlp_forward_batch(actor, actor_features(states));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = kActionBound * y(0, static_cast<Eigen::Index>(i));
}

double critic_value(const MlpNet& critic, const State& z, double a) {
  return mlp_forward_batch(critic, critic_features(std::span<const State>(&z, 1), std::span<const double>(&a, 1)))(0, 0);
}

SafetyAgent SafetyAgent::create(const RlConfig& cfg) {
  cfg.validate();
  SafetyAgent agent;
  agent.actor = MlpNet::init_uniform(dims_of(4, cfg.actor_hidden), Activation::relu, Activation::tanh,
                                     Rng::splitmix(cfg.seed ^ 0xac7041ULL));
  agent.critic = MlpNet::init_uniform(dims_of(5, cfg.critic_hidden), Activation::relu, Activation::identity,
                                      Rng::splitmix(cfg.seed ^ 0xc417cULL));
  agent.target_actor = agent.actor;
  agent.target_critic = agent.critic;
  agent.actor_opt = AdamState::for_net(agent.actor, cfg.actor_lr);
  agent.critic_opt = AdamState::for_net(agent.critic, cfg.critic_lr);
  return agent;
}

double bellman_target(double l, double q_next, double gamma) { return l + gamma * (std::min(l, q_next) - l); }

int collect_episode(const MlpNet& actor, const NominalPolicyConfig& nominal_cfg, const FailureSpec& spec,
                    const MarginFn& margin, ReplayBuffer& buffer, const RlConfig& cfg, double exploration_std,
                    Rng& rng) {
  const State reset = sample_state_box(rng);
  const bool nominal = cfg.mix_nominal && rng.coin();
  NominalPolicyConfig ncfg = nominal_cfg;
  ncfg.goal_y = rng.uniform(nominal_cfg.goal_y_min, nominal_cfg.goal_y_max);

  auto act = [&](const State& z) {
    if (nominal) return nominal_policy(z, ncfg, spec, &rng);
    double a = actor_action(actor, z);
    if (exploration_std > 0.0) a += exploration_std * rng.normal();
    return clamp_action(a);
  };

  State z = reset;
  double a = act(z);
  for (int t = 0; t < cfg.episode_len; ++t) {
    Transition tr;
    tr.z = z;
    tr.a = a;
    tr.l = std::tanh(margin(z));
    tr.z_next = dynamics_step(z, a, cfg.dt);
    tr.a_next = act(tr.z_next);
    tr.source = nominal ? TransitionSource::nominal_policy : TransitionSource::fallback_policy;
    buffer.push(tr);
    z = tr.z_next;
    a = tr.a_next;
  }
  return cfg.episode_len;
}

double critic_update(SafetyAgent& agent, std::span<const Transition* const> batch, const RlConfig& cfg) {
  if (batch.empty()) throw InvalidArgument("critic_update needs a non-empty batch");
  const std::size_t n = batch.size();
  std::vector<State> z(n), z_next(n);
  std::vector<double> a(n), a_next(n), fb_next(n);
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = batch[i]->z;
    a[i] = batch[i]->a;
    z_next[i] = batch[i]->z_next;
  }
  actor_actions(agent.target_actor, z_next, fb_next);
  for (std::size_t i = 0; i < n; ++i)
    a_next[i] = batch[i]->source == TransitionSource::nominal_policy &&
                        cfg.nominal_bootstrap == NominalBootstrap::stored_action
                    ? batch[i]->a_next
                    : fb_next[i];
  const Eigen::MatrixXd q_next = mlp_forward_batch(agent.target_critic, critic_features(z_next, a_next));

  ForwardCache cache;
  const Eigen::MatrixXd q = mlp_forward_batch(agent.critic, critic_features(z, a), &cache);
  Eigen::MatrixXd d_out(1, static_cast<Eigen::Index>(n));
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const double err = q(0, c) - bellman_target(batch[i]->l, q_next(0, c), cfg.gamma);
    loss += err * err * inv;
    d_out(0, c) = 2.0 * err * inv;
  }
  ParamSet grad = agent.critic.zeros_like();
  mlp_backward(agent.critic, cache, d_out, &grad);
  adam_step(agent.critic_opt, agent.critic, grad);
  soft_update(agent.target_critic, agent.critic, cfg.tau);
  return loss;
}

CriticGradFn critic_grad_fn(const MlpNet& critic) {
  return [&critic](std::span<const State> z, std::span<const double> a, std::span<double> values,
                   std::span<double> grads) {
    const Eigen::MatrixXd x = critic_features(z, a);
    ForwardCache cache;
    const Eigen::MatrixXd q = mlp_forward_batch(critic, x, &cache);
    const Eigen::MatrixXd g =
        mlp_backward(critic, cache, Eigen::MatrixXd::Ones(1, q.cols()), nullptr);
    for (std::size_t i = 0; i < z.size(); ++i) {
      values[i] = q(0, static_cast<Eigen::Index>(i));
      grads[i] = g(4, static_cast<Eigen::Index>(i)) / kActionBound;
    }
  };
}

double actor_update(MlpNet& actor, AdamState& opt, const CriticGradFn& critic, std::span<const State> states) {
  if (states.empty()) throw InvalidArgument("actor_update needs a non-empty batch");
  const std::size_t n = states.size();
  ForwardCache cache;
  const Eigen::MatrixXd y = mlp_forward_batch(actor, actor_features(states), &cache);
  std::vector<double> a(n), q(n), dq(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = kActionBound * y(0, static_cast<Eigen::Index>(i));
  critic(states, a, q, dq);
  const double inv = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd d_out(1, static_cast<Eigen::Index>(n));
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    loss -= q[i] * inv;
    d_out(0, static_cast<Eigen::Index>(i)) = -dq[i] * kActionBound * inv;
  }
  ParamSet grad = actor.zeros_like();
  mlp_backward(actor, cache, d_out, &grad);
  adam_step(opt, actor, grad);
  return loss;
}

double actor_update(SafetyAgent& agent, std::span<const Transition* const> batch, const RlConfig& cfg) {
  std::vector<State> z(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) z[i] = batch[i]->z;
  const double loss = actor_update(agent.actor, agent.actor_opt, critic_grad_fn(agent.critic), z);
  soft_update(agent.target_actor, agent.actor, cfg.tau);
  return loss;
}

RlTrainResult train_safety_rl(const MarginFn& margin, const NominalPolicyConfig& nominal_cfg, const FailureSpec& spec,
                              const RlConfig& cfg, const std::string& checkpoint_dir) {
  cfg.validate();
  SafetyAgent agent = SafetyAgent::create(cfg);
  ReplayBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity));
  Rng collect_rng = Rng::stream(cfg.seed, 0xc011ec7ULL);
  Rng batch_rng = Rng::stream(cfg.seed, 0xba7c4ULL);

  while (buffer.size() < static_cast<std::size_t>(cfg.batch_size))
    collect_episode(agent.actor, nominal_cfg, spec, margin, buffer, cfg, cfg.exploration_std, collect_rng);

  RlTrainResult result;
  double critic_acc = 0.0, actor_acc = 0.0;
  int acc_n = 0;
  for (int it = 1; it <= cfg.iterations; ++it) {
    const double frac = cfg.iterations > 1 ? static_cast<double>(it - 1) / (cfg.iterations - 1) : 1.0;
    const double sigma = cfg.exploration_std + (cfg.exploration_std_final - cfg.exploration_std) * frac;
    for (int e = 0; e < cfg.episodes_per_iteration; ++e)
      collect_episode(agent.actor, nominal_cfg, spec, margin, buffer, cfg, sigma, collect_rng);

    const auto batch = buffer.sample(static_cast<std::size_t>(cfg.batch_size), batch_rng);
    const double c_loss = critic_update(agent, batch, cfg);
    if (!std::isfinite(c_loss) || c_loss > cfg.divergence_threshold) {
      char msg[256];
      std::snprintf(msg, sizeof msg,
                    "critic diverged at iteration %d: loss %.6g exceeds %.6g (buffer %zu, nominal fraction %.3f); "
                    "try a lower critic_lr or tau",
                    it, c_loss, cfg.divergence_threshold, buffer.size(), buffer.nominal_fraction());
      throw Divergence(msg);
    }
    const double a_loss = actor_update(agent, batch, cfg);
    critic_acc += c_loss;
    actor_acc += a_loss;
    ++acc_n;
    if (it % cfg.log_every == 0 || it == cfg.iterations) {
      result.curve.push_back({it, critic_acc / acc_n, actor_acc / acc_n, buffer.nominal_fraction()});
      critic_acc = actor_acc = 0.0;
      acc_n = 0;
    }
    if (!checkpoint_dir.empty() && it % cfg.checkpoint_every == 0) {
      const std::filesystem::path dir(checkpoint_dir);
      std::filesystem::create_directories(dir);
      save_mlp(agent.actor, (dir / ("actor_" + std::to_string(it) + ".mlp")).string());
      save_mlp(agent.critic, (dir / ("critic_" + std::to_string(it) + ".mlp")).string());
    }
  }
  result.actor = std::move(agent.actor);
  result.critic = std::move(agent.critic);
  return result;
}

void write_rl_curve_csv(std::span<const RlCurvePoint> curve, std::ostream& out) {
  out << "iter,critic_loss,actor_loss,buffer_nominal_frac\n";
  char buf[160];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g\n", p.iter, p.critic_loss, p.actor_loss,
                  p.buffer_nominal_frac);
    out << buf;
  }
}

NeuralSafetyModel::NeuralSafetyModel(MlpNet critic, MlpNet actor) : critic_(std::move(critic)), actor_(std::move(actor)) {
  if (critic_.input_dim() != 5 || critic_.output_dim() != 1) throw InvalidArgument("critic must map 5 features to 1 value");
  if (actor_.input_dim() != 4 || actor_.output_dim() != 1) throw InvalidArgument("actor must map 4 features to 1 action");
}

void NeuralSafetyModel::q_batch(std::span<const State> states, std::span<const double> actions,
                                std::span<double> out) const {
  if (states.size() != actions.size() || out.size() != actions.size())
    throw InvalidArgument("q_batch: states, actions and output must have equal length");
  const Eigen::MatrixXd q = mlp_forward_batch(critic_, critic_features(states, actions));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = q(0, static_cast<Eigen::Index>(i));
}

void NeuralSafetyModel::fallback_batch(std::span<const State> states, std::span<double> out) const {
  actor_actions(actor_, states, out);
}

double critic_error_vs_oracle(const SafetyModel& model, const GridField& value, const GridField& margin, double gamma,
                              double dt, TransitionSource eval_source, const NominalPolicyConfig& nominal_cfg,
                              const FailureSpec& spec, int n, std::uint64_t seed) {
  if (n <= 0) throw InvalidArgument("critic_error_vs_oracle needs n > 0");
  Rng rng(seed);
  std::vector<State> z(static_cast<std::size_t>(n));
  std::vector<double> a(z.size());
  for (auto& s : z) s = sample_state_box(rng);
  if (eval_source == TransitionSource::fallback_policy) {
    model.fallback_batch(z, a);
  } else {
    NominalPolicyConfig ncfg = nominal_cfg;
    for (std::size_t i = 0; i < z.size(); ++i) {
      ncfg.goal_y = rng.uniform(nominal_cfg.goal_y_min, nominal_cfg.goal_y_max);
      a[i] = nominal_policy(z[i], ncfg, spec, &rng);
    }
  }
  std::vector<double> q(z.size());
  model.q_batch(z, a, q);
  double mae = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) mae += std::abs(q[i] - q_from_value(value, margin, z[i], a[i], gamma, dt));
  return mae / static_cast<double>(n);
}

}  // namespace cbfforge
