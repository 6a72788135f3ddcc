#pragma once

// Actor-critic approximation of the discounted safety value with a replay
// buffer that mixes fallback-policy and nominal-policy episodes.

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cbfforge/dubins.hpp"
#include "cbfforge/filter.hpp"
#include "cbfforge/hj.hpp"
#include "cbfforge/margin.hpp"
#include "cbfforge/tensor.hpp"

namespace cbfforge {

enum class TransitionSource { fallback_policy, nominal_policy };

struct Transition {
  State z;
  double a = 0.0;
  double l = 0.0;  // tanh of the margin at z
  State z_next;
  double a_next = 0.0;
  TransitionSource source = TransitionSource::fallback_policy;
};

// FIFO ring; the oldest transition is evicted once capacity is reached.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(const Transition& t);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return entries_[i]; }
  // Counts over everything ever pushed.
  std::uint64_t pushed(TransitionSource s) const;
  // Fraction of currently stored transitions with nominal source.
  double nominal_fraction() const;
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::deque<Transition> entries_;
  std::uint64_t pushed_nominal_ = 0;
  std::uint64_t pushed_fallback_ = 0;
  std::size_t stored_nominal_ = 0;
};

// Action the Bellman target bootstraps from on nominal-source transitions.
// target_actor: pi_safe(z') from the target actor, so nominal episodes widen
// the (z, a) coverage without pulling the critic toward the nominal policy's
// own value. stored_action: the stored same-source a'.
enum class NominalBootstrap { target_actor, stored_action };
std::string to_string(NominalBootstrap b);
NominalBootstrap nominal_bootstrap_from_string(const std::string& s);

struct RlConfig {
  double gamma = 0.995;
  double critic_lr = 3e-4;
  double actor_lr = 1e-4;
  int batch_size = 256;
  int buffer_capacity = 100000;
  int iterations = 40000;
  int episode_len = 8;
  std::vector<int> actor_hidden = {64, 64};
  std::vector<int> critic_hidden = {128, 128};
  double tau = 0.005;
  double exploration_std = 0.3;
  double exploration_std_final = 0.05;
  bool mix_nominal = true;
  NominalBootstrap nominal_bootstrap = NominalBootstrap::target_actor;
  int episodes_per_iteration = 1;
  double divergence_threshold = 1e3;
  int checkpoint_every = 10000;
  int log_every = 100;
  double dt = kDefaultDt;
  std::uint64_t seed = 0;

  void validate() const;
};

// Critic input (x, y, cos theta, sin theta, a / 2); actor input drops the action.
Eigen::MatrixXd critic_features(std::span<const State> states, std::span<const double> actions);
Eigen::MatrixXd actor_features(std::span<const State> states);
// Actor output is tanh-squashed and scaled to the action bound.
double actor_action(const MlpNet& actor, const State& z);
void actor_actions(const MlpNet& actor, std::span<const State> states, std::span<double> out);
double critic_value(const MlpNet& critic, const State& z, double a);

struct SafetyAgent {
  MlpNet actor;
  MlpNet critic;
  MlpNet target_actor;
  MlpNet target_critic;
  AdamState actor_opt;
  AdamState critic_opt;

  static SafetyAgent create(const RlConfig& cfg);
};

// Bellman target (1 - gamma) l + gamma min{l, q_next}.
double bellman_target(double l, double q_next, double gamma);

// Rolls one episode of episode_len steps from a uniform reset state and
// appends the transitions. The source is a fair coin when mix_nominal is set.
int collect_episode(const MlpNet& actor, const NominalPolicyConfig& nominal_cfg, const FailureSpec& spec,
                    const MarginFn& margin, ReplayBuffer& buffer, const RlConfig& cfg, double exploration_std,
                    Rng& rng);

// Fallback-source transitions bootstrap from the target actor at z';
// nominal-source ones per cfg.nominal_bootstrap. Soft-updates the target critic.
double critic_update(SafetyAgent& agent, std::span<const Transition* const> batch, const RlConfig& cfg);

// Returns Q(z_i, a_i) in values and dQ/da in grads for a batch.
using CriticGradFn =
    std::function<void(std::span<const State> z, std::span<const double> a, std::span<double> values,
                       std::span<double> grads)>;
CriticGradFn critic_grad_fn(const MlpNet& critic);

// One Adam step on -mean Q(z, actor(z)); returns that loss.
double actor_update(MlpNet& actor, AdamState& opt, const CriticGradFn& critic, std::span<const State> states);
// Same, against the agent's critic, then soft-updates the target actor.
double actor_update(SafetyAgent& agent, std::span<const Transition* const> batch, const RlConfig& cfg);

struct RlCurvePoint {
  int iter = 0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double buffer_nominal_frac = 0.0;
};

struct RlTrainResult {
  MlpNet actor;
  MlpNet critic;
  std::vector<RlCurvePoint> curve;
};

// Throws Divergence when the critic loss exceeds cfg.divergence_threshold.
// When checkpoint_dir is non-empty, writes actor/critic every checkpoint_every iterations.
RlTrainResult train_safety_rl(const MarginFn& margin, const NominalPolicyConfig& nominal_cfg, const FailureSpec& spec,
                              const RlConfig& cfg, const std::string& checkpoint_dir = "");

void write_rl_curve_csv(std::span<const RlCurvePoint> curve, std::ostream& out);

class NeuralSafetyModel : public SafetyModel {
 public:
  NeuralSafetyModel(MlpNet critic, MlpNet actor);
  void q_batch(std::span<const State> states, std::span<const double> actions, std::span<double> out) const override;
  void fallback_batch(std::span<const State> states, std::span<double> out) const override;

  const MlpNet& critic() const { return critic_; }
  const MlpNet& actor() const { return actor_; }

 private:
  MlpNet critic_;
  MlpNet actor_;
};

// Mean |Q(z, a) - q_from_value(z, a)| over n states uniform in the state box,
// with a from the nominal policy (per-sample goal, its configured noise) or
// the fallback actor.
double critic_error_vs_oracle(const SafetyModel& model, const GridField& value, const GridField& margin, double gamma,
                              double dt, TransitionSource eval_source, const NominalPolicyConfig& nominal_cfg,
                              const FailureSpec& spec, int n, std::uint64_t seed);

}  // namespace cbfforge
