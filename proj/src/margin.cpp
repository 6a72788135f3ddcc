#include "cbfforge/margin.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "cbfforge/error.hpp"
#include "cbfforge/rng.hpp"

namespace cbfforge {

MarginDataset make_margin_dataset(int n, const FailureSpec& spec, std::uint64_t seed) {
  if (n <= 0) throw InvalidArgument("dataset size must be positive");
  Rng rng(seed);
  MarginDataset data;
  for (int i = 0; i < n; ++i) {
    const State s = sample_state_box(rng);
    (in_failure(s, spec) ? data.fail_points : data.safe_points).push_back(s);
  }
  return data;
}

Eigen::MatrixXd states_to_matrix(std::span<const State> states) {
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

double margin_value(const MlpNet& net, const State& s) {
  const double in[4] = {s.x, s.y, std::cos(s.theta), std::sin(s.theta)};
  return mlp_forward(net, in)(0);
}

double sign_loss(const MlpNet& net, std::span<const State> safe, std::span<const State> fail, double delta) {
  return sign_loss_gradient(net, safe, fail, delta, 0.0, nullptr);
}

double sign_loss_gradient(const MlpNet& net, std::span<const State> safe, std::span<const State> fail, double delta,
                          double weight, ParamSet* grad) {
  if (safe.empty() || fail.empty()) throw InvalidArgument("sign loss needs non-empty safe and fail batches");
  double loss = 0.0;
  auto side = [&](std::span<const State> batch, double sign) {
    // sign = +1 for safe points: max(0, delta - l); -1 for fail points: max(0, delta + l)
    ForwardCache cache;
    const Eigen::MatrixXd out = mlp_forward_batch(net, states_to_matrix(batch), grad ? &cache : nullptr);
    const double inv = 1.0 / static_cast<double>(batch.size());
    Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(1, out.cols());
    double sum = 0.0;
    for (Eigen::Index i = 0; i < out.cols(); ++i) {
      const double h = delta - sign * out(0, i);
      if (h > 0.0) {
        sum += h;
        d_out(0, i) = -sign * inv * weight;
      }
    }
    if (grad && weight != 0.0) mlp_backward(net, cache, d_out, grad);
    return sum * inv;
  };
  loss += side(safe, 1.0);
  loss += side(fail, -1.0);
  return loss;
}

State interpolate_pair(const State& z_plus, const State& z_minus, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidArgument("interpolation weight must lie in [0, 1]");
  State out;
  out.x = eta * z_minus.x + (1.0 - eta) * z_plus.x;
  out.y = eta * z_minus.y + (1.0 - eta) * z_plus.y;
  out.theta = wrap_angle(z_plus.theta + eta * angle_diff(z_minus.theta, z_plus.theta));
  return out;
}

WganLoss wgan_loss(const MlpNet& net, std::span<const State> safe, std::span<const State> fail,
                   std::span<const double> etas, const MarginTrainConfig& cfg) {
  if (safe.empty() || fail.empty()) throw InvalidArgument("wgan loss needs non-empty safe and fail batches");
  if (etas.size() != safe.size()) throw InvalidArgument("need one interpolation weight per safe sample");
  WganLoss out;
  out.grad = net.zeros_like();

  auto mean_term = [&](std::span<const State> batch, double coef) {
    ForwardCache cache;
    const Eigen::MatrixXd v = mlp_forward_batch(net, states_to_matrix(batch), &cache);
    const double inv = 1.0 / static_cast<double>(batch.size());
    mlp_backward(net, cache, Eigen::MatrixXd::Constant(1, v.cols(), coef * inv), &out.grad);
    return v.sum() * inv;
  };
  const double mean_fail = mean_term(fail, cfg.lambda_zs);
  const double mean_safe = mean_term(safe, -cfg.lambda_zs);
  out.zero_sum = mean_fail - mean_safe;

  std::vector<State> interp(safe.size());
  for (std::size_t i = 0; i < safe.size(); ++i) interp[i] = interpolate_pair(safe[i], fail[i % fail.size()], etas[i]);
  const PenaltyResult pen = penalty_param_gradient(net, states_to_matrix(interp), cfg.beta, cfg.lambda_gp, &out.grad);
  out.penalty = pen.mean_penalty;
  out.degenerate = pen.degenerate;
  out.value = cfg.lambda_zs * out.zero_sum + cfg.lambda_gp * out.penalty;
  return out;
}

MlpNet train_margin(const MarginDataset& data, const MarginTrainConfig& cfg, MarginTrainLog* log) {
  if (data.safe_points.empty() || data.fail_points.empty())
    throw InvalidArgument("margin training needs both safe and failure samples");
  if (cfg.batch_size <= 0 || cfg.iterations <= 0 || cfg.learning_rate <= 0.0 || cfg.beta <= 0.0)
    throw InvalidArgument("margin training config: batch_size, iterations, learning_rate and beta must be positive");

  std::vector<int> dims{4};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(1);
  MlpNet net = MlpNet::init_uniform(dims, Activation::silu, cfg.use_gp ? Activation::identity : Activation::tanh,
                                    cfg.seed);
  AdamState adam = AdamState::for_net(net, cfg.learning_rate);
  Rng rng = Rng::stream(cfg.seed, 0x6d617267696eULL);

  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<State> safe(batch), fail(batch);
  std::vector<double> etas(batch);
  for (int it = 0; it < cfg.iterations; ++it) {
    for (std::size_t i = 0; i < batch; ++i) {
      safe[i] = data.safe_points[rng.index(data.safe_points.size())];
      fail[i] = data.fail_points[rng.index(data.fail_points.size())];
      etas[i] = rng.uniform();
    }
    ParamSet grad;
    double loss = 0.0;
    if (cfg.use_gp) {
      WganLoss w = wgan_loss(net, safe, fail, etas, cfg);
      grad = std::move(w.grad);
      loss = w.value + cfg.lambda_sign * sign_loss_gradient(net, safe, fail, 0.0, cfg.lambda_sign, &grad);
      if (log) log->degenerate_penalty_points += w.degenerate;
    } else {
      grad = net.zeros_like();
      loss = sign_loss_gradient(net, safe, fail, cfg.delta, 1.0, &grad);
    }
    adam_step(adam, net, grad);
    if (log) log->loss.push_back(loss);
  }
  return net;
}

MarginMetrics evaluate_margin(const MarginFn& margin, std::span<const TrajectoryRecord> trajectories,
                              const FailureSpec& spec) {
  if (trajectories.empty()) throw InvalidArgument("evaluate_margin needs at least one trajectory");
  MarginMetrics m;
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::vector<double> max_deltas;
  for (const auto& traj : trajectories) {
    double prev = 0.0;
    double max_delta = 0.0;
    for (std::size_t t = 0; t < traj.states.size(); ++t) {
      const double l = margin(traj.states[t]);
      const bool predicted_safe = l >= 0.0;
      const bool truly_safe = !in_failure(traj.states[t], spec);
      if (predicted_safe && truly_safe) ++tp;
      else if (!predicted_safe && !truly_safe) ++tn;
      else if (predicted_safe) ++fp;
      else ++fn;
      if (t > 0) max_delta = std::max(max_delta, std::abs(l - prev));
      prev = l;
    }
    max_deltas.push_back(max_delta);
  }
  const double total = static_cast<double>(tp + tn + fp + fn);
  m.states = tp + tn + fp + fn;
  m.tp = tp / total;
  m.tn = tn / total;
  m.fp = fp / total;
  m.fn = fn / total;
  const double denom = 2.0 * tp + fp + fn;
  m.f1 = denom > 0.0 ? 2.0 * tp / denom : 0.0;
  double mean = 0.0;
  for (double d : max_deltas) mean += d;
  mean /= static_cast<double>(max_deltas.size());
  double var = 0.0;
  for (double d : max_deltas) var += (d - mean) * (d - mean);
  var /= static_cast<double>(max_deltas.size());
  m.max_step_delta_mean = mean;
  m.max_step_delta_std = std::sqrt(var);
  return m;
}

void write_margin_metrics_csv(const MarginMetrics& m, std::ostream& out) {
  char buf[128];
  out << "metric,value\n";
  auto row = [&](const char* name, double v) {
    std::snprintf(buf, sizeof buf, "%s,%.10g\n", name, v);
    out << buf;
  };
  row("f1", m.f1);
  row("tp", m.tp);
  row("tn", m.tn);
  row("fp", m.fp);
  row("fn", m.fn);
  row("max_step_delta_mean", m.max_step_delta_mean);
  row("max_step_delta_std", m.max_step_delta_std);
  row("states", static_cast<double>(m.states));
}

double empirical_margin_lipschitz(const MarginFn& margin, int pairs, double radius, std::uint64_t seed) {
  Rng rng(seed);
  double best = 0.0;
  for (int i = 0; i < pairs; ++i) {
    const State a = sample_state_box(rng);
    State b{std::clamp(a.x + rng.uniform(-radius, radius), -kWorkspaceBound, kWorkspaceBound),
            std::clamp(a.y + rng.uniform(-radius, radius), -kWorkspaceBound, kWorkspaceBound),
            wrap_angle(a.theta + rng.uniform(-radius, radius))};
    const double d = state_distance(a, b);
    if (d < 1e-9) continue;
    best = std::max(best, std::abs(margin(a) - margin(b)) / d);
  }
  return best;
}

}  // namespace cbfforge
