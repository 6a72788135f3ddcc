#pragma once

// Margin functions: the saturated sign-loss classifier (NoGP) and the
// gradient-penalized discriminator (GP), plus the metrics used to compare them.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cbfforge/dubins.hpp"
#include "cbfforge/tensor.hpp"

namespace cbfforge {

struct MarginDataset {
  std::vector<State> safe_points;  // signed distance >= 0
  std::vector<State> fail_points;
};

// n states uniform over the state box, labelled by ground-truth failure membership.
MarginDataset make_margin_dataset(int n, const FailureSpec& spec, std::uint64_t seed);

struct MarginTrainConfig {
  double lambda_zs = 0.1;
  double lambda_gp = 10.0;
  double lambda_sign = 1.0;
  double beta = 0.1;
  double delta = 0.75;  // sign-loss margin for NoGP; GP always uses 0
  int batch_size = 256;
  int iterations = 3000;
  double learning_rate = 1e-3;
  bool use_gp = true;
  std::vector<int> hidden = {64, 64};
  std::uint64_t seed = 0;
};

struct MarginTrainLog {
  std::vector<double> loss;
  int degenerate_penalty_points = 0;
};

// Network input for a state: (x, y, cos theta, sin theta), so the margin is
// continuous across the angle wrap.
Eigen::MatrixXd states_to_matrix(std::span<const State> states);
double margin_value(const MlpNet& net, const State& s);

// mean max(0, delta - l(z+)) + mean max(0, delta + l(z-))
double sign_loss(const MlpNet& net, std::span<const State> safe, std::span<const State> fail, double delta);
// Same value; adds weight * gradient into grad.
double sign_loss_gradient(const MlpNet& net, std::span<const State> safe, std::span<const State> fail, double delta,
                          double weight, ParamSet* grad);

// eta * z_minus + (1 - eta) * z_plus, theta along the shorter arc.
State interpolate_pair(const State& z_plus, const State& z_minus, double eta);

struct WganLoss {
  double value = 0.0;
  double zero_sum = 0.0;  // mean l(z-) - mean l(z+)
  double penalty = 0.0;   // mean (||grad l(z_hat)|| - beta)^2
  int degenerate = 0;
  ParamSet grad;
};

// Pairs safe[i] with fail[i % |fail|] and interpolates with etas[i].
WganLoss wgan_loss(const MlpNet& net, std::span<const State> safe, std::span<const State> fail,
                   std::span<const double> etas, const MarginTrainConfig& cfg);

MlpNet train_margin(const MarginDataset& data, const MarginTrainConfig& cfg, MarginTrainLog* log = nullptr);

struct MarginMetrics {
  double f1 = 0.0;
  double tp = 0.0, tn = 0.0, fp = 0.0, fn = 0.0;  // fractions of all evaluated states
  double max_step_delta_mean = 0.0;
  double max_step_delta_std = 0.0;
  std::size_t states = 0;
};

using MarginFn = std::function<double(const State&)>;

// "Safe" is the positive class; ground truth from spec.
MarginMetrics evaluate_margin(const MarginFn& margin, std::span<const TrajectoryRecord> trajectories,
                              const FailureSpec& spec);

void write_margin_metrics_csv(const MarginMetrics& m, std::ostream& out);

// max over random close pairs of |l(a) - l(b)| / dist(a, b)
double empirical_margin_lipschitz(const MarginFn& margin, int pairs, double radius, std::uint64_t seed);

}  // namespace cbfforge
