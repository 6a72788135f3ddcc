#pragma once

// Dense feed-forward networks with hand-written reverse-mode derivatives.
//
// Batches are column-major: an input batch is a (input_dim x B) matrix and
// every layer keeps one column per sample. Weight matrix k has shape
// layer_dims[k+1] x layer_dims[k].

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cbfforge {

enum class Activation { relu, silu, identity, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Weights and biases, also used as the gradient / optimizer-moment container.
struct ParamSet {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  void set_zero();
  ParamSet& operator+=(const ParamSet& other);
  ParamSet& operator*=(double s);
  std::size_t size() const;
  double squared_norm() const;
  // Flat view, layer by layer: row-major weights then bias.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
};

struct MlpNet {
  std::vector<int> layer_dims;
  ParamSet params;
  Activation hidden_activation = Activation::relu;
  Activation output_activation = Activation::identity;

  static MlpNet zeros(std::vector<int> dims, Activation hidden, Activation output);
  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  static MlpNet init_uniform(std::vector<int> dims, Activation hidden, Activation output, std::uint64_t seed);

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  std::size_t num_layers() const { return params.weights.size(); }
  ParamSet zeros_like() const;
};

// Intermediate values of a batched forward pass, kept for backpropagation.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> pre;   // pre-activations, one per layer
  std::vector<Eigen::MatrixXd> post;  // post[0] is the input batch
};

Eigen::VectorXd mlp_forward(const MlpNet& net, std::span<const double> input);
Eigen::MatrixXd mlp_forward_batch(const MlpNet& net, const Eigen::MatrixXd& inputs, ForwardCache* cache = nullptr);

// Accumulates d(loss)/d(params) into grad given d(loss)/d(output) for every
// column of the cached batch. Returns d(loss)/d(input), one column per sample.
Eigen::MatrixXd mlp_backward(const MlpNet& net, const ForwardCache& cache, const Eigen::MatrixXd& output_grad,
                             ParamSet* grad);

// Gradient of a scalar-output net with respect to its input.
Eigen::VectorXd mlp_input_gradient(const MlpNet& net, std::span<const double> input);
Eigen::MatrixXd mlp_input_gradient_batch(const MlpNet& net, const Eigen::MatrixXd& inputs);

// d(loss)/d(params) where loss = sum_i output_grad_i . net(inputs_i).
ParamSet param_gradient(const MlpNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& output_grad);

struct PenaltyResult {
  double mean_penalty = 0.0;   // mean of (||grad_z l|| - beta)^2
  double mean_grad_norm = 0.0;
  int degenerate = 0;          // points with ||grad_z l|| < 1e-12, contribute no gradient
};

// Adds weight * d/d(params) mean_i (||grad_z net(points_i)|| - beta)^2 into grad
// by differentiating the input-gradient computation itself (reverse over a
// tangent pass). Requires a scalar-output net.
PenaltyResult penalty_param_gradient(const MlpNet& net, const Eigen::MatrixXd& points, double beta, double weight,
                                     ParamSet* grad);

struct AdamState {
  std::uint64_t step_count = 0;
  ParamSet first_moment;
  ParamSet second_moment;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon_num = 1e-8;

  static AdamState for_net(const MlpNet& net, double learning_rate);
};

void adam_step(AdamState& state, MlpNet& net, const ParamSet& grads);

// target <- (1 - tau) * target + tau * source
void soft_update(MlpNet& target, const MlpNet& source, double tau);

void save_mlp(const MlpNet& net, std::ostream& out);
void save_mlp(const MlpNet& net, const std::string& path);
MlpNet load_mlp(std::istream& in);
MlpNet load_mlp(const std::string& path);

}  // namespace cbfforge
