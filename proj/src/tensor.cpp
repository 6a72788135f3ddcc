#include "cbfforge/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cbfforge/error.hpp"
#include "cbfforge/rng.hpp"

namespace cbfforge {

namespace {

using Eigen::ArrayXXd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

ArrayXXd sigmoid(const ArrayXXd& x) { return 1.0 / (1.0 + (-x).exp()); }

MatrixXd activate(Activation act, const MatrixXd& pre) {
  switch (act) {
    case Activation::relu:
      return pre.cwiseMax(0.0);
    case Activation::silu:
      return (pre.array() * sigmoid(pre.array())).matrix();
    case Activation::identity:
      return pre;
    case Activation::tanh: {
      // tanh rounds to exactly +-1 past |x| ~ 19; keep outputs strictly inside.
      constexpr double kOpen = 1.0 - 0x1.0p-53;
      return pre.array().tanh().cwiseMax(-kOpen).cwiseMin(kOpen).matrix();
    }
  }
  return pre;
}

// First derivative, evaluated elementwise at pre.
ArrayXXd activation_d1(Activation act, const MatrixXd& pre) {
  switch (act) {
    case Activation::relu:
      return (pre.array() > 0.0).cast<double>();
    case Activation::silu: {
      const ArrayXXd s = sigmoid(pre.array());
      return s * (1.0 + pre.array() * (1.0 - s));
    }
    case Activation::identity:
      return ArrayXXd::Ones(pre.rows(), pre.cols());
    case Activation::tanh: {
      const ArrayXXd t = pre.array().tanh();
      return 1.0 - t.square();
    }
  }
  return ArrayXXd::Ones(pre.rows(), pre.cols());
}

ArrayXXd activation_d2(Activation act, const MatrixXd& pre) {
  switch (act) {
    case Activation::relu:
    case Activation::identity:
      return ArrayXXd::Zero(pre.rows(), pre.cols());
    case Activation::silu: {
      const ArrayXXd s = sigmoid(pre.array());
      return s * (1.0 - s) * (2.0 + pre.array() * (1.0 - 2.0 * s));
    }
    case Activation::tanh: {
      const ArrayXXd t = pre.array().tanh();
      return -2.0 * t * (1.0 - t.square());
    }
  }
  return ArrayXXd::Zero(pre.rows(), pre.cols());
}

Activation layer_activation(const MlpNet& net, std::size_t k) {
  return k + 1 == net.num_layers() ? net.output_activation : net.hidden_activation;
}

void check_dims(const std::vector<int>& dims) {
  if (dims.size() < 2) throw InvalidArgument("mlp needs at least an input and an output dimension");
  for (int d : dims)
    if (d <= 0) throw InvalidArgument("mlp layer dimensions must be positive");
}

void require_input(const MlpNet& net, Eigen::Index rows) {
  if (rows != net.input_dim())
    throw InvalidArgument("mlp input has " + std::to_string(rows) + " rows, expected " +
                          std::to_string(net.input_dim()));
}

void require_scalar(const MlpNet& net) {
  if (net.output_dim() != 1) throw InvalidArgument("input gradient requires a scalar-output net");
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::silu:
      return "silu";
    case Activation::identity:
      return "identity";
    case Activation::tanh:
      return "tanh";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "silu") return Activation::silu;
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  throw InvalidArgument("unknown activation '" + s + "'");
}

void ParamSet::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

ParamSet& ParamSet::operator+=(const ParamSet& other) {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    weights[k] += other.weights[k];
    biases[k] += other.biases[k];
  }
  return *this;
}

ParamSet& ParamSet::operator*=(double s) {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    weights[k] *= s;
    biases[k] *= s;
  }
  return *this;
}

std::size_t ParamSet::size() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) n += weights[k].size() + biases[k].size();
  return n;
}

double ParamSet::squared_norm() const {
  double s = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) s += weights[k].squaredNorm() + biases[k].squaredNorm();
  return s;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    for (Eigen::Index r = 0; r < weights[k].rows(); ++r)
      for (Eigen::Index c = 0; c < weights[k].cols(); ++c) flat.push_back(weights[k](r, c));
    for (Eigen::Index r = 0; r < biases[k].size(); ++r) flat.push_back(biases[k](r));
  }
  return flat;
}

void ParamSet::assign(std::span<const double> flat) {
  if (flat.size() != size()) throw InvalidArgument("parameter vector length mismatch");
  std::size_t i = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    for (Eigen::Index r = 0; r < weights[k].rows(); ++r)
      for (Eigen::Index c = 0; c < weights[k].cols(); ++c) weights[k](r, c) = flat[i++];
    for (Eigen::Index r = 0; r < biases[k].size(); ++r) biases[k](r) = flat[i++];
  }
}

MlpNet MlpNet::zeros(std::vector<int> dims, Activation hidden, Activation output) {
  check_dims(dims);
  MlpNet net;
  net.layer_dims = std::move(dims);
  net.hidden_activation = hidden;
  net.output_activation = output;
  for (std::size_t k = 0; k + 1 < net.layer_dims.size(); ++k) {
    net.params.weights.push_back(MatrixXd::Zero(net.layer_dims[k + 1], net.layer_dims[k]));
    net.params.biases.push_back(VectorXd::Zero(net.layer_dims[k + 1]));
  }
  return net;
}

MlpNet MlpNet::init_uniform(std::vector<int> dims, Activation hidden, Activation output, std::uint64_t seed) {
  MlpNet net = zeros(std::move(dims), hidden, output);
  Rng rng(seed);
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.layer_dims[k]));
    auto& w = net.params.weights[k];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
    auto& b = net.params.biases[k];
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = rng.uniform(-bound, bound);
  }
  return net;
}

ParamSet MlpNet::zeros_like() const {
  ParamSet p = params;
  p.set_zero();
  return p;
}

Eigen::VectorXd mlp_forward(const MlpNet& net, std::span<const double> input) {
  require_input(net, static_cast<Eigen::Index>(input.size()));
  MatrixXd x = Eigen::Map<const MatrixXd>(input.data(), static_cast<Eigen::Index>(input.size()), 1);
  return mlp_forward_batch(net, x).col(0);
}

constexpr Eigen::Index kForwardBlock = 256;

Eigen::MatrixXd mlp_forward_batch(const MlpNet& net, const Eigen::MatrixXd& inputs, ForwardCache* cache) {
  require_input(net, inputs.rows());
  if (cache) {
    cache->pre.clear();
    cache->post.clear();
    cache->post.push_back(inputs);
  }
  if (!cache && inputs.cols() > kForwardBlock) {
    // Column blocks keep the hidden activations cache-resident on large batches.
    MatrixXd out(net.output_dim(), inputs.cols());
    for (Eigen::Index c = 0; c < inputs.cols(); c += kForwardBlock) {
      const Eigen::Index w = std::min<Eigen::Index>(kForwardBlock, inputs.cols() - c);
      out.middleCols(c, w) = mlp_forward_batch(net, inputs.middleCols(c, w), nullptr);
    }
    return out;
  }
  MatrixXd h = inputs;
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    MatrixXd a = net.params.weights[k] * h;
    a.colwise() += net.params.biases[k];
    h = activate(layer_activation(net, k), a);
    if (cache) {
      cache->pre.push_back(std::move(a));
      cache->post.push_back(h);
    }
  }
  return h;
}

Eigen::MatrixXd mlp_backward(const MlpNet& net, const ForwardCache& cache, const Eigen::MatrixXd& output_grad,
                             ParamSet* grad) {
  if (output_grad.rows() != net.output_dim() || output_grad.cols() != cache.post.front().cols())
    throw InvalidArgument("output gradient shape does not match the cached batch");
  MatrixXd g = output_grad;
  for (std::size_t kk = net.num_layers(); kk-- > 0;) {
    const MatrixXd da = (g.array() * activation_d1(layer_activation(net, kk), cache.pre[kk])).matrix();
    if (grad) {
      grad->weights[kk].noalias() += da * cache.post[kk].transpose();
      grad->biases[kk] += da.rowwise().sum();
    }
    g = net.params.weights[kk].transpose() * da;
  }
  return g;
}

Eigen::VectorXd mlp_input_gradient(const MlpNet& net, std::span<const double> input) {
  require_input(net, static_cast<Eigen::Index>(input.size()));
  MatrixXd x = Eigen::Map<const MatrixXd>(input.data(), static_cast<Eigen::Index>(input.size()), 1);
  return mlp_input_gradient_batch(net, x).col(0);
}

Eigen::MatrixXd mlp_input_gradient_batch(const MlpNet& net, const Eigen::MatrixXd& inputs) {
  require_scalar(net);
  ForwardCache cache;
  mlp_forward_batch(net, inputs, &cache);
  return mlp_backward(net, cache, MatrixXd::Ones(1, inputs.cols()), nullptr);
}

ParamSet param_gradient(const MlpNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& output_grad) {
  ForwardCache cache;
  mlp_forward_batch(net, inputs, &cache);
  ParamSet grad = net.zeros_like();
  mlp_backward(net, cache, output_grad, &grad);
  return grad;
}

PenaltyResult penalty_param_gradient(const MlpNet& net, const Eigen::MatrixXd& points, double beta, double weight,
                                     ParamSet* grad) {
  require_scalar(net);
  require_input(net, points.rows());
  const Eigen::Index batch = points.cols();
  PenaltyResult result;
  if (batch == 0) return result;

  ForwardCache cache;
  mlp_forward_batch(net, points, &cache);
  const MatrixXd input_grad = mlp_backward(net, cache, MatrixXd::Ones(1, batch), nullptr);

  // Direction v_i = c_i g_i with c_i = weight/B * 2(|g_i| - beta)/|g_i|, so that
  // d/dparams (g_i . v_i) with v_i held fixed is the penalty derivative.
  Eigen::RowVectorXd coef(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const double norm = input_grad.col(i).norm();
    result.mean_grad_norm += norm;
    result.mean_penalty += (norm - beta) * (norm - beta);
    if (norm < 1e-12) {
      ++result.degenerate;
      coef(i) = 0.0;
    } else {
      coef(i) = weight / static_cast<double>(batch) * 2.0 * (norm - beta) / norm;
    }
  }
  result.mean_grad_norm /= static_cast<double>(batch);
  result.mean_penalty /= static_cast<double>(batch);
  if (!grad) return result;

  // Tangent pass: propagate the directions through the network.
  const std::size_t layers = net.num_layers();
  std::vector<MatrixXd> tangent_pre(layers);
  std::vector<MatrixXd> tangent_post(layers + 1);
  tangent_post[0] = input_grad.array().rowwise() * coef.array();
  for (std::size_t k = 0; k < layers; ++k) {
    tangent_pre[k] = net.params.weights[k] * tangent_post[k];
    tangent_post[k + 1] = (activation_d1(layer_activation(net, k), cache.pre[k]) * tangent_pre[k].array()).matrix();
  }

  // Reverse over the (primal, tangent) pair; objective is the sum of output tangents.
  MatrixXd adj_post = MatrixXd::Zero(1, batch);
  MatrixXd adj_tangent = MatrixXd::Ones(1, batch);
  for (std::size_t kk = layers; kk-- > 0;) {
    const Activation act = layer_activation(net, kk);
    const ArrayXXd d1 = activation_d1(act, cache.pre[kk]);
    const ArrayXXd d2 = activation_d2(act, cache.pre[kk]);
    const MatrixXd adj_pre = (d1 * adj_post.array() + d2 * tangent_pre[kk].array() * adj_tangent.array()).matrix();
    const MatrixXd adj_tangent_pre = (d1 * adj_tangent.array()).matrix();
    grad->weights[kk].noalias() += adj_pre * cache.post[kk].transpose();
    grad->weights[kk].noalias() += adj_tangent_pre * tangent_post[kk].transpose();
    grad->biases[kk] += adj_pre.rowwise().sum();
    adj_post = net.params.weights[kk].transpose() * adj_pre;
    adj_tangent = net.params.weights[kk].transpose() * adj_tangent_pre;
  }
  return result;
}

AdamState AdamState::for_net(const MlpNet& net, double learning_rate) {
  AdamState s;
  s.first_moment = net.zeros_like();
  s.second_moment = net.zeros_like();
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(AdamState& state, MlpNet& net, const ParamSet& grads) {
  if (grads.weights.size() != net.params.weights.size())
    throw InvalidArgument("adam_step: gradient layer count mismatch");
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    if (param.rows() != g.rows() || param.cols() != g.cols()) throw InvalidArgument("adam_step: shape mismatch");
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + ((1.0 - state.beta2) * g.array().square()).matrix();
    param.array() -= state.learning_rate * (m.array() / correction1) /
                     ((v.array() / correction2).sqrt() + state.epsilon_num);
  };
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    update(net.params.weights[k], state.first_moment.weights[k], state.second_moment.weights[k], grads.weights[k]);
    update(net.params.biases[k], state.first_moment.biases[k], state.second_moment.biases[k], grads.biases[k]);
  }
}

void soft_update(MlpNet& target, const MlpNet& source, double tau) {
  for (std::size_t k = 0; k < target.num_layers(); ++k) {
    target.params.weights[k] = (1.0 - tau) * target.params.weights[k] + tau * source.params.weights[k];
    target.params.biases[k] = (1.0 - tau) * target.params.biases[k] + tau * source.params.biases[k];
  }
}

void save_mlp(const MlpNet& net, std::ostream& out) {
  char buf[64];
  out << "mlp " << net.num_layers();
  for (int d : net.layer_dims) out << ' ' << d;
  out << ' ' << to_string(net.hidden_activation) << ' ' << to_string(net.output_activation) << '\n';
  auto put = [&](double v, bool first) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    if (!first) out << ' ';
    out << buf;
  };
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    const auto& w = net.params.weights[k];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) put(w(r, c), c == 0);
      out << '\n';
    }
    const auto& b = net.params.biases[k];
    for (Eigen::Index r = 0; r < b.size(); ++r) put(b(r), r == 0);
    out << '\n';
  }
}

void save_mlp(const MlpNet& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model file '" + path + "'");
  save_mlp(net, out);
  if (!out) throw IoError("failed writing model file '" + path + "'");
}

MlpNet load_mlp(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("model file is empty");
  std::istringstream header(line);
  std::string tag;
  std::size_t layers = 0;
  header >> tag >> layers;
  if (tag != "mlp" || !header || layers == 0) throw IoError("model file header must start with 'mlp <L>'");
  std::vector<int> dims(layers + 1);
  for (auto& d : dims) header >> d;
  std::string hidden, output;
  header >> hidden >> output;
  if (!header) throw IoError("truncated model file header");
  MlpNet net = MlpNet::zeros(dims, activation_from_string(hidden), activation_from_string(output));

  auto read_row = [&](auto&& setter, Eigen::Index count) {
    if (!std::getline(in, line)) throw IoError("truncated model file");
    std::istringstream row(line);
    for (Eigen::Index c = 0; c < count; ++c) {
      std::string tok;
      if (!(row >> tok)) throw IoError("model row has too few values");
      setter(c, std::strtod(tok.c_str(), nullptr));
    }
  };
  for (std::size_t k = 0; k < layers; ++k) {
    auto& w = net.params.weights[k];
    for (Eigen::Index r = 0; r < w.rows(); ++r) read_row([&](Eigen::Index c, double v) { w(r, c) = v; }, w.cols());
    auto& b = net.params.biases[k];
    read_row([&](Eigen::Index c, double v) { b(c) = v; }, b.size());
  }
  return net;
}

MlpNet load_mlp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file '" + path + "'");
  return load_mlp(in);
}

}  // namespace cbfforge
