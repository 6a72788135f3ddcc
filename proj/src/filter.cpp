#include "cbfforge/filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cbfforge/error.hpp"

namespace cbfforge {

namespace {

Eigen::VectorXd resolve_anchor(const Anchor& anchor, const Eigen::VectorXd& nominal, const Eigen::VectorXd& fallback) {
  switch (anchor.kind) {
    case AnchorKind::nominal:
      return nominal;
    case AnchorKind::fallback:
      return fallback;
    case AnchorKind::zero:
      return Eigen::VectorXd::Zero(nominal.size());
    case AnchorKind::constant:
      if (anchor.value.size() != nominal.size()) throw InvalidArgument("constant anchor has the wrong dimension");
      return anchor.value;
  }
  return nominal;
}

Dynamics effective_dynamics(const FilterConfig& cfg) { return cfg.dynamics ? cfg.dynamics : dubins_dynamics(cfg.dt); }

}  // namespace

std::string to_string(QueryMode m) { return m == QueryMode::model_free ? "model_free" : "model_based"; }

QueryMode query_mode_from_string(const std::string& s) {
  if (s == "model_free") return QueryMode::model_free;
  if (s == "model_based") return QueryMode::model_based;
  throw InvalidArgument("unknown query mode '" + s + "'");
}

Eigen::MatrixXd sample_actions(const SamplerSpec& spec, const Eigen::VectorXd& a_nominal,
                               const Eigen::VectorXd& a_fallback) {
  if (a_nominal.size() != a_fallback.size() || a_nominal.size() == 0)
    throw InvalidArgument("nominal and fallback actions must share a non-zero dimension");
  if (spec.kind == SamplerKind::equispaced_1d) {
    if (a_nominal.size() != 1) throw InvalidArgument("equispaced_1d sampling needs a 1-D action");
    if (spec.n < 2) throw InvalidArgument("equispaced sampling needs n >= 2");
    Eigen::MatrixXd out(1, spec.n + 2);
    for (int i = 0; i < spec.n; ++i) out(0, i) = spec.lower + (spec.upper - spec.lower) * i / (spec.n - 1);
    out(0, spec.n - 1) = spec.upper;
    out(0, spec.n) = a_nominal(0);
    out(0, spec.n + 1) = a_fallback(0);
    return out;
  }
  if (spec.n < 2) throw InvalidArgument("line interpolation needs n >= 2");
  const Eigen::VectorXd from = resolve_anchor(spec.from, a_nominal, a_fallback);
  const Eigen::VectorXd to = resolve_anchor(spec.to, a_nominal, a_fallback);
  const Eigen::VectorXd fixed = resolve_anchor(spec.static_anchor, a_nominal, a_fallback);
  for (int d : spec.interp_dims)
    if (d < 0 || d >= a_nominal.size()) throw InvalidArgument("interpolation dimension out of range");
  Eigen::MatrixXd out(a_nominal.size(), spec.n);
  for (int k = 0; k < spec.n; ++k) {
    const double eta = static_cast<double>(k) / (spec.n - 1);
    Eigen::VectorXd a = fixed;
    for (int d : spec.interp_dims) a(d) = (1.0 - eta) * from(d) + eta * to(d);
    out.col(k) = a;
  }
  return out;
}

std::vector<double> sample_actions_1d(const SamplerSpec& spec, double a_nominal, double a_fallback) {
  const Eigen::MatrixXd m = sample_actions(spec, Eigen::VectorXd::Constant(1, a_nominal),
                                           Eigen::VectorXd::Constant(1, a_fallback));
  return {m.data(), m.data() + m.size()};
}

double SafetyModel::q(const State& z, double a) const {
  double out = 0.0;
  q_batch(std::span<const State>(&z, 1), std::span<const double>(&a, 1), std::span<double>(&out, 1));
  return out;
}

double SafetyModel::fallback(const State& z) const {
  double out = 0.0;
  fallback_batch(std::span<const State>(&z, 1), std::span<double>(&out, 1));
  return out;
}

GridSafetyModel::GridSafetyModel(GridField value, GridField margin, double gamma, double dt,
                                 std::vector<double> actions)
    : value_(std::move(value)), margin_(std::move(margin)), gamma_(gamma), dt_(dt), actions_(std::move(actions)) {
  if (!(value_.spec == margin_.spec)) throw InvalidArgument("value and margin fields must share a grid");
  if (actions_.empty()) throw InvalidArgument("grid safety model needs a non-empty action set");
}

void GridSafetyModel::q_batch(std::span<const State> states, std::span<const double> actions,
                              std::span<double> out) const {
  if (states.size() != actions.size() || out.size() != actions.size())
    throw InvalidArgument("q_batch: states, actions and output must have equal length");
  for (std::size_t i = 0; i < states.size(); ++i)
    out[i] = q_from_value(value_, margin_, states[i], actions[i], gamma_, dt_);
}

void GridSafetyModel::fallback_batch(std::span<const State> states, std::span<double> out) const {
  if (states.size() != out.size()) throw InvalidArgument("fallback_batch: size mismatch");
  for (std::size_t i = 0; i < states.size(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    double best_a = actions_.front();
    for (double a : actions_) {
      const double q = q_from_value(value_, margin_, states[i], a, gamma_, dt_);
      if (q > best) {
        best = q;
        best_a = a;
      }
    }
    out[i] = best_a;
  }
}

void FilterConfig::validate() const {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw InvalidArgument("filter alpha must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw InvalidArgument("filter epsilon must be positive");
}

bool cbf_constraint_check(double q_of_a, double q_of_fallback, const FilterConfig& cfg) {
  return (q_of_a - cfg.epsilon) >= cfg.alpha * (q_of_fallback - cfg.epsilon);
}

void q_query_batch(const SafetyModel& model, const State& z, std::span<const double> actions, const FilterConfig& cfg,
                   std::span<double> out) {
  if (out.size() != actions.size()) throw InvalidArgument("q_query_batch: output size mismatch");
  if (cfg.query_mode == QueryMode::model_free) {
    const std::vector<State> states(actions.size(), z);
    model.q_batch(states, actions, out);
    return;
  }
  const Dynamics f = effective_dynamics(cfg);
  std::vector<State> next(actions.size());
  for (std::size_t i = 0; i < actions.size(); ++i) next[i] = f(z, actions[i]);
  std::vector<double> safe_actions(actions.size());
  model.fallback_batch(next, safe_actions);
  model.q_batch(next, safe_actions, out);
}

double q_query(const SafetyModel& model, const State& z, double action, const FilterConfig& cfg) {
  double out = 0.0;
  q_query_batch(model, z, std::span<const double>(&action, 1), cfg, std::span<double>(&out, 1));
  return out;
}

FilterDecision cbf_filter(const State& z, double a_nominal, const SafetyModel& model, const FilterConfig& cfg,
                          FeasibleSet* feasible) {
  cfg.validate();
  const double a_fallback = model.fallback(z);
  std::vector<double> samples = sample_actions_1d(cfg.sampler, a_nominal, a_fallback);
  // The fallback's own value is the constraint's reference; evaluate it in the
  // same batch and query mode as the candidates.
  const bool anchors_appended = cfg.sampler.kind == SamplerKind::equispaced_1d;
  if (!anchors_appended) {
    samples.push_back(a_nominal);
    samples.push_back(a_fallback);
  }
  std::vector<double> q(samples.size());
  q_query_batch(model, z, samples, cfg, q);
  const double q_nominal = q[q.size() - 2];
  const double q_fallback = q.back();

  FilterDecision d;
  d.q_nominal = q_nominal;
  d.q_fallback = q_fallback;
  int best = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!cbf_constraint_check(q[i], q_fallback, cfg)) continue;
    ++d.feasible_count;
    if (feasible) {
      feasible->actions.push_back(samples[i]);
      feasible->q_values.push_back(q[i]);
    }
    const double dist = std::abs(samples[i] - a_nominal);
    if (dist < best_dist) {
      best_dist = dist;
      best = static_cast<int>(i);
    }
  }
  d.action = best >= 0 ? samples[static_cast<std::size_t>(best)] : a_fallback;
  d.delta_a = std::abs(d.action - a_nominal);
  d.overridden = d.delta_a >= 1e-9;
  return d;
}

FilterDecision lr_filter(const State& z, double a_nominal, const SafetyModel& model, const FilterConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw InvalidArgument("filter epsilon must be positive");
  FilterDecision d;
  d.q_nominal = q_query(model, z, a_nominal, cfg);
  const double a_fallback = model.fallback(z);
  d.q_fallback = q_query(model, z, a_fallback, cfg);
  const bool keep = d.q_nominal >= cfg.epsilon;
  d.action = keep ? a_nominal : a_fallback;
  d.feasible_count = keep ? 1 : 0;
  d.delta_a = std::abs(d.action - a_nominal);
  d.overridden = d.delta_a >= 1e-9;
  return d;
}

}  // namespace cbfforge
