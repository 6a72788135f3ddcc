#pragma once

// Runtime safety filters over a state-action safety value Q(z, a):
// least-restrictive switching and the sampling-based discrete-time CBF filter.

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cbfforge/dubins.hpp"
#include "cbfforge/hj.hpp"

namespace cbfforge {

enum class QueryMode { model_free, model_based };
enum class SamplerKind { equispaced_1d, line_interpolation };
enum class AnchorKind { nominal, fallback, zero, constant };

std::string to_string(QueryMode m);
QueryMode query_mode_from_string(const std::string& s);

struct Anchor {
  AnchorKind kind = AnchorKind::nominal;
  Eigen::VectorXd value;  // used when kind == constant
};

struct SamplerSpec {
  SamplerKind kind = SamplerKind::equispaced_1d;
  int n = 25;
  double lower = -kActionBound;
  double upper = kActionBound;
  // line_interpolation only
  std::vector<int> interp_dims;
  Anchor from{AnchorKind::nominal, {}};
  Anchor to{AnchorKind::fallback, {}};
  Anchor static_anchor{AnchorKind::nominal, {}};
};

// One column per sample. equispaced_1d: n points on [lower, upper] followed by
// the nominal and fallback actions (duplicates kept). line_interpolation: n
// points with interp_dims swept from -> to at eta_k = k / (n - 1), the other
// dimensions held at static_anchor.
Eigen::MatrixXd sample_actions(const SamplerSpec& spec, const Eigen::VectorXd& a_nominal,
                               const Eigen::VectorXd& a_fallback);
std::vector<double> sample_actions_1d(const SamplerSpec& spec, double a_nominal, double a_fallback);

// Source of Q(z, a) and of the fallback policy pi_safe(z). Implementations must
// be safe to call concurrently.
class SafetyModel {
 public:
  virtual ~SafetyModel() = default;
  // out[i] = Q(states[i], actions[i]); one batched evaluation.
  virtual void q_batch(std::span<const State> states, std::span<const double> actions,
                       std::span<double> out) const = 0;
  virtual void fallback_batch(std::span<const State> states, std::span<double> out) const = 0;

  double q(const State& z, double a) const;
  double fallback(const State& z) const;
};

// Q from a solved grid through the one-step backup; the fallback is the
// best action of the grid's action set (lowest index on ties).
class GridSafetyModel : public SafetyModel {
 public:
  GridSafetyModel(GridField value, GridField margin, double gamma, double dt, std::vector<double> actions);
  void q_batch(std::span<const State> states, std::span<const double> actions, std::span<double> out) const override;
  void fallback_batch(std::span<const State> states, std::span<double> out) const override;

  const GridField& value() const { return value_; }
  const GridField& margin() const { return margin_; }

 private:
  GridField value_;
  GridField margin_;
  double gamma_;
  double dt_;
  std::vector<double> actions_;
};

struct FilterConfig {
  double alpha = 0.95;
  double epsilon = 0.2;
  QueryMode query_mode = QueryMode::model_free;
  SamplerSpec sampler;
  double gamma = 0.995;
  double dt = kDefaultDt;
  Dynamics dynamics;  // empty: Dubins RK4 with dt

  void validate() const;
};

// (q_a - eps) >= alpha * (q_fallback - eps)
bool cbf_constraint_check(double q_of_a, double q_of_fallback, const FilterConfig& cfg);

// model_free: Q(z, a). model_based: z' = f(z, a), then Q(z', pi_safe(z')).
void q_query_batch(const SafetyModel& model, const State& z, std::span<const double> actions, const FilterConfig& cfg,
                   std::span<double> out);
double q_query(const SafetyModel& model, const State& z, double action, const FilterConfig& cfg);

struct FeasibleSet {
  std::vector<double> actions;
  std::vector<double> q_values;
};

// Nearest feasible sample to the nominal action (lowest index on ties);
// fallback action when no sample is feasible.
FilterDecision cbf_filter(const State& z, double a_nominal, const SafetyModel& model, const FilterConfig& cfg,
                          FeasibleSet* feasible = nullptr);

// Nominal action when Q(z, a_nominal) >= eps, else the fallback action.
FilterDecision lr_filter(const State& z, double a_nominal, const SafetyModel& model, const FilterConfig& cfg);

}  // namespace cbfforge
