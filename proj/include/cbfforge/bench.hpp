#pragma once

// Experiment orchestration: evaluation rollouts, metrics tables, the
// throughput benchmark and the command implementations behind the CLI.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cbfforge/config.hpp"
#include "cbfforge/dubins.hpp"
#include "cbfforge/filter.hpp"
#include "cbfforge/margin.hpp"

namespace cbfforge {

struct MetricsRow {
  std::string method;
  std::string margin_mode;
  double alpha = 0.0;  // 0 for methods without a decay rate
  double safety_rate = 0.0;
  double avg_override = 0.0;
  double override_std = 0.0;
  double f1 = 0.0;
  double max_step_delta_mean = 0.0;
  double max_step_delta_std = 0.0;
};

void write_metrics_csv(std::span<const MetricsRow> rows, std::ostream& out);

struct OverrideStats {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;  // steps where the filter changed the action
};

// Over steps with |delta a| >= 1e-9 only.
OverrideStats override_stats(std::span<const TrajectoryRecord> trajectories);
// Fraction of trajectories without a collision.
double safety_rate(std::span<const TrajectoryRecord> trajectories);

struct EvalSetup {
  NominalPolicyConfig nominal;
  FailureSpec spec = FailureSpec::dubins_default();
  int n_rollouts = 100;
  int steps = 60;
  double dt = kDefaultDt;
  std::uint64_t seed = 0;
};

// Rollout i draws its initial state, goal and nominal noise from its own
// stream, so results do not depend on the thread count. The filter must be
// safe to call concurrently.
std::vector<TrajectoryRecord> run_rollouts(const EvalSetup& setup, const ActionFilterFn* filter);

struct ThroughputRow {
  std::string backend;
  std::string query_mode;
  int n = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double per_sample_us = 0.0;
};

// Times one batched q_query_batch call per repetition at a random state with
// n uniform actions.
std::vector<ThroughputRow> throughput_benchmark(const SafetyModel& model, const std::string& backend,
                                                std::span<const int> sizes, std::span<const QueryMode> modes,
                                                int repetitions, int warmup, const FilterConfig& base,
                                                std::uint64_t seed);
void write_throughput_csv(std::span<const ThroughputRow> rows, std::ostream& out);

// Subcommands: train-margin, solve-grid, train-rl, filter-eval, verify-bound,
// bench, demo. Throws cbfforge::Error subclasses on failure.
void run_command(const std::string& command, const Config& cfg);
const std::vector<std::string>& command_names();

// Runs cfg "experiment" and returns its metrics rows (empty for experiments
// that only write their own CSV).
std::vector<MetricsRow> run_experiment(const Config& cfg);

}  // namespace cbfforge
