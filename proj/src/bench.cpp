#include "cbfforge/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>

#include "cbfforge/error.hpp"
#include "cbfforge/hj.hpp"
#include "cbfforge/parallel.hpp"
#include "cbfforge/safety_rl.hpp"

namespace cbfforge {

namespace fs = std::filesystem;

void write_metrics_csv(std::span<const MetricsRow> rows, std::ostream& out) {
  out << "method,margin_mode,alpha,safety_rate,avg_override,override_std,f1,max_step_delta_mean,max_step_delta_std\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.method.c_str(),
                  r.margin_mode.c_str(), r.alpha, r.safety_rate, r.avg_override, r.override_std, r.f1,
                  r.max_step_delta_mean, r.max_step_delta_std);
    out << buf;
  }
}

OverrideStats override_stats(std::span<const TrajectoryRecord> trajectories) {
  OverrideStats s;
  double sum = 0.0;
  for (const auto& t : trajectories)
    for (double d : t.override_magnitudes)
      if (d >= 1e-9) {
        sum += d;
        ++s.count;
      }
  if (s.count == 0) return s;
  s.mean = sum / static_cast<double>(s.count);
  double var = 0.0;
  for (const auto& t : trajectories)
    for (double d : t.override_magnitudes)
      if (d >= 1e-9) var += (d - s.mean) * (d - s.mean);
  s.std = std::sqrt(var / static_cast<double>(s.count));
  return s;
}

double safety_rate(std::span<const TrajectoryRecord> trajectories) {
  if (trajectories.empty()) throw InvalidArgument("safety_rate needs at least one trajectory");
  std::size_t safe = 0;
  for (const auto& t : trajectories) safe += t.collided ? 0 : 1;
  return static_cast<double>(safe) / static_cast<double>(trajectories.size());
}

std::vector<TrajectoryRecord> run_rollouts(const EvalSetup& setup, const ActionFilterFn* filter) {
  if (setup.n_rollouts <= 0) throw InvalidArgument("n_rollouts must be positive");
  std::vector<TrajectoryRecord> out(static_cast<std::size_t>(setup.n_rollouts));
  const Dynamics dyn = dubins_dynamics(setup.dt);
  parallel_for(out.size(), [&](std::size_t i) {
    Rng rng = Rng::stream(setup.seed, i);
    const State x0 = sample_initial_state(rng);
    NominalPolicyConfig ncfg = setup.nominal;
    ncfg.goal_y = rng.uniform(ncfg.goal_y_min, ncfg.goal_y_max);
    const Policy policy = [&](const State& s) { return nominal_policy(s, ncfg, setup.spec, &rng); };
    out[i] = rollout(policy, filter, x0, setup.steps, setup.spec, dyn);
  });
  return out;
}

std::vector<ThroughputRow> throughput_benchmark(const SafetyModel& model, const std::string& backend,
                                                std::span<const int> sizes, std::span<const QueryMode> modes,
                                                int repetitions, int warmup, const FilterConfig& base,
                                                std::uint64_t seed) {
  if (repetitions < 1 || warmup < 0) throw InvalidArgument("throughput needs repetitions >= 1 and warmup >= 0");
  std::vector<ThroughputRow> rows;
  Rng rng(seed);
  for (QueryMode mode : modes) {
    FilterConfig fc = base;
    fc.query_mode = mode;
    for (int n : sizes) {
      if (n < 1) throw InvalidArgument("throughput sizes must be positive");
      const State z = sample_state_box(rng);
      std::vector<double> actions(static_cast<std::size_t>(n));
      for (auto& a : actions) a = rng.uniform(-kActionBound, kActionBound);
      std::vector<double> q(actions.size());
      for (int w = 0; w < warmup; ++w) q_query_batch(model, z, actions, fc, q);
      std::vector<double> ms;
      for (int r = 0; r < repetitions; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        q_query_batch(model, z, actions, fc, q);
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
      const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
      double var = 0.0;
      for (double v : ms) var += (v - mean) * (v - mean);
      ThroughputRow row;
      row.backend = backend;
      row.query_mode = to_string(mode);
      row.n = n;
      row.mean_ms = mean;
      row.std_ms = std::sqrt(var / static_cast<double>(ms.size()));
      row.per_sample_us = 1000.0 * mean / n;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_throughput_csv(std::span<const ThroughputRow> rows, std::ostream& out) {
  out << "backend,query_mode,n,mean_ms,std_ms,per_sample_us\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%.6g,%.6g,%.6g\n", r.backend.c_str(), r.query_mode.c_str(), r.n,
                  r.mean_ms, r.std_ms, r.per_sample_us);
    out << buf;
  }
}

namespace {

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  body(out);
  if (!out) throw IoError("failed while writing '" + path.string() + "'");
}

std::string margin_label(const std::string& mode) {
  if (mode == "gp" || mode == "nogp" || mode == "signed_distance") return mode;
  throw ConfigError("margin.mode must be gp, nogp or signed_distance, got '" + mode + "'");
}

// Shared access to configured settings and on-demand artifacts.
class Workspace {
 public:
  explicit Workspace(const Config& cfg) : cfg_(cfg), out_(cfg.str("output_dir")) {
    if (out_.empty()) throw ConfigError("output_dir must not be empty");
    fs::create_directories(out_);
  }

  const Config& cfg() const { return cfg_; }
  fs::path file(const std::string& name) const { return out_ / name; }
  std::uint64_t seed() const { return cfg_.u64("seed"); }
  std::uint64_t derived_seed(std::uint64_t tag) const { return Rng::splitmix(seed() ^ Rng::splitmix(tag)); }
  double dt() const {
    const double dt = cfg_.num("dt");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    return dt;
  }

  NominalPolicyConfig nominal() const {
    NominalPolicyConfig n;
    n.mode = nominal_mode_from_string(cfg_.str("nominal.mode"));
    n.gain = cfg_.num("nominal.gain");
    n.noise_std = cfg_.num("nominal.noise_std");
    n.goal_x = cfg_.num("nominal.goal_x");
    n.goal_y_min = cfg_.num("nominal.goal_y_min");
    n.goal_y_max = cfg_.num("nominal.goal_y_max");
    n.goal_lookahead = cfg_.num("nominal.goal_lookahead");
    n.repulsion_gain = cfg_.num("nominal.repulsion_gain");
    n.repulsion_range = cfg_.num("nominal.repulsion_range");
    n.seed = seed();
    if (!(n.gain > 0.0)) throw ConfigError("nominal.gain must be positive");
    if (n.noise_std < 0.0) throw ConfigError("nominal.noise_std must be non-negative");
    if (n.goal_y_min > n.goal_y_max) throw ConfigError("nominal.goal_y_min exceeds nominal.goal_y_max");
    return n;
  }

  EvalSetup eval_setup() const {
    EvalSetup e;
    e.nominal = nominal();
    e.n_rollouts = cfg_.integer("n_rollouts");
    e.steps = cfg_.integer("rollout_steps");
    e.dt = dt();
    e.seed = seed();
    if (e.n_rollouts <= 0 || e.steps <= 0) throw ConfigError("n_rollouts and rollout_steps must be positive");
    return e;
  }

  MarginTrainConfig margin_train_config(bool gp) const {
    MarginTrainConfig m;
    m.lambda_zs = cfg_.num("margin.lambda_zs");
    m.lambda_gp = cfg_.num("margin.lambda_gp");
    m.lambda_sign = cfg_.num("margin.lambda_sign");
    m.beta = cfg_.num("margin.beta");
    m.delta = cfg_.num("margin.delta");
    m.batch_size = cfg_.integer("margin.batch_size");
    m.iterations = cfg_.integer("margin.iterations");
    m.learning_rate = cfg_.num("margin.learning_rate");
    m.hidden = cfg_.int_list("margin.hidden");
    m.use_gp = gp;
    m.seed = derived_seed(gp ? 0x6770 : 0x6e6f6770);
    if (m.hidden.empty()) throw ConfigError("margin.hidden needs at least one layer");
    return m;
  }

  GridSpec grid_spec() const {
    GridSpec g;
    g.nx = cfg_.integer("grid.nx");
    g.ny = cfg_.integer("grid.ny");
    g.ntheta = cfg_.integer("grid.ntheta");
    g.validate();
    return g;
  }

  std::vector<double> grid_actions() const {
    const int n = cfg_.integer("grid.actions");
    if (n < 2) throw ConfigError("grid.actions must be at least 2");
    return equispaced_actions(n);
  }

  FilterConfig filter_config(double alpha) const {
    FilterConfig f;
    f.alpha = alpha;
    f.epsilon = cfg_.num("filter.epsilon");
    f.query_mode = query_mode_from_string(cfg_.str("filter.query_mode"));
    f.sampler.n = cfg_.integer("filter.samples");
    f.gamma = cfg_.num("grid.gamma");
    f.dt = dt();
    f.validate();
    return f;
  }

  RlConfig rl_config() const {
    RlConfig r;
    r.gamma = cfg_.num("rl.gamma");
    r.critic_lr = cfg_.num("rl.critic_lr");
    r.actor_lr = cfg_.num("rl.actor_lr");
    r.batch_size = cfg_.integer("rl.batch_size");
    r.buffer_capacity = cfg_.integer("rl.buffer_capacity");
    r.iterations = cfg_.integer("rl.iterations");
    r.episode_len = cfg_.integer("rl.episode_len");
    r.actor_hidden = cfg_.int_list("rl.actor_hidden");
    r.critic_hidden = cfg_.int_list("rl.critic_hidden");
    r.tau = cfg_.num("rl.tau");
    r.exploration_std = cfg_.num("rl.exploration_std");
    r.exploration_std_final = cfg_.num("rl.exploration_std_final");
    r.mix_nominal = cfg_.flag("rl.mix_nominal");
    r.nominal_bootstrap = nominal_bootstrap_from_string(cfg_.str("rl.nominal_bootstrap"));
    r.checkpoint_every = cfg_.integer("rl.checkpoint_every");
    r.log_every = cfg_.integer("rl.log_every");
    r.dt = dt();
    r.seed = derived_seed(0x726c);
    r.validate();
    return r;
  }

  // Resolves a model path. Explicit paths are inputs; default paths live in
  // output_dir and may be produced on demand.
  struct Artifact {
    fs::path path;
    bool explicit_path = false;
  };
  Artifact artifact(const std::string& key, const std::string& default_name) const {
    const std::string& v = cfg_.str(key);
    return v.empty() ? Artifact{file(default_name), false} : Artifact{fs::path(v), true};
  }

  // Returns true when the artifact must be produced now.
  bool need_to_produce(const Artifact& a, const std::string& what, const std::string& command) const {
    if (fs::exists(a.path)) return false;
    if (a.explicit_path)
      throw MissingArtifact(what + " '" + a.path.string() + "' does not exist (configured explicitly; produce it with `cbfforge " +
                            command + "` or clear the key)");
    if (!cfg_.flag("train_on_demand"))
      throw MissingArtifact(what + " '" + a.path.string() + "' is missing; run `cbfforge " + command +
                            "` first or set train_on_demand = true");
    return true;
  }

  MlpNet train_margin_net(const std::string& mode, const fs::path& path, MarginTrainLog* log) const {
    const MarginDataset data =
        make_margin_dataset(cfg_.integer("margin.dataset_size"), FailureSpec::dubins_default(), derived_seed(0xda7a));
    MlpNet net = train_margin(data, margin_train_config(mode == "gp"), log);
    save_mlp(net, path.string());
    return net;
  }

  Artifact margin_artifact(const std::string& mode) const {
    if (mode == cfg_.str("margin.mode") && !cfg_.str("margin.model").empty())
      return artifact("margin.model", "margin_" + mode + ".mlp");
    return artifact(mode == "gp" ? "margin.gp_model" : "margin.nogp_model", "margin_" + mode + ".mlp");
  }

  // Raw learned or analytic margin function.
  MarginFn margin_fn(const std::string& mode) {
    margin_label(mode);
    if (mode == "signed_distance") {
      const FailureSpec spec = FailureSpec::dubins_default();
      return [spec](const State& s) { return signed_distance_margin(s, spec); };
    }
    auto it = nets_.find(mode);
    if (it == nets_.end()) {
      const Artifact a = margin_artifact(mode);
      MlpNet net = need_to_produce(a, mode + " margin model", "train-margin")
                       ? train_margin_net(mode, a.path, nullptr)
                       : load_mlp(a.path.string());
      it = nets_.emplace(mode, std::move(net)).first;
    }
    const MlpNet* net = &it->second;
    return [net](const State& s) { return margin_value(*net, s); };
  }

  // Margin as used for HJ labels: GP output clipped to [-1, 1].
  MarginFn hj_margin_fn(const std::string& mode) {
    MarginFn raw = margin_fn(mode);
    if (mode != "gp") return raw;
    return [raw](const State& s) { return std::clamp(raw(s), -1.0, 1.0); };
  }

  struct Solved {
    GridField margin;
    GridField value;
    SolveResult info;
  };

  Solved solve(const MarginFn& label, double gamma) const {
    Solved s;
    s.margin = sample_field(grid_spec(), label, FieldKind::margin);
    const std::vector<double> actions = grid_actions();
    s.info = value_iteration(s.margin, actions, gamma, dt(), cfg_.num("grid.tol"), cfg_.integer("grid.max_iters"));
    s.value = s.info.value;
    return s;
  }

  Artifact value_artifact(const std::string& mode) const { return artifact("grid.value_file", "value_" + mode + ".grid"); }
  Artifact margin_grid_artifact(const std::string& mode) const {
    return artifact("grid.margin_file", "margin_" + mode + ".grid");
  }

  // Solved field for the configured margin, from files or solved on demand.
  Solved grid(const std::string& mode) {
    const Artifact va = value_artifact(mode), ma = margin_grid_artifact(mode);
    const bool produce_v = need_to_produce(va, "value grid", "solve-grid");
    const bool produce_m = need_to_produce(ma, "margin grid", "solve-grid");
    if (produce_v || produce_m) {
      Solved s = solve(hj_margin_fn(mode), cfg_.num("grid.gamma"));
      save_grid(s.value, va.path.string());
      save_grid(s.margin, ma.path.string());
      return s;
    }
    Solved s;
    s.value = load_grid(va.path.string(), FieldKind::value);
    s.margin = load_grid(ma.path.string(), FieldKind::margin);
    if (!(s.value.spec == s.margin.spec)) throw ConfigError("value and margin grid files have different shapes");
    return s;
  }

  std::pair<MlpNet, MlpNet> train_rl(const RlConfig& rc, const fs::path& critic_path, const fs::path& actor_path,
                                     const std::string& curve_name, const std::string& checkpoint_dir) {
    const std::string mode = cfg_.str("margin.mode");
    const MarginFn label = margin_fn(mode);
    RlTrainResult res = train_safety_rl(label, nominal(), FailureSpec::dubins_default(), rc, checkpoint_dir);
    save_mlp(res.critic, critic_path.string());
    save_mlp(res.actor, actor_path.string());
    write_file(file(curve_name), [&](std::ostream& o) { write_rl_curve_csv(res.curve, o); });
    return {std::move(res.critic), std::move(res.actor)};
  }

  NeuralSafetyModel neural_model() {
    const Artifact ca = artifact("rl.critic_model", "critic.mlp");
    const Artifact aa = artifact("rl.actor_model", "actor.mlp");
    const bool pc = need_to_produce(ca, "critic model", "train-rl");
    const bool pa = need_to_produce(aa, "actor model", "train-rl");
    if (pc || pa) {
      auto [critic, actor] = train_rl(rl_config(), ca.path, aa.path, "rl_curve.csv", "");
      return NeuralSafetyModel(std::move(critic), std::move(actor));
    }
    return NeuralSafetyModel(load_mlp(ca.path.string()), load_mlp(aa.path.string()));
  }

  // The configured filter backend.
  std::unique_ptr<SafetyModel> safety_model() {
    const std::string backend = cfg_.str("filter.backend");
    if (backend == "grid") {
      const std::string mode = margin_label(cfg_.str("margin.mode"));
      Solved s = grid(mode);
      return std::make_unique<GridSafetyModel>(std::move(s.value), std::move(s.margin), cfg_.num("grid.gamma"), dt(),
                                               grid_actions());
    }
    if (backend == "neural") return std::make_unique<NeuralSafetyModel>(neural_model());
    throw ConfigError("filter.backend must be grid or neural, got '" + backend + "'");
  }

 private:
  const Config& cfg_;
  fs::path out_;
  std::map<std::string, MlpNet> nets_;
};

std::optional<ActionFilterFn> make_filter(const std::string& method, const SafetyModel& model, const FilterConfig& fc) {
  if (method == "none") return std::nullopt;
  if (method == "lr")
    return ActionFilterFn([&model, fc](const State& s, double a) { return lr_filter(s, a, model, fc); });
  if (method == "cbf")
    return ActionFilterFn([&model, fc](const State& s, double a) { return cbf_filter(s, a, model, fc); });
  throw ConfigError("unknown filter method '" + method + "' (expected none, lr or cbf)");
}

MetricsRow evaluate_method(Workspace& ws, const std::string& method, const std::string& tag,
                           const SafetyModel* model, const FilterConfig& fc, const std::string& margin_mode) {
  std::optional<ActionFilterFn> filter;
  if (method != "none") {
    if (!model) throw InvalidArgument("filter method needs a safety model");
    filter = make_filter(method, *model, fc);
  }
  const std::vector<TrajectoryRecord> trajs = run_rollouts(ws.eval_setup(), filter ? &*filter : nullptr);
  if (ws.cfg().flag("filter.dump_trajectories")) {
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "rollout_%03zu.csv", i);
      write_file(ws.file("trajectories") / tag / name, [&](std::ostream& o) { write_trajectory_csv(trajs[i], o); });
    }
  }
  const MarginMetrics mm = evaluate_margin(ws.margin_fn(margin_mode), trajs, FailureSpec::dubins_default());
  const OverrideStats os = override_stats(trajs);
  MetricsRow row;
  row.method = method;
  row.margin_mode = margin_mode;
  row.alpha = method == "cbf" ? fc.alpha : 0.0;
  row.safety_rate = safety_rate(trajs);
  row.avg_override = os.mean;
  row.override_std = os.std;
  row.f1 = mm.f1;
  row.max_step_delta_mean = mm.max_step_delta_mean;
  row.max_step_delta_std = mm.max_step_delta_std;
  return row;
}

std::string alpha_tag(double alpha) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", alpha);
  return buf;
}

std::vector<MetricsRow> filter_comparison(Workspace& ws) {
  const std::string mode = margin_label(ws.cfg().str("margin.mode"));
  const FilterConfig fc = ws.filter_config(ws.cfg().num("filter.alpha"));
  std::unique_ptr<SafetyModel> model;
  std::vector<MetricsRow> rows;
  for (const auto& method : ws.cfg().str_list("filter.methods")) {
    if (method != "none" && !model) model = ws.safety_model();
    const std::string tag = method == "cbf" ? "cbf_" + alpha_tag(fc.alpha) : method;
    rows.push_back(evaluate_method(ws, method, tag, model.get(), fc, mode));
  }
  write_file(ws.file("metrics.csv"), [&](std::ostream& o) { write_metrics_csv(rows, o); });
  return rows;
}

std::vector<MetricsRow> alpha_ablation(Workspace& ws) {
  const std::string mode = margin_label(ws.cfg().str("margin.mode"));
  std::unique_ptr<SafetyModel> model = ws.safety_model();
  std::vector<MetricsRow> rows;
  const FilterConfig base = ws.filter_config(ws.cfg().num("filter.alpha"));
  rows.push_back(evaluate_method(ws, "lr", "lr", model.get(), base, mode));
  for (double alpha : ws.cfg().num_list("ablation.alphas")) {
    const FilterConfig fc = ws.filter_config(alpha);
    rows.push_back(evaluate_method(ws, "cbf", "cbf_" + alpha_tag(alpha), model.get(), fc, mode));
  }
  write_file(ws.file("alpha_ablation.csv"), [&](std::ostream& o) { write_metrics_csv(rows, o); });
  return rows;
}

std::vector<MetricsRow> margin_quality(Workspace& ws) {
  const EvalSetup setup = ws.eval_setup();
  const std::vector<TrajectoryRecord> trajs = run_rollouts(setup, nullptr);
  std::vector<MetricsRow> rows;
  for (const std::string mode : {"gp", "nogp"}) {
    const MarginMetrics mm = evaluate_margin(ws.margin_fn(mode), trajs, setup.spec);
    write_file(ws.file("margin_metrics_" + mode + ".csv"), [&](std::ostream& o) { write_margin_metrics_csv(mm, o); });
    MetricsRow row;
    row.method = "none";
    row.margin_mode = mode;
    row.safety_rate = safety_rate(trajs);
    row.f1 = mm.f1;
    row.max_step_delta_mean = mm.max_step_delta_mean;
    row.max_step_delta_std = mm.max_step_delta_std;
    rows.push_back(row);
  }
  write_file(ws.file("margin_quality.csv"), [&](std::ostream& o) { write_metrics_csv(rows, o); });
  return rows;
}

void lipschitz_bound(Workspace& ws) {
  const Config& cfg = ws.cfg();
  const double gamma = cfg.num("lipschitz.gamma");
  double lf = cfg.num("lipschitz.lf");
  if (lf <= 0.0)
    lf = estimate_dynamics_lipschitz(dubins_dynamics(ws.dt()), cfg.integer("lipschitz.lf_samples"),
                                     cfg.num("lipschitz.lf_perturbation"), ws.derived_seed(0x6c66));
  if (!(gamma * lf < 1.0)) {
    char msg[256];
    std::snprintf(msg, sizeof msg,
                  "bound hypothesis gamma * L_f < 1 fails: gamma = %.6g, L_f = %.6g, product %.6g; lower lipschitz.gamma",
                  gamma, lf, gamma * lf);
    throw HypothesisViolated(msg);
  }
  const std::vector<double> actions = ws.grid_actions();
  const GridSpec spec = ws.grid_spec();
  std::vector<std::pair<std::string, LipschitzReport>> reports;
  for (const auto& mode : cfg.str_list("lipschitz.margins")) {
    const GridField margin = sample_field(spec, ws.hj_margin_fn(margin_label(mode)), FieldKind::margin);
    reports.emplace_back(mode, verify_margin_value_bound(margin, gamma, ws.dt(), actions, lf,
                                                         cfg.num("lipschitz.tolerance"), cfg.num("grid.tol"),
                                                         cfg.integer("grid.max_iters")));
  }
  write_file(ws.file("lipschitz.csv"), [&](std::ostream& o) {
    o << "margin,L_ell,L_V,L_f,gamma,bound,holds,converged,iterations\n";
    char buf[256];
    for (const auto& [mode, r] : reports) {
      std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%d,%d,%d\n", mode.c_str(), r.L_ell, r.L_V,
                    r.L_f, r.gamma, r.bound, r.holds ? 1 : 0, r.converged ? 1 : 0, r.iterations);
      o << buf;
    }
  });
}

void mix_ablation(Workspace& ws) {
  const Config& cfg = ws.cfg();
  const std::string mode = margin_label(cfg.str("margin.mode"));
  const MarginFn raw = ws.margin_fn(mode);
  const MarginFn label = [raw](const State& s) { return std::tanh(raw(s)); };
  const RlConfig base = ws.rl_config();
  const Workspace::Solved truth = ws.solve(label, base.gamma);
  const int n = cfg.integer("rl.oracle_samples");
  const NominalPolicyConfig ncfg = ws.nominal();
  const FailureSpec spec = FailureSpec::dubins_default();

  struct Result {
    std::string name;
    double mae_nominal, mae_fallback, sign_agreement;
  };
  std::vector<Result> results;
  for (const bool mix : {true, false}) {
    RlConfig rc = base;
    rc.mix_nominal = mix;
    const std::string name = mix ? "mixed" : "fallback_only";
    auto [critic, actor] =
        ws.train_rl(rc, ws.file("critic_" + name + ".mlp"), ws.file("actor_" + name + ".mlp"), "rl_curve_" + name + ".csv", "");
    const NeuralSafetyModel model(std::move(critic), std::move(actor));
    Result r{name, 0, 0, 0};
    r.mae_nominal = critic_error_vs_oracle(model, truth.value, truth.margin, rc.gamma, rc.dt,
                                           TransitionSource::nominal_policy, ncfg, spec, n, ws.derived_seed(0xe7a1));
    r.mae_fallback = critic_error_vs_oracle(model, truth.value, truth.margin, rc.gamma, rc.dt,
                                            TransitionSource::fallback_policy, ncfg, spec, n, ws.derived_seed(0xe7a1));
    Rng rng(ws.derived_seed(0x5197));
    int agree = 0;
    for (int i = 0; i < n; ++i) {
      const State s = sample_state_box(rng);
      agree += (model.q(s, model.fallback(s)) >= 0.0) == (interpolate(truth.value, s) >= 0.0) ? 1 : 0;
    }
    r.sign_agreement = static_cast<double>(agree) / n;
    results.push_back(r);
  }
  write_file(ws.file("mix_ablation.csv"), [&](std::ostream& o) {
    o << "buffer,mae_nominal,mae_fallback,sign_agreement\n";
    char buf[256];
    for (const auto& r : results) {
      std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g\n", r.name.c_str(), r.mae_nominal, r.mae_fallback,
                    r.sign_agreement);
      o << buf;
    }
  });
}

void throughput(Workspace& ws) {
  const Config& cfg = ws.cfg();
  std::unique_ptr<SafetyModel> model = ws.safety_model();
  std::vector<QueryMode> modes;
  for (const auto& m : cfg.str_list("throughput.modes")) modes.push_back(query_mode_from_string(m));
  const std::vector<int> sizes = cfg.int_list("throughput.sizes");
  const auto rows = throughput_benchmark(*model, cfg.str("filter.backend"), sizes, modes,
                                         cfg.integer("throughput.repetitions"), cfg.integer("throughput.warmup"),
                                         ws.filter_config(cfg.num("filter.alpha")), ws.derived_seed(0x7470));
  write_file(ws.file("throughput.csv"), [&](std::ostream& o) { write_throughput_csv(rows, o); });
}

std::vector<MetricsRow> experiment(Workspace& ws) {
  const std::string name = ws.cfg().str("experiment");
  if (name == "margin_quality") return margin_quality(ws);
  if (name == "filter_comparison") return filter_comparison(ws);
  if (name == "alpha_ablation") return alpha_ablation(ws);
  if (name == "lipschitz_bound") {
    lipschitz_bound(ws);
    return {};
  }
  if (name == "mix_ablation") {
    mix_ablation(ws);
    return {};
  }
  if (name == "throughput") {
    throughput(ws);
    return {};
  }
  throw ConfigError("unknown experiment '" + name + "'");
}

void cmd_train_margin(Workspace& ws) {
  const std::string mode = margin_label(ws.cfg().str("margin.mode"));
  if (mode == "signed_distance") throw ConfigError("margin.mode = signed_distance is analytic; nothing to train");
  const Workspace::Artifact a = ws.margin_artifact(mode);
  MarginTrainLog log;
  const MlpNet net = ws.train_margin_net(mode, a.path, &log);
  write_file(ws.file("margin_loss_" + mode + ".csv"), [&](std::ostream& o) {
    o << "iter,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < log.loss.size(); i += 10) {
      std::snprintf(buf, sizeof buf, "%zu,%.10g\n", i + 1, log.loss[i]);
      o << buf;
    }
  });
  const EvalSetup setup = ws.eval_setup();
  const auto trajs = run_rollouts(setup, nullptr);
  const MarginMetrics mm =
      evaluate_margin([&net](const State& s) { return margin_value(net, s); }, trajs, setup.spec);
  write_file(ws.file("margin_metrics_" + mode + ".csv"), [&](std::ostream& o) { write_margin_metrics_csv(mm, o); });
}

void cmd_solve_grid(Workspace& ws) {
  const std::string mode = margin_label(ws.cfg().str("margin.mode"));
  const Workspace::Solved s = ws.solve(ws.hj_margin_fn(mode), ws.cfg().num("grid.gamma"));
  save_grid(s.value, ws.value_artifact(mode).path.string());
  save_grid(s.margin, ws.margin_grid_artifact(mode).path.string());
  const double theta = ws.cfg().num("grid.slice_theta");
  write_file(ws.file("value_slice_" + mode + ".csv"), [&](std::ostream& o) { write_grid_slice_csv(s.value, theta, o); });
  write_file(ws.file("solve_residuals_" + mode + ".csv"), [&](std::ostream& o) {
    o << "iter,residual\n";
    char buf[64];
    for (std::size_t i = 0; i < s.info.residuals.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.10g\n", i + 1, s.info.residuals[i]);
      o << buf;
    }
  });
}

void cmd_train_rl(Workspace& ws) {
  const auto ca = ws.artifact("rl.critic_model", "critic.mlp");
  const auto aa = ws.artifact("rl.actor_model", "actor.mlp");
  ws.train_rl(ws.rl_config(), ca.path, aa.path, "rl_curve.csv", ws.file("checkpoints").string());
}

void cmd_demo(Workspace& ws) {
  const Config& cfg = ws.cfg();
  EvalSetup setup = ws.eval_setup();
  const int index = cfg.integer("demo.rollout");
  if (index < 0) throw ConfigError("demo.rollout must be non-negative");
  const std::string method = cfg.str("demo.method");
  std::unique_ptr<SafetyModel> model;
  if (method != "none") model = ws.safety_model();
  const FilterConfig fc = ws.filter_config(cfg.num("demo.alpha"));
  std::optional<ActionFilterFn> filter;
  if (model) filter = make_filter(method, *model, fc);
  else if (method != "none") throw ConfigError("unknown demo.method '" + method + "'");

  Rng rng = Rng::stream(setup.seed, static_cast<std::uint64_t>(index));
  const State x0 = sample_initial_state(rng);
  NominalPolicyConfig ncfg = setup.nominal;
  ncfg.goal_y = rng.uniform(ncfg.goal_y_min, ncfg.goal_y_max);
  const Policy policy = [&](const State& s) { return nominal_policy(s, ncfg, setup.spec, &rng); };
  const TrajectoryRecord rec = rollout(policy, filter ? &*filter : nullptr, x0, setup.steps, setup.spec,
                                       dubins_dynamics(setup.dt));
  write_file(ws.file("demo_trajectory.csv"), [&](std::ostream& o) { write_trajectory_csv(rec, o); });
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"train-margin", "solve-grid", "train-rl", "filter-eval",
                                                 "verify-bound", "bench",      "demo"};
  return names;
}

std::vector<MetricsRow> run_experiment(const Config& cfg) {
  Workspace ws(cfg);
  return experiment(ws);
}

void run_command(const std::string& command, const Config& cfg) {
  Workspace ws(cfg);
  if (command == "train-margin") return cmd_train_margin(ws);
  if (command == "solve-grid") return cmd_solve_grid(ws);
  if (command == "train-rl") return cmd_train_rl(ws);
  if (command == "filter-eval") {
    filter_comparison(ws);
    return;
  }
  if (command == "verify-bound") return lipschitz_bound(ws);
  if (command == "bench") {
    experiment(ws);
    return;
  }
  if (command == "demo") return cmd_demo(ws);
  throw InvalidArgument("unknown command '" + command + "'");
}

}  // namespace cbfforge
