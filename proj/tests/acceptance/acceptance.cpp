// Acceptance gate: runs each criterion at its stated tolerance and prints one
// PASS/FAIL line per criterion. Exit status is nonzero when any criterion fails.
//
// usage: acceptance <cbfforge cli> <configs dir> <work dir>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cbfforge/bench.hpp"
#include "cbfforge/config.hpp"
#include "cbfforge/error.hpp"
#include "cbfforge/hj.hpp"
#include "cbfforge/margin.hpp"
#include "cbfforge/safety_rl.hpp"
#include "support/filter_props.hpp"
#include "support/gradcheck.hpp"

using namespace cbfforge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Paths {
  std::string cli;
  fs::path configs;
  fs::path work;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Experiment config from the checked-in file, writing into the shared workspace
// so trained margins and solved grids are reused across criteria.
Config experiment_config(const Paths& p, const std::string& file) {
  Config c = Config::load((p.configs / file).string());
  c.set("output_dir", (p.work / "desk").string());
  c.set("filter.dump_trajectories", "false");
  return c;
}

std::vector<std::map<std::string, std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> header;
  std::vector<std::map<std::string, std::string>> rows;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
  };
  if (std::getline(in, line)) header = split(line);
  while (std::getline(in, line)) {
    const auto cells = split(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(row);
  }
  return rows;
}

const MetricsRow& find_row(const std::vector<MetricsRow>& rows, const std::string& method, const std::string& mode) {
  for (const auto& r : rows)
    if (r.method == method && r.margin_mode == mode) return r;
  throw RuntimeFailure("metrics row " + method + "/" + mode + " missing");
}

Outcome gradients(const Paths&) {
  const auto t0 = std::chrono::steady_clock::now();
  const cbftest::GradCheckSummary s = cbftest::gradient_sweep(100, 2024);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = s.worst_param <= 1e-4 && s.worst_input <= 1e-4 && s.worst_penalty <= 1e-3 && secs < 60.0;
  o.detail = fmt("gradient correctness over 100 nets: worst relative error param %.2e, input %.2e (<= 1e-4), "
                 "penalty %.2e (<= 1e-3); %.1f s",
                 s.worst_param, s.worst_input, s.worst_penalty, secs);
  return o;
}

Outcome hj_oracle(const Paths&) {
  const auto t0 = std::chrono::steady_clock::now();
  GridSpec g;
  g.nx = g.ny = 31;
  g.ntheta = 15;
  const FailureSpec spec = FailureSpec::dubins_default();
  const auto sd = [&](const State& s) { return signed_distance_margin(s, spec); };
  const std::vector<double> three = {-2.0, 0.0, 2.0};
  const GridField h6 = finite_horizon_sweeps(sample_field(g, sd), three, kDefaultDt, 6);
  // The boundary band is one grid spacing wide around the oracle's zero level.
  const double band = g.hx();
  Rng rng(6);
  int agree = 0, tested = 0, skipped = 0;
  while (tested < 200) {
    const State s = sample_state_box(rng);
    const double oracle = brute_force_avoid_oracle(s, sd, three, 6, kDefaultDt);
    if (std::abs(oracle) < band) {
      ++skipped;
      continue;
    }
    ++tested;
    agree += (oracle >= 0.0) == (interpolate(h6, s) >= 0.0) ? 1 : 0;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = agree == tested && secs < 300.0;
  o.detail = fmt("HJ grid vs 729-sequence oracle: %d/%d sign agreement outside the |V| < %.2f band (%d states skipped); "
                 "%.1f s",
                 agree, tested, band, skipped, secs);
  return o;
}

Outcome fixed_point(const Paths& p) {
  const auto t0 = std::chrono::steady_clock::now();
  const Config cfg = experiment_config(p, "desk.cfg");
  run_command("solve-grid", cfg);
  const fs::path out = p.work / "desk";
  const GridField v = load_grid((out / "value_gp.grid").string(), FieldKind::value);
  const GridField m = load_grid((out / "margin_gp.grid").string(), FieldKind::margin);
  const MlpNet gp = load_mlp((out / "margin_gp.mlp").string());
  const double gamma = cfg.num("grid.gamma");
  const std::vector<double> actions = equispaced_actions(cfg.integer("grid.actions"));

  int above = 0;
  for (std::size_t i = 0; i < v.values.size(); ++i) above += v.values[i] > m.values[i] ? 1 : 0;

  // Interpolation error of the grid: the sampled margin against the margin itself.
  Rng rng(3);
  double interp_err = 0.0;
  for (int t = 0; t < 20000; ++t) {
    const State s = sample_state_box(rng);
    interp_err = std::max(interp_err, std::abs(interpolate(m, s) - std::clamp(margin_value(gp, s), -1.0, 1.0)));
  }
  const GridSpec& g = v.spec;
  double worst = 0.0;
  for (int i = 0; i < g.nx; ++i)
    for (int j = 0; j < g.ny; ++j)
      for (int k = 0; k < g.ntheta; ++k) {
        const State s = g.node(i, j, k);
        double best = -1e300;
        for (double a : actions) best = std::max(best, q_from_value(v, m, s, a, gamma, kDefaultDt));
        worst = std::max(worst, std::abs(best - v.at(i, j, k)));
      }
  Outcome o;
  o.pass = above == 0 && worst <= 2.0 * interp_err;
  o.detail = fmt("fixed point on %dx%dx%d GP grid: %d nodes with V > l; max |max_a Q - V| at nodes %.2e <= 2 x "
                 "interpolation error %.2e; %.1f s",
                 g.nx, g.ny, g.ntheta, above, worst, interp_err, seconds_since(t0));
  return o;
}

Outcome lipschitz(const Paths& p) {
  const auto t0 = std::chrono::steady_clock::now();
  const Config cfg = experiment_config(p, "lipschitz.cfg");
  run_experiment(cfg);
  const auto rows = read_csv(p.work / "desk" / "lipschitz.csv");
  std::map<std::string, std::map<std::string, std::string>> by;
  for (const auto& r : rows) by[r.at("margin")] = r;
  Outcome o;
  o.pass = by.count("signed_distance") && by.count("gp") && by.count("nogp");
  std::string parts;
  for (const std::string name : {"signed_distance", "gp", "nogp"}) {
    if (!by.count(name)) continue;
    const auto& r = by[name];
    const double lv = std::stod(r.at("L_V")), bound = std::stod(r.at("bound"));
    const bool ok = lv <= bound * 1.05 && r.at("converged") == "1";
    o.pass = o.pass && ok;
    parts += fmt(" %s L_ell %.3g L_V %.3g <= 1.05 x %.3g %s;", name.c_str(), std::stod(r.at("L_ell")), lv, bound,
                 ok ? "ok" : "VIOLATED");
  }
  const double secs = seconds_since(t0);
  if (o.pass) o.pass = std::stod(by["nogp"].at("L_V")) > std::stod(by["gp"].at("L_V")) && secs < 30 * 60.0;
  o.detail = fmt("Lipschitz bound, gamma 0.9, L_f %.4f:%s saturated (NoGP) L_V > GP L_V required; %.1f s",
                 rows.empty() ? 0.0 : std::stod(rows.front().at("L_f")), parts.c_str(), secs);
  return o;
}

Outcome margin_quality(const Paths& p) {
  const auto t0 = std::chrono::steady_clock::now();
  Config cfg = experiment_config(p, "margin_quality.cfg");
  // Train both margins here so the runtime includes training.
  for (const std::string mode : {"gp", "nogp"}) {
    cfg.set("margin.mode", mode);
    run_command("train-margin", cfg);
  }
  cfg.set("margin.mode", "gp");
  const auto rows = run_experiment(cfg);
  const MetricsRow& gp = find_row(rows, "none", "gp");
  const MetricsRow& nogp = find_row(rows, "none", "nogp");
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = gp.max_step_delta_mean <= 0.5 * nogp.max_step_delta_mean && gp.f1 >= 0.95 && nogp.f1 >= 0.95 &&
           secs < 20 * 60.0;
  o.detail = fmt("margin quality on 100 unfiltered rollouts: max-step-delta GP %.4f vs NoGP %.4f (ratio %.3f <= 0.5); "
                 "F1 GP %.4f, NoGP %.4f (>= 0.95); %.1f s with training",
                 gp.max_step_delta_mean, nogp.max_step_delta_mean, gp.max_step_delta_mean / nogp.max_step_delta_mean,
                 gp.f1, nogp.f1, secs);
  return o;
}

Outcome filter_comparison(const Paths& p) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_experiment(experiment_config(p, "desk.cfg"));
  const MetricsRow& none = find_row(rows, "none", "gp");
  const MetricsRow& lr = find_row(rows, "lr", "gp");
  const MetricsRow& cbf = find_row(rows, "cbf", "gp");
  const double secs = seconds_since(t0);
  // Informational: drift against the recorded seed-0 run (matrix kernels differ across CPUs).
  const fs::path ref = p.configs.parent_path() / "tests" / "reference" / "desk_metrics.csv";
  if (fs::exists(ref)) {
    double d_safety = 0.0, d_override = 0.0;
    for (const auto& r : read_csv(ref)) {
      const MetricsRow& now = find_row(rows, r.at("method"), r.at("margin_mode"));
      d_safety = std::max(d_safety, std::abs(now.safety_rate - std::stod(r.at("safety_rate"))));
      d_override = std::max(d_override, std::abs(now.avg_override - std::stod(r.at("avg_override"))));
    }
    std::printf("INFO desk metrics vs recorded reference: max |d safety| %.3f, max |d override| %.3f\n", d_safety,
                d_override);
  }
  Outcome o;
  o.pass = none.safety_rate >= 0.30 && none.safety_rate <= 0.60 && lr.safety_rate >= 0.95 && cbf.safety_rate >= 0.95 &&
           cbf.avg_override <= 0.75 * lr.avg_override && secs < 15 * 60.0;
  o.detail = fmt("filter comparison, GP grid, 100 rollouts: safety none %.2f, LR %.2f, CBF %.2f; override LR "
                 "%.3f +- %.3f, CBF %.3f +- %.3f (ratio %.3f <= 0.75); %.1f s",
                 none.safety_rate, lr.safety_rate, cbf.safety_rate, lr.avg_override, lr.override_std,
                 cbf.avg_override, cbf.override_std, cbf.avg_override / lr.avg_override, secs);
  return o;
}

Outcome mix_ablation(const Paths& p) {
  const auto t0 = std::chrono::steady_clock::now();
  run_experiment(experiment_config(p, "mix_ablation.cfg"));
  const auto rows = read_csv(p.work / "desk" / "mix_ablation.csv");
  std::map<std::string, std::map<std::string, std::string>> by;
  for (const auto& r : rows) by[r.at("buffer")] = r;
  const double mixed = std::stod(by.at("mixed").at("mae_nominal"));
  const double fb_only = std::stod(by.at("fallback_only").at("mae_nominal"));
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = mixed <= 0.8 * fb_only && secs < 45 * 60.0;
  o.detail = fmt("replay mix ablation, MAE vs grid Q on nominal actions: mixed %.4f vs fallback-only %.4f (ratio %.3f "
                 "<= 0.8); fallback-action MAE %.4f / %.4f; %.1f s",
                 mixed, fb_only, mixed / fb_only, std::stod(by.at("mixed").at("mae_fallback")),
                 std::stod(by.at("fallback_only").at("mae_fallback")), secs);
  return o;
}

Outcome filter_properties(const Paths&) {
  const cbftest::FilterPropertyReport r = cbftest::check_filter_properties(1000, 8);
  Outcome o;
  o.pass = r.tables == 1000 && r.failures() == 0 && r.nominal_feasible > 0 && r.empty_sets > 0 && r.nesting_checked > 0;
  o.detail = fmt("filter properties on %d random Q tables: idempotence failures %d (%d feasible nominals), fallback "
                 "failures %d (%d empty sets), nesting failures %d (%d tables)",
                 r.tables, r.idempotence_failures, r.nominal_feasible, r.fallback_failures, r.empty_sets,
                 r.nesting_failures, r.nesting_checked);
  return o;
}

const ThroughputRow& find_tp(const std::vector<ThroughputRow>& rows, const std::string& mode, int n) {
  for (const auto& r : rows)
    if (r.query_mode == mode && r.n == n) return r;
  throw RuntimeFailure("throughput row missing");
}

Outcome throughput(const Paths& p) {
  const Config cfg = experiment_config(p, "throughput.cfg");
  const fs::path out = p.work / "desk";
  // The critic trained with the mixed buffer.
  const NeuralSafetyModel neural(load_mlp((out / "critic_mixed.mlp").string()),
                                 load_mlp((out / "actor_mixed.mlp").string()));
  const std::vector<int> sizes = {10, 10000};
  const std::vector<QueryMode> modes = {QueryMode::model_free, QueryMode::model_based};
  FilterConfig fc;
  fc.gamma = cfg.num("grid.gamma");
  const auto rows = throughput_benchmark(neural, "neural", sizes, modes, 50, 5, fc, 9);
  const double mf10000 = find_tp(rows, "model_free", 10000).mean_ms;
  const double ratio = find_tp(rows, "model_based", 10).per_sample_us / find_tp(rows, "model_free", 10).per_sample_us;

  const GridField v = load_grid((out / "value_gp.grid").string(), FieldKind::value);
  const GridField m = load_grid((out / "margin_gp.grid").string(), FieldKind::margin);
  const GridSafetyModel grid(v, m, fc.gamma, kDefaultDt, equispaced_actions(cfg.integer("grid.actions")));
  const auto grows = throughput_benchmark(grid, "grid", sizes, modes, 50, 5, fc, 9);
  const double g10000 = find_tp(grows, "model_free", 10000).mean_ms;
  const double gratio =
      find_tp(grows, "model_based", 10).per_sample_us / find_tp(grows, "model_free", 10).per_sample_us;

  Outcome o;
  o.pass = mf10000 < 50.0 && ratio >= 5.0;
  o.detail = fmt("throughput, trained neural critic: model-free n=10000 %.2f ms (< 50), model-based/model-free "
                 "per-sample cost at n=10 %.2fx (>= 5) [grid backend: %.2f ms, %.1fx]",
                 mf10000, ratio, g10000, gratio);
  return o;
}

int run_cli(const Paths& p, const std::string& args) {
  const std::string cmd = "\"" + p.cli + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), root).string()] = ss.str();
  }
  return files;
}

Outcome determinism(const Paths& p) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string cfg = (p.configs / "tiny.cfg").string();
  const std::vector<std::string> commands = {"train-margin", "solve-grid", "train-rl", "filter-eval",
                                             "verify-bound", "bench",      "demo"};
  int failed_runs = 0, compared = 0;
  std::vector<std::string> differing;
  for (const auto& c : commands) {
    std::map<std::string, std::string> runs[2];
    for (int r = 0; r < 2; ++r) {
      const fs::path dir = p.work / "determinism" / (c + "_" + std::to_string(r));
      fs::remove_all(dir);
      if (run_cli(p, c + " --config \"" + cfg + "\" --out \"" + dir.string() + "\"") != 0) ++failed_runs;
      runs[r] = tree_contents(dir);
    }
    if (runs[0].size() != runs[1].size()) differing.push_back(c + ": file sets differ");
    for (const auto& [name, bytes] : runs[0]) {
      ++compared;
      auto it = runs[1].find(name);
      if (it == runs[1].end() || it->second != bytes) differing.push_back(c + "/" + name);
    }
  }
  Outcome o;
  o.pass = failed_runs == 0 && differing.empty() && compared > 0;
  o.detail = fmt("determinism: 7 subcommands run twice, %d files compared, %zu differ, %d failed runs%s%s; %.1f s",
                 compared, differing.size(), failed_runs, differing.empty() ? "" : ", first: ",
                 differing.empty() ? "" : differing.front().c_str(), seconds_since(t0));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 4) {
    std::fprintf(stderr, "usage: acceptance <cbfforge cli> <configs dir> <work dir>\n");
    return 2;
  }
  const Paths p{argv[1], argv[2], argv[3]};
  fs::create_directories(p.work);

  // Cheap criteria first; 5 trains the margins that 3, 4 and 6 reuse.
  const std::vector<std::pair<int, std::function<Outcome(const Paths&)>>> plan = {
      {1, gradients},       {2, hj_oracle},         {8, filter_properties}, {10, determinism},
      {5, margin_quality},  {3, fixed_point},       {4, lipschitz},         {6, filter_comparison},
      {7, mix_ablation},    {9, throughput},
  };
  std::map<int, Outcome> results;
  for (const auto& [id, fn] : plan) {
    Outcome o;
    try {
      o = fn(p);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    std::printf("CRITERION %d %s: %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    results[id] = o;
  }
  int failed = 0;
  std::printf("\nsummary:");
  for (const auto& [id, o] : results) {
    std::printf(" %d=%s", id, o.pass ? "PASS" : "FAIL");
    failed += o.pass ? 0 : 1;
  }
  std::printf("\n%d of %zu criteria failed\n", failed, results.size());
  return failed == 0 ? 0 : 1;
}
