#include "cbfforge/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "cbfforge/error.hpp"

namespace cbfforge {

const std::vector<ConfigKey>& config_registry() {
  static const std::vector<ConfigKey> keys = {
      {"experiment", "filter_comparison",
       "margin_quality | filter_comparison | alpha_ablation | lipschitz_bound | mix_ablation | throughput"},
      {"seed", "0", "master seed; every random stream is derived from it"},
      {"output_dir", "out", "directory receiving every output file"},
      {"train_on_demand", "true", "train or solve missing prerequisite models instead of failing"},
      {"n_rollouts", "100", "evaluation rollouts per method"},
      {"rollout_steps", "60", "steps per evaluation rollout"},
      {"dt", "0.1", "integration step of the Dubins dynamics"},

      {"nominal.mode", "obstacle_blind", "obstacle_blind | obstacle_aware"},
      {"nominal.gain", "3.0", "proportional heading gain"},
      {"nominal.noise_std", "0.3", "Gaussian action noise of the nominal policy"},
      {"nominal.goal_x", "1.3", "goal line x"},
      {"nominal.goal_y_min", "-0.6", "per-rollout goal y lower bound"},
      {"nominal.goal_y_max", "0.6", "per-rollout goal y upper bound"},
      {"nominal.goal_lookahead", "0.2", "minimum forward distance used for the heading target"},
      {"nominal.repulsion_gain", "1.5", "obstacle_aware repulsion strength"},
      {"nominal.repulsion_range", "0.4", "obstacle_aware repulsion range"},

      {"margin.mode", "gp", "gp | nogp | signed_distance"},
      {"margin.model", "", "margin model file; empty means <output_dir>/margin_<mode>.mlp"},
      {"margin.nogp_model", "", "NoGP model file for comparisons; empty means <output_dir>/margin_nogp.mlp"},
      {"margin.gp_model", "", "GP model file for comparisons; empty means <output_dir>/margin_gp.mlp"},
      {"margin.dataset_size", "50000", "uniformly sampled labelled states"},
      {"margin.lambda_zs", "0.1", "zero-sum (Wasserstein) term weight"},
      {"margin.lambda_gp", "10", "gradient penalty weight"},
      {"margin.lambda_sign", "3", "sign loss weight in GP mode"},
      {"margin.beta", "1.0", "gradient norm target of the penalty"},
      {"margin.delta", "0.75", "NoGP sign loss margin"},
      {"margin.batch_size", "256", "pairs per step"},
      {"margin.iterations", "10000", "optimizer steps"},
      {"margin.learning_rate", "3e-3", "Adam learning rate"},
      {"margin.hidden", "64,64", "hidden layer widths"},

      {"grid.nx", "61", "grid nodes along x"},
      {"grid.ny", "61", "grid nodes along y"},
      {"grid.ntheta", "31", "grid nodes along theta (periodic)"},
      {"grid.gamma", "0.995", "discount of the solved fixed point"},
      {"grid.tol", "1e-6", "sup-norm residual tolerance"},
      {"grid.max_iters", "4000", "sweep limit"},
      {"grid.actions", "25", "equally spaced turn rates used by the solver"},
      {"grid.value_file", "", "value grid file; empty means <output_dir>/value_<margin.mode>.grid"},
      {"grid.margin_file", "", "margin grid file; empty means <output_dir>/margin_<margin.mode>.grid"},
      {"grid.slice_theta", "0", "theta of the exported x,y slice"},

      {"filter.backend", "grid", "grid | neural"},
      {"filter.methods", "none,lr,cbf", "methods evaluated by filter_comparison"},
      {"filter.alpha", "0.95", "CBF decay rate in [0, 1)"},
      {"filter.epsilon", "0.2", "safety threshold"},
      {"filter.query_mode", "model_free", "model_free | model_based"},
      {"filter.samples", "25", "equally spaced samples before the two policy anchors are appended"},
      {"filter.dump_trajectories", "true", "write one CSV per evaluation rollout"},
      {"ablation.alphas", "0.7,0.95", "alpha values of alpha_ablation"},

      {"rl.gamma", "0.995", "discount"},
      {"rl.critic_lr", "3e-4", "critic Adam learning rate"},
      {"rl.actor_lr", "1e-4", "actor Adam learning rate"},
      {"rl.batch_size", "256", "transitions per update"},
      {"rl.buffer_capacity", "100000", "replay capacity"},
      {"rl.iterations", "40000", "gradient updates"},
      {"rl.episode_len", "8", "steps per collected episode"},
      {"rl.actor_hidden", "64,64", "actor hidden widths"},
      {"rl.critic_hidden", "128,128", "critic hidden widths"},
      {"rl.tau", "0.005", "target soft-update rate"},
      {"rl.exploration_std", "0.3", "initial exploration noise on fallback actions"},
      {"rl.exploration_std_final", "0.05", "exploration noise at the last iteration"},
      {"rl.mix_nominal", "true", "fill half the episodes with the nominal policy"},
      {"rl.nominal_bootstrap", "target_actor", "target action on nominal transitions: target_actor | stored_action"},
      {"rl.checkpoint_every", "10000", "iterations between checkpoints"},
      {"rl.log_every", "100", "iterations per training-curve row"},
      {"rl.critic_model", "", "critic file; empty means <output_dir>/critic.mlp"},
      {"rl.actor_model", "", "actor file; empty means <output_dir>/actor.mlp"},
      {"rl.oracle_samples", "10000", "state-action pairs for critic error against the grid"},

      {"lipschitz.gamma", "0.9", "discount of the bound check; gamma * L_f must stay below 1"},
      {"lipschitz.margins", "signed_distance,gp,nogp", "margins checked by lipschitz_bound"},
      {"lipschitz.lf", "0", "dynamics Lipschitz constant; 0 means estimate it"},
      {"lipschitz.lf_samples", "20000", "samples of the L_f estimator"},
      {"lipschitz.lf_perturbation", "1e-4", "finite-difference step of the L_f estimator"},
      {"lipschitz.tolerance", "0.05", "relative slack on the bound"},

      {"throughput.sizes", "1,10,100,1000,10000", "action batch sizes"},
      {"throughput.repetitions", "50", "timed repetitions per size"},
      {"throughput.warmup", "5", "untimed repetitions per size"},
      {"throughput.modes", "model_free,model_based", "query modes timed"},

      {"demo.alpha", "0.95", "CBF alpha of the demo rollout"},
      {"demo.rollout", "0", "rollout index whose initial state and goal the demo uses"},
      {"demo.method", "cbf", "none | lr | cbf"},
  };
  return keys;
}

std::string describe_config_keys() {
  std::ostringstream out;
  for (const auto& k : config_registry()) {
    std::string lhs = k.name + " = " + k.default_value;
    if (lhs.size() < 40) lhs.resize(40, ' ');
    out << lhs << "  # " << k.help << '\n';
  }
  return out.str();
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

}  // namespace

Config::Config() {
  for (const auto& k : config_registry()) values_[k.name] = k.default_value;
}

Config Config::parse(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    try {
      cfg.set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "' (run --help for the key list)");
  it->second = value;
  overrides_[key] = value;
}

const std::string& Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double Config::num(const std::string& key) const { return parse_double(key, str(key)); }

int Config::integer(const std::string& key) const {
  const double v = num(key);
  if (v != static_cast<double>(static_cast<int>(v)))
    throw ConfigError("config key '" + key + "': expected an integer, got '" + str(key) + "'");
  return static_cast<int>(v);
}

std::uint64_t Config::u64(const std::string& key) const {
  const std::string& v = str(key);
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return out;
}

bool Config::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<double> Config::num_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(str(key))) out.push_back(parse_double(key, item));
  return out;
}

std::vector<int> Config::int_list(const std::string& key) const {
  std::vector<int> out;
  for (double v : num_list(key)) {
    if (v != static_cast<double>(static_cast<int>(v)))
      throw ConfigError("config key '" + key + "': expected integers, got '" + str(key) + "'");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::vector<std::string> Config::str_list(const std::string& key) const { return split_list(str(key)); }

std::string Config::dump() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
  return out.str();
}

}  // namespace cbfforge
