// Command-line front end. Talks to the library only through the C interface.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cbfforge/cbfforge.h"

namespace {

struct Options {
  std::string config_path;
  std::string seed;
  std::string out;
  std::vector<std::string> sets;
};

std::string key_docs() {
  size_t needed = 0;
  cbf_config_describe(nullptr, 0, &needed);
  std::string buf(needed, '\0');
  cbf_config_describe(buf.data(), buf.size(), &needed);
  buf.resize(needed > 0 ? needed - 1 : 0);
  return buf;
}

int exit_code(cbf_status s) {
  switch (s) {
    case CBF_OK:
      return 0;
    case CBF_ERR_CONFIG:
    case CBF_ERR_INVALID_ARGUMENT:
    case CBF_ERR_HYPOTHESIS:
      return 2;
    default:
      return 1;
  }
}

int fail(cbf_status s) {
  std::fprintf(stderr, "cbfforge: %s: %s\n", cbf_status_name(s), cbf_last_error());
  return exit_code(s);
}

int run(const std::string& command, const Options& opt) {
  cbf_config* cfg = nullptr;
  cbf_status s = opt.config_path.empty() ? cbf_config_new(&cfg) : cbf_config_load(opt.config_path.c_str(), &cfg);
  if (s != CBF_OK) return fail(s);
  auto set = [&](const std::string& key, const std::string& value) {
    return s == CBF_OK ? (s = cbf_config_set(cfg, key.c_str(), value.c_str())) : s;
  };
  for (const auto& kv : opt.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      cbf_config_free(cfg);
      std::fprintf(stderr, "cbfforge: --set expects key=value, got '%s'\n", kv.c_str());
      return 2;
    }
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!opt.seed.empty()) set("seed", opt.seed);
  if (!opt.out.empty()) set("output_dir", opt.out);
  if (s == CBF_OK) s = cbf_run_command(cfg, command.c_str());
  cbf_config_free(cfg);
  return s == CBF_OK ? 0 : fail(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safety filter synthesis on the Dubins car benchmark"};
  app.require_subcommand(1);
  app.footer("Configuration keys (flat `key = value` files, # comments):\n" + key_docs());

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train-margin", "train the margin network selected by margin.mode"},
      {"solve-grid", "solve the discounted avoid fixed point on the grid"},
      {"train-rl", "train the safety critic and fallback actor"},
      {"filter-eval", "compare filters over seeded rollouts (metrics.csv)"},
      {"verify-bound", "check the margin-to-value Lipschitz bound"},
      {"bench", "run the experiment named by the `experiment` key"},
      {"demo", "dump a single filtered rollout"},
  };
  Options opt;
  std::string chosen;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config_path, "configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "override the seed key");
    sub->add_option("--out", opt.out, "override output_dir");
    sub->add_option("--set", opt.sets, "override any key, as key=value (repeatable)");
    sub->footer("See `cbfforge --help` for every configuration key.");
    sub->callback([&chosen, n = name] { chosen = n; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return run(chosen, opt);
}
