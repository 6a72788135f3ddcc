#include "cbfforge/cbfforge.h"

#include <cstring>
#include <memory>
#include <string>

#include "cbfforge/bench.hpp"
#include "cbfforge/config.hpp"
#include "cbfforge/error.hpp"
#include "cbfforge/filter.hpp"
#include "cbfforge/hj.hpp"
#include "cbfforge/safety_rl.hpp"

struct cbf_config {
  cbfforge::Config cfg;
};

struct cbf_model {
  std::unique_ptr<cbfforge::SafetyModel> model;
};

namespace {

thread_local std::string g_last_error;

template <class F>
cbf_status guarded(F&& fn) {
  try {
    fn();
    g_last_error.clear();
    return CBF_OK;
  } catch (const cbfforge::Error& e) {
    g_last_error = e.what();
    return static_cast<cbf_status>(static_cast<int>(e.code()));
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CBF_ERR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown failure";
    return CBF_ERR_RUNTIME;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw cbfforge::InvalidArgument(what);
}

void copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && cap > 0) {
    const size_t n = std::min(cap - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
}

cbfforge::QueryMode query_mode(int m) {
  require(m == 0 || m == 1, "query_mode must be 0 (model-free) or 1 (model-based)");
  return m == 0 ? cbfforge::QueryMode::model_free : cbfforge::QueryMode::model_based;
}

cbfforge::State to_state(const double s[3]) { return {s[0], s[1], s[2]}; }

}  // namespace

extern "C" {

const char* cbf_last_error(void) { return g_last_error.c_str(); }

const char* cbf_status_name(cbf_status status) {
  switch (status) {
    case CBF_OK: return "ok";
    case CBF_ERR_INVALID_ARGUMENT: return "invalid argument";
    case CBF_ERR_CONFIG: return "configuration error";
    case CBF_ERR_HYPOTHESIS: return "hypothesis violated";
    case CBF_ERR_IO: return "i/o error";
    case CBF_ERR_MISSING_ARTIFACT: return "missing artifact";
    case CBF_ERR_RUNTIME: return "runtime failure";
    case CBF_ERR_DIVERGENCE: return "divergence";
  }
  return "unknown status";
}

cbf_status cbf_config_new(cbf_config** out) {
  return guarded([&] {
    require(out != nullptr, "out must not be null");
    *out = new cbf_config{};
  });
}

cbf_status cbf_config_load(const char* path, cbf_config** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "path and out must not be null");
    *out = new cbf_config{cbfforge::Config::load(path)};
  });
}

cbf_status cbf_config_set(cbf_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg && key && value, "config, key and value must not be null");
    cfg->cfg.set(key, value);
  });
}

cbf_status cbf_config_get(const cbf_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    require(cfg && key, "config and key must not be null");
    copy_out(cfg->cfg.str(key), buf, cap, needed);
  });
}

void cbf_config_free(cbf_config* cfg) { delete cfg; }

cbf_status cbf_config_describe(char* buf, size_t cap, size_t* needed) {
  return guarded([&] { copy_out(cbfforge::describe_config_keys(), buf, cap, needed); });
}

cbf_status cbf_run_command(const cbf_config* cfg, const char* command) {
  return guarded([&] {
    require(cfg && command, "config and command must not be null");
    cbfforge::run_command(command, cfg->cfg);
  });
}

cbf_status cbf_grid_model_load(const char* value_path, const char* margin_path, double gamma, double dt, int n_actions,
                               cbf_model** out) {
  return guarded([&] {
    require(value_path && margin_path && out, "paths and out must not be null");
    require(n_actions >= 2, "n_actions must be at least 2");
    auto value = cbfforge::load_grid(std::string(value_path), cbfforge::FieldKind::value);
    auto margin = cbfforge::load_grid(std::string(margin_path), cbfforge::FieldKind::margin);
    *out = new cbf_model{std::make_unique<cbfforge::GridSafetyModel>(std::move(value), std::move(margin), gamma, dt,
                                                                     cbfforge::equispaced_actions(n_actions))};
  });
}

cbf_status cbf_neural_model_load(const char* critic_path, const char* actor_path, cbf_model** out) {
  return guarded([&] {
    require(critic_path && actor_path && out, "paths and out must not be null");
    *out = new cbf_model{std::make_unique<cbfforge::NeuralSafetyModel>(cbfforge::load_mlp(std::string(critic_path)),
                                                                       cbfforge::load_mlp(std::string(actor_path)))};
  });
}

void cbf_model_free(cbf_model* model) { delete model; }

cbf_status cbf_model_q(const cbf_model* model, const double state[3], const double* actions, size_t n, int mode,
                       double dt, double* out) {
  return guarded([&] {
    require(model && state && (n == 0 || (actions && out)), "null argument");
    cbfforge::FilterConfig fc;
    fc.query_mode = query_mode(mode);
    fc.dt = dt;
    cbfforge::q_query_batch(*model->model, to_state(state), std::span<const double>(actions, n), fc,
                            std::span<double>(out, n));
  });
}

cbf_status cbf_model_fallback(const cbf_model* model, const double state[3], double* action) {
  return guarded([&] {
    require(model && state && action, "null argument");
    *action = model->model->fallback(to_state(state));
  });
}

void cbf_filter_params_default(cbf_filter_params* p) {
  if (!p) return;
  p->alpha = 0.95;
  p->epsilon = 0.2;
  p->query_mode = 0;
  p->samples = 25;
  p->dt = 0.1;
  p->least_restrictive = 0;
}

cbf_status cbf_filter_action(const cbf_model* model, const double state[3], double nominal_action,
                             const cbf_filter_params* params, cbf_filter_result* result) {
  return guarded([&] {
    require(model && state && params && result, "null argument");
    cbfforge::FilterConfig fc;
    fc.alpha = params->alpha;
    fc.epsilon = params->epsilon;
    fc.query_mode = query_mode(params->query_mode);
    fc.sampler.n = params->samples;
    fc.dt = params->dt;
    const cbfforge::State z = to_state(state);
    const cbfforge::FilterDecision d = params->least_restrictive
                                           ? cbfforge::lr_filter(z, nominal_action, *model->model, fc)
                                           : cbfforge::cbf_filter(z, nominal_action, *model->model, fc);
    result->action = d.action;
    result->delta_a = d.delta_a;
    result->overridden = d.overridden ? 1 : 0;
    result->feasible_count = d.feasible_count;
    result->q_nominal = d.q_nominal;
    result->q_fallback = d.q_fallback;
  });
}

cbf_status cbf_dynamics_step(const double state[3], double action, double dt, double out[3]) {
  return guarded([&] {
    require(state && out, "null argument");
    cbfforge::validate_action(action);
    const cbfforge::State s = cbfforge::dynamics_step(to_state(state), action, dt);
    out[0] = s.x;
    out[1] = s.y;
    out[2] = s.theta;
  });
}

}  // extern "C"
