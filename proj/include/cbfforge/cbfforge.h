/* C interface to the cbfforge safety-filter library. */
#ifndef CBFFORGE_H
#define CBFFORGE_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define CBF_API __declspec(dllexport)
#else
#define CBF_API __attribute__((visibility("default")))
#endif

typedef enum cbf_status {
  CBF_OK = 0,
  CBF_ERR_INVALID_ARGUMENT = 1,
  CBF_ERR_CONFIG = 2,
  CBF_ERR_HYPOTHESIS = 3,
  CBF_ERR_IO = 4,
  CBF_ERR_MISSING_ARTIFACT = 5,
  CBF_ERR_RUNTIME = 6,
  CBF_ERR_DIVERGENCE = 7
} cbf_status;

typedef struct cbf_config cbf_config;
typedef struct cbf_model cbf_model;

/* Message of the last failed call on this thread; "" when none. */
CBF_API const char* cbf_last_error(void);
CBF_API const char* cbf_status_name(cbf_status status);

/* Configuration: flat key = value settings. */
CBF_API cbf_status cbf_config_new(cbf_config** out);
CBF_API cbf_status cbf_config_load(const char* path, cbf_config** out);
CBF_API cbf_status cbf_config_set(cbf_config* cfg, const char* key, const char* value);
/* Copies the value into buf (NUL-terminated, truncated to cap); *needed gets the full length + 1. */
CBF_API cbf_status cbf_config_get(const cbf_config* cfg, const char* key, char* buf, size_t cap, size_t* needed);
CBF_API void cbf_config_free(cbf_config* cfg);
/* Documentation of every key, one per line. Same buffer contract as cbf_config_get. */
CBF_API cbf_status cbf_config_describe(char* buf, size_t cap, size_t* needed);

/* Runs a subcommand: train-margin, solve-grid, train-rl, filter-eval,
   verify-bound, bench, demo. Outputs land in the configured output_dir. */
CBF_API cbf_status cbf_run_command(const cbf_config* cfg, const char* command);

/* Safety models. A state is (x, y, theta). */
CBF_API cbf_status cbf_grid_model_load(const char* value_path, const char* margin_path, double gamma, double dt,
                                       int n_actions, cbf_model** out);
CBF_API cbf_status cbf_neural_model_load(const char* critic_path, const char* actor_path, cbf_model** out);
CBF_API void cbf_model_free(cbf_model* model);

/* out[i] = Q(state, actions[i]); query_mode 0 = model-free, 1 = model-based. */
CBF_API cbf_status cbf_model_q(const cbf_model* model, const double state[3], const double* actions, size_t n,
                               int query_mode, double dt, double* out);
CBF_API cbf_status cbf_model_fallback(const cbf_model* model, const double state[3], double* action);

typedef struct cbf_filter_params {
  double alpha;
  double epsilon;
  int query_mode; /* 0 model-free, 1 model-based */
  int samples;    /* equally spaced samples before the anchors */
  double dt;
  int least_restrictive; /* nonzero: least-restrictive switching instead of the CBF filter */
} cbf_filter_params;

CBF_API void cbf_filter_params_default(cbf_filter_params* params);

typedef struct cbf_filter_result {
  double action;
  double delta_a;
  int overridden;
  int feasible_count;
  double q_nominal;
  double q_fallback;
} cbf_filter_result;

CBF_API cbf_status cbf_filter_action(const cbf_model* model, const double state[3], double nominal_action,
                                     const cbf_filter_params* params, cbf_filter_result* result);

/* One RK4 step of the Dubins car with workspace clamp and angle wrap. */
CBF_API cbf_status cbf_dynamics_step(const double state[3], double action, double dt, double out[3]);

#ifdef __cplusplus
}
#endif

#endif /* CBFFORGE_H */
