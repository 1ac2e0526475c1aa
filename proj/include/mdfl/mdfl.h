/* C interface to the MDFL simulator. Every function returns an mdfl_status;
 * on failure mdfl_last_error_message() describes the error (thread-local,
 * valid until the next call on the same thread). Handles are opaque and
 * owned by the caller. */
#ifndef MDFL_MDFL_H
#define MDFL_MDFL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MDFL_API __declspec(dllexport)
#else
#define MDFL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mdfl_status {
  MDFL_OK = 0,
  MDFL_ERR_CONFIG = 1,
  MDFL_ERR_PARSE = 2,
  MDFL_ERR_VALIDATION = 3,
  MDFL_ERR_IO = 4,
  MDFL_ERR_PRECONDITION = 5,
  MDFL_ERR_INVARIANT = 6,
  MDFL_ERR_INVALID_ARGUMENT = 7,
  MDFL_ERR_INTERNAL = 8
} mdfl_status;

typedef struct mdfl_config mdfl_config;
typedef struct mdfl_trace mdfl_trace;
typedef struct mdfl_policy mdfl_policy;

typedef struct mdfl_run_summary {
  double f_acc;
  double ecr;
  double e_total;
  int rounds_executed;
  int rounds_committed;
} mdfl_run_summary;

typedef void (*mdfl_episode_callback)(int episode, double accumulated_reward, double policy_loss,
                                      double value_loss, double entropy, void* user);
typedef void (*mdfl_log_callback)(const char* message, void* user);

MDFL_API const char* mdfl_version(void);
MDFL_API const char* mdfl_last_error_message(void);
MDFL_API const char* mdfl_status_name(mdfl_status status);

/* Configuration */
MDFL_API mdfl_status mdfl_config_default(mdfl_config** out);
MDFL_API mdfl_status mdfl_config_load(const char* path, mdfl_config** out);
MDFL_API mdfl_status mdfl_config_parse(const char* text, mdfl_config** out);
MDFL_API mdfl_status mdfl_config_clone(const mdfl_config* config, mdfl_config** out);
/* key is "section.name", e.g. "resources.initial_energy". */
MDFL_API mdfl_status mdfl_config_set(mdfl_config* config, const char* key, const char* value);
/* Textual value of one key, written like mdfl_config_to_ini. */
MDFL_API mdfl_status mdfl_config_get(const mdfl_config* config, const char* key, char* buf, size_t cap,
                                     size_t* needed);
MDFL_API mdfl_status mdfl_config_set_seed(mdfl_config* config, uint64_t seed);
MDFL_API mdfl_status mdfl_config_get_seed(const mdfl_config* config, uint64_t* seed);
MDFL_API mdfl_status mdfl_config_set_scheduler(mdfl_config* config, const char* scheduler);
/* Writes the canonical INI text into buf (NUL-terminated, truncated to cap)
 * and the full length excluding the NUL into *needed. buf may be NULL when
 * cap is 0. */
MDFL_API mdfl_status mdfl_config_to_ini(const mdfl_config* config, char* buf, size_t cap, size_t* needed);
MDFL_API void mdfl_config_free(mdfl_config* config);

/* Mobility traces */
MDFL_API mdfl_status mdfl_trace_generate(const mdfl_config* config, mdfl_trace** out);
MDFL_API mdfl_status mdfl_trace_ingest(const char* path, double round_duration, mdfl_trace** out);
MDFL_API mdfl_status mdfl_trace_write_csv(const mdfl_trace* trace, const char* path);
MDFL_API mdfl_status mdfl_trace_info(const mdfl_trace* trace, int* rounds, int* vehicles);
MDFL_API void mdfl_trace_free(mdfl_trace* trace);

/* MAPPO policies. curve_csv may be NULL; callback may be NULL. */
MDFL_API mdfl_status mdfl_policy_train(const mdfl_config* config, const char* curve_csv,
                                       mdfl_episode_callback callback, void* user, mdfl_policy** out);
MDFL_API mdfl_status mdfl_policy_save(const mdfl_policy* policy, const char* path);
MDFL_API mdfl_status mdfl_policy_load(const mdfl_config* config, const char* path, mdfl_policy** out);
MDFL_API void mdfl_policy_free(mdfl_policy* policy);

/* Runs the configured scheduler. policy is required for mappo and ignored
 * otherwise; out_dir may be NULL to skip CSV output; summary may be NULL. */
MDFL_API mdfl_status mdfl_run(const mdfl_config* config, const mdfl_policy* policy, const char* out_dir,
                              mdfl_run_summary* summary);

/* Sweeps one axis (E_v, E_cloud, N, epsilon, r) over a comma-separated
 * value list, running mappo, dfl and random at each point. A non-NULL
 * policy is reused for every point; otherwise reuse_policy != 0 trains one
 * policy on the base config, and 0 retrains per value. */
MDFL_API mdfl_status mdfl_sweep(const mdfl_config* config, const char* axis, const char* values,
                                int reuse_policy, const mdfl_policy* policy, const char* out_dir,
                                mdfl_log_callback log, void* user);

#ifdef __cplusplus
}
#endif

#endif /* MDFL_MDFL_H */
