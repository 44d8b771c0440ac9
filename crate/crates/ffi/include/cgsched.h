#ifndef CGSCHED_H
#define CGSCHED_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Validation errors match the command-line exit code 1,
 * simulation failures exit code 2.
 */
typedef enum CgsStatus {
  CGS_STATUS_OK = 0,
  CGS_STATUS_INVALID_CONFIG = 1,
  CGS_STATUS_RUNTIME = 2,
  CGS_STATUS_NULL_POINTER = 3,
  CGS_STATUS_INVALID_UTF8 = 4,
  CGS_STATUS_PANIC = 5,
} CgsStatus;

/**
 * An experiment configuration.
 */
typedef struct CgsConfig CgsConfig;

/**
 * The outcome of one simulation.
 */
typedef struct CgsRun CgsRun;

/**
 * Headline numbers of a run, as in the summary CSV.
 */
typedef struct CgsSummary {
  double density;
  uint64_t cores;
  uint64_t median_us;
  uint64_t p95_us;
  uint64_t p99_us;
  double throughput_rps;
  double overhead_pct;
  double mean_switch_cost_us;
  double switch_rate_hz;
  double rq_wait_s;
  double util_effective_pct;
  double util_perceived_pct;
  uint64_t seed;
  uint64_t switches;
  uint64_t digest;
} CgsSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *cgs_last_error(void);

/**
 * Creates a configuration holding the documented defaults.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum CgsStatus cgs_config_default(struct CgsConfig **out);

/**
 * Parses and validates an experiment file's contents.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum CgsStatus cgs_config_from_toml(const char *toml, struct CgsConfig **out);

/**
 * Releases a configuration. NULL is ignored.
 *
 * # Safety
 * `cfg` must come from this library and not be used afterwards.
 */
void cgs_config_free(struct CgsConfig *cfg);

/**
 * Selects the policy by name: `cfs`, `eevdf`, `lags` or `lags-static`.
 *
 * # Safety
 * `cfg` must be a live handle and `name` a NUL-terminated string.
 */
enum CgsStatus cgs_config_set_policy(struct CgsConfig *cfg, const char *name);

/**
 * Sets functions per core.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum CgsStatus cgs_config_set_density(struct CgsConfig *cfg, double density);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum CgsStatus cgs_config_set_seed(struct CgsConfig *cfg, uint64_t seed);

/**
 * Runs one simulation with the configured policy, density and seed.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum CgsStatus cgs_run(const struct CgsConfig *cfg, struct CgsRun **out);

/**
 * Copies the run's summary into `out`.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum CgsStatus cgs_run_summary(const struct CgsRun *run, struct CgsSummary *out);

/**
 * Copies up to `cap` request latencies (µs, post-warmup, in recording order)
 * into `buf` and stores the total count in `len`. Pass `cap = 0` to query
 * the count.
 *
 * # Safety
 * `run` must be a live handle, `len` writable, and `buf` valid for `cap`
 * elements when `cap > 0`.
 */
enum CgsStatus cgs_run_latencies(const struct CgsRun *run, uint64_t *buf, size_t cap, size_t *len);

/**
 * Releases a run. NULL is ignored.
 *
 * # Safety
 * `run` must come from this library and not be used afterwards.
 */
void cgs_run_free(struct CgsRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CGSCHED_H */
