#ifndef HLMPC_H
#define HLMPC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HlmpcStatus {
  HLMPC_STATUS_OK = 0,
  HLMPC_STATUS_NULL_POINTER = 1,
  HLMPC_STATUS_INVALID_STRING = 2,
  HLMPC_STATUS_CONFIG = 3,
  HLMPC_STATUS_IO = 4,
  HLMPC_STATUS_INITIALIZATION = 5,
  HLMPC_STATUS_NO_FEASIBLE_PLAN = 6,
  HLMPC_STATUS_INVARIANT = 7,
  HLMPC_STATUS_OUT_OF_RANGE = 8,
  HLMPC_STATUS_INTERNAL = 9,
} HlmpcStatus;

/**
 * Opaque runner handle.
 */
typedef struct HlmpcRunner HlmpcRunner;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads and validates a configuration file, then builds the initial
 * iteration. On success `*out` receives a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HlmpcStatus hlmpc_runner_from_path(const char *path, struct HlmpcRunner **out);

/**
 * Same as [`hlmpc_runner_from_path`] with the configuration given as JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum HlmpcStatus hlmpc_runner_from_json(const char *json, struct HlmpcRunner **out);

/**
 * Runs one more iteration.
 *
 * # Safety
 * `runner` must be a live handle.
 */
enum HlmpcStatus hlmpc_runner_run_iteration(struct HlmpcRunner *runner);

/**
 * Runs `iterations` more iterations.
 *
 * # Safety
 * `runner` must be a live handle.
 */
enum HlmpcStatus hlmpc_runner_run(struct HlmpcRunner *runner, size_t iterations);

/**
 * Number of archived iterations, the initial one included.
 *
 * # Safety
 * `runner` must be a live handle; `out` must be writable.
 */
enum HlmpcStatus hlmpc_runner_iteration_count(const struct HlmpcRunner *runner, size_t *out);

/**
 * Tasks completed in `iteration`.
 *
 * # Safety
 * `runner` must be a live handle; `out` must be writable.
 */
enum HlmpcStatus hlmpc_runner_tasks(const struct HlmpcRunner *runner,
                                    size_t iteration,
                                    size_t *out);

/**
 * Charge used and time elapsed over `iteration`.
 *
 * # Safety
 * `runner` must be a live handle; both outputs must be writable.
 */
enum HlmpcStatus hlmpc_runner_totals(const struct HlmpcRunner *runner,
                                     size_t iteration,
                                     double *soc,
                                     double *time);

/**
 * Writes the output files into `out_dir`.
 *
 * # Safety
 * `runner` must be a live handle; `out_dir` a NUL-terminated string.
 */
enum HlmpcStatus hlmpc_runner_write_outputs(const struct HlmpcRunner *runner,
                                            const char *out_dir,
                                            bool dump_learning);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `runner` must be null or a handle not yet freed.
 */
void hlmpc_runner_free(struct HlmpcRunner *runner);

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *hlmpc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hlmpc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HLMPC_H */
