#ifndef TSPBMC_H
#define TSPBMC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by all entry points.
 */
typedef enum TspStatus {
  TSP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  TSP_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  TSP_STATUS_INVALID_UTF8 = 2,
  /**
   * Protocol, scenario or parameters were rejected.
   */
  TSP_STATUS_INVALID_INPUT = 3,
  /**
   * The solver could not decide some bound (timeout, unknown, missing binary).
   */
  TSP_STATUS_INCONCLUSIVE = 4,
  /**
   * A produced witness failed its own replay check.
   */
  TSP_STATUS_INTERNAL = 5,
} TspStatus;

/**
 * Outcome of an attack search.
 */
typedef enum TspVerdict {
  TSP_VERDICT_NO_ATTACK = 0,
  TSP_VERDICT_ATTACK_FOUND = 1,
} TspVerdict;

/**
 * Instantiated protocol model.
 */
typedef struct TspModel TspModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a model from protocol source text and scenario JSON.
 *
 * `scenario_json` may be null for the fair scenario; `sessions == 0` uses the
 * scenario's default session count.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum TspStatus tsp_model_new(const char *protocol,
                             const char *scenario_json,
                             uint32_t sessions,
                             struct TspModel **out);

/**
 * Builds a model from a built-in protocol and one of its scenarios.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum TspStatus tsp_model_from_library(const char *protocol,
                                      const char *scenario,
                                      uint32_t sessions,
                                      struct TspModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void tsp_model_free(struct TspModel *model);

/**
 * Number of sessions the model was instantiated with.
 *
 * # Safety
 * `model` must be a live handle or null (returns 0).
 */
uint32_t tsp_model_sessions(const struct TspModel *model);

/**
 * SMT-LIB2 script for exactly `bound` steps.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum TspStatus tsp_model_encode(const struct TspModel *model, size_t bound, char **out);

/**
 * The model as JSON (universe, rules, exec steps, initial knowledge).
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum TspStatus tsp_model_dump_json(const struct TspModel *model, char **out);

/**
 * Explicit-state search up to `depth` steps.
 *
 * On success `*out_verdict` is set; `*out_bound` receives the attack depth
 * (or `depth` when none was found) and `*out_witness_json` the witness (null
 * when no attack). `out_bound` and `out_witness_json` may be null.
 *
 * # Safety
 * `model` must be a live handle; non-null out pointers must be writable.
 */
enum TspStatus tsp_oracle(const struct TspModel *model,
                          size_t depth,
                          enum TspVerdict *out_verdict,
                          size_t *out_bound,
                          char **out_witness_json);

/**
 * SMT search with bound deepening.
 *
 * `max_bound == 0` means twice the number of exec steps, `timeout_secs == 0`
 * means 60 seconds, and a null `solver` falls back to `$TSPBMC_SOLVER` and
 * then `z3 -in`. Outputs as for [`tsp_oracle`].
 *
 * # Safety
 * `model` must be a live handle; `solver` null or NUL-terminated; non-null
 * out pointers must be writable.
 */
enum TspStatus tsp_check(const struct TspModel *model,
                         size_t max_bound,
                         const char *solver,
                         uint64_t timeout_secs,
                         enum TspVerdict *out_verdict,
                         size_t *out_bound,
                         char **out_witness_json);

/**
 * Built-in library listing, one `protocol: scenario, scenario, ...` per line.
 *
 * # Safety
 * `out` must be writable.
 */
enum TspStatus tsp_library_list(char **out);

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread; do not free it.
 */
const char *tsp_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void tsp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSPBMC_H */
