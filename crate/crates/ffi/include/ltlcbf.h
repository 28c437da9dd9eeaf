/* C interface to the ltlcbf controller-synthesis toolkit. */

#ifndef LTLCBF_H
#define LTLCBF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum LtlcbfStatus {
  LtlcbfStatus_Ok = 0,
  LtlcbfStatus_ConfigError = 2,
  LtlcbfStatus_InfeasibleOrViolation = 3,
  LtlcbfStatus_InternalError = 4,
  LtlcbfStatus_NullArgument = 5,
} LtlcbfStatus;

/**
 * Loaded scenario plus its synthesized plan; opaque to C callers.
 */
typedef struct LtlcbfScenario LtlcbfScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread, or NULL. Owned by the library;
 * valid until the next failing call on the same thread.
 */
const char *ltlcbf_last_error(void);

/**
 * Load a scenario JSON file and synthesize its plan.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 * On success `*out` owns a handle that must be released with
 * [`ltlcbf_scenario_free`].
 */
int ltlcbf_scenario_load(const char *path,
                         int run_index,
                         int no_guards,
                         struct LtlcbfScenario **out);

/**
 * # Safety
 * `handle` must come from [`ltlcbf_scenario_load`] and not already be freed.
 */
void ltlcbf_scenario_free(struct LtlcbfScenario *handle);

/**
 * Plan artifact as a JSON string; free with [`ltlcbf_string_free`].
 *
 * # Safety
 * `handle` must be a live scenario handle.
 */
char *ltlcbf_plan_json(const struct LtlcbfScenario *handle);

/**
 * Simulate the closed loop, writing the trajectory CSV and verdict JSON to
 * the given paths. `dt` and `t_end` fall back to the scenario's values when
 * not positive. `simultaneous` collapses all spec windows (the comparison
 * baseline). Returns `Ok` when the run completed without failure,
 * `InfeasibleOrViolation` when the verdict records one.
 *
 * # Safety
 * `handle` must be live; `csv_path` and `verdict_path` must be
 * NUL-terminated strings.
 */
int ltlcbf_simulate(const struct LtlcbfScenario *handle,
                    double dt,
                    double t_end,
                    int simultaneous,
                    const char *csv_path,
                    const char *verdict_path);

/**
 * # Safety
 * `s` must be a pointer previously returned by this library's
 * string-returning functions, not yet freed.
 */
void ltlcbf_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LTLCBF_H */
