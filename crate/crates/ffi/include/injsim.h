#ifndef INJSIM_H
#define INJSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum InjsimStatus {
  INJSIM_STATUS_OK = 0,
  INJSIM_STATUS_SCENARIO_ERROR = 1,
  INJSIM_STATUS_RUNTIME_ERROR = 2,
  INJSIM_STATUS_INVALID_ARGUMENT = 3,
  INJSIM_STATUS_IO = 4,
  INJSIM_STATUS_AUDIT_FAILED = 5,
} InjsimStatus;

/*
 Opaque finished run.
 */
typedef struct InjsimRun InjsimRun;

/*
 Opaque parsed scenario.
 */
typedef struct InjsimScenario InjsimScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Parses a scenario from a NUL-terminated JSON document.

 # Safety
 `json` must be a valid C string and `out` a writable pointer.
 */
enum InjsimStatus injsim_scenario_parse(const char *json, struct InjsimScenario **out);

/*
 Reads and parses a scenario file.

 # Safety
 `path` must be a valid C string and `out` a writable pointer.
 */
enum InjsimStatus injsim_scenario_load(const char *path, struct InjsimScenario **out);

/*
 # Safety
 `scenario` must come from this library and not be used afterwards. Null is ignored.
 */
void injsim_scenario_free(struct InjsimScenario *scenario);

/*
 # Safety
 `scenario` must be a live handle.
 */
enum InjsimStatus injsim_scenario_set_seed(struct InjsimScenario *scenario, uint64_t seed);

/*
 `mode` is one of `injection`, `pure_backbone`, `pure_adhoc`.

 # Safety
 `scenario` must be a live handle and `mode` a valid C string.
 */
enum InjsimStatus injsim_scenario_set_mode(struct InjsimScenario *scenario, const char *mode);

/*
 Runs a scenario to completion. A non-zero `baselines` also runs the
 pure-backbone and pure-ad-hoc comparisons and fills their metric columns.

 # Safety
 `scenario` must be a live handle and `out` a writable pointer.
 */
enum InjsimStatus injsim_run(const struct InjsimScenario *scenario,
                             int baselines,
                             struct InjsimRun **out);

/*
 # Safety
 `run` must come from this library and not be used afterwards. Null is ignored.
 */
void injsim_run_free(struct InjsimRun *run);

/*
 The run's trace as text. Free the result with `injsim_string_free`.

 # Safety
 `run` must be a live handle and `out` a writable pointer.
 */
enum InjsimStatus injsim_run_trace(const struct InjsimRun *run, char **out);

/*
 The metrics table (header plus one row). Free the result with `injsim_string_free`.

 # Safety
 `run` must be a live handle and `out` a writable pointer.
 */
enum InjsimStatus injsim_run_metrics_csv(const struct InjsimRun *run, char **out);

/*
 One numeric metric column by name. Empty or non-numeric columns are an
 `InvalidArgument`.

 # Safety
 `run` must be a live handle, `name` a valid C string and `out` writable.
 */
enum InjsimStatus injsim_run_metric(const struct InjsimRun *run, const char *name, double *out);

/*
 Audits a trace against a metrics table. `passed` is set to 1 or 0 and, if
 `report` is non-null, it receives the rendered report. A failed audit
 returns `AuditFailed`; unparsable input returns `InvalidArgument`.

 # Safety
 `trace` and `metrics_csv` must be valid C strings; `passed` and `report`
 must be writable or null.
 */
enum InjsimStatus injsim_audit(const char *trace,
                               const char *metrics_csv,
                               int *passed,
                               char **report);

/*
 # Safety
 `s` must come from this library and not be used afterwards. Null is ignored.
 */
void injsim_string_free(char *s);

/*
 Message for the last failed call on this thread, or null. Valid until the
 next library call on the same thread.
 */
const char *injsim_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INJSIM_H */
