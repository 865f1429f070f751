#ifndef TRIAGE_H
#define TRIAGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TriageStatus {
  TRIAGE_STATUS_OK = 0,
  TRIAGE_STATUS_NULL_ARGUMENT = 1,
  TRIAGE_STATUS_INVALID_UTF8 = 2,
  TRIAGE_STATUS_INVALID_ARGUMENT = 3,
  TRIAGE_STATUS_NOT_FOUND = 4,
  TRIAGE_STATUS_IO = 5,
  TRIAGE_STATUS_RUNTIME = 6,
  TRIAGE_STATUS_PANIC = 7,
} TriageStatus;

typedef enum TriageCohort {
  TRIAGE_COHORT_AGENT = 0,
  TRIAGE_COHORT_MANUAL = 1,
} TriageCohort;

/**
 * Result of one replay. Opaque to C.
 */
typedef struct TriageReplay TriageReplay;

/**
 * Cohort metrics. Undefined values (no summarized incidents, no ground
 * truth, no step data) are NaN.
 */
typedef struct TriageMetrics {
  size_t n_alerts;
  size_t n_incidents;
  double mtti_minutes;
  double ela;
  double eer;
  double ar;
} TriageMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static string.
 */
const char *triage_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next call into this library on the same thread.
 */
const char *triage_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void triage_string_free(char *s);

/**
 * Replays the scenario file at `scenario_path`. `seed` overrides the
 * scenario's seed when `use_seed` is true; `workers` of 0 keeps the default.
 *
 * # Safety
 * `scenario_path` must be a NUL-terminated string; `out` must be writable.
 */
enum TriageStatus triage_replay_run(const char *scenario_path,
                                    uint64_t seed,
                                    bool use_seed,
                                    uint32_t workers,
                                    struct TriageReplay **out);

/**
 * # Safety
 * `handle` must be NULL or a live handle from [`triage_replay_run`].
 */
void triage_replay_free(struct TriageReplay *handle);

/**
 * Number of incidents in a cohort, or 0 for a NULL handle.
 *
 * # Safety
 * `handle` must be NULL or a live handle.
 */
size_t triage_replay_incident_count(const struct TriageReplay *handle, enum TriageCohort which);

/**
 * # Safety
 * `handle` must be a live handle; `out` must be writable.
 */
enum TriageStatus triage_replay_metrics(const struct TriageReplay *handle,
                                        enum TriageCohort which,
                                        struct TriageMetrics *out);

/**
 * Number of approval-safety violations found in the replay's audit log.
 *
 * # Safety
 * `handle` must be NULL or a live handle.
 */
size_t triage_replay_audit_violations(const struct TriageReplay *handle);

/**
 * One incident record as JSON. Free the result with
 * [`triage_string_free`].
 *
 * # Safety
 * `handle` must be a live handle; `out_json` must be writable.
 */
enum TriageStatus triage_replay_incident_json(const struct TriageReplay *handle,
                                              enum TriageCohort which,
                                              size_t index,
                                              char **out_json);

/**
 * Writes a cohort as NDJSON to `path`.
 *
 * # Safety
 * `handle` must be a live handle; `path` a NUL-terminated string.
 */
enum TriageStatus triage_replay_write_ndjson(const struct TriageReplay *handle,
                                             enum TriageCohort which,
                                             const char *path);

/**
 * Renders a metrics report over `n` NDJSON cohort files. `format` is
 * `table`, `csv` or `json`.
 *
 * # Safety
 * `names` and `paths` must each point to `n` NUL-terminated strings;
 * `format` must be NUL-terminated; `out` must be writable.
 */
enum TriageStatus triage_report_render(const char *const *names,
                                       const char *const *paths,
                                       size_t n,
                                       const char *format,
                                       char **out);

/**
 * Validates one wire alert and returns its normalized JSON form. The
 * payload's own `fired_at` is kept.
 *
 * # Safety
 * `json` must be NUL-terminated; `out_json` must be writable.
 */
enum TriageStatus triage_alert_normalize(const char *json, uint64_t seed, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRIAGE_H */
