#ifndef SIGNALROOM_H
#define SIGNALROOM_H

/* Generated by cbindgen from signalroom-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum SrStatus {
  /**
   * Success.
   */
  SR_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SR_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  SR_STATUS_INVALID_UTF8 = 2,
  /**
   * The scenario document failed to load or validate.
   */
  SR_STATUS_BAD_SCENARIO = 3,
  /**
   * The agent pipeline failed (integrity fault, mining error, ...).
   */
  SR_STATUS_RUN_FAILED = 4,
  /**
   * The probe query was malformed or referenced an unknown name.
   */
  SR_STATUS_BAD_QUERY = 5,
} SrStatus;

/**
 * Opaque session: the stores of one completed run.
 */
typedef struct SrSession SrSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; never freed by the caller.
 */
const char *sr_version(void);

/**
 * Run the full pipeline on a scenario JSON document and return a session
 * handle through `out_session`. The handle must be released with
 * `sr_session_free`.
 */
enum SrStatus sr_session_run(const char *scenario_json, struct SrSession **out_session);

/**
 * Release a session handle. Null is a no-op.
 */
void sr_session_free(struct SrSession *session);

/**
 * Number of mined rules in the session, or -1 on null.
 */
int64_t sr_session_rule_count(const struct SrSession *session);

/**
 * Number of recall objects (qualia) in the session, or -1 on null.
 */
int64_t sr_session_recall_object_count(const struct SrSession *session);

/**
 * Serialize the whole store bundle as JSON into `out_json` (caller frees
 * with `sr_string_free`).
 */
enum SrStatus sr_session_stores_json(const struct SrSession *session, char **out_json);

/**
 * Answer one probe query, given and returned as JSON. Unknown names and
 * malformed queries yield `SR_STATUS_BAD_QUERY` with no answer written.
 */
enum SrStatus sr_session_probe(const struct SrSession *session,
                               const char *query_json,
                               char **out_answer_json);

/**
 * Release a string produced by this library. Null is a no-op.
 */
void sr_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIGNALROOM_H */
