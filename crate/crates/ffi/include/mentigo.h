#ifndef MENTIGO_H
#define MENTIGO_H

/* Generated by cbindgen; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum MentigoStatus {
  MENTIGO_STATUS_OK = 0,
  MENTIGO_STATUS_NULL_ARGUMENT = 1,
  MENTIGO_STATUS_INVALID_UTF8 = 2,
  MENTIGO_STATUS_INVALID_INPUT = 3,
  MENTIGO_STATUS_NOT_FOUND = 4,
  MENTIGO_STATUS_NOT_ACTIVE = 5,
  MENTIGO_STATUS_WRONG_STAGE = 6,
  MENTIGO_STATUS_VALIDATION = 7,
  MENTIGO_STATUS_CORRUPT_LOG = 8,
  MENTIGO_STATUS_IO = 9,
  MENTIGO_STATUS_ENVIRONMENT = 10,
  MENTIGO_STATUS_BUFFER_TOO_SMALL = 11,
  MENTIGO_STATUS_PANIC = 99,
} MentigoStatus;

/**
 * A session service with its backends and clock.
 */
typedef struct MentigoEngine MentigoEngine;

/**
 * A loaded, validated knowledge base.
 */
typedef struct MentigoKb MentigoKb;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *mentigo_last_error(void);

/**
 * Library version as a static string.
 */
const char *mentigo_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void mentigo_string_free(char *s);

/**
 * Load the bundled knowledge base.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MentigoStatus mentigo_kb_fixture(struct MentigoKb **out);

/**
 * Load and validate a knowledge base file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` a valid pointer.
 */
enum MentigoStatus mentigo_kb_load(const char *path, struct MentigoKb **out);

/**
 * # Safety
 * `kb` must be null or a handle from `mentigo_kb_*`, freed once.
 */
void mentigo_kb_free(struct MentigoKb *kb);

/**
 * Stage, state and strategy counts.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MentigoStatus mentigo_kb_counts(const struct MentigoKb *kb,
                                     uint32_t *stages,
                                     uint32_t *states,
                                     uint32_t *strategies);

/**
 * Strategy ids mapped to `state` (1..=23). Writes up to `cap` ids to `out`
 * and the full count to `len`; returns `BUFFER_TOO_SMALL` if `cap < len`.
 *
 * # Safety
 * `out` must point to `cap` writable bytes (may be null when `cap` is 0);
 * `len` must be valid.
 */
enum MentigoStatus mentigo_kb_strategies_for_state(const struct MentigoKb *kb,
                                                   uint8_t state,
                                                   uint8_t *out,
                                                   size_t cap,
                                                   size_t *len);

/**
 * Engine over scripted backends. `script_json` is a bundle
 * `{"controller": {...}, "mentor": {...}}`, or null for the built-in demo
 * script. With `manual_clock` the engine starts at a fixed instant and only
 * moves via `mentigo_engine_advance_ms`; session ids then follow `seed`.
 *
 * # Safety
 * `kb` must be a live handle; `script_json` null or nul-terminated; `out` valid.
 */
enum MentigoStatus mentigo_engine_scripted(const struct MentigoKb *kb,
                                           const char *script_json,
                                           uint64_t seed,
                                           bool manual_clock,
                                           struct MentigoEngine **out);

/**
 * Engine over the live chat-completions backend configured from the
 * environment.
 *
 * # Safety
 * `kb` must be a live handle; `out` valid.
 */
enum MentigoStatus mentigo_engine_live(const struct MentigoKb *kb, struct MentigoEngine **out);

/**
 * # Safety
 * `engine` must be null or a handle from `mentigo_engine_*`, freed once.
 */
void mentigo_engine_free(struct MentigoEngine *engine);

/**
 * Move a manual clock forward. Fails with `INVALID_INPUT` on a wall-clock engine.
 *
 * # Safety
 * `engine` must be a live handle.
 */
enum MentigoStatus mentigo_engine_advance_ms(const struct MentigoEngine *engine, uint64_t ms);

/**
 * Create a session; writes its JSON to `out`.
 *
 * # Safety
 * Pointers must be valid; `topic` nul-terminated.
 */
enum MentigoStatus mentigo_session_create(const struct MentigoEngine *engine,
                                          const char *topic,
                                          char **out);

/**
 * Post a student message; writes `{"mentor_message", "decision"}` to `out`.
 *
 * # Safety
 * Pointers must be valid; strings nul-terminated.
 */
enum MentigoStatus mentigo_session_post(const struct MentigoEngine *engine,
                                        const char *session_id,
                                        const char *message,
                                        char **out);

/**
 * Current session state as JSON.
 *
 * # Safety
 * Pointers must be valid; `session_id` nul-terminated.
 */
enum MentigoStatus mentigo_session_get(const struct MentigoEngine *engine,
                                       const char *session_id,
                                       char **out);

/**
 * Events with `seq > after` as JSON lines, exactly as logged.
 *
 * # Safety
 * Pointers must be valid; `session_id` nul-terminated.
 */
enum MentigoStatus mentigo_session_events(const struct MentigoEngine *engine,
                                          const char *session_id,
                                          uint64_t after,
                                          char **out);

/**
 * Run the quiet timer once. `out` receives the nudge JSON, or null when no
 * nudge was due.
 *
 * # Safety
 * Pointers must be valid; `session_id` nul-terminated.
 */
enum MentigoStatus mentigo_session_tick(const struct MentigoEngine *engine,
                                        const char *session_id,
                                        char **out);

/**
 * Submit the stage-6 report (a JSON object with the four report fields);
 * writes the updated session to `out`.
 *
 * # Safety
 * Pointers must be valid; strings nul-terminated.
 */
enum MentigoStatus mentigo_session_submit_report(const struct MentigoEngine *engine,
                                                 const char *session_id,
                                                 const char *report_json,
                                                 char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MENTIGO_H */
