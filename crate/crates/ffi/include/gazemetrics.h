#ifndef GAZEMETRICS_H
#define GAZEMETRICS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define GM_ABI_VERSION 1

/*
 Result code of every fallible call.
 */
typedef enum GmStatus {
  GM_STATUS_OK = 0,
  GM_STATUS_NULL_POINTER = 1,
  GM_STATUS_INVALID_UTF8 = 2,
  GM_STATUS_INVALID_ARGUMENT = 3,
  GM_STATUS_PARSE_ERROR = 4,
  /*
   Input was well-formed but refused (out-of-order sample, bad layout).
   */
  GM_STATUS_REJECTED = 5,
  /*
   The session has ended.
   */
  GM_STATUS_CLOSED = 6,
  /*
   Nothing to return (no pending event).
   */
  GM_STATUS_EMPTY = 7,
  GM_STATUS_IO = 8,
  GM_STATUS_PANIC = 9,
} GmStatus;

/*
 Opaque session handle.
 */
typedef struct GmEngine GmEngine;

/*
 One gaze sample. `origin`/`pos` are read only when `has_3d` is true.
 */
typedef struct GmSample {
  int64_t t_us;
  double screen_x;
  double screen_y;
  bool has_3d;
  double origin[3];
  double pos[3];
  bool valid;
} GmSample;

/*
 Per-word metrics in microseconds. A `has_*` flag of false means the
 value is undefined and the paired field is zero.
 */
typedef struct GmWordMetrics {
  size_t word_index;
  int64_t tfd_us;
  bool has_afd;
  double afd_us;
  bool has_mifd;
  int64_t mifd_us;
  bool has_mafd;
  int64_t mafd_us;
  uint32_t fixation_count;
  bool has_tff_ts;
  int64_t tff_ts_us;
  bool has_ttff;
  int64_t ttff_us;
  bool has_ffd;
  int64_t ffd_us;
  bool has_fp_ffd;
  int64_t fp_ffd_us;
  bool has_fp_group;
  uint64_t fp_group;
  bool has_fp_regression;
  bool fp_regression;
  bool has_fpd;
  int64_t fpd_us;
  bool has_rpd;
  int64_t rpd_us;
  bool has_srpd;
  int64_t srpd_us;
  int64_t rrd_us;
} GmWordMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Creates an engine. `config_json` is a session configuration object
 (null or `"{}"` for defaults). When `store_dir` is non-null the session
 is persisted to `<store_dir>/<id>.jsonl`. Writes the handle to `out`.

 # Safety
 String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum GmStatus gm_engine_new(const char *config_json, const char *store_dir, struct GmEngine **out);

/*
 Ends the session (flushing any store) and releases the handle.

 # Safety
 `engine` must be null or a handle from `gm_engine_new` not yet freed.
 */
void gm_engine_free(struct GmEngine *engine);

/*
 Installs a layout manifest (JSON).

 # Safety
 `engine` must be a live handle; `manifest_json` NUL-terminated.
 */
enum GmStatus gm_engine_set_layout(struct GmEngine *engine, const char *manifest_json);

/*
 Records a viewport change effective from `t_us` (sample clock).

 # Safety
 `engine` must be a live handle.
 */
enum GmStatus gm_engine_set_viewport(struct GmEngine *engine,
                                     int64_t t_us,
                                     double win_x,
                                     double win_y,
                                     double scroll_x,
                                     double scroll_y,
                                     double dpr);

/*
 Feeds one gaze sample.

 # Safety
 `engine` must be a live handle; `sample` must point to a `GmSample`.
 */
enum GmStatus gm_engine_push_sample(struct GmEngine *engine, const struct GmSample *sample);

/*
 Feeds one protocol message as JSON text (gaze, layout, viewport,
 tabstate or end).

 # Safety
 `engine` must be a live handle; `message` NUL-terminated.
 */
enum GmStatus gm_engine_ingest_json(struct GmEngine *engine, const char *message);

/*
 Current metrics of one word.

 # Safety
 `engine` must be a live handle; `out` writable.
 */
enum GmStatus gm_engine_word_metrics(struct GmEngine *engine,
                                     size_t word_index,
                                     struct GmWordMetrics *out);

/*
 Number of fixations and saccades detected so far.

 # Safety
 `engine` must be a live handle; outputs may be null.
 */
enum GmStatus gm_engine_event_counts(struct GmEngine *engine, size_t *fixations, size_t *saccades);

/*
 Ends the session: closes open fixations, finalizes first-pass
 regressions and flushes. Idempotent.

 # Safety
 `engine` must be a live handle.
 */
enum GmStatus gm_engine_finish(struct GmEngine *engine);

/*
 Metrics CSV (milliseconds), one row per word. Free with `gm_string_free`.

 # Safety
 `engine` must be a live handle; `out` writable.
 */
enum GmStatus gm_engine_export_csv(struct GmEngine *engine, char **out);

/*
 Session identifier. Free with `gm_string_free`.

 # Safety
 `engine` must be a live handle; `out` writable.
 */
enum GmStatus gm_engine_session_id(struct GmEngine *engine, char **out);

/*
 Starts queueing viewer messages (snapshot first, then fixation,
 saccade and metrics updates) for `gm_engine_poll_event`. The queue is
 unbounded; poll it regularly.

 # Safety
 `engine` must be a live handle.
 */
enum GmStatus gm_engine_subscribe(struct GmEngine *engine);

/*
 Pops the oldest queued viewer message (JSON). Returns `Empty` when the
 queue is empty or no subscription exists. Free with `gm_string_free`.

 # Safety
 `engine` must be a live handle; `out` writable.
 */
enum GmStatus gm_engine_poll_event(struct GmEngine *engine, char **out);

/*
 Frees a string returned by this library. Null is ignored.

 # Safety
 `s` must be null or a pointer obtained from this library, freed once.
 */
void gm_string_free(char *s);

/*
 Message of the last failed call on this thread, or null. Valid until
 the next failing call on the same thread.
 */
const char *gm_last_error(void);

/*
 Library version, static storage.
 */
const char *gm_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAZEMETRICS_H */
