#ifndef CINETRACK_H
#define CINETRACK_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result code of every fallible call.
 */
typedef enum CtStatus {
  CT_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  CT_STATUS_NULL_POINTER = 1,
  /*
   Bad dimensions, configuration, or data.
   */
  CT_STATUS_INVALID_INPUT = 2,
  /*
   The pipeline failed while running.
   */
  CT_STATUS_RUNTIME = 3,
  /*
   A surface distance is undefined because a mask is empty.
   */
  CT_STATUS_EMPTY_SURFACE = 4,
  /*
   An internal panic was caught.
   */
  CT_STATUS_PANIC = 5,
} CtStatus;

/*
 Opaque tracker handle.
 */
typedef struct CtTracker CtTracker;

/*
 Tracker configuration. Start from [`ct_config_default`].
 */
typedef struct CtConfig {
  size_t resolution_width;
  size_t resolution_height;
  /*
   Memory write cadence in frames.
   */
  size_t k;
  size_t capacity;
  size_t top_k;
  /*
   Readout temperature; 0 selects the square root of the key dimension.
   */
  double temperature;
  double alpha;
  double tau;
  /*
   4 or 8.
   */
  uint8_t connectivity;
  double pad_factor;
  double latency_budget_s;
  size_t stride;
} CtConfig;

/*
 Per-frame outcome of [`ct_tracker_step`].
 */
typedef struct CtFrameInfo {
  double elapsed_s;
  size_t memory_size;
  /*
   The prediction was empty and the previous mask was held.
   */
  bool fallback;
  bool wrote_memory;
} CtFrameInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Default configuration.
 */
struct CtConfig ct_config_default(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *ct_version(void);

/*
 Message of the last failed call on this thread, or null if none. The
 pointer stays valid until the next failing call on the same thread.
 */
const char *ct_last_error_message(void);

/*
 Create a tracker from frame 0 and its mask.

 `config` may be null for defaults. `bit_depth` is 8 or 16.

 # Safety
 `pixels` must point to `width * height` values and `mask` to
 `width * height` bytes; `out` must be writable.
 */
enum CtStatus ct_tracker_new(size_t width,
                             size_t height,
                             uint8_t bit_depth,
                             const uint16_t *pixels,
                             const uint8_t *mask,
                             const struct CtConfig *config,
                             struct CtTracker **out);

/*
 Track one frame. `frame_index` must exceed every earlier index. The
 predicted mask is written to `out_mask`; `out_info` may be null.

 # Safety
 `tracker` must come from [`ct_tracker_new`] and not be freed. `pixels`
 must point to `width * height` values and `out_mask` to as many
 writable bytes.
 */
enum CtStatus ct_tracker_step(struct CtTracker *tracker,
                              size_t frame_index,
                              const uint16_t *pixels,
                              uint8_t *out_mask,
                              struct CtFrameInfo *out_info);

/*
 Number of memory entries.

 # Safety
 `tracker` must come from [`ct_tracker_new`] and not be freed; `out` must
 be writable.
 */
enum CtStatus ct_tracker_memory_size(const struct CtTracker *tracker, size_t *out);

/*
 Release a tracker. Null is ignored.

 # Safety
 `tracker` must come from [`ct_tracker_new`] and not be freed already.
 */
void ct_tracker_free(struct CtTracker *tracker);

/*
 Dice coefficient of two masks; 1 when both are empty.

 # Safety
 `a` and `b` must point to `width * height` bytes; `out` must be writable.
 */
enum CtStatus ct_dsc(size_t width, size_t height, const uint8_t *a, const uint8_t *b, double *out);

/*
 95th-percentile symmetric surface distance, scaled by `spacing`.
 Returns `EmptySurface` when either mask is empty.

 # Safety
 `a` and `b` must point to `width * height` bytes; `out` must be writable.
 */
enum CtStatus ct_hd95(size_t width,
                      size_t height,
                      const uint8_t *a,
                      const uint8_t *b,
                      double spacing,
                      double *out);

/*
 Mean symmetric surface distance, scaled by `spacing`.
 Returns `EmptySurface` when either mask is empty.

 # Safety
 `a` and `b` must point to `width * height` bytes; `out` must be writable.
 */
enum CtStatus ct_msd(size_t width,
                     size_t height,
                     const uint8_t *a,
                     const uint8_t *b,
                     double spacing,
                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CINETRACK_H */
