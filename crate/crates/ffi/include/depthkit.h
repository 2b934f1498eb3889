#ifndef DEPTHKIT_H
#define DEPTHKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DkMetric {
  DK_METRIC_DELTA1 = 0,
  DK_METRIC_ABS_REL = 1,
} DkMetric;

typedef enum DkReportFormat {
  DK_REPORT_FORMAT_CSV = 0,
  DK_REPORT_FORMAT_JSON = 1,
} DkReportFormat;

typedef enum DkSpace {
  DK_SPACE_DEPTH = 0,
  DK_SPACE_DISPARITY = 1,
} DkSpace;

typedef enum DkStatus {
  DK_STATUS_OK = 0,
  DK_STATUS_NULL_POINTER = 1,
  DK_STATUS_INVALID_ARGUMENT = 2,
  DK_STATUS_SHAPE = 3,
  DK_STATUS_IO = 4,
  DK_STATUS_MALFORMED = 5,
  DK_STATUS_UNSUPPORTED = 6,
  DK_STATUS_MISSING_SIDECAR = 7,
  DK_STATUS_SCHEMA = 8,
  DK_STATUS_MISSING_PREDICTIONS = 9,
  DK_STATUS_DEGENERATE_GROUND_TRUTH = 10,
  DK_STATUS_INCOMPLETE_GRID = 11,
  DK_STATUS_NON_FINITE = 12,
  DK_STATUS_INTERNAL = 13,
  DK_STATUS_PANIC = 14,
} DkStatus;

typedef enum DkTieRule {
  DK_TIE_RULE_COMPETITION = 0,
  DK_TIE_RULE_FRACTIONAL = 1,
} DkTieRule;

/**
 * A depth or disparity raster with its validity mask.
 */
typedef struct DkDepthMap DkDepthMap;

/**
 * Per-image and aggregate metrics of one method on one dataset.
 */
typedef struct DkReport DkReport;

/**
 * Metrics of one image. `delta1` is a fraction in [0, 1].
 */
typedef struct DkMetrics {
  double delta1;
  double absrel;
  size_t valid_pixels;
  bool degenerate;
} DkMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dk_version(void);

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *dk_last_error(void);

/**
 * Builds a map from `height * width` row-major values. Non-finite values,
 * and non-positive ones in depth space, are invalid.
 *
 * # Safety
 * `values` must point to `height * width` doubles; `out` must be writable.
 */
enum DkStatus dk_depth_map_new(size_t height,
                               size_t width,
                               const double *values,
                               enum DkSpace space,
                               struct DkDepthMap **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DkStatus dk_depth_map_read_pfm(const char *path, enum DkSpace space, struct DkDepthMap **out);

/**
 * Reads a 16-bit PNG. `sidecar` may be NULL to use the `.json` file next
 * to the image.
 *
 * # Safety
 * `path` and a non-NULL `sidecar` must be NUL-terminated; `out` must be writable.
 */
enum DkStatus dk_depth_map_read_png16(const char *path,
                                      const char *sidecar,
                                      enum DkSpace space,
                                      struct DkDepthMap **out);

/**
 * # Safety
 * `map` must come from this library; `path` must be NUL-terminated.
 */
enum DkStatus dk_depth_map_write_pfm(const struct DkDepthMap *map, const char *path);

/**
 * # Safety
 * `map` must come from this library; `height` and `width` must be writable.
 */
enum DkStatus dk_depth_map_size(const struct DkDepthMap *map, size_t *height, size_t *width);

/**
 * Copies the row-major values and, when `valid` is not NULL, the mask
 * (1 valid, 0 invalid). Both buffers must hold `len` = height·width entries.
 *
 * # Safety
 * `values` must have room for `len` doubles and a non-NULL `valid` for `len` bytes.
 */
enum DkStatus dk_depth_map_copy(const struct DkDepthMap *map,
                                double *values,
                                uint8_t *valid,
                                size_t len);

/**
 * # Safety
 * `map` must be NULL or come from this library, and not be used afterwards.
 */
void dk_depth_map_free(struct DkDepthMap *map);

/**
 * Affine-aligned δ1 and AbsRel of `pred` against `gt`. `pred` is resized
 * to the ground-truth resolution when they differ.
 *
 * # Safety
 * `gt` and `pred` must come from this library; `out` must be writable.
 */
enum DkStatus dk_compute_metrics(const struct DkDepthMap *gt,
                                 const struct DkDepthMap *pred,
                                 struct DkMetrics *out);

/**
 * Scores `<pred_dir>/<image id>.pfm` against every manifest entry.
 * `method` may be NULL to use the directory name.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum DkStatus dk_evaluate(const char *manifest,
                          const char *pred_dir,
                          const char *method,
                          size_t jobs,
                          struct DkReport **out);

/**
 * Reads the `index`-th report of a CSV or JSON report file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum DkStatus dk_report_read(const char *path, size_t index, struct DkReport **out);

/**
 * # Safety
 * `report` must come from this library; `path` must be NUL-terminated.
 */
enum DkStatus dk_report_write(const struct DkReport *report,
                              const char *path,
                              enum DkReportFormat format);

/**
 * Aggregate δ1 and AbsRel plus the number of per-image rows. Any output
 * pointer may be NULL.
 *
 * # Safety
 * `report` must come from this library; non-NULL outputs must be writable.
 */
enum DkStatus dk_report_summary(const struct DkReport *report,
                                double *delta1,
                                double *absrel,
                                size_t *images);

/**
 * Metrics of the `index`-th image. When `id` is not NULL the image id is
 * copied into it, NUL-terminated and truncated to `id_len` bytes.
 *
 * # Safety
 * `report` must come from this library; `out` must be writable; a non-NULL
 * `id` must have room for `id_len` bytes.
 */
enum DkStatus dk_report_image(const struct DkReport *report,
                              size_t index,
                              struct DkMetrics *out,
                              char *id,
                              size_t id_len);

/**
 * # Safety
 * `report` must be NULL or come from this library, and not be used afterwards.
 */
void dk_report_free(struct DkReport *report);

/**
 * Per-image selection of the better of two reports on `criterion`.
 * `fraction_a` (may be NULL) receives the percentage of images taken
 * from `a`.
 *
 * # Safety
 * Reports must come from this library; `out` must be writable.
 */
enum DkStatus dk_image_oracle(const struct DkReport *a,
                              const struct DkReport *b,
                              enum DkMetric criterion,
                              struct DkReport **out,
                              double *fraction_a);

/**
 * Average rank of `methods` rows over `columns` score columns.
 * `scores` is row-major `methods × columns`; `column_metrics` gives the
 * direction of each column. `average` and `rounded` (one decimal,
 * half-up; may be NULL) receive one value per method.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum DkStatus dk_average_rank(const double *scores,
                              size_t methods,
                              size_t columns,
                              const enum DkMetric *column_metrics,
                              enum DkTieRule ties,
                              double *average,
                              double *rounded);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEPTHKIT_H */
