#ifndef FRAMELAB_H
#define FRAMELAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FlStatus {
  FL_STATUS_OK = 0,
  FL_STATUS_NULL_POINTER = 1,
  /**
   * Metric source or builtin id rejected.
   */
  FL_STATUS_PARSE = 2,
  /**
   * Point outside the chart or metric degenerate there.
   */
  FL_STATUS_DOMAIN = 3,
  /**
   * Wrong lengths, unclosed loops and similar caller errors.
   */
  FL_STATUS_INVALID_ARGUMENT = 4,
  /**
   * Output buffer too small.
   */
  FL_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * Integrator or logarithm failure.
   */
  FL_STATUS_NUMERICAL = 6,
  FL_STATUS_PANIC = 7,
} FlStatus;

/**
 * Opaque metric handle.
 */
typedef struct FlMetric FlMetric;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses `.gmet` source into a new handle stored in `*out`.
 *
 * # Safety
 * `source` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FlStatus fl_metric_parse(const char *source, struct FlMetric **out);

/**
 * Instantiates a builtin family such as `smoothed-cone:a=0.5,eps=0.1`.
 *
 * # Safety
 * `id` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FlStatus fl_metric_builtin(const char *id, struct FlMetric **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `m` must come from this library and not be used afterwards.
 */
void fl_metric_free(struct FlMetric *m);

/**
 * Chart dimension, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t fl_metric_dim(const struct FlMetric *m);

/**
 * `g_{ij}` at `point` into `out` (`n²` values).
 *
 * # Safety
 * `point` must hold `point_len` values and `out` at least `out_cap`.
 */
enum FlStatus fl_metric_eval(const struct FlMetric *m,
                             const double *point,
                             size_t point_len,
                             double *out,
                             size_t out_cap);

/**
 * `Γ^k_{ij}` at `point`, indexed `[k][i][j]` (`n³` values).
 *
 * # Safety
 * As for [`fl_metric_eval`].
 */
enum FlStatus fl_christoffel(const struct FlMetric *m,
                             const double *point,
                             size_t point_len,
                             double *out,
                             size_t out_cap);

/**
 * `R_{ijkl} = ⟨R(∂_i, ∂_j)∂_k, ∂_l⟩`, indexed `[i][j][k][l]` (`n⁴` values).
 *
 * # Safety
 * As for [`fl_metric_eval`].
 */
enum FlStatus fl_riemann(const struct FlMetric *m,
                         const double *point,
                         size_t point_len,
                         double *out,
                         size_t out_cap);

/**
 * `Ric_{ij}` at `point` (`n²` values).
 *
 * # Safety
 * As for [`fl_metric_eval`].
 */
enum FlStatus fl_ricci(const struct FlMetric *m,
                       const double *point,
                       size_t point_len,
                       double *out,
                       size_t out_cap);

/**
 * Holonomy of the closed polyline through `count` vertices (`count·n`
 * values, row per vertex) in the Gram–Schmidt gauge at its first vertex.
 * Writes the `n×n` orthogonal element to `out` and the loop length to
 * `*length` when it is not null.
 *
 * # Safety
 * `vertices` must hold `count·n` values, `out` at least `out_cap`, and
 * `length` must be null or writable.
 */
enum FlStatus fl_holonomy_polyline(const struct FlMetric *m,
                                   const double *vertices,
                                   size_t count,
                                   double *out,
                                   size_t out_cap,
                                   double *length);

/**
 * Bi-invariant distance between two `n×n` orthogonal matrices (row-major).
 *
 * # Safety
 * `a` and `b` must each hold `n²` values and `out` must be writable.
 */
enum FlStatus fl_group_distance(const double *a, const double *b, size_t n, double *out);

/**
 * Message of the last failed call on this thread, empty after a success.
 * Valid until the next call on the same thread.
 */
const char *fl_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRAMELAB_H */
