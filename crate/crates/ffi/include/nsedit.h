#ifndef NSEDIT_H
#define NSEDIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define NSE_THRESHOLD_ABSOLUTE 0

#define NSE_THRESHOLD_RELATIVE 1

#define NSE_FORMAT_CSV 0

#define NSE_FORMAT_JSON 1

typedef enum NseStatus {
  NSE_STATUS_OK = 0,
  NSE_STATUS_NULL_POINTER = 1,
  NSE_STATUS_DIMENSION = 2,
  NSE_STATUS_SINGULAR = 3,
  NSE_STATUS_NON_FINITE = 4,
  NSE_STATUS_CONFIG = 5,
  NSE_STATUS_INVALID_ARGUMENT = 6,
  NSE_STATUS_RUNTIME = 7,
  NSE_STATUS_PANIC = 8,
} NseStatus;

// Dense `f64` matrix.
typedef struct NseMatrix NseMatrix;

// Null-space projector built from preserved keys.
typedef struct NseProjector NseProjector;

// Result of a sequential-editing experiment.
typedef struct NseTrajectory NseTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *nse_version(void);

// Message for the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next call into the library on this thread.
const char *nse_last_error_message(void);

// Creates a `rows x cols` matrix from `rows * cols` column-major values, or
// zeros when `data` is NULL.
//
// # Safety
// `data`, when non-null, must point to `rows * cols` readable doubles and
// `out` must be a valid pointer.
enum NseStatus nse_matrix_new(size_t rows, size_t cols, const double *data, struct NseMatrix **out);

// # Safety
// `m` must be NULL or a handle from this library that was not yet freed.
void nse_matrix_free(struct NseMatrix *m);

// Row count, 0 for NULL.
//
// # Safety
// `m` must be NULL or a live handle.
size_t nse_matrix_rows(const struct NseMatrix *m);

// Column count, 0 for NULL.
//
// # Safety
// `m` must be NULL or a live handle.
size_t nse_matrix_cols(const struct NseMatrix *m);

// Copies the column-major entries into `out`, which holds `len` doubles;
// `len` must equal `rows * cols`.
//
// # Safety
// `m` must be a live handle and `out` must point to `len` writable doubles.
enum NseStatus nse_matrix_copy_data(const struct NseMatrix *m, double *out, size_t len);

// Builds `P` from preserved keys (`d_in x n`). `mode` is
// `NSE_THRESHOLD_ABSOLUTE` or `NSE_THRESHOLD_RELATIVE`.
//
// # Safety
// `keys` must be a live handle and `out` a valid pointer.
enum NseStatus nse_projector_build(const struct NseMatrix *keys,
                                   double threshold,
                                   uint32_t mode,
                                   struct NseProjector **out);

// # Safety
// `p` must be NULL or a live handle.
void nse_projector_free(struct NseProjector *p);

// Number of retained directions, 0 for NULL.
//
// # Safety
// `p` must be NULL or a live handle.
size_t nse_projector_retained_dim(const struct NseProjector *p);

// Copies the dense `d_in x d_in` projector into a new matrix handle.
//
// # Safety
// `p` must be a live handle and `out` a valid pointer.
enum NseStatus nse_projector_matrix(const struct NseProjector *p, struct NseMatrix **out);

// Null-space constrained edit `Δ` (`d_out x d_in`) for keys `K₁` and target
// values `V₁`. `prior_keys` may be NULL for an empty history.
//
// # Safety
// Non-null handle arguments must be live; `out_delta` must be valid.
enum NseStatus nse_solve_alphaedit(const struct NseMatrix *weights,
                                   const struct NseMatrix *keys,
                                   const struct NseMatrix *values,
                                   const struct NseProjector *projector,
                                   const struct NseMatrix *prior_keys,
                                   double ridge_scale,
                                   struct NseMatrix **out_delta);

// Preserved-knowledge-regularized edit with weight `preserved_weight` on
// `K₀K₀ᵀ`. A singular system yields the minimum-norm solution.
//
// # Safety
// Non-null handle arguments must be live; `out_delta` must be valid.
enum NseStatus nse_solve_memit(const struct NseMatrix *weights,
                               const struct NseMatrix *keys,
                               const struct NseMatrix *values,
                               const struct NseMatrix *preserved_keys,
                               const struct NseMatrix *prior_keys,
                               double preserved_weight,
                               struct NseMatrix **out_delta);

// Runs an experiment described by TOML text (same keys as the CLI config;
// absent keys take defaults).
//
// # Safety
// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
enum NseStatus nse_experiment_run(const char *config_toml, struct NseTrajectory **out);

// # Safety
// `t` must be NULL or a live handle.
void nse_trajectory_free(struct NseTrajectory *t);

// Number of step records over all methods, 0 for NULL.
//
// # Safety
// `t` must be NULL or a live handle.
size_t nse_trajectory_record_count(const struct NseTrajectory *t);

// Step records as CSV (`NSE_FORMAT_CSV`) or JSON lines (`NSE_FORMAT_JSON`).
// Release the string with [`nse_string_free`].
//
// # Safety
// `t` must be a live handle and `out` a valid pointer.
enum NseStatus nse_trajectory_to_string(const struct NseTrajectory *t, uint32_t format, char **out);

// Per-method summaries and pairwise ratios, formatted like
// [`nse_trajectory_to_string`].
//
// # Safety
// `t` must be a live handle and `out` a valid pointer.
enum NseStatus nse_trajectory_summary_to_string(const struct NseTrajectory *t,
                                                uint32_t format,
                                                char **out);

// # Safety
// `s` must be NULL or a string returned by this library, not yet freed.
void nse_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NSEDIT_H */
