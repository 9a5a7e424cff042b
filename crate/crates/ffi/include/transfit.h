#ifndef TRANSFIT_H
#define TRANSFIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TfStatus {
  TF_STATUS_OK = 0,
  TF_STATUS_NULL_POINTER = 1,
  TF_STATUS_INVALID_ARGUMENT = 2,
  TF_STATUS_PARSE = 3,
  TF_STATUS_INVALID_DATA = 4,
  TF_STATUS_IO = 5,
  TF_STATUS_NUMERICAL = 6,
  /**
   * The fit stopped without meeting its convergence rule; the handle is
   * still produced and holds the best iterate.
   */
  TF_STATUS_NOT_CONVERGED = 7,
  TF_STATUS_BUFFER_TOO_SMALL = 8,
  TF_STATUS_PANIC = 9,
} TfStatus;

/**
 * Opaque dataset handle.
 */
typedef struct TfDataset TfDataset;

/**
 * Opaque fit handle.
 */
typedef struct TfFitResult TfFitResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next library call on the same thread.
 */
const char *tf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tf_version(void);

/**
 * Parses dataset CSV text.
 *
 * # Safety
 * `csv` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TfStatus tf_dataset_parse_csv(const char *csv, struct TfDataset **out);

/**
 * Reads a dataset CSV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TfStatus tf_dataset_read(const char *path, struct TfDataset **out);

/**
 * Simulates a dataset from scenario `config` (1, 2 or 3) with generating
 * link parameter `alpha`, `n` subjects and `seed`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum TfStatus tf_dataset_simulate(uint32_t config,
                                  double alpha,
                                  size_t n,
                                  uint64_t seed,
                                  struct TfDataset **out);

/**
 * Number of subjects; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t tf_dataset_len(const struct TfDataset *ds);

/**
 * Number of covariates; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t tf_dataset_dim(const struct TfDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle not freed before.
 */
void tf_dataset_free(struct TfDataset *ds);

/**
 * Fits the model with link parameter `alpha` (0 for proportional hazards,
 * 1 for proportional odds). `interior_knots == 0` selects the default rule.
 *
 * Returns `TF_STATUS_NOT_CONVERGED` with a valid handle when the fit ran but
 * missed a convergence rule; other failures leave `*out` untouched.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` a valid pointer.
 */
enum TfStatus tf_fit(const struct TfDataset *ds,
                     double alpha,
                     size_t interior_knots,
                     struct TfFitResult **out);

/**
 * Number of regression coefficients; 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live fit handle.
 */
size_t tf_fit_dim(const struct TfFitResult *fit);

/**
 * Copies the coefficient estimates into `out[0..len]`.
 *
 * # Safety
 * `fit` must be a live fit handle and `out` must hold `len` doubles.
 */
enum TfStatus tf_fit_beta(const struct TfFitResult *fit, double *out, size_t len);

/**
 * Copies the standard errors into `out[0..len]`; `TF_STATUS_NUMERICAL` when
 * the information matrix was singular.
 *
 * # Safety
 * `fit` must be a live fit handle and `out` must hold `len` doubles.
 */
enum TfStatus tf_fit_std_errors(const struct TfFitResult *fit, double *out, size_t len);

/**
 * Selected smoothing parameter; NaN for a null handle.
 *
 * # Safety
 * `fit` must be null or a live fit handle.
 */
double tf_fit_lambda(const struct TfFitResult *fit);

/**
 * Penalized log-likelihood at the estimate; NaN for a null handle.
 *
 * # Safety
 * `fit` must be null or a live fit handle.
 */
double tf_fit_penloglik(const struct TfFitResult *fit);

/**
 * Whether all convergence rules were met; false for a null handle.
 *
 * # Safety
 * `fit` must be null or a live fit handle.
 */
bool tf_fit_converged(const struct TfFitResult *fit);

/**
 * Evaluates the estimated baseline transformation at each of `n` times.
 *
 * # Safety
 * `fit` must be a live fit handle; `t` and `out` must hold `n` doubles.
 */
enum TfStatus tf_fit_phi(const struct TfFitResult *fit, const double *t, size_t n, double *out);

/**
 * The fit as a JSON document; null on failure. Release with `tf_string_free`.
 *
 * # Safety
 * `fit` must be a live fit handle.
 */
char *tf_fit_to_json(const struct TfFitResult *fit);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not freed before.
 */
void tf_string_free(char *s);

/**
 * # Safety
 * `fit` must be null or a handle not freed before.
 */
void tf_fit_free(struct TfFitResult *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRANSFIT_H */
