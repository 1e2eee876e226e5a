#ifndef TRUNCSURV_H
#define TRUNCSURV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TsStatus {
  TS_STATUS_OK = 0,
  // Invalid argument, configuration or buffer size.
  TS_STATUS_USAGE = 1,
  // Malformed or inconsistent input data.
  TS_STATUS_DATA = 2,
  // The estimator failed numerically.
  TS_STATUS_NUMERICAL = 3,
  TS_STATUS_NULL_POINTER = 4,
  // A bug inside the library; the handle arguments should be discarded.
  TS_STATUS_PANIC = 5,
} TsStatus;

typedef struct TsCohort TsCohort;

typedef struct TsCox TsCox;

typedef struct TsDensityRatio TsDensityRatio;

typedef struct TsKm TsKm;

// Result of the truncation dependence test.
typedef struct TsTestResult {
  double coefficient;
  double se;
  double hazard_ratio;
  double ci_lower;
  double ci_upper;
  double p_value;
} TsTestResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ts_version(void);

// Message of the last failure on this thread, or NULL after a success.
const char *ts_last_error(void);

// Builds a cohort of `n` records.
//
// `covariates` is row-major `n x p` and may be NULL when `p == 0`; the
// columns are named `z1..zp`. `weights` and `reference_arm` (non-zero marks a
// reference record) may be NULL.
//
// # Safety
// Every non-NULL array must hold the stated number of elements.
enum TsStatus ts_cohort_new(size_t n,
                            const double *entry,
                            const double *observed,
                            const uint8_t *event,
                            size_t p,
                            const double *covariates,
                            const double *weights,
                            const uint8_t *reference_arm,
                            bool require_truncation_consistency,
                            struct TsCohort **out);

// Loads a cohort from a CSV file with the default column names.
//
// # Safety
// `path` must be a NUL-terminated string.
enum TsStatus ts_cohort_load_csv(const char *path, struct TsCohort **out);

// Number of records, or 0 for NULL.
//
// # Safety
// `cohort` must be NULL or a live handle.
size_t ts_cohort_len(const struct TsCohort *cohort);

// # Safety
// `cohort` must be NULL or a handle not yet freed.
void ts_cohort_free(struct TsCohort *cohort);

// Fits a Kaplan-Meier curve. With `risk_set_adjust` a record is at risk from
// its entry time onwards; otherwise entry times are ignored. `weights` may be
// NULL and otherwise holds one weight per record.
//
// # Safety
// `cohort` must be a live handle and `weights` NULL or `ts_cohort_len` long.
enum TsStatus ts_km_fit(const struct TsCohort *cohort,
                        bool risk_set_adjust,
                        const double *weights,
                        struct TsKm **out);

// Number of distinct event times on the curve, or 0 for NULL.
//
// # Safety
// `km` must be NULL or a live handle.
size_t ts_km_len(const struct TsKm *km);

// Copies event times and survival into buffers of at least `ts_km_len`
// elements.
//
// # Safety
// `times` and `survival` must be writable for `len` elements.
enum TsStatus ts_km_copy(const struct TsKm *km, double *times, double *survival, size_t len);

// Writes the median survival time, or NaN when the curve stays above one half.
//
// # Safety
// `km` must be a live handle and `out` writable.
enum TsStatus ts_km_median(const struct TsKm *km, double *out);

// # Safety
// `km` must be NULL or a handle not yet freed.
void ts_km_free(struct TsKm *km);

// Fits a Cox model. `terms` is a comma-separated list of covariate names,
// with `arm` for the reference-arm indicator. `efron` selects Efron ties
// instead of Breslow.
//
// # Safety
// `cohort` must be a live handle, `terms` a NUL-terminated string and
// `weights` NULL or `ts_cohort_len` long.
enum TsStatus ts_cox_fit(const struct TsCohort *cohort,
                         const char *terms,
                         const double *weights,
                         bool risk_set_adjust,
                         bool efron,
                         struct TsCox **out);

// Number of coefficients, or 0 for NULL.
//
// # Safety
// `fit` must be NULL or a live handle.
size_t ts_cox_n_coef(const struct TsCox *fit);

// Copies coefficients with their model-based and robust standard errors.
// Any output pointer may be NULL to skip it.
//
// # Safety
// Non-NULL buffers must be writable for `len` elements.
enum TsStatus ts_cox_copy(const struct TsCox *fit,
                          double *coefficients,
                          double *model_se,
                          double *robust_se,
                          size_t len);

// # Safety
// `fit` must be NULL or a handle not yet freed.
void ts_cox_free(struct TsCox *fit);

// Tests whether entry and event times are dependent. `confounders` is a
// comma-separated list to condition on; NULL or empty gives the marginal test.
//
// # Safety
// `cohort` must be a live handle, `confounders` NULL or NUL-terminated, and
// `out` writable.
enum TsStatus ts_test_truncation(const struct TsCohort *cohort,
                                 const char *confounders,
                                 struct TsTestResult *out);

// Estimates density-ratio weights mapping the truncated sample onto the
// reference covariate distribution. Both matrices are row-major with `p`
// columns.
//
// # Safety
// `truncated` must hold `n_truncated * p` and `reference` `n_reference * p`
// elements.
enum TsStatus ts_density_ratio_fit(const double *truncated,
                                   size_t n_truncated,
                                   const double *reference,
                                   size_t n_reference,
                                   size_t p,
                                   struct TsDensityRatio **out);

// Number of weights (one per truncated row), or 0 for NULL.
//
// # Safety
// `fit` must be NULL or a live handle.
size_t ts_density_ratio_len(const struct TsDensityRatio *fit);

// # Safety
// `weights` must be writable for `len` elements.
enum TsStatus ts_density_ratio_weights(const struct TsDensityRatio *fit,
                                       double *weights,
                                       size_t len);

// Largest absolute weighted standardized mean difference across covariates.
//
// # Safety
// `fit` must be a live handle and `out` writable.
enum TsStatus ts_density_ratio_max_smd(const struct TsDensityRatio *fit, double *out);

// # Safety
// `fit` must be NULL or a handle not yet freed.
void ts_density_ratio_free(struct TsDensityRatio *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRUNCSURV_H */
