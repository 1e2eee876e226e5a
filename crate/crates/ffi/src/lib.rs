//! C interface to `truncsurv`.
//!
//! Fallible functions return a [`TsStatus`]. On failure the message is
//! available from [`ts_last_error`] on the calling thread until the next call
//! into the library. Objects are opaque handles owned by the caller and
//! released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::DMatrix;
use truncsurv::io::csv::{load_cohort_csv, LoadOptions};
use truncsurv::{
    estimate_weights, fit_cox, fit_km, median_survival, test_conditional_dependence, test_marginal_dependence, Arm,
    Cohort, CoxFit, CoxOptions, DensityRatioFit, Error, KmCurve, SurvivalRecord, Term, Ties,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    /// Invalid argument, configuration or buffer size.
    Usage = 1,
    /// Malformed or inconsistent input data.
    Data = 2,
    /// The estimator failed numerically.
    Numerical = 3,
    NullPointer = 4,
    /// A bug inside the library; the handle arguments should be discarded.
    Panic = 5,
}

pub struct TsCohort(Cohort);
pub struct TsKm(KmCurve);
pub struct TsCox(CoxFit);
pub struct TsDensityRatio(DensityRatioFit);

/// Result of the truncation dependence test.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TsTestResult {
    pub coefficient: f64,
    pub se: f64,
    pub hazard_ratio: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).ok();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

enum Fail {
    Lib(Error),
    Null(&'static str),
    Usage(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TsStatus::Ok
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            match e.exit_code() {
                1 => TsStatus::Usage,
                2 => TsStatus::Data,
                _ => TsStatus::Numerical,
            }
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("`{what}` is null"));
            TsStatus::NullPointer
        }
        Ok(Err(Fail::Usage(msg))) => {
            set_error(msg);
            TsStatus::Usage
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            TsStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn optional<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    (!ptr.is_null()).then(|| std::slice::from_raw_parts(ptr, len))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &'static str) -> Result<&'a T, Fail> {
    ptr.as_ref().ok_or(Fail::Null(what))
}

unsafe fn string<'a>(ptr: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Fail::Usage(format!("`{what}` is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize, what: &'static str) -> Result<(), Fail> {
    if len < src.len() {
        return Err(Fail::Usage(format!(
            "`{what}` holds {len} values, {} needed",
            src.len()
        )));
    }
    if !src.is_empty() && dst.is_null() {
        return Err(Fail::Null(what));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

unsafe fn free<T>(ptr: *mut T) {
    if !ptr.is_null() {
        drop(Box::from_raw(ptr));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL after a success.
#[no_mangle]
pub extern "C" fn ts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Builds a cohort of `n` records.
///
/// `covariates` is row-major `n x p` and may be NULL when `p == 0`; the
/// columns are named `z1..zp`. `weights` and `reference_arm` (non-zero marks a
/// reference record) may be NULL.
///
/// # Safety
/// Every non-NULL array must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ts_cohort_new(
    n: usize,
    entry: *const f64,
    observed: *const f64,
    event: *const u8,
    p: usize,
    covariates: *const f64,
    weights: *const f64,
    reference_arm: *const u8,
    require_truncation_consistency: bool,
    out: *mut *mut TsCohort,
) -> TsStatus {
    guard(|| {
        let entry = slice(entry, n, "entry")?;
        let observed = slice(observed, n, "observed")?;
        let event = slice(event, n, "event")?;
        let covariates = slice(covariates, n * p, "covariates")?;
        let weights = optional(weights, n);
        let arm = optional(reference_arm, n);
        let records = (0..n)
            .map(|i| {
                let mut r = SurvivalRecord::new(entry[i], observed[i], event[i] != 0)
                    .with_covariates(covariates[i * p..(i + 1) * p].to_vec());
                if let Some(w) = weights {
                    r = r.with_weight(w[i]);
                }
                if arm.is_some_and(|a| a[i] != 0) {
                    r = r.with_arm(Arm::Reference);
                }
                r
            })
            .collect();
        let names = (1..=p).map(|k| format!("z{k}")).collect();
        put(
            out,
            TsCohort(Cohort::new(records, names, require_truncation_consistency)?),
        )
    })
}

/// Loads a cohort from a CSV file with the default column names.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ts_cohort_load_csv(path: *const c_char, out: *mut *mut TsCohort) -> TsStatus {
    guard(|| {
        let path = string(path, "path")?;
        put(out, TsCohort(load_cohort_csv(path.as_ref(), &LoadOptions::default())?))
    })
}

/// Number of records, or 0 for NULL.
///
/// # Safety
/// `cohort` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ts_cohort_len(cohort: *const TsCohort) -> usize {
    cohort.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `cohort` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_cohort_free(cohort: *mut TsCohort) {
    free(cohort)
}

/// Fits a Kaplan-Meier curve. With `risk_set_adjust` a record is at risk from
/// its entry time onwards; otherwise entry times are ignored. `weights` may be
/// NULL and otherwise holds one weight per record.
///
/// # Safety
/// `cohort` must be a live handle and `weights` NULL or `ts_cohort_len` long.
#[no_mangle]
pub unsafe extern "C" fn ts_km_fit(
    cohort: *const TsCohort,
    risk_set_adjust: bool,
    weights: *const f64,
    out: *mut *mut TsKm,
) -> TsStatus {
    guard(|| {
        let cohort = &handle(cohort, "cohort")?.0;
        let weights = optional(weights, cohort.len());
        put(out, TsKm(fit_km(cohort, risk_set_adjust, weights)?))
    })
}

/// Number of distinct event times on the curve, or 0 for NULL.
///
/// # Safety
/// `km` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ts_km_len(km: *const TsKm) -> usize {
    km.as_ref().map_or(0, |k| k.0.len())
}

/// Copies event times and survival into buffers of at least `ts_km_len`
/// elements.
///
/// # Safety
/// `times` and `survival` must be writable for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn ts_km_copy(km: *const TsKm, times: *mut f64, survival: *mut f64, len: usize) -> TsStatus {
    guard(|| {
        let km = &handle(km, "km")?.0;
        copy_out(&km.event_times, times, len, "times")?;
        copy_out(&km.survival, survival, len, "survival")
    })
}

/// Writes the median survival time, or NaN when the curve stays above one half.
///
/// # Safety
/// `km` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_km_median(km: *const TsKm, out: *mut f64) -> TsStatus {
    guard(|| {
        let km = &handle(km, "km")?.0;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = median_survival(km).unwrap_or(f64::NAN);
        Ok(())
    })
}

/// # Safety
/// `km` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_km_free(km: *mut TsKm) {
    free(km)
}

/// Fits a Cox model. `terms` is a comma-separated list of covariate names,
/// with `arm` for the reference-arm indicator. `efron` selects Efron ties
/// instead of Breslow.
///
/// # Safety
/// `cohort` must be a live handle, `terms` a NUL-terminated string and
/// `weights` NULL or `ts_cohort_len` long.
#[no_mangle]
pub unsafe extern "C" fn ts_cox_fit(
    cohort: *const TsCohort,
    terms: *const c_char,
    weights: *const f64,
    risk_set_adjust: bool,
    efron: bool,
    out: *mut *mut TsCox,
) -> TsStatus {
    guard(|| {
        let cohort = &handle(cohort, "cohort")?.0;
        let terms = Term::parse_list(string(terms, "terms")?);
        let weights = optional(weights, cohort.len());
        let opts = CoxOptions {
            ties: if efron { Ties::Efron } else { Ties::Breslow },
            risk_set_adjust,
            ..CoxOptions::default()
        };
        put(out, TsCox(fit_cox(cohort, &terms, weights, &opts)?))
    })
}

/// Number of coefficients, or 0 for NULL.
///
/// # Safety
/// `fit` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ts_cox_n_coef(fit: *const TsCox) -> usize {
    fit.as_ref().map_or(0, |f| f.0.coefficients.len())
}

/// Copies coefficients with their model-based and robust standard errors.
/// Any output pointer may be NULL to skip it.
///
/// # Safety
/// Non-NULL buffers must be writable for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn ts_cox_copy(
    fit: *const TsCox,
    coefficients: *mut f64,
    model_se: *mut f64,
    robust_se: *mut f64,
    len: usize,
) -> TsStatus {
    guard(|| {
        let fit = &handle(fit, "fit")?.0;
        let k = fit.coefficients.len();
        let model: Vec<f64> = (0..k).map(|j| fit.model_se(j)).collect();
        let robust: Vec<f64> = (0..k).map(|j| fit.robust_se(j)).collect();
        for (src, dst, what) in [
            (&fit.coefficients, coefficients, "coefficients"),
            (&model, model_se, "model_se"),
            (&robust, robust_se, "robust_se"),
        ] {
            if !dst.is_null() {
                copy_out(src, dst, len, what)?;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `fit` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_cox_free(fit: *mut TsCox) {
    free(fit)
}

/// Tests whether entry and event times are dependent. `confounders` is a
/// comma-separated list to condition on; NULL or empty gives the marginal test.
///
/// # Safety
/// `cohort` must be a live handle, `confounders` NULL or NUL-terminated, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_test_truncation(
    cohort: *const TsCohort,
    confounders: *const c_char,
    out: *mut TsTestResult,
) -> TsStatus {
    guard(|| {
        let cohort = &handle(cohort, "cohort")?.0;
        let names: Vec<&str> = if confounders.is_null() {
            Vec::new()
        } else {
            string(confounders, "confounders")?
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .collect()
        };
        let t = if names.is_empty() {
            test_marginal_dependence(cohort)?
        } else {
            test_conditional_dependence(cohort, &names)?
        };
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = TsTestResult {
            coefficient: t.coefficient,
            se: t.se,
            hazard_ratio: t.hazard_ratio,
            ci_lower: t.ci_lower,
            ci_upper: t.ci_upper,
            p_value: t.p_value,
        };
        Ok(())
    })
}

/// Estimates density-ratio weights mapping the truncated sample onto the
/// reference covariate distribution. Both matrices are row-major with `p`
/// columns.
///
/// # Safety
/// `truncated` must hold `n_truncated * p` and `reference` `n_reference * p`
/// elements.
#[no_mangle]
pub unsafe extern "C" fn ts_density_ratio_fit(
    truncated: *const f64,
    n_truncated: usize,
    reference: *const f64,
    n_reference: usize,
    p: usize,
    out: *mut *mut TsDensityRatio,
) -> TsStatus {
    guard(|| {
        let t = DMatrix::from_row_slice(n_truncated, p, slice(truncated, n_truncated * p, "truncated")?);
        let r = DMatrix::from_row_slice(n_reference, p, slice(reference, n_reference * p, "reference")?);
        put(out, TsDensityRatio(estimate_weights(&t, &r)?))
    })
}

/// Number of weights (one per truncated row), or 0 for NULL.
///
/// # Safety
/// `fit` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ts_density_ratio_len(fit: *const TsDensityRatio) -> usize {
    fit.as_ref().map_or(0, |f| f.0.weights.len())
}

/// # Safety
/// `weights` must be writable for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn ts_density_ratio_weights(
    fit: *const TsDensityRatio,
    weights: *mut f64,
    len: usize,
) -> TsStatus {
    guard(|| copy_out(&handle(fit, "fit")?.0.weights, weights, len, "weights"))
}

/// Largest absolute weighted standardized mean difference across covariates.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_density_ratio_max_smd(fit: *const TsDensityRatio, out: *mut f64) -> TsStatus {
    guard(|| {
        let fit = &handle(fit, "fit")?.0;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = fit.balance.max_weighted_smd();
        Ok(())
    })
}

/// # Safety
/// `fit` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_density_ratio_free(fit: *mut TsDensityRatio) {
    free(fit)
}
