use std::ffi::{CStr, CString};
use std::ptr;

use truncsurv::{fit_cox, fit_km, median_survival, test_marginal_dependence, CoxOptions, Term};
use truncsurv::{generate_iteration, Arm, CalibratedScenario, SimScenario};
use truncsurv_ffi::*;

struct Columns {
    entry: Vec<f64>,
    observed: Vec<f64>,
    event: Vec<u8>,
    covariates: Vec<f64>,
    reference: Vec<u8>,
}

fn columns(cohort: &truncsurv::Cohort) -> Columns {
    let r = cohort.records();
    Columns {
        entry: r.iter().map(|r| r.entry_time).collect(),
        observed: r.iter().map(|r| r.observed_time).collect(),
        event: r.iter().map(|r| u8::from(r.event)).collect(),
        covariates: r.iter().flat_map(|r| r.covariates.clone()).collect(),
        reference: r.iter().map(|r| u8::from(r.arm == Arm::Reference)).collect(),
    }
}

fn last_error() -> String {
    let p = ts_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn simulated() -> truncsurv::Cohort {
    let cal = CalibratedScenario::new(SimScenario::default()).unwrap();
    generate_iteration(&cal, 17).unwrap().truncated
}

unsafe fn build(c: &Columns, n: usize, p: usize) -> (TsStatus, *mut TsCohort) {
    let mut out = ptr::null_mut();
    let status = ts_cohort_new(
        n,
        c.entry.as_ptr(),
        c.observed.as_ptr(),
        c.event.as_ptr(),
        p,
        c.covariates.as_ptr(),
        ptr::null(),
        c.reference.as_ptr(),
        true,
        &mut out,
    );
    (status, out)
}

#[test]
fn handles_reproduce_the_library_results() {
    let cohort = simulated();
    let c = columns(&cohort);
    unsafe {
        let (status, h) = build(&c, cohort.len(), cohort.arity());
        assert_eq!(status, TsStatus::Ok);
        assert!(ts_last_error().is_null());
        assert_eq!(ts_cohort_len(h), cohort.len());

        let mut km = ptr::null_mut();
        assert_eq!(ts_km_fit(h, true, ptr::null(), &mut km), TsStatus::Ok);
        let expected = fit_km(&cohort, true, None).unwrap();
        let n = ts_km_len(km);
        let (mut times, mut surv) = (vec![0.0; n], vec![0.0; n]);
        assert_eq!(ts_km_copy(km, times.as_mut_ptr(), surv.as_mut_ptr(), n), TsStatus::Ok);
        assert_eq!(times, expected.event_times);
        assert_eq!(surv, expected.survival);
        let mut m = 0.0;
        assert_eq!(ts_km_median(km, &mut m), TsStatus::Ok);
        match median_survival(&expected) {
            Some(e) => assert_eq!(m, e),
            None => assert!(m.is_nan()),
        }
        ts_km_free(km);

        let terms = CString::new("arm,z1,z2").unwrap();
        let mut cox = ptr::null_mut();
        assert_eq!(
            ts_cox_fit(h, terms.as_ptr(), ptr::null(), true, false, &mut cox),
            TsStatus::Ok
        );
        let fit = fit_cox(&cohort, &Term::parse_list("arm,z1,z2"), None, &CoxOptions::default()).unwrap();
        let k = ts_cox_n_coef(cox);
        assert_eq!(k, 3);
        let (mut beta, mut robust) = (vec![0.0; k], vec![0.0; k]);
        assert_eq!(
            ts_cox_copy(cox, beta.as_mut_ptr(), ptr::null_mut(), robust.as_mut_ptr(), k),
            TsStatus::Ok
        );
        assert_eq!(beta, fit.coefficients);
        assert_eq!(robust[1], fit.robust_se(1));
        ts_cox_free(cox);

        let mut t = TsTestResult::default();
        assert_eq!(ts_test_truncation(h, ptr::null(), &mut t), TsStatus::Ok);
        assert_eq!(t.p_value, test_marginal_dependence(&cohort).unwrap().p_value);
        let conf = CString::new("z1, z2").unwrap();
        assert_eq!(ts_test_truncation(h, conf.as_ptr(), &mut t), TsStatus::Ok);
        assert!(t.ci_lower <= t.hazard_ratio && t.hazard_ratio <= t.ci_upper);
        ts_cohort_free(h);
    }
}

#[test]
fn density_ratio_weights_are_positive() {
    let cohort = simulated();
    let rows = |arm: Arm| -> (Vec<f64>, usize) {
        let r: Vec<_> = cohort.records().iter().filter(|r| r.arm == arm).collect();
        (r.iter().flat_map(|r| r.covariates.clone()).collect(), r.len())
    };
    let (t, nt) = rows(Arm::Truncated);
    let (r, nr) = rows(Arm::Reference);
    unsafe {
        let mut fit = ptr::null_mut();
        assert_eq!(
            ts_density_ratio_fit(t.as_ptr(), nt, r.as_ptr(), nr, 2, &mut fit),
            TsStatus::Ok
        );
        assert_eq!(ts_density_ratio_len(fit), nt);
        let mut w = vec![0.0; nt];
        assert_eq!(ts_density_ratio_weights(fit, w.as_mut_ptr(), nt - 1), TsStatus::Usage);
        assert!(last_error().contains("needed"));
        assert_eq!(ts_density_ratio_weights(fit, w.as_mut_ptr(), nt), TsStatus::Ok);
        assert!(w.iter().all(|&x| x > 0.0 && x.is_finite()));
        let mut smd = f64::NAN;
        assert_eq!(ts_density_ratio_max_smd(fit, &mut smd), TsStatus::Ok);
        assert!(smd >= 0.0);
        ts_density_ratio_free(fit);
    }
}

#[test]
fn failures_map_to_status_codes() {
    unsafe {
        let mut h = ptr::null_mut();
        let entry = [0.0, 2.0];
        let observed = [1.0, 1.5];
        let event = [1u8, 1];
        let status = ts_cohort_new(
            2,
            entry.as_ptr(),
            observed.as_ptr(),
            event.as_ptr(),
            0,
            ptr::null(),
            ptr::null(),
            ptr::null(),
            true,
            &mut h,
        );
        assert_eq!(status, TsStatus::Data);
        assert!(h.is_null());
        assert!(last_error().contains("does not exceed entry"));

        let status = ts_cohort_new(
            2,
            ptr::null(),
            observed.as_ptr(),
            event.as_ptr(),
            0,
            ptr::null(),
            ptr::null(),
            ptr::null(),
            true,
            &mut h,
        );
        assert_eq!(status, TsStatus::NullPointer);
        assert!(last_error().contains("entry"));

        let mut km = ptr::null_mut();
        assert_eq!(
            ts_km_fit(ptr::null(), true, ptr::null(), &mut km),
            TsStatus::NullPointer
        );

        let entry = [0.0; 6];
        let observed: Vec<f64> = (1..=6).map(f64::from).collect();
        let event = [1u8; 6];
        let z = observed.clone();
        assert_eq!(
            ts_cohort_new(
                6,
                entry.as_ptr(),
                observed.as_ptr(),
                event.as_ptr(),
                1,
                z.as_ptr(),
                ptr::null(),
                ptr::null(),
                true,
                &mut h
            ),
            TsStatus::Ok
        );
        let mut cox = ptr::null_mut();
        let terms = CString::new("z1").unwrap();
        assert_eq!(
            ts_cox_fit(h, terms.as_ptr(), ptr::null(), true, false, &mut cox),
            TsStatus::Numerical
        );
        let unknown = CString::new("z7").unwrap();
        assert_eq!(
            ts_cox_fit(h, unknown.as_ptr(), ptr::null(), true, false, &mut cox),
            TsStatus::Usage
        );
        assert!(cox.is_null());
        ts_cohort_free(h);
        ts_cohort_free(ptr::null_mut());
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ts_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
