//! Tests for dependence between entry time and survival.
//!
//! Both tests fit a risk-set-adjusted, unweighted Cox model with the entry
//! time as a covariate; the conditional test also adjusts for confounders.
//! A significant entry-time coefficient is evidence of dependent truncation.

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::cox::{fit_cox, wald_row, CoxOptions, Term};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub coefficient: f64,
    pub se: f64,
    pub hazard_ratio: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
    pub adjusted_for: Vec<String>,
}

impl TestResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

pub fn test_marginal_dependence(cohort: &Cohort) -> Result<TestResult> {
    test_conditional_dependence_with(cohort, &[], &CoxOptions::default())
}

pub fn test_conditional_dependence(cohort: &Cohort, confounders: &[&str]) -> Result<TestResult> {
    test_conditional_dependence_with(cohort, confounders, &CoxOptions::default())
}

/// Entry-time test with explicit Cox options. Risk-set adjustment is always
/// applied and records are unweighted; an empty confounder list gives the
/// marginal test.
pub fn test_conditional_dependence_with(
    cohort: &Cohort,
    confounders: &[&str],
    opts: &CoxOptions,
) -> Result<TestResult> {
    if !cohort.has_delayed_entry() {
        return Err(Error::Precondition(
            "entry-time test needs at least one delayed entry".into(),
        ));
    }
    for c in confounders {
        cohort.covariate_index(c)?;
    }
    let mut terms = vec![Term::EntryTime];
    terms.extend(confounders.iter().map(|c| Term::Covariate(c.to_string())));
    let opts = CoxOptions {
        risk_set_adjust: true,
        ..opts.clone()
    };
    let unit = vec![1.0; cohort.len()];
    let fit = fit_cox(cohort, &terms, Some(&unit), &opts)?;
    let row = wald_row("entry_time", fit.coefficients[0], fit.model_se(0), false, 0.95);
    Ok(TestResult {
        coefficient: row.coefficient,
        se: row.se,
        hazard_ratio: row.hazard_ratio,
        ci_lower: row.ci_lower,
        ci_upper: row.ci_upper,
        p_value: row.p_value,
        adjusted_for: confounders.iter().map(|s| s.to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{validate_cohort, SurvivalRecord};

    #[test]
    fn requires_delayed_entry() {
        let c = validate_cohort(
            vec![SurvivalRecord::new(0.0, 1.0, true), SurvivalRecord::new(0.0, 2.0, true)],
            true,
        )
        .unwrap();
        assert!(matches!(test_marginal_dependence(&c), Err(Error::Precondition(_))));
    }

    #[test]
    fn unknown_confounder() {
        let c = validate_cohort(
            vec![
                SurvivalRecord::new(0.5, 1.0, true).with_covariates(vec![0.0]),
                SurvivalRecord::new(0.0, 2.0, true).with_covariates(vec![1.0]),
            ],
            true,
        )
        .unwrap();
        assert_eq!(
            test_conditional_dependence(&c, &["age"]).unwrap_err(),
            Error::UnknownCovariate("age".into())
        );
    }
}
