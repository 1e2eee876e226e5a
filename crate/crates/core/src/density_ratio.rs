//! Classifier-based density-ratio weights and covariate balance.
//!
//! Reference rows (non-truncated, `J = 1`) are stacked on truncated rows
//! (`J = 0`), a classifier estimates `P(J = 1 | z)`, and each truncated row
//! gets
//!
//! ```text
//! w(z) = P(J=1|z) / P(J=0|z) * n_truncated / n_reference
//! ```
//!
//! which targets `pi(z) / pi(z | Y > E)`. Reference rows keep weight 1.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logistic::{ClassProbability, LogisticModel, LogisticRegression, ProbabilisticClassifier};
use crate::stats::{mean, quantile_sorted, sample_variance};

pub const DEFAULT_BALANCE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightOptions {
    /// Cap weights at this quantile of their distribution (e.g. 0.99).
    pub trim_quantile: Option<f64>,
    pub balance_threshold: f64,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self {
            trim_quantile: None,
            balance_threshold: DEFAULT_BALANCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateBalance {
    pub name: String,
    pub unweighted_smd: f64,
    pub weighted_smd: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub threshold: f64,
    pub covariates: Vec<CovariateBalance>,
}

impl BalanceReport {
    pub fn balanced(&self) -> bool {
        self.covariates.iter().all(|c| !c.flagged)
    }

    pub fn max_weighted_smd(&self) -> f64 {
        self.covariates.iter().map(|c| c.weighted_smd).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRatioFit<M = LogisticModel> {
    pub model: M,
    /// One weight per truncated row.
    pub weights: Vec<f64>,
    /// `P(J=0) / P(J=1)`, i.e. `n_truncated / n_reference`.
    pub sample_adjustment: f64,
    pub balance: BalanceReport,
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|k| format!("z{k}")).collect()
}

/// Logistic-regression weights with default options.
pub fn estimate_weights(truncated: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<DensityRatioFit> {
    estimate_weights_with(
        &LogisticRegression::default(),
        truncated,
        reference,
        &default_names(truncated.ncols()),
        &WeightOptions::default(),
    )
}

pub fn estimate_weights_with<C: ProbabilisticClassifier>(
    classifier: &C,
    truncated: &DMatrix<f64>,
    reference: &DMatrix<f64>,
    names: &[String],
    opts: &WeightOptions,
) -> Result<DensityRatioFit<C::Fitted>> {
    let p = truncated.ncols();
    if reference.ncols() != p {
        return Err(Error::ArityMismatch {
            left: p,
            right: reference.ncols(),
        });
    }
    if names.len() != p {
        return Err(Error::ArityMismatch {
            left: p,
            right: names.len(),
        });
    }
    let (n_trunc, n_ref) = (truncated.nrows(), reference.nrows());
    if n_trunc == 0 || n_ref == 0 {
        return Err(Error::EmptyCohort);
    }
    let mut stacked = DMatrix::zeros(n_ref + n_trunc, p);
    stacked.rows_mut(0, n_ref).copy_from(reference);
    stacked.rows_mut(n_ref, n_trunc).copy_from(truncated);
    let labels: Vec<bool> = (0..n_ref + n_trunc).map(|i| i < n_ref).collect();
    let model = classifier.fit(&stacked, &labels)?;

    let sample_adjustment = n_trunc as f64 / n_ref as f64;
    let mut weights: Vec<f64> = truncated
        .row_iter()
        .map(|row| {
            let row: Vec<f64> = row.iter().copied().collect();
            model.odds(&row) * sample_adjustment
        })
        .collect();
    if let Some(q) = opts.trim_quantile {
        let mut sorted = weights.clone();
        sorted.sort_by(f64::total_cmp);
        let cap = quantile_sorted(&sorted, q);
        weights.iter_mut().for_each(|w| *w = w.min(cap));
    }
    if let Some(index) = weights.iter().position(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::NonFiniteValue { index, field: "weight" });
    }
    let balance = balance_report(truncated, reference, &weights, names, opts.balance_threshold)?;
    Ok(DensityRatioFit {
        model,
        weights,
        sample_adjustment,
        balance,
    })
}

fn weighted_mean(xs: &[f64], w: &[f64]) -> f64 {
    xs.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / w.iter().sum::<f64>()
}

fn smd(diff: f64, pooled_sd: f64) -> f64 {
    if pooled_sd > 0.0 {
        diff.abs() / pooled_sd
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Absolute standardized mean differences of each covariate between the
/// reference rows and the (weighted) truncated rows. The denominator is the
/// pooled unweighted SD `sqrt((s_ref^2 + s_trunc^2) / 2)`.
pub fn balance_report(
    truncated: &DMatrix<f64>,
    reference: &DMatrix<f64>,
    weights: &[f64],
    names: &[String],
    threshold: f64,
) -> Result<BalanceReport> {
    let p = truncated.ncols();
    if reference.ncols() != p || names.len() != p {
        return Err(Error::ArityMismatch {
            left: p,
            right: reference.ncols(),
        });
    }
    if weights.len() != truncated.nrows() {
        return Err(Error::Precondition(format!(
            "{} weights for {} truncated rows",
            weights.len(),
            truncated.nrows()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::Precondition("balance weights must be positive".into()));
    }
    let covariates = (0..p)
        .map(|k| {
            let t: Vec<f64> = truncated.column(k).iter().copied().collect();
            let r: Vec<f64> = reference.column(k).iter().copied().collect();
            let pooled = ((sample_variance(&r) + sample_variance(&t)) / 2.0).sqrt();
            let mean_ref = mean(&r);
            let unweighted_smd = smd(mean_ref - mean(&t), pooled);
            let weighted_smd = smd(mean_ref - weighted_mean(&t, weights), pooled);
            CovariateBalance {
                name: names[k].clone(),
                unweighted_smd,
                weighted_smd,
                flagged: weighted_smd > threshold,
            }
        })
        .collect();
    Ok(BalanceReport { threshold, covariates })
}
