//! Survival cohorts with delayed entry and right censoring.
//!
//! A [`Cohort`] is an immutable, validated collection of [`SurvivalRecord`]s
//! sharing one covariate layout. Risk sets here use the closed convention
//! `E_i <= t <= Y_i`; the Cox module applies its own left-open convention.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cohort membership: the non-truncated reference population (trial arm,
/// `J = 1`, `trt = 1`) or the left-truncated cohort (`J = 0`, `trt = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Reference,
    #[default]
    Truncated,
}

impl Arm {
    /// Arm indicator used as a regression covariate: 1 for the reference arm.
    pub fn indicator(self) -> f64 {
        match self {
            Arm::Reference => 1.0,
            Arm::Truncated => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Reference => "reference",
            Arm::Truncated => "truncated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub entry_time: f64,
    pub observed_time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
    pub weight: f64,
    pub arm: Arm,
}

impl SurvivalRecord {
    pub fn new(entry_time: f64, observed_time: f64, event: bool) -> Self {
        Self {
            entry_time,
            observed_time,
            event,
            covariates: Vec::new(),
            weight: 1.0,
            arm: Arm::Truncated,
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_arm(mut self, arm: Arm) -> Self {
        self.arm = arm;
        self
    }

    /// Closed at-risk indicator `E <= t <= Y`.
    #[inline]
    pub fn at_risk(&self, t: f64) -> bool {
        self.entry_time <= t && t <= self.observed_time
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    records: Vec<SurvivalRecord>,
    covariate_names: Vec<String>,
}

/// Validates records and builds a [`Cohort`]. Covariates are named `z1..zp`.
pub fn validate_cohort(records: Vec<SurvivalRecord>, require_truncation_consistency: bool) -> Result<Cohort> {
    let arity = records.first().map_or(0, |r| r.covariates.len());
    let names = (1..=arity).map(|k| format!("z{k}")).collect();
    Cohort::new(records, names, require_truncation_consistency)
}

impl Cohort {
    pub fn new(
        records: Vec<SurvivalRecord>,
        covariate_names: Vec<String>,
        require_truncation_consistency: bool,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyCohort);
        }
        let arity = covariate_names.len();
        for (index, r) in records.iter().enumerate() {
            if r.covariates.len() != arity {
                return Err(Error::InconsistentArity {
                    index,
                    expected: arity,
                    found: r.covariates.len(),
                });
            }
            if !r.entry_time.is_finite() || r.entry_time < 0.0 {
                return Err(Error::NonFiniteValue {
                    index,
                    field: "entry_time",
                });
            }
            if !r.observed_time.is_finite() || r.observed_time <= 0.0 {
                return Err(Error::NonFiniteValue {
                    index,
                    field: "observed_time",
                });
            }
            if !r.weight.is_finite() || r.weight <= 0.0 {
                return Err(Error::NonFiniteValue { index, field: "weight" });
            }
            if r.covariates.iter().any(|z| !z.is_finite()) {
                return Err(Error::NonFiniteValue {
                    index,
                    field: "covariates",
                });
            }
            if require_truncation_consistency && r.observed_time <= r.entry_time {
                return Err(Error::TruncationViolation {
                    index,
                    entry: r.entry_time,
                    observed: r.observed_time,
                });
            }
        }
        Ok(Self {
            records,
            covariate_names,
        })
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    pub fn weights(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.weight).collect()
    }

    pub fn has_delayed_entry(&self) -> bool {
        self.records.iter().any(|r| r.entry_time > 0.0)
    }

    /// Rows = records, columns = the named covariates in the given order.
    pub fn covariate_matrix(&self, names: &[&str]) -> Result<DMatrix<f64>> {
        let cols = names
            .iter()
            .map(|n| self.covariate_index(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(self.len(), cols.len(), |i, j| {
            self.records[i].covariates[cols[j]]
        }))
    }

    /// Indices `{i : E_i <= t <= Y_i}`.
    pub fn risk_set_at(&self, t: f64) -> Result<Vec<usize>> {
        if !(t > 0.0) {
            return Err(Error::Precondition(format!("risk set time must be positive, got {t}")));
        }
        Ok(self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.at_risk(t))
            .map(|(i, _)| i)
            .collect())
    }

    /// Strictly increasing distinct times with at least one observed event.
    pub fn distinct_event_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.event)
            .map(|r| r.observed_time)
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    /// Sub-cohort keeping records that satisfy `keep`; errors if nothing is left.
    pub fn filter(&self, keep: impl Fn(&SurvivalRecord) -> bool) -> Result<Cohort> {
        let records: Vec<_> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        if records.is_empty() {
            return Err(Error::EmptyCohort);
        }
        Ok(Cohort {
            records,
            covariate_names: self.covariate_names.clone(),
        })
    }

    /// Same cohort with record weights replaced.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Cohort> {
        check_weights(weights, self.len())?;
        let records = self
            .records
            .iter()
            .zip(weights)
            .map(|(r, &w)| SurvivalRecord { weight: w, ..r.clone() })
            .collect();
        Ok(Cohort {
            records,
            covariate_names: self.covariate_names.clone(),
        })
    }

    pub fn into_records(self) -> Vec<SurvivalRecord> {
        self.records
    }
}

pub(crate) fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Precondition(format!(
            "weights have length {}, cohort has {n} records",
            weights.len()
        )));
    }
    if let Some(index) = weights.iter().position(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::NonFiniteValue { index, field: "weight" });
    }
    Ok(())
}

/// Rescales weights by a power of two near their maximum (or to unit weights
/// when all entries are equal) and returns the factor removed. Estimates
/// computed from the rescaled weights are bit-identical under any constant
/// weight and under power-of-two rescaling.
pub(crate) fn normalize_weights(weights: &[f64]) -> (Vec<f64>, f64) {
    match weights.first() {
        None => (Vec::new(), 1.0),
        Some(&w0) if weights.iter().all(|&w| w == w0) => (vec![1.0; weights.len()], w0),
        _ => {
            let max = weights.iter().copied().fold(0.0f64, f64::max);
            let exp_bits = (max.to_bits() >> 52) & 0x7ff;
            if exp_bits == 0 || exp_bits == 0x7ff {
                return (weights.to_vec(), 1.0);
            }
            let scale = f64::from_bits(exp_bits << 52);
            (weights.iter().map(|w| w / scale).collect(), scale)
        }
    }
}
