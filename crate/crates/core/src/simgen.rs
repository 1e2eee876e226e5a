//! Data generation for the trial-versus-real-world simulation design.
//!
//! Real-world (truncated arm, `trt = 0`) subjects:
//!
//! ```text
//! Z1 ~ Bernoulli(1 - p_E)          Z2 ~ Normal(0, z2_sd)
//! E  = 0                           if Z1 = 0
//! E  ~ Exp(l_ebh exp(b_entry Z2))  if Z1 = 1
//! T, C ~ Exp(l_bh exp(b_trt trt + b_Z Z1 + b_Z Z2))   (independent)
//! ```
//!
//! Trial (reference arm, `trt = 1`) subjects share the confounder and outcome
//! model but always have `E = 0`. Truncation keeps real-world subjects with
//! `Y > E`. The entry-rate constant `l_ebh` is calibrated so that
//! `P(Y > E | trt = 0)` hits a target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Arm, Cohort, SurvivalRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    /// Probability of entering at or before baseline (`Z1 = 0`).
    pub p_entry_at_baseline: f64,
    pub beta_entry: f64,
    pub beta_trt: f64,
    pub beta_z: f64,
    pub lambda_bh: f64,
    /// Target `P(Y > E | trt = 0)`: the share of real-world subjects retained.
    pub target_truncation: f64,
    pub n_rw_expected: usize,
    pub n_trial: usize,
    pub z2_sd: f64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            p_entry_at_baseline: 0.2,
            beta_entry: 0.5f64.ln(),
            beta_trt: 0.8f64.ln(),
            beta_z: 2f64.ln(),
            lambda_bh: 1.0 / 12.0,
            target_truncation: 0.5,
            n_rw_expected: 250,
            n_trial: 250,
            z2_sd: 0.5,
        }
    }
}

impl SimScenario {
    /// Real-world arm size before truncation, `ceil(n_rw_expected / target)`.
    pub fn n_rw_generated(&self) -> usize {
        (self.n_rw_expected as f64 / self.target_truncation - 1e-9).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(Error::Config {
                field: field.to_string(),
                message: message.to_string(),
            })
        };
        if !(self.p_entry_at_baseline >= 0.0 && self.p_entry_at_baseline < 1.0) {
            return bad("p_entry_at_baseline", "must lie in [0, 1)");
        }
        if !(self.target_truncation > 0.0 && self.target_truncation < 1.0) {
            return bad("target_truncation", "must lie in (0, 1)");
        }
        if self.target_truncation <= self.p_entry_at_baseline {
            return bad(
                "target_truncation",
                "must exceed p_entry_at_baseline (subjects entering at baseline are never truncated)",
            );
        }
        if !(self.lambda_bh > 0.0 && self.lambda_bh.is_finite()) {
            return bad("lambda_bh", "must be positive");
        }
        if !(self.z2_sd > 0.0 && self.z2_sd.is_finite()) {
            return bad("z2_sd", "must be positive");
        }
        for (name, v) in [
            ("beta_entry", self.beta_entry),
            ("beta_trt", self.beta_trt),
            ("beta_z", self.beta_z),
        ] {
            if !v.is_finite() {
                return bad(name, "must be finite");
            }
        }
        if self.n_rw_expected == 0 || self.n_trial == 0 {
            return bad("n_rw_expected", "arm sizes must be positive");
        }
        Ok(())
    }

    /// Event (and censoring) hazard for given arm and confounders.
    pub fn hazard(&self, trt: f64, z1: f64, z2: f64) -> f64 {
        self.lambda_bh * (self.beta_trt * trt + self.beta_z * z1 + self.beta_z * z2).exp()
    }

    pub fn entry_rate(&self, lambda_ebh: f64, z2: f64) -> f64 {
        lambda_ebh * (self.beta_entry * z2).exp()
    }

    /// `P(Y > E | z, trt = 0)`. With `Y ~ Exp(2 l_T)` independent of
    /// `E ~ Exp(l_e)` this is `l_e / (l_e + 2 l_T)`; it is 1 when `Z1 = 0`.
    pub fn retention_given(&self, lambda_ebh: f64, z1: f64, z2: f64) -> f64 {
        if z1 == 0.0 {
            return 1.0;
        }
        let le = self.entry_rate(lambda_ebh, z2);
        le / (le + 2.0 * self.hazard(0.0, z1, z2))
    }
}

pub const CALIBRATION_DRAWS: usize = 200_000;
const CALIBRATION_SEED: u64 = 0x00C0_FFEE_CA11_B8A7;
const LOG_RATE_BRACKET: (f64, f64) = (-20.0, 20.0);

/// Monte Carlo estimate of `P(Y > E | trt = 0)` as a function of the entry
/// rate constant, over a fixed set of `Z2` draws (`Z1` is summed exactly).
pub struct RetentionCurve<'a> {
    scenario: &'a SimScenario,
    z2: Vec<f64>,
}

impl<'a> RetentionCurve<'a> {
    pub fn new(scenario: &'a SimScenario) -> Result<Self> {
        let normal = Normal::new(0.0, scenario.z2_sd).map_err(|e| Error::Precondition(format!("z2_sd: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
        let z2 = (0..CALIBRATION_DRAWS).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self { scenario, z2 })
    }

    pub fn at(&self, lambda_ebh: f64) -> f64 {
        let s = self.scenario;
        let delayed: f64 = self
            .z2
            .iter()
            .map(|&z2| s.retention_given(lambda_ebh, 1.0, z2))
            .sum::<f64>()
            / self.z2.len() as f64;
        s.p_entry_at_baseline + (1.0 - s.p_entry_at_baseline) * delayed
    }
}

/// Bisection on `log l_ebh` over `[-20, 20]` until the retained share
/// matches `target_truncation`.
pub fn calibrate_entry_rate(scenario: &SimScenario) -> Result<f64> {
    let target = scenario.target_truncation;
    if !(target > scenario.p_entry_at_baseline && target < 1.0) {
        return Err(Error::UnachievableTarget {
            target,
            floor: scenario.p_entry_at_baseline,
        });
    }
    let curve = RetentionCurve::new(scenario)?;
    let (mut lo, mut hi) = LOG_RATE_BRACKET;
    if !(curve.at(lo.exp()) < target && curve.at(hi.exp()) > target) {
        return Err(Error::BracketFailure);
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if curve.at(mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// A scenario with its calibrated entry rate and the marginal retained share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedScenario {
    pub scenario: SimScenario,
    pub lambda_ebh: f64,
    /// Monte Carlo `P(Y > E | trt = 0)` at `lambda_ebh`.
    pub p_retained: f64,
}

impl CalibratedScenario {
    pub fn new(scenario: SimScenario) -> Result<Self> {
        scenario.validate()?;
        let lambda_ebh = calibrate_entry_rate(&scenario)?;
        Self::with_rate(scenario, lambda_ebh)
    }

    pub fn with_rate(scenario: SimScenario, lambda_ebh: f64) -> Result<Self> {
        let p_retained = RetentionCurve::new(&scenario)?.at(lambda_ebh);
        Ok(Self {
            scenario,
            lambda_ebh,
            p_retained,
        })
    }

    /// Analytic density ratio `pi(z) / pi(z | Y > E) = P(Y > E) / P(Y > E | z)`
    /// for a real-world record.
    pub fn true_density_ratio(&self, record: &SurvivalRecord) -> f64 {
        let (z1, z2) = (record.covariates[0], record.covariates[1]);
        self.p_retained / self.scenario.retention_given(self.lambda_ebh, z1, z2)
    }
}

pub fn true_density_ratio(cal: &CalibratedScenario, record: &SurvivalRecord) -> f64 {
    cal.true_density_ratio(record)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedIteration {
    /// Both arms before truncation.
    pub complete: Cohort,
    /// Real-world arm filtered to `Y > E`; trial arm intact.
    pub truncated: Cohort,
    /// Analytic density-ratio weights aligned with `truncated` (1 for trial rows).
    pub true_weights: Vec<f64>,
}

pub const COVARIATE_NAMES: [&str; 2] = ["z1", "z2"];

fn covariate_names() -> Vec<String> {
    COVARIATE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Draws one bit-reproducible data set.
pub fn generate_iteration(cal: &CalibratedScenario, seed: u64) -> Result<GeneratedIteration> {
    let s = &cal.scenario;
    let normal = Normal::new(0.0, s.z2_sd).map_err(|e| Error::Precondition(format!("z2_sd: {e}")))?;
    let exp = |rate: f64| Exp::new(rate).map_err(|e| Error::Precondition(format!("rate {rate}: {e}")));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let draw = |arm: Arm, rng: &mut ChaCha8Rng| -> Result<SurvivalRecord> {
        let trt = arm.indicator();
        let z1 = if rng.random::<f64>() < 1.0 - s.p_entry_at_baseline {
            1.0
        } else {
            0.0
        };
        let z2 = normal.sample(rng);
        let entry = if arm == Arm::Truncated && z1 == 1.0 {
            exp(s.entry_rate(cal.lambda_ebh, z2))?.sample(rng)
        } else {
            0.0
        };
        let rate = s.hazard(trt, z1, z2);
        let t = exp(rate)?.sample(rng);
        let c = exp(rate)?.sample(rng);
        Ok(SurvivalRecord {
            entry_time: entry,
            observed_time: t.min(c),
            event: t <= c,
            covariates: vec![z1, z2],
            weight: 1.0,
            arm,
        })
    };

    let n_rw = s.n_rw_generated();
    let mut all = Vec::with_capacity(n_rw + s.n_trial);
    for _ in 0..n_rw {
        all.push(draw(Arm::Truncated, &mut rng)?);
    }
    for _ in 0..s.n_trial {
        all.push(draw(Arm::Reference, &mut rng)?);
    }
    let kept: Vec<SurvivalRecord> = all
        .iter()
        .filter(|r| r.arm == Arm::Reference || r.observed_time > r.entry_time)
        .cloned()
        .collect();
    let true_weights = kept
        .iter()
        .map(|r| match r.arm {
            Arm::Reference => 1.0,
            Arm::Truncated => cal.true_density_ratio(r),
        })
        .collect();
    Ok(GeneratedIteration {
        complete: Cohort::new(all, covariate_names(), false)?,
        truncated: Cohort::new(kept, covariate_names(), true)?,
        true_weights,
    })
}
