//! Weighted, risk-set-adjusted Kaplan-Meier estimation.
//!
//! At each distinct event time `x_j` the conditional failure probability is
//!
//! ```text
//! F(x_j) = sum_i I(E_i <= x_j, Y_i = x_j) d_i w_i / sum_i I(E_i <= x_j <= Y_i) w_i
//! ```
//!
//! and survival is the running product of `1 - F(x_j)`. With
//! `risk_set_adjust = false` every entry time is treated as zero.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{check_weights, normalize_weights, Cohort, SurvivalRecord};
use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, NeumaierSum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub event_times: Vec<f64>,
    pub failure_probs: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk_mass: Vec<f64>,
    pub n_events_mass: Vec<f64>,
}

impl KmCurve {
    pub fn len(&self) -> usize {
        self.event_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.event_times.is_empty()
    }

    /// Right-continuous step function; 1 before the first event time.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    pub fn median(&self) -> Option<f64> {
        median_survival(self)
    }
}

/// Fits the (optionally weighted) Kaplan-Meier curve.
///
/// `weights` override the record weights when given. Fails with
/// [`Error::ZeroRiskMass`] if an event time has no at-risk weight.
pub fn fit_km(cohort: &Cohort, risk_set_adjust: bool, weights: Option<&[f64]>) -> Result<KmCurve> {
    let (weights, scale) = match weights {
        Some(w) => {
            check_weights(w, cohort.len())?;
            normalize_weights(w)
        }
        None => normalize_weights(&cohort.weights()),
    };
    let mut curve = km_from_records(cohort.records(), &weights, risk_set_adjust)?;
    for m in curve.at_risk_mass.iter_mut().chain(curve.n_events_mass.iter_mut()) {
        *m *= scale;
    }
    Ok(curve)
}

fn km_from_records(records: &[SurvivalRecord], weights: &[f64], risk_set_adjust: bool) -> Result<KmCurve> {
    let entry = |i: usize| {
        if risk_set_adjust {
            records[i].entry_time
        } else {
            0.0
        }
    };
    // Records with Y < E are never at risk.
    let live: Vec<usize> = (0..records.len())
        .filter(|&i| entry(i) <= records[i].observed_time)
        .collect();
    let mut by_entry = live.clone();
    by_entry.sort_by(|&a, &b| entry(a).total_cmp(&entry(b)));
    let mut by_exit = live;
    by_exit.sort_by(|&a, &b| records[a].observed_time.total_cmp(&records[b].observed_time));

    let mut events: Vec<usize> = (0..records.len()).filter(|&i| records[i].event).collect();
    events.sort_by(|&a, &b| records[a].observed_time.total_cmp(&records[b].observed_time));

    let mut curve = KmCurve {
        event_times: Vec::new(),
        failure_probs: Vec::new(),
        survival: Vec::new(),
        at_risk_mass: Vec::new(),
        n_events_mass: Vec::new(),
    };
    let mut risk = NeumaierSum::default();
    let (mut next_in, mut next_out, mut e) = (0, 0, 0);
    let mut surv = 1.0;
    while e < events.len() {
        let x = records[events[e]].observed_time;
        while next_in < by_entry.len() && entry(by_entry[next_in]) <= x {
            risk.add(weights[by_entry[next_in]]);
            next_in += 1;
        }
        while next_out < by_exit.len() && records[by_exit[next_out]].observed_time < x {
            risk.add(-weights[by_exit[next_out]]);
            next_out += 1;
        }
        let mut deaths = NeumaierSum::default();
        while e < events.len() && records[events[e]].observed_time == x {
            let i = events[e];
            if entry(i) <= x {
                deaths.add(weights[i]);
            }
            e += 1;
        }
        let at_risk = risk.value();
        if !(at_risk > 0.0) {
            return Err(Error::ZeroRiskMass { time: x });
        }
        let d = deaths.value();
        let f = (d / at_risk).clamp(0.0, 1.0);
        surv *= 1.0 - f;
        curve.event_times.push(x);
        curve.failure_probs.push(f);
        curve.survival.push(surv);
        curve.at_risk_mass.push(at_risk);
        curve.n_events_mass.push(d);
    }
    Ok(curve)
}

/// Smallest event time with survival at or below one half.
pub fn median_survival(curve: &KmCurve) -> Option<f64> {
    curve
        .survival
        .iter()
        .position(|&s| s <= 0.5)
        .map(|k| curve.event_times[k])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapStatistic {
    Median,
    SurvivalAt(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    /// Resample records with probability proportional to weight, then fit
    /// each resample unweighted.
    #[default]
    WeightedResample,
    /// Resample uniformly and keep the original weights.
    UniformKeepWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub n_resamples: usize,
    pub level: f64,
    pub seed: u64,
    pub mode: BootstrapMode,
    pub risk_set_adjust: bool,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            n_resamples: 1000,
            level: 0.95,
            seed: 0,
            mode: BootstrapMode::WeightedResample,
            risk_set_adjust: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub n_resamples: usize,
    pub n_degenerate: usize,
    pub seed: u64,
}

impl BootstrapInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub level: f64,
    pub times: Vec<f64>,
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n_resamples: usize,
    pub seed: u64,
}

/// Maximum tolerated share of degenerate resamples.
const MAX_DEGENERATE_FRACTION: f64 = 0.05;

fn resample_curves(cohort: &Cohort, weights: &[f64], opts: &BootstrapOptions) -> Result<Vec<Option<KmCurve>>> {
    if opts.n_resamples == 0 {
        return Err(Error::Precondition("n_resamples must be at least 1".into()));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::Precondition(format!("level {} not in (0, 1)", opts.level)));
    }
    check_weights(weights, cohort.len())?;
    let records = cohort.records();
    let n = records.len();
    let sampler =
        WeightedIndex::new(weights).map_err(|e| Error::Precondition(format!("invalid bootstrap weights: {e}")))?;
    let curves = (0..opts.n_resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64);
            let (picked, w): (Vec<SurvivalRecord>, Vec<f64>) = match opts.mode {
                BootstrapMode::WeightedResample => (0..n)
                    .map(|_| {
                        let i = sampler.sample(&mut rng);
                        (records[i].clone(), 1.0)
                    })
                    .unzip(),
                BootstrapMode::UniformKeepWeights => (0..n)
                    .map(|_| {
                        let i = rng.random_range(0..n);
                        (records[i].clone(), weights[i])
                    })
                    .unzip(),
            };
            if !picked.iter().any(|r| r.event) {
                return None;
            }
            km_from_records(&picked, &normalize_weights(&w).0, opts.risk_set_adjust).ok()
        })
        .collect();
    Ok(curves)
}

fn check_degenerate(n_degenerate: usize, total: usize) -> Result<()> {
    if n_degenerate == total || n_degenerate as f64 > MAX_DEGENERATE_FRACTION * total as f64 {
        return Err(Error::DegenerateResample {
            degenerate: n_degenerate,
            total,
        });
    }
    Ok(())
}

/// Percentile bootstrap interval for a Kaplan-Meier statistic.
///
/// Resamples whose statistic is undefined (no events, or a median that is
/// never reached) are skipped; more than 5% of them is an error.
pub fn km_bootstrap_ci(
    cohort: &Cohort,
    weights: &[f64],
    statistic: BootstrapStatistic,
    opts: &BootstrapOptions,
) -> Result<BootstrapInterval> {
    let curves = resample_curves(cohort, weights, opts)?;
    let mut values: Vec<f64> = curves
        .iter()
        .filter_map(|c| {
            c.as_ref().and_then(|c| match statistic {
                BootstrapStatistic::Median => c.median(),
                BootstrapStatistic::SurvivalAt(t) => Some(c.survival_at(t)),
            })
        })
        .collect();
    let n_degenerate = opts.n_resamples - values.len();
    check_degenerate(n_degenerate, opts.n_resamples)?;
    values.sort_by(f64::total_cmp);
    let alpha = 1.0 - opts.level;
    Ok(BootstrapInterval {
        lower: quantile_sorted(&values, alpha / 2.0),
        upper: quantile_sorted(&values, 1.0 - alpha / 2.0),
        level: opts.level,
        n_resamples: opts.n_resamples,
        n_degenerate,
        seed: opts.seed,
    })
}

/// Pointwise percentile band for survival on a time grid. Each interval is
/// widened where needed so that it contains the point estimate.
pub fn km_bootstrap_band(
    cohort: &Cohort,
    weights: &[f64],
    times: &[f64],
    opts: &BootstrapOptions,
) -> Result<ConfidenceBand> {
    let point_curve = fit_km(cohort, opts.risk_set_adjust, Some(weights))?;
    let curves: Vec<KmCurve> = resample_curves(cohort, weights, opts)?.into_iter().flatten().collect();
    check_degenerate(opts.n_resamples - curves.len(), opts.n_resamples)?;
    let alpha = 1.0 - opts.level;
    let mut band = ConfidenceBand {
        level: opts.level,
        times: times.to_vec(),
        point: Vec::with_capacity(times.len()),
        lower: Vec::with_capacity(times.len()),
        upper: Vec::with_capacity(times.len()),
        n_resamples: opts.n_resamples,
        seed: opts.seed,
    };
    for &t in times {
        let mut v: Vec<f64> = curves.iter().map(|c| c.survival_at(t)).collect();
        v.sort_by(f64::total_cmp);
        let p = point_curve.survival_at(t);
        band.point.push(p);
        band.lower.push(quantile_sorted(&v, alpha / 2.0).min(p));
        band.upper.push(quantile_sorted(&v, 1.0 - alpha / 2.0).max(p));
    }
    Ok(band)
}
