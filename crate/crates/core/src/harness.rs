//! Monte Carlo study runner: per-iteration estimates against per-iteration
//! ground truth, and bias / coverage summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Arm, Cohort};
use crate::cox::{fit_cox, wald_row, CoxOptions, Term, Ties};
use crate::density_ratio::estimate_weights;
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::km::{fit_km, km_bootstrap_ci, BootstrapOptions, BootstrapStatistic};
use crate::simgen::{generate_iteration, CalibratedScenario, SimScenario, COVARIATE_NAMES};
use crate::stats::{mean, mix_seed, sample_variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    ConditionalNaive,
    ConditionalAdjusted,
    MarginalNaive,
    MarginalAdjusted,
    MarginalWeighted,
    MedianNaive,
    MedianAdjusted,
    MedianWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    ConditionalHr,
    MarginalHr,
    RwMedian,
}

impl Estimator {
    pub const ALL: [Estimator; 8] = [
        Estimator::ConditionalNaive,
        Estimator::ConditionalAdjusted,
        Estimator::MarginalNaive,
        Estimator::MarginalAdjusted,
        Estimator::MarginalWeighted,
        Estimator::MedianNaive,
        Estimator::MedianAdjusted,
        Estimator::MedianWeighted,
    ];

    pub fn estimand(self) -> Estimand {
        use Estimator::*;
        match self {
            ConditionalNaive | ConditionalAdjusted => Estimand::ConditionalHr,
            MarginalNaive | MarginalAdjusted | MarginalWeighted => Estimand::MarginalHr,
            MedianNaive | MedianAdjusted | MedianWeighted => Estimand::RwMedian,
        }
    }

    pub fn as_str(self) -> &'static str {
        use Estimator::*;
        match self {
            ConditionalNaive => "conditional_naive",
            ConditionalAdjusted => "conditional_adjusted",
            MarginalNaive => "marginal_naive",
            MarginalAdjusted => "marginal_adjusted",
            MarginalWeighted => "marginal_weighted",
            MedianNaive => "median_naive",
            MedianAdjusted => "median_adjusted",
            MedianWeighted => "median_weighted",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Estimate {
    Ok {
        estimate: f64,
        /// Absent when no interval was requested.
        ci: Option<(f64, f64)>,
    },
    Failed {
        reason: String,
    },
}

impl Estimate {
    fn from_result(r: Result<(f64, Option<(f64, f64)>)>) -> Self {
        match r {
            Ok((estimate, ci)) if estimate.is_finite() => Estimate::Ok { estimate, ci },
            Ok((estimate, _)) => Estimate::Failed {
                reason: format!("non-finite estimate {estimate}"),
            },
            Err(e) => Estimate::Failed { reason: e.to_string() },
        }
    }
}

/// Ground truths from the complete (untruncated) data; `None` when the truth
/// itself could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub conditional_hr: Option<f64>,
    pub marginal_hr: Option<f64>,
    pub rw_median: Option<f64>,
}

impl GroundTruth {
    pub fn get(&self, e: Estimand) -> Option<f64> {
        match e {
            Estimand::ConditionalHr => self.conditional_hr,
            Estimand::MarginalHr => self.marginal_hr,
            Estimand::RwMedian => self.rw_median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationResult {
    pub iteration: usize,
    pub seed: u64,
    pub truth: GroundTruth,
    pub estimates: BTreeMap<Estimator, Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessOptions {
    pub n_iterations: usize,
    /// Bootstrap resamples for median intervals; 0 skips them.
    pub bootstrap_resamples: usize,
    pub level: f64,
    pub ties: Ties,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            n_iterations: 1000,
            bootstrap_resamples: 200,
            level: 0.95,
            ties: Ties::Breslow,
        }
    }
}

fn cox_hr(
    cohort: &Cohort,
    terms: &[Term],
    weights: Option<&[f64]>,
    adjust: bool,
    opts: &HarnessOptions,
) -> Result<(f64, Option<(f64, f64)>)> {
    let cox_opts = CoxOptions {
        ties: opts.ties,
        risk_set_adjust: adjust,
        ..CoxOptions::default()
    };
    let fit = fit_cox(cohort, terms, weights, &cox_opts)?;
    let row = wald_row(terms[0].name(), fit.coefficients[0], fit.robust_se(0), true, opts.level);
    Ok((row.hazard_ratio, Some((row.ci_lower, row.ci_upper))))
}

fn km_median(
    cohort: &Cohort,
    weights: &[f64],
    adjust: bool,
    seed: u64,
    opts: &HarnessOptions,
) -> Result<(f64, Option<(f64, f64)>)> {
    let curve = fit_km(cohort, adjust, Some(weights))?;
    let median = curve
        .median()
        .ok_or_else(|| Error::Precondition("survival never drops to 0.5".into()))?;
    let ci = if opts.bootstrap_resamples > 0 {
        let boot = BootstrapOptions {
            n_resamples: opts.bootstrap_resamples,
            level: opts.level,
            seed,
            risk_set_adjust: adjust,
            ..BootstrapOptions::default()
        };
        let ci = km_bootstrap_ci(cohort, weights, BootstrapStatistic::Median, &boot)?;
        Some((ci.lower, ci.upper))
    } else {
        None
    };
    Ok((median, ci))
}

fn truth_median(rw_complete: &Cohort) -> Option<f64> {
    fit_km(rw_complete, false, None).ok()?.median()
}

fn truth_hr(complete: &Cohort, terms: &[Term], ties: Ties) -> Option<f64> {
    let opts = CoxOptions {
        ties,
        risk_set_adjust: false,
        ..CoxOptions::default()
    };
    fit_cox(complete, terms, None, &opts)
        .ok()
        .map(|f| f.coefficients[0].exp())
}

/// Simulates one data set and evaluates every estimator on it.
pub fn run_iteration(
    cal: &CalibratedScenario,
    iteration: usize,
    seed: u64,
    opts: &HarnessOptions,
) -> Result<IterationResult> {
    let data = generate_iteration(cal, seed)?;
    let conditional: Vec<Term> = std::iter::once(Term::Arm)
        .chain(COVARIATE_NAMES.iter().map(|n| Term::Covariate(n.to_string())))
        .collect();
    let marginal = [Term::Arm];

    let rw_complete = data.complete.filter(|r| r.arm == Arm::Truncated)?;
    let truth = GroundTruth {
        conditional_hr: truth_hr(&data.complete, &conditional, opts.ties),
        marginal_hr: truth_hr(&data.complete, &marginal, opts.ties),
        rw_median: truth_median(&rw_complete),
    };

    let truncated = &data.truncated;
    let is_rw: Vec<bool> = truncated.records().iter().map(|r| r.arm == Arm::Truncated).collect();
    let names = COVARIATE_NAMES;
    let weights: Result<Vec<f64>> = (|| {
        let rw = truncated.filter(|r| r.arm == Arm::Truncated)?;
        let trial = truncated.filter(|r| r.arm == Arm::Reference)?;
        let fit = estimate_weights(&rw.covariate_matrix(&names)?, &trial.covariate_matrix(&names)?)?;
        let mut rw_weights = fit.weights.into_iter();
        Ok(is_rw
            .iter()
            .map(|&rw| if rw { rw_weights.next().unwrap_or(1.0) } else { 1.0 })
            .collect())
    })();

    let rw_truncated = truncated.filter(|r| r.arm == Arm::Truncated);
    let boot_seed = |k: u64| mix_seed(seed, k);

    let mut estimates = BTreeMap::new();
    for est in Estimator::ALL {
        let r = match est {
            Estimator::ConditionalNaive => cox_hr(truncated, &conditional, None, false, opts),
            Estimator::ConditionalAdjusted => cox_hr(truncated, &conditional, None, true, opts),
            Estimator::MarginalNaive => cox_hr(truncated, &marginal, None, false, opts),
            Estimator::MarginalAdjusted => cox_hr(truncated, &marginal, None, true, opts),
            Estimator::MarginalWeighted => weights
                .clone()
                .and_then(|w| cox_hr(truncated, &marginal, Some(&w), true, opts)),
            Estimator::MedianNaive | Estimator::MedianAdjusted | Estimator::MedianWeighted => {
                rw_truncated.clone().and_then(|rw| {
                    let w = if est == Estimator::MedianWeighted {
                        let all = weights.clone()?;
                        all.iter().zip(&is_rw).filter(|(_, &rw)| rw).map(|(w, _)| *w).collect()
                    } else {
                        vec![1.0; rw.len()]
                    };
                    let adjust = est != Estimator::MedianNaive;
                    km_median(&rw, &w, adjust, boot_seed(est as u64 + 1), opts)
                })
            }
        };
        estimates.insert(est, Estimate::from_result(r));
    }
    Ok(IterationResult {
        iteration,
        seed,
        truth,
        estimates,
    })
}

/// Seed of iteration `i` under a scenario seed.
pub fn iteration_seed(scenario_seed: u64, i: usize) -> u64 {
    mix_seed(scenario_seed, i as u64)
}

/// Runs `opts.n_iterations` iterations in parallel; results are ordered by
/// iteration index regardless of scheduling.
pub fn run_scenario(
    cal: &CalibratedScenario,
    scenario_seed: u64,
    opts: &HarnessOptions,
) -> Result<Vec<IterationResult>> {
    (0..opts.n_iterations)
        .into_par_iter()
        .map(|i| run_iteration(cal, i, iteration_seed(scenario_seed, i), opts))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimand: Estimand,
    /// Mean of `(estimate - truth) / truth`.
    pub relative_bias: f64,
    pub relative_bias_mc_se: f64,
    /// Mean of `log(estimate) - log(truth)`.
    pub log_bias: f64,
    /// Share of intervals containing the iteration's truth; `None` without intervals.
    pub coverage: Option<f64>,
    pub coverage_mc_se: Option<f64>,
    pub mean_estimate: f64,
    pub mean_truth: f64,
    pub n_ok: usize,
    pub n_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub n_iterations: usize,
    pub estimators: BTreeMap<Estimator, EstimatorSummary>,
    /// Estimators that failed in every iteration.
    pub all_failed: Vec<Estimator>,
}

impl SimSummary {
    pub fn get(&self, e: Estimator) -> Result<&EstimatorSummary> {
        self.estimators.get(&e).ok_or_else(|| Error::AllFailed(e.to_string()))
    }
}

/// Bias and coverage of one estimator; fails if no iteration produced both
/// an estimate and a truth.
pub fn summarize_estimator(results: &[IterationResult], est: Estimator) -> Result<EstimatorSummary> {
    let estimand = est.estimand();
    let mut rel = Vec::new();
    let mut logs = Vec::new();
    let mut ests = Vec::new();
    let mut truths = Vec::new();
    let mut covered = 0usize;
    let mut with_ci = 0usize;
    for r in results {
        let (Some(truth), Some(Estimate::Ok { estimate, ci })) = (r.truth.get(estimand), r.estimates.get(&est)) else {
            continue;
        };
        rel.push((estimate - truth) / truth);
        logs.push(estimate.ln() - truth.ln());
        ests.push(*estimate);
        truths.push(truth);
        if let Some((lo, hi)) = ci {
            with_ci += 1;
            if *lo <= truth && truth <= *hi {
                covered += 1;
            }
        }
    }
    let n_ok = rel.len();
    if n_ok == 0 {
        return Err(Error::AllFailed(est.to_string()));
    }
    // sorted so that sums do not depend on iteration order
    for v in [&mut rel, &mut logs, &mut ests, &mut truths] {
        v.sort_by(f64::total_cmp);
    }
    let coverage = (with_ci > 0).then(|| covered as f64 / with_ci as f64);
    Ok(EstimatorSummary {
        estimand,
        relative_bias: mean(&rel),
        relative_bias_mc_se: (sample_variance(&rel) / n_ok as f64).sqrt(),
        log_bias: mean(&logs),
        coverage,
        coverage_mc_se: coverage.map(|c| (c * (1.0 - c) / with_ci as f64).sqrt()),
        mean_estimate: mean(&ests),
        mean_truth: mean(&truths),
        n_ok,
        n_failures: results.len() - n_ok,
    })
}

pub fn summarize(results: &[IterationResult]) -> Result<SimSummary> {
    if results.is_empty() {
        return Err(Error::Precondition("no iteration results to summarize".into()));
    }
    let mut estimators = BTreeMap::new();
    let mut all_failed = Vec::new();
    for est in Estimator::ALL {
        if !results.iter().any(|r| r.estimates.contains_key(&est)) {
            continue;
        }
        match summarize_estimator(results, est) {
            Ok(s) => {
                estimators.insert(est, s);
            }
            Err(Error::AllFailed(_)) => all_failed.push(est),
            Err(e) => return Err(e),
        }
    }
    Ok(SimSummary {
        n_iterations: results.len(),
        estimators,
        all_failed,
    })
}

/// Cross-product grid of scenarios around a base scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub base: SimScenario,
    pub target_truncation: Vec<f64>,
    pub beta_entry: Vec<f64>,
    pub beta_z: Vec<f64>,
    pub master_seed: u64,
    pub harness: HarnessOptions,
}

impl GridSpec {
    /// Scenarios ordered by truncation target, then entry, then confounder effect.
    pub fn scenarios(&self) -> Vec<SimScenario> {
        let mut out = Vec::new();
        for &t in &self.target_truncation {
            for &be in &self.beta_entry {
                for &bz in &self.beta_z {
                    out.push(SimScenario {
                        target_truncation: t,
                        beta_entry: be,
                        beta_z: bz,
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScenarioOutcome {
    Completed {
        calibration: CalibratedScenario,
        summary: SimSummary,
    },
    /// The truncation target cannot be reached (e.g. it does not exceed the
    /// baseline-entry probability); no iterations were run.
    Unachievable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub index: usize,
    pub seed: u64,
    pub scenario: SimScenario,
    pub harness: HarnessOptions,
    pub outcome: ScenarioOutcome,
}

impl ScenarioResult {
    pub fn summary(&self) -> Option<&SimSummary> {
        match &self.outcome {
            ScenarioOutcome::Completed { summary, .. } => Some(summary),
            ScenarioOutcome::Unachievable { .. } => None,
        }
    }
}

pub fn scenario_file_stem(index: usize) -> String {
    format!("scenario_{index:03}")
}

/// Per-iteration rows as CSV (one row per iteration and estimator).
pub fn iterations_csv(results: &[IterationResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record([
        "iteration",
        "seed",
        "estimator",
        "estimand",
        "estimate",
        "ci_lower",
        "ci_upper",
        "truth",
        "failure",
    ])
    .map_err(io)?;
    let num = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    for r in results {
        for (est, e) in &r.estimates {
            let truth = num(r.truth.get(est.estimand()));
            let estimand = serde_json::to_value(est.estimand())
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            let (estimate, lo, hi, failure) = match e {
                Estimate::Ok { estimate, ci } => (
                    num(Some(*estimate)),
                    num(ci.map(|c| c.0)),
                    num(ci.map(|c| c.1)),
                    String::new(),
                ),
                Estimate::Failed { reason } => (String::new(), String::new(), String::new(), reason.clone()),
            };
            w.write_record([
                r.iteration.to_string(),
                r.seed.to_string(),
                est.to_string(),
                estimand,
                estimate,
                lo,
                hi,
                truth,
                failure,
            ])
            .map_err(io)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

fn load_previous(
    path: &Path,
    index: usize,
    seed: u64,
    scenario: &SimScenario,
    harness: &HarnessOptions,
) -> Option<ScenarioResult> {
    let bytes = std::fs::read(path).ok()?;
    let prev: ScenarioResult = serde_json::from_slice(&bytes).ok()?;
    (prev.index == index && prev.seed == seed && &prev.harness == harness && &prev.scenario == scenario).then_some(prev)
}

/// Runs every scenario of the grid. With `out_dir`, each finished scenario is
/// persisted as `scenario_NNN.json` (plus per-iteration `.csv`), and matching
/// files from an earlier run are reused instead of recomputed.
pub fn run_grid(grid: &GridSpec, out_dir: Option<&Path>) -> Result<Vec<ScenarioResult>> {
    let mut out = Vec::new();
    for (index, scenario) in grid.scenarios().into_iter().enumerate() {
        let seed = mix_seed(grid.master_seed, index as u64);
        let json_path = out_dir.map(|d| d.join(format!("{}.json", scenario_file_stem(index))));
        if let Some(prev) = json_path
            .as_deref()
            .and_then(|p| load_previous(p, index, seed, &scenario, &grid.harness))
        {
            out.push(prev);
            continue;
        }
        scenario.validate().or_else(|e| match e {
            Error::Config { ref field, .. } if field == "target_truncation" => Ok(()),
            e => Err(e),
        })?;
        let (outcome, results) = match CalibratedScenario::new(scenario.clone()) {
            Ok(calibration) => {
                let results = run_scenario(&calibration, seed, &grid.harness)?;
                let summary = summarize(&results)?;
                (ScenarioOutcome::Completed { calibration, summary }, Some(results))
            }
            Err(e @ (Error::UnachievableTarget { .. } | Error::BracketFailure | Error::Config { .. })) => {
                (ScenarioOutcome::Unachievable { reason: e.to_string() }, None)
            }
            Err(e) => return Err(e),
        };
        let result = ScenarioResult {
            index,
            seed,
            scenario,
            harness: grid.harness.clone(),
            outcome,
        };
        if let (Some(dir), Some(json_path)) = (out_dir, json_path) {
            if let Some(results) = &results {
                atomic_write(
                    &dir.join(format!("{}.csv", scenario_file_stem(index))),
                    &iterations_csv(results)?,
                )?;
            }
            let json = serde_json::to_vec_pretty(&result).map_err(|e| Error::Io(e.to_string()))?;
            atomic_write(&json_path, &json)?;
        }
        out.push(result);
    }
    Ok(out)
}
