//! End-to-end analysis of a left-truncated cohort against a reference sample.
//!
//! Stages: naive and risk-set-adjusted KM, marginal and conditional
//! entry-time tests, density-ratio weights with a balance check, and the
//! weighted adjusted KM with bootstrap intervals.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::cox::CoxOptions;
use crate::density_ratio::{estimate_weights_with, BalanceReport, WeightOptions};
use crate::error::{Error, Result};
use crate::io::config::{sha256_hex, AnalysisSection};
use crate::io::csv::{load_cohort_csv, load_covariates_csv, LoadOptions};
use crate::io::plot::{balance_svg, survival_svg, Band, SurvivalSeries};
use crate::km::{fit_km, km_bootstrap_band, km_bootstrap_ci, BootstrapOptions, BootstrapStatistic, KmCurve};
use crate::logistic::LogisticRegression;
use crate::stats::mix_seed;
use crate::truncation::{test_conditional_dependence_with, TestResult};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub n_resamples: usize,
    pub n_degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoints {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<f64>,
    pub events: Vec<f64>,
}

/// Pointwise bootstrap band evaluated at the curve's event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPoints {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmSummary {
    pub risk_set_adjusted: bool,
    pub weighted: bool,
    pub n_records: usize,
    pub n_events: usize,
    pub median: Option<f64>,
    pub median_ci: Option<Interval>,
    pub curve: CurvePoints,
    pub band: Option<BandPoints>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Kish effective sample size `(sum w)^2 / sum w^2`.
    pub effective_sample_size: f64,
    pub sample_adjustment: f64,
    pub model_coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// True when no seed was supplied and one was drawn.
    pub seed_generated: bool,
    pub version: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub confounders: Vec<String>,
    pub naive_km: KmSummary,
    pub adjusted_km: KmSummary,
    pub marginal_test: TestResult,
    pub conditional_test: TestResult,
    pub weights: WeightSummary,
    pub balance: BalanceReport,
    pub weighted_km: KmSummary,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    pub seed: u64,
    pub seed_generated: bool,
    pub confounders: Vec<String>,
    pub load: LoadOptions,
    pub analysis: AnalysisSection,
    /// Hash of the configuration that produced these options; computed from
    /// the options themselves when empty.
    pub config_hash: String,
}

impl AnalyzeOptions {
    pub fn new(seed: u64, confounders: Vec<String>) -> Self {
        Self {
            seed,
            seed_generated: false,
            confounders,
            load: LoadOptions::default(),
            analysis: AnalysisSection::default(),
            config_hash: String::new(),
        }
    }

    fn effective_hash(&self) -> String {
        if !self.config_hash.is_empty() {
            return self.config_hash.clone();
        }
        let mut canonical = self.clone();
        canonical.seed = 0;
        canonical.seed_generated = false;
        sha256_hex(&serde_json::to_vec(&canonical).unwrap_or_default())
    }
}

fn curve_points(c: &KmCurve) -> CurvePoints {
    CurvePoints {
        times: c.event_times.clone(),
        survival: c.survival.clone(),
        at_risk: c.at_risk_mass.clone(),
        events: c.n_events_mass.clone(),
    }
}

struct KmStage<'a> {
    cohort: &'a Cohort,
    weights: Vec<f64>,
    adjust: bool,
    weighted: bool,
    seed: u64,
    band: bool,
}

fn km_summary(
    stage: KmStage<'_>,
    analysis: &AnalysisSection,
    warnings: &mut Vec<String>,
    label: &str,
) -> Result<KmSummary> {
    let curve = fit_km(stage.cohort, stage.adjust, Some(&stage.weights))?;
    let median = curve.median();
    let boot = BootstrapOptions {
        n_resamples: analysis.bootstrap_resamples,
        level: analysis.level,
        seed: stage.seed,
        risk_set_adjust: stage.adjust,
        ..BootstrapOptions::default()
    };
    let resample = analysis.bootstrap_resamples > 0;
    let median_ci = match median {
        Some(m) if resample => match km_bootstrap_ci(stage.cohort, &stage.weights, BootstrapStatistic::Median, &boot) {
            Ok(ci) => Some(Interval {
                lower: ci.lower.min(m),
                upper: ci.upper.max(m),
                level: ci.level,
                n_resamples: ci.n_resamples,
                n_degenerate: ci.n_degenerate,
            }),
            Err(e @ Error::DegenerateResample { .. }) => {
                warnings.push(format!("{label}: median interval unavailable ({e})"));
                None
            }
            Err(e) => return Err(e),
        },
        Some(_) => None,
        None => {
            warnings.push(format!("{label}: survival does not reach 0.5; median undefined"));
            None
        }
    };
    let band = if stage.band && resample {
        let b = km_bootstrap_band(stage.cohort, &stage.weights, &curve.event_times, &boot)?;
        Some(BandPoints {
            level: b.level,
            lower: b.lower,
            upper: b.upper,
        })
    } else {
        None
    };
    Ok(KmSummary {
        risk_set_adjusted: stage.adjust,
        weighted: stage.weighted,
        n_records: stage.cohort.len(),
        n_events: stage.cohort.records().iter().filter(|r| r.event).count(),
        median,
        median_ci,
        curve: curve_points(&curve),
        band,
    })
}

/// Kaplan-Meier summary with bootstrap median interval and pointwise band.
/// Conditions that only affect intervals are returned as warnings.
pub fn summarize_km(
    cohort: &Cohort,
    weights: &[f64],
    adjust: bool,
    seed: u64,
    analysis: &AnalysisSection,
) -> Result<(KmSummary, Vec<String>)> {
    let mut warnings = Vec::new();
    let weighted = weights.iter().any(|&w| w != weights[0]);
    let stage = KmStage {
        cohort,
        weights: weights.to_vec(),
        adjust,
        weighted,
        seed,
        band: true,
    };
    let summary = km_summary(stage, analysis, &mut warnings, "km")?;
    Ok((summary, warnings))
}

/// Runs the analysis on in-memory data. `reference` holds the confounder
/// columns of the non-truncated sample, in `opts.confounders` order.
pub fn analyze_data(truncated: &Cohort, reference: &DMatrix<f64>, opts: &AnalyzeOptions) -> Result<AnalysisReport> {
    let names: Vec<&str> = opts.confounders.iter().map(String::as_str).collect();
    if names.is_empty() {
        return Err(Error::Precondition("at least one confounder is required".into()).at_stage("load"));
    }
    for n in &names {
        if truncated.covariate_index(n).is_err() {
            return Err(Error::MissingColumn(n.to_string()).at_stage("load"));
        }
    }
    if reference.ncols() != names.len() {
        return Err(Error::ArityMismatch {
            left: names.len(),
            right: reference.ncols(),
        }
        .at_stage("load"));
    }
    let a = &opts.analysis;
    let mut warnings = Vec::new();
    let unit = vec![1.0; truncated.len()];
    let seed = |k: u64| mix_seed(opts.seed, k);

    let naive_km = km_summary(
        KmStage {
            cohort: truncated,
            weights: unit.clone(),
            adjust: false,
            weighted: false,
            seed: seed(1),
            band: false,
        },
        a,
        &mut warnings,
        "naive_km",
    )
    .map_err(|e| e.at_stage("naive_km"))?;
    let adjusted_km = km_summary(
        KmStage {
            cohort: truncated,
            weights: unit.clone(),
            adjust: true,
            weighted: false,
            seed: seed(2),
            band: true,
        },
        a,
        &mut warnings,
        "adjusted_km",
    )
    .map_err(|e| e.at_stage("adjusted_km"))?;

    let cox = CoxOptions {
        ties: a.ties,
        ..CoxOptions::default()
    };
    let marginal_test =
        test_conditional_dependence_with(truncated, &[], &cox).map_err(|e| e.at_stage("marginal_test"))?;
    let conditional_test =
        test_conditional_dependence_with(truncated, &names, &cox).map_err(|e| e.at_stage("conditional_test"))?;

    let trunc_z = truncated.covariate_matrix(&names).map_err(|e| e.at_stage("weights"))?;
    let wopts = WeightOptions {
        trim_quantile: a.trim_quantile,
        balance_threshold: a.balance_threshold,
    };
    let fit = estimate_weights_with(
        &LogisticRegression::default(),
        &trunc_z,
        reference,
        &opts.confounders,
        &wopts,
    )
    .map_err(|e| e.at_stage("weights"))?;
    for c in fit.balance.covariates.iter().filter(|c| c.flagged) {
        warnings.push(format!(
            "balance: weighted SMD of `{}` is {} (threshold {})",
            c.name, c.weighted_smd, fit.balance.threshold
        ));
    }
    let w = &fit.weights;
    let sum: f64 = w.iter().sum();
    let weights = WeightSummary {
        n: w.len(),
        min: w.iter().copied().fold(f64::INFINITY, f64::min),
        max: w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: sum / w.len() as f64,
        effective_sample_size: sum * sum / w.iter().map(|x| x * x).sum::<f64>(),
        sample_adjustment: fit.sample_adjustment,
        model_coefficients: fit.model.coefficients.clone(),
    };

    let weighted_km = km_summary(
        KmStage {
            cohort: truncated,
            weights: fit.weights.clone(),
            adjust: true,
            weighted: true,
            seed: seed(3),
            band: true,
        },
        a,
        &mut warnings,
        "weighted_km",
    )
    .map_err(|e| e.at_stage("weighted_km"))?;

    Ok(AnalysisReport {
        schema_version: REPORT_SCHEMA_VERSION,
        confounders: opts.confounders.clone(),
        naive_km,
        adjusted_km,
        marginal_test,
        conditional_test,
        weights,
        balance: fit.balance,
        weighted_km,
        warnings,
        provenance: Provenance {
            seed: opts.seed,
            seed_generated: opts.seed_generated,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: opts.effective_hash(),
            inputs: BTreeMap::new(),
        },
    })
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(
        &std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?,
    ))
}

/// Loads both files and runs [`analyze_data`]. Missing confounder columns
/// fail before any model is fitted.
pub fn analyze(truncated_csv: &Path, reference_csv: &Path, opts: &AnalyzeOptions) -> Result<AnalysisReport> {
    let names: Vec<&str> = opts.confounders.iter().map(String::as_str).collect();
    let truncated = load_cohort_csv(truncated_csv, &opts.load).map_err(|e| e.at_stage("load"))?;
    for n in &names {
        if truncated.covariate_index(n).is_err() {
            return Err(Error::MissingColumn(n.to_string()).at_stage("load"));
        }
    }
    let reference = load_covariates_csv(reference_csv, &names, &opts.load.filters).map_err(|e| e.at_stage("load"))?;
    let mut report = analyze_data(&truncated, &reference, opts)?;
    report
        .provenance
        .inputs
        .insert("truncated".into(), file_hash(truncated_csv)?);
    report
        .provenance
        .inputs
        .insert("reference".into(), file_hash(reference_csv)?);
    Ok(report)
}

pub fn report_json(report: &AnalysisReport) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(report).map_err(|e| Error::Io(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn series(label: &str, km: &KmSummary) -> SurvivalSeries {
    SurvivalSeries {
        label: label.to_string(),
        times: km.curve.times.clone(),
        survival: km.curve.survival.clone(),
        band: km.band.as_ref().map(|b| Band {
            times: km.curve.times.clone(),
            lower: b.lower.clone(),
            upper: b.upper.clone(),
        }),
    }
}

/// `(file name, svg)` pairs for the report's plots.
pub fn report_plots(report: &AnalysisReport) -> Vec<(String, String)> {
    vec![
        (
            "survival.svg".into(),
            survival_svg(
                "Kaplan-Meier survival",
                &[
                    series("naive", &report.naive_km),
                    series("risk-set adjusted", &report.adjusted_km),
                    series("weighted adjusted", &report.weighted_km),
                ],
            ),
        ),
        ("balance.svg".into(), balance_svg(&report.balance)),
    ]
}
