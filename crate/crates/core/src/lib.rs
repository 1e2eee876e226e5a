//! Survival estimation from left-truncated data under conditionally
//! independent truncation.
//!
//! The crate provides risk-set-adjusted and density-ratio-weighted
//! Kaplan-Meier and Cox estimators, entry-time dependence tests,
//! classifier-based weight estimation against a non-truncated reference
//! sample, and a Monte Carlo harness for simulation studies.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cohort;
pub mod cox;
pub mod density_ratio;
pub mod error;
pub mod harness;
pub mod io;
pub mod km;
pub mod logistic;
pub mod simgen;
pub mod stats;
pub mod truncation;

pub use cohort::{validate_cohort, Arm, Cohort, SurvivalRecord};
pub use cox::{fit_cox, hazard_ratio_summary, robust_variance, CoxFit, CoxOptions, HazardRatio, Term, Ties};
pub use density_ratio::{balance_report, estimate_weights, BalanceReport, DensityRatioFit, WeightOptions};
pub use error::{Error, Result};
pub use harness::{run_grid, run_iteration, summarize, Estimator, IterationResult, SimSummary};
pub use io::report::{analyze, AnalysisReport};
pub use km::{fit_km, km_bootstrap_ci, median_survival, BootstrapOptions, BootstrapStatistic, KmCurve};
pub use logistic::{fit_logistic, LogisticModel};
pub use simgen::{
    calibrate_entry_rate, generate_iteration, true_density_ratio, CalibratedScenario, GeneratedIteration, SimScenario,
};
pub use truncation::{test_conditional_dependence, test_marginal_dependence, TestResult};
