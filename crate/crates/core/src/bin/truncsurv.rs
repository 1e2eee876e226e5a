use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use truncsurv::cox::{fit_cox, hazard_ratio_summary, CoxOptions, Term, Ties};
use truncsurv::density_ratio::{balance_report, estimate_weights_with, WeightOptions};
use truncsurv::error::{Error, Result};
use truncsurv::harness::{Estimator, ScenarioOutcome, ScenarioResult};
use truncsurv::io::atomic_write;
use truncsurv::io::config::{AnalysisSection, StudyConfig};
use truncsurv::io::csv::{load_cohort_csv, load_covariates_csv, write_cohort_csv, LoadOptions, RowFilter};
use truncsurv::io::plot::{balance_svg, line_svg, survival_svg, LineSeries, SurvivalSeries};
use truncsurv::io::report::{analyze, report_json, report_plots, summarize_km, AnalyzeOptions};
use truncsurv::logistic::LogisticRegression;
use truncsurv::truncation::test_conditional_dependence_with;
use truncsurv::Cohort;

#[derive(Parser)]
#[command(name = "truncsurv", version, about = "Survival analysis for left-truncated cohorts")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed; drawn at random (and recorded) when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    plots: bool,
    /// Bootstrap resamples for Kaplan-Meier intervals.
    #[arg(long, global = true)]
    bootstrap_n: Option<usize>,
    #[arg(long, global = true, value_enum)]
    ties: Option<TiesArg>,
    /// Keep only rows satisfying `column<op>value` (repeatable).
    #[arg(long, global = true)]
    filter: Vec<String>,
    /// Reject rows whose observed time does not exceed their entry time.
    #[arg(long, global = true)]
    require_truncation_consistency: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum TiesArg {
    Breslow,
    Efron,
}

#[derive(Subcommand)]
enum Command {
    /// Kaplan-Meier curve, median and bootstrap band.
    Km {
        #[arg(long)]
        input: PathBuf,
        /// Ignore entry times.
        #[arg(long)]
        naive: bool,
        /// Use the `weight` column.
        #[arg(long)]
        weighted: bool,
    },
    /// Cox proportional hazards fit.
    Cox {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated terms; `arm` and `entry_time` are recognized.
        #[arg(long)]
        terms: String,
        #[arg(long)]
        naive: bool,
        #[arg(long)]
        weighted: bool,
    },
    /// Test whether entry time is associated with survival.
    TestTruncation {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, requires = "confounders")]
        conditional: bool,
        #[arg(long, value_delimiter = ',')]
        confounders: Vec<String>,
    },
    /// Density-ratio weights of the truncated cohort toward a reference sample.
    Weights {
        #[arg(long)]
        truncated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        confounders: Vec<String>,
        /// Cap weights at this quantile.
        #[arg(long)]
        trim: Option<f64>,
    },
    /// Covariate balance of the truncated cohort's `weight` column.
    Balance {
        #[arg(long)]
        truncated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        confounders: Vec<String>,
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
    },
    /// Full workflow: KM, truncation tests, weighting, balance, weighted KM.
    Analyze {
        #[arg(long)]
        truncated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        confounders: Vec<String>,
        /// TOML file; only its `[analysis]` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a simulation grid.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
}

struct Ctx<'a> {
    g: &'a Global,
    seed: u64,
    seed_generated: bool,
}

impl Ctx<'_> {
    fn load_options(&self) -> Result<LoadOptions> {
        Ok(LoadOptions {
            filters: self
                .g
                .filter
                .iter()
                .map(|f| f.parse::<RowFilter>())
                .collect::<Result<_>>()?,
            require_truncation_consistency: self.g.require_truncation_consistency,
            ..LoadOptions::default()
        })
    }

    fn load(&self, path: &Path) -> Result<Cohort> {
        load_cohort_csv(path, &self.load_options()?)
    }

    fn ties(&self, fallback: Ties) -> Ties {
        match self.g.ties {
            Some(TiesArg::Breslow) => Ties::Breslow,
            Some(TiesArg::Efron) => Ties::Efron,
            None => fallback,
        }
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.g.out.join(name);
        atomic_write(&path, bytes)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn write_rows(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        self.write(name, &w.into_inner().map_err(|e| Error::Io(e.to_string()))?)
    }

    fn provenance(&self, config_hash: String) -> serde_json::Value {
        json!({
            "seed": self.seed,
            "seed_generated": self.seed_generated,
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": config_hash,
        })
    }
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn confounder_refs(c: &[String]) -> Vec<&str> {
    c.iter().map(String::as_str).collect()
}

fn run(cli: Cli) -> Result<()> {
    let (seed, seed_generated) = match cli.global.seed {
        Some(s) => (s, false),
        None => (rand::random::<u64>(), true),
    };
    let ctx = Ctx {
        g: &cli.global,
        seed,
        seed_generated,
    };
    let g = &cli.global;
    let mut analysis = AnalysisSection::default();
    if let Some(n) = g.bootstrap_n {
        analysis.bootstrap_resamples = n;
    }

    match &cli.command {
        Command::Km { input, naive, weighted } => {
            let cohort = ctx.load(input)?;
            let weights = if *weighted {
                cohort.weights()
            } else {
                vec![1.0; cohort.len()]
            };
            let (km, warnings) = summarize_km(&cohort, &weights, !naive, seed, &analysis)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            match g.format {
                Format::Json => ctx.write_json(
                    "km.json",
                    &json!({ "km": km, "warnings": warnings, "provenance": ctx.provenance(String::new()) }),
                )?,
                Format::Csv => {
                    let rows: Vec<Vec<String>> = (0..km.curve.times.len())
                        .map(|k| {
                            vec![
                                num(km.curve.times[k]),
                                num(km.curve.survival[k]),
                                num(km.curve.at_risk[k]),
                                num(km.curve.events[k]),
                                opt(km.band.as_ref().map(|b| b.lower[k])),
                                opt(km.band.as_ref().map(|b| b.upper[k])),
                            ]
                        })
                        .collect();
                    ctx.write_rows(
                        "km.csv",
                        &["time", "survival", "at_risk", "events", "lower", "upper"],
                        &rows,
                    )?;
                }
            }
            if g.plots {
                let series = SurvivalSeries {
                    label: if *naive { "naive" } else { "risk-set adjusted" }.into(),
                    times: km.curve.times.clone(),
                    survival: km.curve.survival.clone(),
                    band: km.band.as_ref().map(|b| truncsurv::io::plot::Band {
                        times: km.curve.times.clone(),
                        lower: b.lower.clone(),
                        upper: b.upper.clone(),
                    }),
                };
                ctx.write("km.svg", survival_svg("Kaplan-Meier survival", &[series]).as_bytes())?;
            }
            println!("median: {}", km.median.map_or("not reached".into(), num));
        }
        Command::Cox {
            input,
            terms,
            naive,
            weighted,
        } => {
            let cohort = ctx.load(input)?;
            let terms = Term::parse_list(terms);
            let opts = CoxOptions {
                ties: ctx.ties(Ties::Breslow),
                risk_set_adjust: !naive,
                ..CoxOptions::default()
            };
            let unit = vec![1.0; cohort.len()];
            let weights = if *weighted { cohort.weights() } else { unit };
            let fit = fit_cox(&cohort, &terms, Some(&weights), &opts)?;
            let rows = hazard_ratio_summary(&fit, analysis.level);
            match g.format {
                Format::Json => ctx.write_json(
                    "cox.json",
                    &json!({
                        "terms": rows,
                        "log_partial_likelihood": fit.log_partial_likelihood,
                        "iterations": fit.n_iterations,
                        "n_records": fit.n_records,
                        "n_events": fit.n_events,
                        "ties": opts.ties,
                        "risk_set_adjusted": opts.risk_set_adjust,
                        "weighted": fit.weighted,
                        "provenance": ctx.provenance(String::new()),
                    }),
                )?,
                Format::Csv => ctx.write_rows(
                    "cox.csv",
                    &[
                        "term",
                        "coefficient",
                        "se",
                        "robust_se",
                        "hazard_ratio",
                        "ci_lower",
                        "ci_upper",
                        "p_value",
                    ],
                    &rows
                        .iter()
                        .map(|r| {
                            vec![
                                r.term.clone(),
                                num(r.coefficient),
                                num(r.se),
                                r.robust_se.to_string(),
                                num(r.hazard_ratio),
                                num(r.ci_lower),
                                num(r.ci_upper),
                                num(r.p_value),
                            ]
                        })
                        .collect::<Vec<_>>(),
                )?,
            }
            for r in &rows {
                println!(
                    "{}: HR {:.4} ({:.4}, {:.4}) p={:.4}",
                    r.term, r.hazard_ratio, r.ci_lower, r.ci_upper, r.p_value
                );
            }
        }
        Command::TestTruncation {
            input,
            conditional,
            confounders,
        } => {
            let cohort = ctx.load(input)?;
            let adjust: Vec<&str> = if *conditional {
                confounder_refs(confounders)
            } else {
                Vec::new()
            };
            let opts = CoxOptions {
                ties: ctx.ties(Ties::Breslow),
                ..CoxOptions::default()
            };
            let t = test_conditional_dependence_with(&cohort, &adjust, &opts)?;
            match g.format {
                Format::Json => ctx.write_json(
                    "test_truncation.json",
                    &json!({ "test": t, "provenance": ctx.provenance(String::new()) }),
                )?,
                Format::Csv => ctx.write_rows(
                    "test_truncation.csv",
                    &[
                        "coefficient",
                        "se",
                        "hazard_ratio",
                        "ci_lower",
                        "ci_upper",
                        "p_value",
                        "adjusted_for",
                    ],
                    &[vec![
                        num(t.coefficient),
                        num(t.se),
                        num(t.hazard_ratio),
                        num(t.ci_lower),
                        num(t.ci_upper),
                        num(t.p_value),
                        t.adjusted_for.join(";"),
                    ]],
                )?,
            }
            println!("entry-time HR {:.4}, p = {:.4}", t.hazard_ratio, t.p_value);
        }
        Command::Weights {
            truncated,
            reference,
            confounders,
            trim,
        } => {
            let cohort = ctx.load(truncated)?;
            let names = confounder_refs(confounders);
            let load = ctx.load_options()?;
            let reference = load_covariates_csv(reference, &names, &load.filters)?;
            let opts = WeightOptions {
                trim_quantile: *trim,
                ..WeightOptions::default()
            };
            let fit = estimate_weights_with(
                &LogisticRegression::default(),
                &cohort.covariate_matrix(&names)?,
                &reference,
                confounders,
                &opts,
            )?;
            match g.format {
                Format::Json => ctx.write_json(
                    "weights.json",
                    &json!({ "fit": fit, "provenance": ctx.provenance(String::new()) }),
                )?,
                Format::Csv => {
                    let mut buf = Vec::new();
                    write_cohort_csv(&cohort.with_weights(&fit.weights)?, &mut buf)?;
                    ctx.write("weights.csv", &buf)?;
                }
            }
            if g.plots {
                ctx.write("balance.svg", balance_svg(&fit.balance).as_bytes())?;
            }
            warn_balance(&fit.balance);
        }
        Command::Balance {
            truncated,
            reference,
            confounders,
            threshold,
        } => {
            let cohort = ctx.load(truncated)?;
            let names = confounder_refs(confounders);
            let load = ctx.load_options()?;
            let reference = load_covariates_csv(reference, &names, &load.filters)?;
            let report = balance_report(
                &cohort.covariate_matrix(&names)?,
                &reference,
                &cohort.weights(),
                confounders,
                *threshold,
            )?;
            match g.format {
                Format::Json => ctx.write_json(
                    "balance.json",
                    &json!({ "balance": report, "provenance": ctx.provenance(String::new()) }),
                )?,
                Format::Csv => ctx.write_rows(
                    "balance.csv",
                    &["covariate", "unweighted_smd", "weighted_smd", "flagged"],
                    &report
                        .covariates
                        .iter()
                        .map(|c| {
                            vec![
                                c.name.clone(),
                                num(c.unweighted_smd),
                                num(c.weighted_smd),
                                c.flagged.to_string(),
                            ]
                        })
                        .collect::<Vec<_>>(),
                )?,
            }
            if g.plots {
                ctx.write("balance.svg", balance_svg(&report).as_bytes())?;
            }
            warn_balance(&report);
        }
        Command::Analyze {
            truncated,
            reference,
            confounders,
            config,
        } => {
            let (mut section, hash) = match config {
                Some(p) => {
                    let (cfg, hash) = StudyConfig::load(p)?;
                    (cfg.analysis, hash)
                }
                None => (AnalysisSection::default(), String::new()),
            };
            if let Some(n) = g.bootstrap_n {
                section.bootstrap_resamples = n;
            }
            section.ties = ctx.ties(section.ties);
            let opts = AnalyzeOptions {
                seed,
                seed_generated,
                confounders: confounders.clone(),
                load: ctx.load_options()?,
                analysis: section,
                config_hash: hash,
            };
            let report = analyze(truncated, reference, &opts)?;
            ctx.write("analysis.json", &report_json(&report)?)?;
            if g.format == Format::Csv {
                let row = |name: &str, km: &truncsurv::io::report::KmSummary| {
                    vec![
                        name.to_string(),
                        opt(km.median),
                        opt(km.median_ci.as_ref().map(|c| c.lower)),
                        opt(km.median_ci.as_ref().map(|c| c.upper)),
                    ]
                };
                ctx.write_rows(
                    "analysis.csv",
                    &["estimator", "median", "ci_lower", "ci_upper"],
                    &[
                        row("naive_km", &report.naive_km),
                        row("adjusted_km", &report.adjusted_km),
                        row("weighted_km", &report.weighted_km),
                    ],
                )?;
            }
            if g.plots {
                for (name, svg) in report_plots(&report) {
                    ctx.write(&name, svg.as_bytes())?;
                }
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "medians: naive {} adjusted {} weighted {}",
                opt(report.naive_km.median),
                opt(report.adjusted_km.median),
                opt(report.weighted_km.median)
            );
        }
        Command::Simulate { config } => {
            let (cfg, hash) = StudyConfig::load(config)?;
            let (seed, seed_generated) = match (g.seed, cfg.seed) {
                (Some(s), _) => (s, false),
                (None, Some(s)) => (s, false),
                (None, None) => (seed, true),
            };
            let mut grid = cfg.grid(seed);
            if let Some(n) = g.bootstrap_n {
                grid.harness.bootstrap_resamples = n;
            }
            grid.harness.ties = ctx.ties(grid.harness.ties);
            let ctx = Ctx {
                g,
                seed,
                seed_generated,
            };
            let results = truncsurv::harness::run_grid(&grid, Some(&g.out))?;
            ctx.write_json(
                "summary.json",
                &json!({ "scenarios": results, "provenance": ctx.provenance(hash) }),
            )?;
            ctx.write_rows("summary.csv", &SUMMARY_HEADER, &summary_rows(&results))?;
            if g.plots {
                for (name, svg) in grid_plots(&cfg, &results) {
                    ctx.write(&name, svg.as_bytes())?;
                }
            }
            let done = results.iter().filter(|r| r.summary().is_some()).count();
            println!(
                "{} scenarios ({} completed, {} unachievable)",
                results.len(),
                done,
                results.len() - done
            );
        }
    }
    Ok(())
}

fn warn_balance(report: &truncsurv::BalanceReport) {
    for c in report.covariates.iter().filter(|c| c.flagged) {
        eprintln!(
            "warning: weighted SMD of `{}` is {} (threshold {})",
            c.name, c.weighted_smd, report.threshold
        );
    }
}

const SUMMARY_HEADER: [&str; 14] = [
    "scenario",
    "target_truncation",
    "entry_hr",
    "confounder_hr",
    "status",
    "estimator",
    "relative_bias",
    "relative_bias_mc_se",
    "log_bias",
    "coverage",
    "coverage_mc_se",
    "mean_truth",
    "n_ok",
    "n_failures",
];

fn summary_rows(results: &[ScenarioResult]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in results {
        let s = &r.scenario;
        let head = vec![
            r.index.to_string(),
            num(s.target_truncation),
            num(s.beta_entry.exp()),
            num(s.beta_z.exp()),
        ];
        match &r.outcome {
            ScenarioOutcome::Unachievable { .. } => {
                let mut row = head.clone();
                row.push("unachievable".into());
                row.extend(std::iter::repeat_n(String::new(), SUMMARY_HEADER.len() - row.len()));
                rows.push(row);
            }
            ScenarioOutcome::Completed { summary, .. } => {
                for est in Estimator::ALL {
                    let mut row = head.clone();
                    row.push("completed".into());
                    row.push(est.to_string());
                    match summary.estimators.get(&est) {
                        Some(e) => row.extend([
                            num(e.relative_bias),
                            num(e.relative_bias_mc_se),
                            num(e.log_bias),
                            opt(e.coverage),
                            opt(e.coverage_mc_se),
                            num(e.mean_truth),
                            e.n_ok.to_string(),
                            e.n_failures.to_string(),
                        ]),
                        None => {
                            row.extend(std::iter::repeat_n(String::new(), 6));
                            row.extend(["0".to_string(), summary.n_iterations.to_string()]);
                        }
                    }
                    rows.push(row);
                }
            }
        }
    }
    rows
}

/// Bias and coverage against the truncation target, one chart per
/// (entry HR, confounder HR) combination.
fn grid_plots(cfg: &StudyConfig, results: &[ScenarioResult]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (i, &entry_hr) in cfg.grid.entry_hr.iter().enumerate() {
        for (j, &conf_hr) in cfg.grid.confounder_hr.iter().enumerate() {
            let cell: Vec<&ScenarioResult> = results
                .iter()
                .filter(|r| r.scenario.beta_entry == entry_hr.ln() && r.scenario.beta_z == conf_hr.ln())
                .collect();
            let series = |metric: fn(&truncsurv::harness::EstimatorSummary) -> Option<f64>| {
                Estimator::ALL
                    .iter()
                    .map(|&est| LineSeries {
                        label: est.to_string(),
                        points: cell
                            .iter()
                            .filter_map(|r| {
                                let v = metric(r.summary()?.estimators.get(&est)?)?;
                                Some((r.scenario.target_truncation, v))
                            })
                            .collect(),
                    })
                    .filter(|s| !s.points.is_empty())
                    .collect::<Vec<_>>()
            };
            let title = format!("entry HR {entry_hr}, confounder HR {conf_hr}");
            out.push((
                format!("bias_entry{i}_confounder{j}.svg"),
                line_svg(
                    &title,
                    "P(Y > E | trt = 0)",
                    "relative bias",
                    &series(|e| Some(e.relative_bias)),
                    Some(0.0),
                ),
            ));
            out.push((
                format!("coverage_entry{i}_confounder{j}.svg"),
                line_svg(
                    &title,
                    "P(Y > E | trt = 0)",
                    "coverage",
                    &series(|e| e.coverage),
                    Some(0.95),
                ),
            ));
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
