//! TOML study configuration.
//!
//! Effects are given on the hazard-ratio scale (`entry_hr`, `confounder_hr`,
//! `trt_hr`) and converted to log coefficients. Errors name the offending
//! field path, e.g. `grid.target_truncation[3]`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cox::Ties;
use crate::error::{Error, Result};
use crate::harness::{GridSpec, HarnessOptions};
use crate::simgen::SimScenario;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub version: u32,
    pub seed: Option<u64>,
    #[serde(default)]
    pub harness: HarnessSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessSection {
    pub iterations: usize,
    pub bootstrap_resamples: usize,
    pub level: f64,
    pub ties: Ties,
}

impl Default for HarnessSection {
    fn default() -> Self {
        let h = HarnessOptions::default();
        Self {
            iterations: h.n_iterations,
            bootstrap_resamples: h.bootstrap_resamples,
            level: h.level,
            ties: h.ties,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub p_entry_at_baseline: f64,
    pub trt_hr: f64,
    pub lambda_bh: f64,
    pub n_rw_expected: usize,
    pub n_trial: usize,
    pub z2_sd: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = SimScenario::default();
        Self {
            p_entry_at_baseline: s.p_entry_at_baseline,
            trt_hr: s.beta_trt.exp(),
            lambda_bh: s.lambda_bh,
            n_rw_expected: s.n_rw_expected,
            n_trial: s.n_trial,
            z2_sd: s.z2_sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub target_truncation: Vec<f64>,
    pub entry_hr: Vec<f64>,
    pub confounder_hr: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            target_truncation: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            entry_hr: vec![0.5, 0.8, 1.0],
            confounder_hr: vec![1.0, 1.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub bootstrap_resamples: usize,
    pub level: f64,
    pub balance_threshold: f64,
    pub trim_quantile: Option<f64>,
    pub ties: Ties,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            bootstrap_resamples: 1000,
            level: 0.95,
            balance_threshold: crate::density_ratio::DEFAULT_BALANCE_THRESHOLD,
            trim_quantile: None,
            ties: Ties::Breslow,
        }
    }
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: None,
            harness: HarnessSection::default(),
            scenario: ScenarioSection::default(),
            grid: GridSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

fn bad(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn check_prob(field: &str, v: f64, open_low: bool) -> Result<()> {
    let ok = if open_low {
        v > 0.0 && v < 1.0
    } else {
        (0.0..1.0).contains(&v)
    };
    if ok {
        Ok(())
    } else {
        Err(bad(
            field,
            format!("{v} is not a probability in {}0, 1)", if open_low { "(" } else { "[" }),
        ))
    }
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("{v} must be positive and finite")))
    }
}

fn check_list(field: &str, values: &[f64], check: impl Fn(&str, f64) -> Result<()>) -> Result<()> {
    if values.is_empty() {
        return Err(bad(field, "must not be empty"));
    }
    for (i, &v) in values.iter().enumerate() {
        check(&format!("{field}[{i}]"), v)?;
    }
    Ok(())
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: StudyConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<root>".to_string() } else { path };
            let inner = e.into_inner();
            bad(field, inner.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        Ok((cfg, sha256_hex(text.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(bad(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        let h = &self.harness;
        if h.iterations == 0 {
            return Err(bad("harness.iterations", "must be at least 1"));
        }
        check_prob("harness.level", h.level, true)?;
        let s = &self.scenario;
        check_prob("scenario.p_entry_at_baseline", s.p_entry_at_baseline, false)?;
        check_positive("scenario.trt_hr", s.trt_hr)?;
        check_positive("scenario.lambda_bh", s.lambda_bh)?;
        check_positive("scenario.z2_sd", s.z2_sd)?;
        if s.n_rw_expected == 0 {
            return Err(bad("scenario.n_rw_expected", "must be at least 1"));
        }
        if s.n_trial == 0 {
            return Err(bad("scenario.n_trial", "must be at least 1"));
        }
        check_list("grid.target_truncation", &self.grid.target_truncation, |f, v| {
            check_prob(f, v, true)
        })?;
        check_list("grid.entry_hr", &self.grid.entry_hr, check_positive)?;
        check_list("grid.confounder_hr", &self.grid.confounder_hr, check_positive)?;
        let a = &self.analysis;
        check_prob("analysis.level", a.level, true)?;
        if !(a.balance_threshold > 0.0) {
            return Err(bad("analysis.balance_threshold", "must be positive"));
        }
        if let Some(q) = a.trim_quantile {
            check_prob("analysis.trim_quantile", q, true)?;
        }
        Ok(())
    }

    pub fn base_scenario(&self) -> SimScenario {
        let s = &self.scenario;
        SimScenario {
            p_entry_at_baseline: s.p_entry_at_baseline,
            beta_trt: s.trt_hr.ln(),
            lambda_bh: s.lambda_bh,
            n_rw_expected: s.n_rw_expected,
            n_trial: s.n_trial,
            z2_sd: s.z2_sd,
            ..SimScenario::default()
        }
    }

    pub fn grid(&self, master_seed: u64) -> GridSpec {
        GridSpec {
            base: self.base_scenario(),
            target_truncation: self.grid.target_truncation.clone(),
            beta_entry: self.grid.entry_hr.iter().map(|h| h.ln()).collect(),
            beta_z: self.grid.confounder_hr.iter().map(|h| h.ln()).collect(),
            master_seed,
            harness: HarnessOptions {
                n_iterations: self.harness.iterations,
                bootstrap_resamples: self.harness.bootstrap_resamples,
                level: self.harness.level,
                ties: self.harness.ties,
            },
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
