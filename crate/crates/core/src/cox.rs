//! Weighted Cox proportional-hazards regression with delayed entry.
//!
//! The weighted log partial likelihood is
//!
//! ```text
//! l(b) = sum_{i: d_i = 1} w_i [ x_i'b - log sum_{j in R(t_i)} v_j exp(x_j'b) ]
//! ```
//!
//! where `v_j = w_j` (default) or `v_j = 1` with `inner_weights = false`.
//! Risk sets are left-open in entry time: `R(t) = {j : E_j < t <= Y_j}`, so a
//! subject entering exactly at `t` is not at risk at `t`. Without risk-set
//! adjustment all entry times are taken as zero.
//!
//! Fitting is Newton-Raphson from `b = 0` with step halving. The robust
//! covariance is the score-residual sandwich `I^-1 (sum_j L_j L_j') I^-1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cohort::{check_weights, normalize_weights, Cohort};
use crate::error::{Error, Result};
use crate::stats::{standard_normal_quantile, two_sided_p, NeumaierSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ties {
    #[default]
    Breslow,
    Efron,
}

impl std::str::FromStr for Ties {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "breslow" => Ok(Ties::Breslow),
            "efron" => Ok(Ties::Efron),
            other => Err(Error::Precondition(format!("unknown ties method `{other}`"))),
        }
    }
}

/// One column of the Cox design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    /// Arm indicator, 1 for the reference (non-truncated) arm.
    Arm,
    /// The record's entry time as a covariate.
    EntryTime,
    Covariate(String),
}

impl Term {
    /// `arm`/`trt` and `entry`/`entry_time` are reserved; anything else names
    /// a covariate column.
    pub fn parse(name: &str) -> Term {
        match name.trim() {
            "arm" | "trt" => Term::Arm,
            "entry" | "entry_time" => Term::EntryTime,
            other => Term::Covariate(other.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Term::Arm => "arm",
            Term::EntryTime => "entry_time",
            Term::Covariate(n) => n,
        }
    }

    pub fn parse_list(s: &str) -> Vec<Term> {
        s.split(',').filter(|t| !t.trim().is_empty()).map(Term::parse).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxOptions {
    pub ties: Ties,
    pub risk_set_adjust: bool,
    pub inner_weights: bool,
    pub max_iter: usize,
    pub tolerance: f64,
    pub max_halvings: usize,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            ties: Ties::Breslow,
            risk_set_adjust: true,
            inner_weights: true,
            max_iter: 50,
            tolerance: 1e-8,
            max_halvings: 10,
        }
    }
}

const DIVERGENCE_BOUND: f64 = 20.0;
const LOGLIK_NOISE: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub terms: Vec<Term>,
    pub coefficients: Vec<f64>,
    pub model_covariance: DMatrix<f64>,
    pub robust_covariance: DMatrix<f64>,
    pub log_partial_likelihood: f64,
    pub n_iterations: usize,
    pub converged: bool,
    /// Max-norm of the score divided by the mean record weight.
    pub gradient_max_norm: f64,
    /// True when the fit used non-constant or non-unit weights.
    pub weighted: bool,
    pub n_records: usize,
    pub n_events: usize,
    pub options: CoxOptions,
}

impl CoxFit {
    pub fn term_index(&self, name: &str) -> Option<usize> {
        self.terms.iter().position(|t| t.name() == name)
    }

    pub fn model_se(&self, k: usize) -> f64 {
        self.model_covariance[(k, k)].sqrt()
    }

    pub fn robust_se(&self, k: usize) -> f64 {
        self.robust_covariance[(k, k)].sqrt()
    }

    /// Robust SE for weighted fits, model-based otherwise.
    pub fn default_se(&self, k: usize) -> f64 {
        if self.weighted {
            self.robust_se(k)
        } else {
            self.model_se(k)
        }
    }
}

/// Per-event-time quantities needed for score residuals.
struct EventStep {
    time: f64,
    /// sum_k m_k / S0_k
    a: f64,
    /// the same, for subjects dying at this time (Efron down-weighting)
    a_death: f64,
    b: Vec<f64>,
    b_death: Vec<f64>,
    /// event-weighted mean of the substep covariate means
    xbar_death: Vec<f64>,
}

/// The weighted partial likelihood of one cohort and design.
///
/// Exposed so the likelihood, score and information can be checked
/// independently of the optimizer.
pub struct CoxProblem {
    n: usize,
    p: usize,
    /// centered, row-major
    x: Vec<f64>,
    start: Vec<f64>,
    stop: Vec<f64>,
    event: Vec<bool>,
    w: Vec<f64>,
    risk_w: Vec<f64>,
    ties: Ties,
    /// record indices by descending stop time
    by_stop: Vec<usize>,
    /// record indices by descending start time
    by_start: Vec<usize>,
    /// distinct event times, ascending, each with the dying records
    event_groups: Vec<(f64, Vec<usize>)>,
    mean_weight: f64,
    weighted: bool,
    /// factor removed from the caller's weights
    scale: f64,
    inner_weights: bool,
}

struct Eval {
    loglik: f64,
    event_mass: f64,
    gradient: DVector<f64>,
    information: DMatrix<f64>,
    steps: Vec<EventStep>,
}

impl CoxProblem {
    pub fn new(cohort: &Cohort, terms: &[Term], weights: Option<&[f64]>, opts: &CoxOptions) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Precondition("Cox model needs at least one term".into()));
        }
        let raw_w = match weights {
            Some(w) => {
                check_weights(w, cohort.len())?;
                w.to_vec()
            }
            None => cohort.weights(),
        };
        let weighted = raw_w.iter().any(|&w| w != 1.0);
        let (raw_w, scale) = normalize_weights(&raw_w);
        let cols: Vec<Option<usize>> = terms
            .iter()
            .map(|t| match t {
                Term::Covariate(name) => cohort.covariate_index(name).map(Some),
                _ => Ok(None),
            })
            .collect::<Result<_>>()?;

        let p = terms.len();
        let mut x = Vec::new();
        let (mut start, mut stop, mut event, mut w) = (vec![], vec![], vec![], vec![]);
        for (r, &wi) in cohort.records().iter().zip(&raw_w) {
            let entry = if opts.risk_set_adjust { r.entry_time } else { 0.0 };
            // never at risk under the left-open convention
            if entry >= r.observed_time {
                continue;
            }
            for (t, col) in terms.iter().zip(&cols) {
                x.push(match t {
                    Term::Arm => r.arm.indicator(),
                    Term::EntryTime => r.entry_time,
                    Term::Covariate(_) => r.covariates[col.unwrap()],
                });
            }
            start.push(entry);
            stop.push(r.observed_time);
            event.push(r.event);
            w.push(wi);
        }
        let n = stop.len();
        if !event.iter().any(|&d| d) {
            return Err(Error::Precondition("Cox model needs at least one event".into()));
        }
        center_columns(&mut x, n, p);
        check_full_rank(&x, n, p)?;

        let risk_w = if opts.inner_weights { w.clone() } else { vec![1.0; n] };
        let mut by_stop: Vec<usize> = (0..n).collect();
        by_stop.sort_by(|&a, &b| stop[b].total_cmp(&stop[a]));
        let mut by_start: Vec<usize> = (0..n).collect();
        by_start.sort_by(|&a, &b| start[b].total_cmp(&start[a]));

        let mut deaths: Vec<usize> = (0..n).filter(|&i| event[i]).collect();
        deaths.sort_by(|&a, &b| stop[a].total_cmp(&stop[b]));
        let mut event_groups: Vec<(f64, Vec<usize>)> = Vec::new();
        for i in deaths {
            match event_groups.last_mut() {
                Some((t, g)) if *t == stop[i] => g.push(i),
                _ => event_groups.push((stop[i], vec![i])),
            }
        }
        let mean_weight = w.iter().sum::<f64>() / n as f64;
        Ok(Self {
            n,
            p,
            x,
            start,
            stop,
            event,
            w,
            risk_w,
            ties: opts.ties,
            by_stop,
            by_start,
            event_groups,
            mean_weight,
            weighted,
            scale,
            inner_weights: opts.inner_weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&d| d).count()
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn log_likelihood(&self, beta: &[f64]) -> f64 {
        self.caller_loglik(&self.evaluate(beta, false))
    }

    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        (self.evaluate(beta, false).gradient * self.scale).as_slice().to_vec()
    }

    /// Observed information (negative Hessian).
    pub fn information(&self, beta: &[f64]) -> DMatrix<f64> {
        self.evaluate(beta, false).information * self.scale
    }

    /// Log-likelihood in the caller's weight units.
    fn caller_loglik(&self, e: &Eval) -> f64 {
        let risk_shift = if self.inner_weights {
            self.scale.ln() * e.event_mass
        } else {
            0.0
        };
        self.scale * (e.loglik - risk_shift)
    }

    fn linear_predictors(&self, beta: &[f64]) -> (Vec<f64>, f64) {
        let eta: Vec<f64> = (0..self.n)
            .map(|i| self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect();
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (eta, shift)
    }

    fn evaluate(&self, beta: &[f64], keep_steps: bool) -> Eval {
        let p = self.p;
        let (eta, shift) = self.linear_predictors(beta);
        let risk: Vec<f64> = eta
            .iter()
            .zip(&self.risk_w)
            .map(|(e, v)| v * (e - shift).exp())
            .collect();

        // risk-set moments are updated by additions and removals, so they
        // are summed with compensation
        let mut m0 = NeumaierSum::default();
        let mut m1 = vec![NeumaierSum::default(); p];
        let mut m2 = vec![NeumaierSum::default(); p * p];
        let accumulate = |i: usize, sign: f64, s0: &mut NeumaierSum, s1: &mut [NeumaierSum], s2: &mut [NeumaierSum]| {
            let r = sign * risk[i];
            let xi = self.row(i);
            s0.add(r);
            for a in 0..p {
                s1[a].add(r * xi[a]);
                for b in 0..=a {
                    s2[a * p + b].add(r * xi[a] * xi[b]);
                }
            }
        };

        let mut loglik = 0.0;
        let mut event_mass = 0.0;
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        let mut steps = Vec::new();
        let (mut add_ptr, mut rm_ptr) = (0, 0);
        for (t, group) in self.event_groups.iter().rev() {
            let t = *t;
            while add_ptr < self.n && self.stop[self.by_stop[add_ptr]] >= t {
                accumulate(self.by_stop[add_ptr], 1.0, &mut m0, &mut m1, &mut m2);
                add_ptr += 1;
            }
            while rm_ptr < self.n && self.start[self.by_start[rm_ptr]] >= t {
                accumulate(self.by_start[rm_ptr], -1.0, &mut m0, &mut m1, &mut m2);
                rm_ptr += 1;
            }
            let mut n0 = NeumaierSum::default();
            let mut n1 = vec![NeumaierSum::default(); p];
            let mut n2 = vec![NeumaierSum::default(); p * p];
            let mut event_w = 0.0;
            for &i in group {
                accumulate(i, 1.0, &mut n0, &mut n1, &mut n2);
                event_w += self.w[i];
                loglik += self.w[i] * eta[i];
                for (a, xa) in self.row(i).iter().enumerate() {
                    grad[a] += self.w[i] * xa;
                }
            }
            event_mass += event_w;
            let (s0, d0) = (m0.value(), n0.value());
            let s1: Vec<f64> = m1.iter().map(NeumaierSum::value).collect();
            let d1: Vec<f64> = n1.iter().map(NeumaierSum::value).collect();
            let s2: Vec<f64> = m2.iter().map(NeumaierSum::value).collect();
            let d2: Vec<f64> = n2.iter().map(NeumaierSum::value).collect();
            let d = group.len();
            let substeps: Vec<(f64, f64)> = match self.ties {
                Ties::Breslow => vec![(0.0, event_w)],
                Ties::Efron => (0..d).map(|k| (k as f64 / d as f64, event_w / d as f64)).collect(),
            };
            let mut step = EventStep {
                time: t,
                a: 0.0,
                a_death: 0.0,
                b: vec![0.0; p],
                b_death: vec![0.0; p],
                xbar_death: vec![0.0; p],
            };
            for (frac, mass) in substeps {
                let s0k = s0 - frac * d0;
                loglik -= mass * (s0k.ln() + shift);
                let xbar: Vec<f64> = (0..p).map(|a| (s1[a] - frac * d1[a]) / s0k).collect();
                for a in 0..p {
                    grad[a] -= mass * xbar[a];
                    for b in 0..=a {
                        let v = mass * ((s2[a * p + b] - frac * d2[a * p + b]) / s0k - xbar[a] * xbar[b]);
                        info[(a, b)] += v;
                        if a != b {
                            info[(b, a)] += v;
                        }
                    }
                }
                if keep_steps {
                    step.a += mass / s0k;
                    step.a_death += mass * (1.0 - frac) / s0k;
                    for a in 0..p {
                        step.b[a] += mass * xbar[a] / s0k;
                        step.b_death[a] += mass * (1.0 - frac) * xbar[a] / s0k;
                        step.xbar_death[a] += mass * xbar[a] / event_w;
                    }
                }
            }
            if keep_steps {
                steps.push(step);
            }
        }
        steps.reverse();
        Eval {
            loglik,
            event_mass,
            gradient: grad,
            information: info,
            steps,
        }
    }

    /// Per-record score contributions `L_j`; they sum to the score.
    fn score_residuals(&self, beta: &[f64], eval: &Eval) -> Vec<Vec<f64>> {
        let p = self.p;
        let (eta, shift) = self.linear_predictors(beta);
        let m = eval.steps.len();
        let times: Vec<f64> = eval.steps.iter().map(|s| s.time).collect();
        let mut cum_a = vec![0.0; m + 1];
        let mut cum_b = vec![vec![0.0; p]; m + 1];
        for (l, s) in eval.steps.iter().enumerate() {
            cum_a[l + 1] = cum_a[l] + s.a;
            for a in 0..p {
                cum_b[l + 1][a] = cum_b[l][a] + s.b[a];
            }
        }
        (0..self.n)
            .map(|j| {
                let lo = times.partition_point(|&t| t <= self.start[j]);
                let hi = times.partition_point(|&t| t <= self.stop[j]);
                let mut a_sum = cum_a[hi] - cum_a[lo];
                let mut b_sum: Vec<f64> = (0..p).map(|a| cum_b[hi][a] - cum_b[lo][a]).collect();
                let xj = self.row(j);
                let mut l = vec![0.0; p];
                if self.event[j] {
                    let s = &eval.steps[hi - 1];
                    debug_assert_eq!(s.time, self.stop[j]);
                    a_sum += s.a_death - s.a;
                    for a in 0..p {
                        b_sum[a] += s.b_death[a] - s.b[a];
                        l[a] += self.w[j] * (xj[a] - s.xbar_death[a]);
                    }
                }
                let r = self.risk_w[j] * (eta[j] - shift).exp();
                for a in 0..p {
                    l[a] -= r * (xj[a] * a_sum - b_sum[a]);
                }
                l
            })
            .collect()
    }

    fn sandwich(&self, beta: &[f64], bread: &DMatrix<f64>) -> DMatrix<f64> {
        let eval = self.evaluate(beta, true);
        let resid = self.score_residuals(beta, &eval);
        let p = self.p;
        let mut meat = DMatrix::zeros(p, p);
        for l in &resid {
            let v = DVector::from_column_slice(l);
            meat += &v * v.transpose();
        }
        let v = bread * meat * bread;
        symmetrize(v)
    }
}

fn center_columns(x: &mut [f64], n: usize, p: usize) {
    for a in 0..p {
        let mean = (0..n).map(|i| x[i * p + a]).sum::<f64>() / n as f64;
        for i in 0..n {
            x[i * p + a] -= mean;
        }
    }
}

fn check_full_rank(x: &[f64], n: usize, p: usize) -> Result<()> {
    if n <= p {
        return Err(Error::RankDeficientDesign);
    }
    let xm = DMatrix::from_row_slice(n, p, x);
    let gram = xm.transpose() * &xm;
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let max = eig.iter().copied().fold(0.0, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-10 * max {
        return Err(Error::RankDeficientDesign);
    }
    Ok(())
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| symmetrize(c.inverse()))
        .ok_or(Error::RankDeficientDesign)
}

/// Maximizes the weighted partial likelihood.
///
/// `weights` override record weights when given.
pub fn fit_cox(cohort: &Cohort, terms: &[Term], weights: Option<&[f64]>, opts: &CoxOptions) -> Result<CoxFit> {
    let problem = CoxProblem::new(cohort, terms, weights, opts)?;
    let p = problem.dim();
    let mut beta = vec![0.0; p];
    let mut eval = problem.evaluate(&beta, false);
    let mut iterations = 0;
    let grad_norm = |e: &Eval| e.gradient.amax() / problem.mean_weight;
    loop {
        if grad_norm(&eval) < opts.tolerance {
            break;
        }
        if iterations == opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                gradient: grad_norm(&eval),
            });
        }
        iterations += 1;
        let step = eval
            .information
            .clone()
            .cholesky()
            .ok_or(Error::RankDeficientDesign)?
            .solve(&eval.gradient);
        let mut scale = 1.0;
        let mut halvings = 0;
        let (candidate, cand_eval) = loop {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let e = problem.evaluate(&cand, false);
            // near the optimum the true gain is below rounding noise
            let slack = LOGLIK_NOISE * (1.0 + eval.loglik.abs());
            if (e.loglik.is_finite() && e.loglik >= eval.loglik - slack) || halvings == opts.max_halvings {
                break (cand, e);
            }
            scale *= 0.5;
            halvings += 1;
        };
        if let Some(k) = candidate.iter().position(|b| b.abs() > DIVERGENCE_BOUND) {
            return Err(Error::MonotoneLikelihood {
                term: terms[k].name().to_string(),
            });
        }
        beta = candidate;
        eval = cand_eval;
    }
    let bread = invert_spd(&eval.information)?;
    let robust_covariance = problem.sandwich(&beta, &bread);
    let model_covariance = bread / problem.scale;
    Ok(CoxFit {
        terms: terms.to_vec(),
        coefficients: beta,
        model_covariance,
        robust_covariance,
        log_partial_likelihood: problem.caller_loglik(&eval),
        n_iterations: iterations,
        converged: true,
        gradient_max_norm: grad_norm(&eval),
        weighted: problem.weighted,
        n_records: problem.n,
        n_events: problem.n_events(),
        options: opts.clone(),
    })
}

/// Score-residual sandwich covariance of a converged fit under `weights`.
pub fn robust_variance(fit: &CoxFit, cohort: &Cohort, weights: &[f64]) -> Result<DMatrix<f64>> {
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.n_iterations,
            gradient: fit.gradient_max_norm,
        });
    }
    let problem = CoxProblem::new(cohort, &fit.terms, Some(weights), &fit.options)?;
    let info = problem.evaluate(&fit.coefficients, false).information;
    let bread = invert_spd(&info)?;
    Ok(problem.sandwich(&fit.coefficients, &bread))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardRatio {
    pub term: String,
    pub coefficient: f64,
    pub se: f64,
    pub robust_se: bool,
    pub hazard_ratio: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
}

/// Wald hazard ratios; robust SEs for weighted fits, model SEs otherwise.
pub fn hazard_ratio_summary(fit: &CoxFit, level: f64) -> Vec<HazardRatio> {
    (0..fit.coefficients.len())
        .map(|k| {
            wald_row(
                fit.terms[k].name(),
                fit.coefficients[k],
                fit.default_se(k),
                fit.weighted,
                level,
            )
        })
        .collect()
}

pub(crate) fn wald_row(term: &str, beta: f64, se: f64, robust_se: bool, level: f64) -> HazardRatio {
    let z = standard_normal_quantile(0.5 + level / 2.0);
    HazardRatio {
        term: term.to_string(),
        coefficient: beta,
        se,
        robust_se,
        hazard_ratio: beta.exp(),
        ci_lower: (beta - z * se).exp(),
        ci_upper: (beta + z * se).exp(),
        p_value: two_sided_p(beta / se),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{validate_cohort, Arm, SurvivalRecord};

    fn rec(e: f64, y: f64, d: bool, x: f64) -> SurvivalRecord {
        SurvivalRecord::new(e, y, d).with_covariates(vec![x])
    }

    fn four() -> Cohort {
        validate_cohort(
            vec![
                rec(0.0, 1.0, true, 1.0),
                rec(0.0, 2.0, true, 0.0),
                rec(0.0, 3.0, true, 1.0),
                rec(0.0, 4.0, false, 0.0),
            ],
            true,
        )
        .unwrap()
    }

    /// Textbook Breslow partial likelihood by direct enumeration.
    fn brute_loglik(c: &Cohort, beta: f64) -> f64 {
        let r = c.records();
        r.iter()
            .filter(|i| i.event)
            .map(|i| {
                let denom: f64 = r
                    .iter()
                    .filter(|j| j.entry_time < i.observed_time && i.observed_time <= j.observed_time)
                    .map(|j| (beta * j.covariates[0]).exp())
                    .sum();
                beta * i.covariates[0] - denom.ln()
            })
            .sum()
    }

    #[test]
    fn four_subject_grid_search() {
        let c = four();
        let fit = fit_cox(&c, &[Term::parse("z1")], None, &CoxOptions::default()).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..=100_000 {
            let b = -5.0 + k as f64 * 1e-4;
            let ll = brute_loglik(&c, b);
            if ll > best.0 {
                best = (ll, b);
            }
        }
        assert!((fit.coefficients[0] - best.1).abs() < 1e-3);
        assert!((fit.log_partial_likelihood - best.0).abs() < 1e-6);
        assert!(fit.converged && fit.gradient_max_norm < 1e-8);
    }

    #[test]
    fn loglik_matches_brute_force_with_delayed_entry() {
        let c = validate_cohort(
            vec![
                rec(0.0, 1.0, true, 0.3),
                rec(0.5, 2.0, true, -1.0),
                rec(1.0, 3.0, false, 0.7),
                rec(2.0, 4.0, true, 1.2),
                rec(0.0, 5.0, true, 0.0),
            ],
            true,
        )
        .unwrap();
        let problem = CoxProblem::new(&c, &[Term::parse("z1")], None, &CoxOptions::default()).unwrap();
        for b in [-1.0, 0.0, 0.4, 2.0] {
            assert!((problem.log_likelihood(&[b]) - brute_loglik(&c, b)).abs() < 1e-10);
        }
    }

    #[test]
    fn entry_at_event_time_is_not_at_risk() {
        // record 1 enters exactly at record 0's death
        let c = validate_cohort(
            vec![
                rec(0.0, 2.0, true, 1.0),
                rec(2.0, 3.0, true, 0.0),
                rec(0.0, 4.0, false, 0.0),
            ],
            true,
        )
        .unwrap();
        let problem = CoxProblem::new(&c, &[Term::parse("z1")], None, &CoxOptions::default()).unwrap();
        let b = 0.3_f64;
        // risk set at t=2: {0, 2}; at t=3: {1, 2}
        let expected = b - (b.exp() + 1.0).ln() + 0.0 - 2f64.ln();
        assert!((problem.log_likelihood(&[b]) - expected).abs() < 1e-12);
    }

    #[test]
    fn efron_matches_hand_computation() {
        // two tied deaths at t=1 among three subjects
        let c = validate_cohort(
            vec![
                rec(0.0, 1.0, true, 1.0),
                rec(0.0, 1.0, true, 0.0),
                rec(0.0, 2.0, false, 0.0),
            ],
            true,
        )
        .unwrap();
        let opts = CoxOptions {
            ties: Ties::Efron,
            ..Default::default()
        };
        let problem = CoxProblem::new(&c, &[Term::parse("z1")], None, &opts).unwrap();
        let b = 0.5_f64;
        let s0 = b.exp() + 2.0;
        let dsum = b.exp() + 1.0;
        let expected = b - s0.ln() - (s0 - 0.5 * dsum).ln();
        assert!((problem.log_likelihood(&[b]) - expected).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_and_unknown_terms() {
        let c = validate_cohort(
            vec![
                SurvivalRecord::new(0.0, 1.0, true).with_covariates(vec![1.0, 2.0]),
                SurvivalRecord::new(0.0, 2.0, true).with_covariates(vec![2.0, 4.0]),
                SurvivalRecord::new(0.0, 3.0, false).with_covariates(vec![3.0, 6.0]),
            ],
            true,
        )
        .unwrap();
        let err = fit_cox(&c, &Term::parse_list("z1,z2"), None, &CoxOptions::default()).unwrap_err();
        assert_eq!(err, Error::RankDeficientDesign);
        let err = fit_cox(&c, &[Term::parse("nope")], None, &CoxOptions::default()).unwrap_err();
        assert_eq!(err, Error::UnknownCovariate("nope".into()));
    }

    #[test]
    fn separation_is_monotone_likelihood() {
        // every death has x=1, every survivor x=0, and deaths come first
        let mut records: Vec<_> = (1..=10).map(|k| rec(0.0, k as f64, true, 1.0)).collect();
        records.extend((11..=20).map(|k| rec(0.0, k as f64, false, 0.0)));
        let c = validate_cohort(records, true).unwrap();
        let err = fit_cox(&c, &[Term::parse("z1")], None, &CoxOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::MonotoneLikelihood { .. } | Error::NonConvergence { .. }
        ));
    }

    #[test]
    fn summary_formula() {
        let row = wald_row("arm", 0.8f64.ln(), 0.1, false, 0.95);
        assert!((row.hazard_ratio - 0.8).abs() < 1e-12);
        assert!((row.ci_lower - 0.8 * (-0.196f64).exp()).abs() < 1e-3);
        assert!((row.ci_upper - 0.8 * 0.196f64.exp()).abs() < 1e-3);
        assert!((row.ci_lower - 0.658).abs() < 1e-3 && (row.ci_upper - 0.973).abs() < 1e-3);
        let zero = wald_row("arm", 0.0, 0.37, false, 0.95);
        assert_eq!(zero.hazard_ratio, 1.0);
        assert!((zero.ci_lower.ln() + zero.ci_upper.ln()).abs() < 1e-12);
        assert_eq!(zero.p_value, 1.0);
    }

    #[test]
    fn arm_term_uses_reference_indicator() {
        let c = validate_cohort(
            vec![
                SurvivalRecord::new(0.0, 1.0, true).with_arm(Arm::Reference),
                SurvivalRecord::new(0.0, 2.0, true),
                SurvivalRecord::new(0.0, 3.0, true).with_arm(Arm::Reference),
                SurvivalRecord::new(0.0, 4.0, false),
            ],
            true,
        )
        .unwrap();
        let by_arm = fit_cox(&c, &[Term::Arm], None, &CoxOptions::default()).unwrap();
        let by_cov = fit_cox(&four(), &[Term::parse("z1")], None, &CoxOptions::default()).unwrap();
        assert!((by_arm.coefficients[0] - by_cov.coefficients[0]).abs() < 1e-12);
    }

    #[test]
    fn score_residuals_sum_to_score() {
        let c = validate_cohort(
            vec![
                rec(0.0, 1.0, true, 0.3).with_weight(1.5),
                rec(0.5, 2.0, true, -1.0),
                rec(0.5, 2.0, true, 0.4).with_weight(0.7),
                rec(1.0, 3.0, false, 0.7),
                rec(2.0, 4.0, true, 1.2).with_weight(2.0),
                rec(0.0, 5.0, true, 0.0),
            ],
            true,
        )
        .unwrap();
        for ties in [Ties::Breslow, Ties::Efron] {
            let opts = CoxOptions {
                ties,
                ..Default::default()
            };
            let problem = CoxProblem::new(&c, &[Term::parse("z1")], None, &opts).unwrap();
            let beta = [0.37];
            let eval = problem.evaluate(&beta, true);
            let total: f64 = problem.score_residuals(&beta, &eval).iter().map(|l| l[0]).sum();
            assert!((total - eval.gradient[0]).abs() < 1e-12, "{ties:?}");
        }
    }

    #[test]
    fn power_of_two_weight_scaling_is_exact() {
        let recs = || {
            vec![
                rec(0.0, 1.0, true, 0.3).with_weight(1.5),
                rec(0.5, 2.0, true, -1.0).with_weight(0.9),
                rec(0.5, 2.5, true, 0.4).with_weight(0.7),
                rec(1.0, 3.0, false, 0.7).with_weight(1.1),
                rec(2.0, 4.0, true, 1.2).with_weight(2.0),
                rec(0.0, 5.0, true, 0.0).with_weight(0.4),
            ]
        };
        let base = validate_cohort(recs(), true).unwrap();
        let w: Vec<f64> = base.weights().iter().map(|w| w * 8.0).collect();
        let a = fit_cox(&base, &[Term::parse("z1")], None, &CoxOptions::default()).unwrap();
        let b = fit_cox(&base, &[Term::parse("z1")], Some(&w), &CoxOptions::default()).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
        assert_eq!(a.robust_covariance, b.robust_covariance);
        assert!((b.model_covariance[(0, 0)] * 8.0 - a.model_covariance[(0, 0)]).abs() < 1e-12);
        let problem = CoxProblem::new(&base, &[Term::parse("z1")], Some(&w), &CoxOptions::default()).unwrap();
        let direct = -b.log_partial_likelihood + problem.log_likelihood(&b.coefficients);
        assert!(direct.abs() < 1e-9);
    }
}
