//! Main-effects logistic regression fitted by Newton-Raphson (IRLS).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fitted model that predicts `P(label = true | features)`.
pub trait ClassProbability {
    fn probability(&self, row: &[f64]) -> f64;

    /// `P / (1 - P)`; implementors should override when a stabler form exists.
    fn odds(&self, row: &[f64]) -> f64 {
        let p = self.probability(row);
        p / (1.0 - p)
    }
}

/// A probabilistic classifier family.
pub trait ProbabilisticClassifier {
    type Fitted: ClassProbability;
    fn fit(&self, features: &DMatrix<f64>, labels: &[bool]) -> Result<Self::Fitted>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Intercept first, then one slope per feature column.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub n_iterations: usize,
}

impl LogisticModel {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.coefficients[0] + self.coefficients[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }
}

impl ClassProbability for LogisticModel {
    fn probability(&self, row: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(row))
    }

    fn odds(&self, row: &[f64]) -> f64 {
        self.linear_predictor(row).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for LogisticRegression {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tolerance: 1e-8,
        }
    }
}

impl ProbabilisticClassifier for LogisticRegression {
    type Fitted = LogisticModel;

    fn fit(&self, features: &DMatrix<f64>, labels: &[bool]) -> Result<LogisticModel> {
        fit_logistic_with(features, labels, self)
    }
}

const SEPARATION_BOUND: f64 = 20.0;

#[inline]
fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn with_intercept(features: &DMatrix<f64>) -> DMatrix<f64> {
    features.clone().insert_column(0, 1.0)
}

fn eta(design: &DMatrix<f64>, coef: &[f64]) -> DVector<f64> {
    design * DVector::from_column_slice(coef)
}

/// Bernoulli log-likelihood at `coef` (intercept first).
pub fn logistic_log_likelihood(coef: &[f64], features: &DMatrix<f64>, labels: &[bool]) -> f64 {
    let design = with_intercept(features);
    eta(&design, coef)
        .iter()
        .zip(labels)
        .map(|(&e, &y)| if y { e - softplus(e) } else { -softplus(e) })
        .sum()
}

/// Score vector `X'(y - mu)` at `coef` (intercept first).
pub fn logistic_gradient(coef: &[f64], features: &DMatrix<f64>, labels: &[bool]) -> Vec<f64> {
    let design = with_intercept(features);
    let resid = residuals(&eta(&design, coef), labels);
    (design.transpose() * resid).as_slice().to_vec()
}

fn residuals(eta: &DVector<f64>, labels: &[bool]) -> DVector<f64> {
    DVector::from_iterator(
        labels.len(),
        eta.iter()
            .zip(labels)
            .map(|(&e, &y)| f64::from(u8::from(y)) - sigmoid(e)),
    )
}

pub fn fit_logistic(features: &DMatrix<f64>, labels: &[bool]) -> Result<LogisticModel> {
    fit_logistic_with(features, labels, &LogisticRegression::default())
}

fn fit_logistic_with(features: &DMatrix<f64>, labels: &[bool], cfg: &LogisticRegression) -> Result<LogisticModel> {
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::Precondition(format!(
            "{} labels for {n} feature rows",
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == n {
        return Err(Error::SingleClass);
    }
    let design = with_intercept(features);
    let p = design.ncols();
    let gram = design.transpose() * &design;
    if n < p || gram.clone().cholesky().is_none() {
        return Err(Error::RankDeficientDesign);
    }
    let eig = gram.symmetric_eigenvalues();
    if eig.min() <= 1e-12 * eig.max() {
        return Err(Error::RankDeficientDesign);
    }

    let loglik = |coef: &[f64]| -> f64 {
        eta(&design, coef)
            .iter()
            .zip(labels)
            .map(|(&e, &y)| if y { e - softplus(e) } else { -softplus(e) })
            .sum()
    };
    let mut coef = vec![0.0; p];
    let mut ll = loglik(&coef);
    for iteration in 0..=cfg.max_iter {
        let e = eta(&design, &coef);
        let grad = design.transpose() * residuals(&e, labels);
        if grad.amax() < cfg.tolerance {
            return Ok(LogisticModel {
                coefficients: coef,
                converged: true,
                n_iterations: iteration,
            });
        }
        if iteration == cfg.max_iter {
            break;
        }
        let mut weighted = design.clone();
        for (i, &ei) in e.iter().enumerate() {
            let mu = sigmoid(ei);
            let v = (mu * (1.0 - mu)).sqrt();
            weighted.row_mut(i).scale_mut(v);
        }
        let info = weighted.transpose() * &weighted;
        let step = info.cholesky().ok_or(Error::RankDeficientDesign)?.solve(&grad);
        let mut scale = 1.0;
        let mut candidate;
        let mut cand_ll;
        let mut halvings = 0;
        loop {
            candidate = coef
                .iter()
                .zip(step.iter())
                .map(|(c, s)| c + scale * s)
                .collect::<Vec<_>>();
            cand_ll = loglik(&candidate);
            if cand_ll >= ll - 1e-11 * (1.0 + ll.abs()) || halvings == 10 {
                break;
            }
            scale *= 0.5;
            halvings += 1;
        }
        if let Some(index) = candidate.iter().position(|c| c.abs() > SEPARATION_BOUND) {
            return Err(Error::SeparationDetected { index });
        }
        coef = candidate;
        ll = cand_ll;
    }
    let grad = design.transpose() * residuals(&eta(&design, &coef), labels);
    Err(Error::NonConvergence {
        iterations: cfg.max_iter,
        gradient: grad.amax(),
    })
}
