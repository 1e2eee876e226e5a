//! Cohort CSV files.
//!
//! Comma-delimited UTF-8 with a header row. Required columns are the entry
//! time, observed time and 0/1 event indicator; `weight` and `arm` are
//! optional. Every other column is read as a covariate unless an explicit
//! covariate list is given.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cohort::{Arm, Cohort, SurvivalRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaMapping {
    pub entry_time: String,
    pub time: String,
    pub event: String,
    pub weight: String,
    pub arm: String,
    /// Covariate columns in order; `None` takes all unmapped columns.
    pub covariates: Option<Vec<String>>,
}

impl Default for SchemaMapping {
    fn default() -> Self {
        Self {
            entry_time: "entry_time".into(),
            time: "time".into(),
            event: "event".into(),
            weight: "weight".into(),
            arm: "arm".into(),
            covariates: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompareOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

/// Row filter `column <op> value`, e.g. `gap_days<=90`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub column: String,
    pub op: CompareOp,
    pub value: f64,
}

impl RowFilter {
    pub fn keeps(&self, x: f64) -> bool {
        match self.op {
            CompareOp::Lt => x < self.value,
            CompareOp::Le => x <= self.value,
            CompareOp::Gt => x > self.value,
            CompareOp::Ge => x >= self.value,
            CompareOp::Eq => x == self.value,
            CompareOp::Ne => x != self.value,
        }
    }
}

impl FromStr for RowFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        const OPS: [(&str, CompareOp); 6] = [
            ("<=", CompareOp::Le),
            (">=", CompareOp::Ge),
            ("==", CompareOp::Eq),
            ("!=", CompareOp::Ne),
            ("<", CompareOp::Lt),
            (">", CompareOp::Gt),
        ];
        for (sym, op) in OPS {
            if let Some((col, val)) = s.split_once(sym) {
                let column = col.trim().to_string();
                let value = val
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Precondition(format!("filter `{s}`: `{}` is not a number", val.trim())))?;
                if column.is_empty() {
                    break;
                }
                return Ok(RowFilter { column, op, value });
            }
        }
        Err(Error::Precondition(format!(
            "filter `{s}` must look like `column<=value` (operators < <= > >= == !=)"
        )))
    }
}

impl fmt::Display for RowFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.op {
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Eq => "==",
            CompareOp::Ne => "!=",
        };
        write!(f, "{}{op}{}", self.column, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoadOptions {
    pub mapping: SchemaMapping,
    pub require_truncation_consistency: bool,
    pub filters: Vec<RowFilter>,
}

fn csv_err(e: ::csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.kind() {
        ::csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
        _ => Error::Parse {
            line,
            message: e.to_string(),
        },
    }
}

fn column(headers: &::csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn require(headers: &::csv::StringRecord, name: &str) -> Result<usize> {
    column(headers, name).ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_number(raw: &str, line: usize, col: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("column `{col}`: `{raw}` is not a number"),
    })
}

fn parse_event(raw: &str, line: usize, col: &str) -> Result<bool> {
    match raw.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(Error::Parse {
            line,
            message: format!("column `{col}`: event must be 0 or 1, found `{other}`"),
        }),
    }
}

fn parse_arm(raw: &str, line: usize, col: &str) -> Result<Arm> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "reference" | "1" => Ok(Arm::Reference),
        "truncated" | "0" | "" => Ok(Arm::Truncated),
        other => Err(Error::Parse {
            line,
            message: format!("column `{col}`: arm must be `reference`/`truncated` or 1/0, found `{other}`"),
        }),
    }
}

/// Reads a cohort from CSV text.
pub fn read_cohort_csv<R: Read>(reader: R, opts: &LoadOptions) -> Result<Cohort> {
    let m = &opts.mapping;
    let mut rdr = ::csv::ReaderBuilder::new().trim(::csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let entry = require(&headers, &m.entry_time)?;
    let time = require(&headers, &m.time)?;
    let event = require(&headers, &m.event)?;
    let weight = column(&headers, &m.weight);
    let arm = column(&headers, &m.arm);
    let filters = opts
        .filters
        .iter()
        .map(|f| require(&headers, &f.column).map(|i| (i, f)))
        .collect::<Result<Vec<_>>>()?;
    let (names, cov_idx): (Vec<String>, Vec<usize>) = match &m.covariates {
        Some(names) => names
            .iter()
            .map(|n| require(&headers, n).map(|i| (n.clone(), i)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![Some(entry), Some(time), Some(event), weight, arm].contains(&Some(*i)))
            .map(|(i, h)| (h.trim().to_string(), i))
            .unzip(),
    };

    let mut records = Vec::new();
    let mut lines = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| row.get(i).unwrap_or("");
        let mut keep = true;
        for (i, f) in &filters {
            keep &= f.keeps(parse_number(field(*i), line, &f.column)?);
        }
        if !keep {
            continue;
        }
        let record = SurvivalRecord {
            entry_time: parse_number(field(entry), line, &m.entry_time)?,
            observed_time: parse_number(field(time), line, &m.time)?,
            event: parse_event(field(event), line, &m.event)?,
            covariates: cov_idx
                .iter()
                .zip(&names)
                .map(|(&i, n)| parse_number(field(i), line, n))
                .collect::<Result<_>>()?,
            weight: match weight {
                Some(i) if !field(i).is_empty() => parse_number(field(i), line, &m.weight)?,
                _ => 1.0,
            },
            arm: match arm {
                Some(i) => parse_arm(field(i), line, &m.arm)?,
                None => Arm::Truncated,
            },
        };
        records.push(record);
        lines.push(line);
    }
    Cohort::new(records, names, opts.require_truncation_consistency).map_err(|e| {
        let index = match &e {
            Error::InconsistentArity { index, .. }
            | Error::NonFiniteValue { index, .. }
            | Error::TruncationViolation { index, .. } => Some(*index),
            _ => None,
        };
        match index {
            Some(i) => Error::Validation {
                line: lines[i],
                reason: e.to_string(),
            },
            None => e,
        }
    })
}

pub fn load_cohort_csv(path: &Path, opts: &LoadOptions) -> Result<Cohort> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_cohort_csv(f, opts)
}

/// Reads only the named numeric columns (e.g. confounders of a reference sample).
pub fn read_covariates_csv<R: Read>(reader: R, names: &[&str], filters: &[RowFilter]) -> Result<DMatrix<f64>> {
    let mut rdr = ::csv::ReaderBuilder::new().trim(::csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let idx = names.iter().map(|n| require(&headers, n)).collect::<Result<Vec<_>>>()?;
    let filters = filters
        .iter()
        .map(|f| require(&headers, &f.column).map(|i| (i, f)))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::new();
    let mut rows = 0;
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| row.get(i).unwrap_or("");
        let mut keep = true;
        for (i, f) in &filters {
            keep &= f.keeps(parse_number(field(*i), line, &f.column)?);
        }
        if !keep {
            continue;
        }
        for (&i, n) in idx.iter().zip(names) {
            let v = parse_number(field(i), line, n)?;
            if !v.is_finite() {
                return Err(Error::Validation {
                    line,
                    reason: format!("column `{n}` is not finite"),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyCohort);
    }
    Ok(DMatrix::from_row_slice(rows, names.len(), &values))
}

pub fn load_covariates_csv(path: &Path, names: &[&str], filters: &[RowFilter]) -> Result<DMatrix<f64>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_covariates_csv(f, names, filters)
}

/// Writes a cohort with the default column names; floats use the shortest
/// representation that parses back to the same value.
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let mut w = ::csv::Writer::from_writer(writer);
    let io = |e: ::csv::Error| Error::Io(e.to_string());
    let mut header = vec!["entry_time", "time", "event", "weight", "arm"];
    header.extend(cohort.covariate_names().iter().map(String::as_str));
    w.write_record(&header).map_err(io)?;
    for r in cohort.records() {
        let mut row = vec![
            format!("{:?}", r.entry_time),
            format!("{:?}", r.observed_time),
            if r.event { "1" } else { "0" }.to_string(),
            format!("{:?}", r.weight),
            r.arm.as_str().to_string(),
        ];
        row.extend(r.covariates.iter().map(|z| format!("{z:?}")));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
