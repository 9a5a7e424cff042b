//! Interval-censored observations, CSV ingestion and the bundled example data.
//!
//! CSV dialect: a header `left,right,status,<covariates...>`, then one row per
//! subject. `status` is `left`, `interval` or `right`; the right endpoint of a
//! right-censored row is written `inf` (an empty field is also accepted).
//! Lines starting with `#` and blank lines are ignored.
//!
//! Left-censored subjects are stored as the interval `(0, R]`.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BREAST_COSMESIS_CSV: &str = include_str!("../data/breast_cosmesis.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Censoring {
    /// Event before the first examination: `T <= R`.
    Left,
    /// Event between two examinations: `L < T <= R`.
    Interval,
    /// Event after the last examination: `T > L`.
    Right,
}

impl Censoring {
    pub fn as_str(&self) -> &'static str {
        match self {
            Censoring::Left => "left",
            Censoring::Interval => "interval",
            Censoring::Right => "right",
        }
    }
}

impl FromStr for Censoring {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "left" => Ok(Censoring::Left),
            "interval" => Ok(Censoring::Interval),
            "right" => Ok(Censoring::Right),
            other => Err(format!("unknown status `{other}` (expected left, interval or right)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalObservation {
    status: Censoring,
    left: f64,
    right: f64,
    covariates: Vec<f64>,
}

impl IntervalObservation {
    pub fn new(status: Censoring, left: f64, right: f64, covariates: Vec<f64>) -> Result<Self> {
        if let Some(z) = covariates.iter().find(|z| !z.is_finite()) {
            return Err(Error::InvalidData(format!("covariate value {z} is not finite")));
        }
        match status {
            Censoring::Left => {
                if left != 0.0 {
                    return Err(Error::InvalidData(format!(
                        "left-censored row must have left = 0, got {left}"
                    )));
                }
                if !(right.is_finite() && right > 0.0) {
                    return Err(Error::InvalidData(format!(
                        "left-censored row needs a finite positive right endpoint, got {right}"
                    )));
                }
            }
            Censoring::Interval => {
                if !(left.is_finite() && right.is_finite()) {
                    return Err(Error::InvalidData("interval endpoints must be finite".into()));
                }
                if left <= 0.0 {
                    return Err(Error::InvalidData(format!(
                        "interval-censored row needs left > 0, got {left}"
                    )));
                }
                if left >= right {
                    return Err(Error::InvalidData(format!("left >= right ({left} >= {right})")));
                }
            }
            Censoring::Right => {
                if !(left.is_finite() && left > 0.0) {
                    return Err(Error::InvalidData(format!(
                        "right-censored row needs a finite positive left endpoint, got {left}"
                    )));
                }
                if right != f64::INFINITY {
                    return Err(Error::InvalidData(format!(
                        "right-censored row must have right = inf, got {right}"
                    )));
                }
            }
        }
        Ok(Self { status, left, right, covariates })
    }

    pub fn left_censored(right: f64, covariates: Vec<f64>) -> Result<Self> {
        Self::new(Censoring::Left, 0.0, right, covariates)
    }

    pub fn interval_censored(left: f64, right: f64, covariates: Vec<f64>) -> Result<Self> {
        Self::new(Censoring::Interval, left, right, covariates)
    }

    pub fn right_censored(left: f64, covariates: Vec<f64>) -> Result<Self> {
        Self::new(Censoring::Right, left, f64::INFINITY, covariates)
    }

    pub fn status(&self) -> Censoring {
        self.status
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    /// Finite endpoints that carry information about the event time.
    pub fn finite_endpoints(&self) -> impl Iterator<Item = f64> + '_ {
        [self.left, self.right].into_iter().filter(|t| t.is_finite() && *t > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    observations: Vec<IntervalObservation>,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(observations: Vec<IntervalObservation>, covariate_names: Vec<String>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidData("dataset has no observations".into()));
        }
        let d = covariate_names.len();
        if let Some((i, o)) = observations.iter().enumerate().find(|(_, o)| o.covariates.len() != d) {
            return Err(Error::InvalidData(format!(
                "observation {} has {} covariates, expected {d}",
                i + 1,
                o.covariates.len()
            )));
        }
        if observations.iter().all(|o| o.status == Censoring::Right) {
            return Err(Error::InvalidData(
                "every observation is right-censored; the likelihood is degenerate".into(),
            ));
        }
        Ok(Self { observations, covariate_names })
    }

    pub fn observations(&self) -> &[IntervalObservation] {
        &self.observations
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Covariate dimension `d`.
    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    /// All finite, positive endpoints, sorted.
    pub fn pooled_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.observations.iter().flat_map(|o| o.finite_endpoints()).collect();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t
    }

    /// A dataset made of the given rows (with repetition), in order.
    pub fn resample(&self, indices: &[usize]) -> Result<Self> {
        let obs = indices.iter().map(|&i| self.observations[i].clone()).collect();
        Self::new(obs, self.covariate_names.clone())
    }

    pub fn right_censored_fraction(&self) -> f64 {
        let r = self.observations.iter().filter(|o| o.status == Censoring::Right).count();
        r as f64 / self.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("left,right,status");
        for name in &self.covariate_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for o in &self.observations {
            let right = if o.right.is_finite() { o.right.to_string() } else { "inf".to_string() };
            let _ = write!(out, "{},{},{}", o.left, right, o.status.as_str());
            for z in &o.covariates {
                let _ = write!(out, ",{z}");
            }
            out.push('\n');
        }
        out
    }
}

fn parse_time(field: &str, line: usize, what: &str) -> Result<f64> {
    let f = field.trim();
    if f.eq_ignore_ascii_case("inf") || f.eq_ignore_ascii_case("infinity") {
        return Ok(f64::INFINITY);
    }
    f.parse::<f64>().map_err(|_| Error::Parse { line, message: format!("invalid {what} `{f}`") })
}

/// Parses and validates a dataset in the CSV dialect described above.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) =
        lines.next().ok_or_else(|| Error::Parse { line: 0, message: "missing header row".into() })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "left" || cols[1] != "right" || cols[2] != "status" {
        return Err(Error::Parse {
            line: header_line,
            message: "header must start with left,right,status".into(),
        });
    }
    let names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
    if let Some(bad) = names.iter().find(|n| n.is_empty()) {
        return Err(Error::Parse { line: header_line, message: format!("empty covariate name `{bad}`") });
    }

    let mut observations = Vec::new();
    for (line, row) in lines {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let status: Censoring =
            fields[2].parse().map_err(|message| Error::Parse { line, message })?;
        let left = parse_time(fields[0], line, "left endpoint")?;
        let right = if status == Censoring::Right && fields[1].trim().is_empty() {
            f64::INFINITY
        } else {
            parse_time(fields[1], line, "right endpoint")?
        };
        let covariates = fields[3..]
            .iter()
            .map(|f| {
                let f = f.trim();
                if f.is_empty() {
                    return Err(Error::Parse { line, message: "missing covariate value".into() });
                }
                f.parse::<f64>()
                    .map_err(|_| Error::Parse { line, message: format!("invalid covariate `{f}`") })
            })
            .collect::<Result<Vec<f64>>>()?;
        let obs = IntervalObservation::new(status, left, right, covariates).map_err(|e| match e {
            Error::InvalidData(message) => Error::Parse { line, message },
            other => other,
        })?;
        observations.push(obs);
    }
    Dataset::new(observations, names)
}

pub fn read_dataset(path: impl AsRef<std::path::Path>) -> Result<Dataset> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

/// The breast cosmesis study (94 patients, covariate `chemo`).
pub fn breast_cosmesis() -> Dataset {
    parse_dataset(BREAST_COSMESIS_CSV).expect("bundled dataset is valid")
}

pub fn breast_cosmesis_csv() -> &'static str {
    BREAST_COSMESIS_CSV
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataReport {
    pub n: usize,
    pub left_fraction: f64,
    pub interval_fraction: f64,
    pub right_fraction: f64,
    /// Smallest `R - L` over interval-censored rows (`inf` if there are none).
    pub min_interval_width: f64,
    pub covariate_ranges: Vec<CovariateRange>,
    pub warnings: Vec<String>,
}

/// Censoring proportions, interval widths and covariate ranges; never fails.
pub fn validate(ds: &Dataset) -> DataReport {
    let n = ds.len();
    let count = |c: Censoring| ds.observations.iter().filter(|o| o.status == c).count();
    let frac = |k: usize| k as f64 / n as f64;
    let min_interval_width = ds
        .observations
        .iter()
        .filter(|o| o.status == Censoring::Interval)
        .map(|o| o.right - o.left)
        .fold(f64::INFINITY, f64::min);

    let mut warnings = Vec::new();
    if min_interval_width < 1e-8 {
        warnings.push(format!("minimum interval width {min_interval_width:e} is below 1e-8"));
    }
    let covariate_ranges: Vec<CovariateRange> = ds
        .covariate_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (min, max) = ds.observations.iter().map(|o| o.covariates[j]).fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), z| (lo.min(z), hi.max(z)),
            );
            CovariateRange { name: name.clone(), min, max }
        })
        .collect();
    for r in &covariate_ranges {
        if r.min == r.max {
            warnings.push(format!("covariate `{}` is constant", r.name));
        }
    }
    DataReport {
        n,
        left_fraction: frac(count(Censoring::Left)),
        interval_fraction: frac(count(Censoring::Interval)),
        right_fraction: frac(count(Censoring::Right)),
        min_interval_width,
        covariate_ranges,
        warnings,
    }
}
