//! Efficient-score variance estimation, Wald intervals and bootstrap bands
//! for the baseline transformation `phi`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Censoring, Dataset};
use crate::em::{Model, ParamState};
use crate::error::{Error, Result};
use crate::link::LinkSpec;
use crate::nested::{fit, FitOptions, FitResult, PINV_CUTOFF};
use crate::rng::{stream, Purpose};
use crate::stats::{normal_quantile, pinv_symmetric, quantile};

/// Bootstrap refits may fail for at most this fraction of resamples.
pub const MAX_BOOTSTRAP_FAILURE: f64 = 0.2;

/// Per-subject scores at a parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRows {
    /// `n x d`, row `i` is the score for `beta` of subject `i`.
    pub beta_scores: DMatrix<f64>,
    /// `n x q`, column `j` is the score operator applied to `B_j`.
    pub phi_scores: DMatrix<f64>,
}

/// Score for `beta` of subject `i` (unpenalized log-likelihood).
pub fn score_beta(model: &Model, theta: &ParamState, i: usize) -> Vec<f64> {
    let t = model.subject_term(theta, i);
    let (_, z, _, _) = model.subject_rows(i);
    let total = t.d_eta_left + t.d_eta_right;
    z.iter().map(|z| total * z).collect()
}

/// Score operator for `phi` at `h = B_j`, for every basis function `j`.
pub fn score_phi_basis(model: &Model, theta: &ParamState, i: usize) -> Vec<f64> {
    let t = model.subject_term(theta, i);
    let (status, _, at_left, at_right) = model.subject_rows(i);
    let mut out = vec![0.0; model.q()];
    if status != Censoring::Left {
        at_left.axpy(t.d_eta_left, &mut out);
    }
    if status != Censoring::Right {
        at_right.axpy(t.d_eta_right, &mut out);
    }
    out
}

pub fn score_rows(model: &Model, theta: &ParamState) -> ScoreRows {
    let n = model.n();
    let mut beta_scores = DMatrix::zeros(n, model.d());
    let mut phi_scores = DMatrix::zeros(n, model.q());
    for i in 0..n {
        for (k, v) in score_beta(model, theta, i).into_iter().enumerate() {
            beta_scores[(i, k)] = v;
        }
        for (j, v) in score_phi_basis(model, theta, i).into_iter().enumerate() {
            phi_scores[(i, j)] = v;
        }
    }
    ScoreRows { beta_scores, phi_scores }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoEstimate {
    /// `d x d` outer-product information of the efficient scores.
    pub matrix: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    /// Efficient-score residuals, `n x d`.
    pub residuals: DMatrix<f64>,
    /// Least-squares coefficients of the beta scores on the phi scores, `q x d`.
    pub projection: DMatrix<f64>,
}

/// Projects the beta scores on the span of the phi scores and returns the
/// residuals with the coefficient matrix.
pub fn efficient_residuals(rows: &ScoreRows) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = &rows.phi_scores;
    let ptp = p.transpose() * p;
    let (ptp_inv, _) = pinv_symmetric(&ptp, PINV_CUTOFF);
    let a = ptp_inv * (p.transpose() * &rows.beta_scores);
    let r = &rows.beta_scores - p * &a;
    (r, a)
}

pub fn estimate_info_for_model(model: &Model, theta: &ParamState) -> Result<InfoEstimate> {
    let rows = score_rows(model, theta);
    let n = model.n() as f64;
    let (residuals, projection) = efficient_residuals(&rows);
    let matrix = {
        let m = residuals.transpose() * &residuals / n;
        (&m + m.transpose()) * 0.5
    };
    let trace = matrix.trace();
    let min_eig = matrix.clone().symmetric_eigen().eigenvalues.min();
    if !(trace > 0.0) || min_eig <= 1e-12 * trace {
        return Err(Error::SingularInformation(format!(
            "minimum eigenvalue {min_eig:.3e}, trace {trace:.3e}"
        )));
    }
    let inv = matrix
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::SingularInformation("information is not positive definite".into()))?;
    let std_errors = (0..model.d()).map(|k| (inv[(k, k)] / n).sqrt()).collect();
    Ok(InfoEstimate { matrix, std_errors, residuals, projection })
}

/// Information and standard errors for a finished fit on its dataset.
pub fn estimate_info(fit: &FitResult, ds: &Dataset) -> Result<InfoEstimate> {
    let model = Model::new(ds, &fit.basis, fit.link)?;
    estimate_info_for_model(&model, &fit.theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldInterval {
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    /// False for a non-positive or non-finite standard error.
    pub valid: bool,
}

/// `estimate +/- z_{(1+level)/2} * se`.
pub fn wald_ci(estimate: f64, se: f64, level: f64) -> WaldInterval {
    let z = normal_quantile(0.5 * (1.0 + level));
    WaldInterval {
        estimate,
        std_error: se,
        lower: estimate - z * se,
        upper: estimate + z * se,
        valid: se > 0.0 && se.is_finite() && level > 0.0 && level < 1.0,
    }
}

/// Pointwise bootstrap band for `phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub grid: Vec<f64>,
    pub phi_hat: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resamples: usize,
    pub failures: usize,
}

impl Band {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,phi_hat,lower,upper\n");
        for k in 0..self.grid.len() {
            out.push_str(&format!("{},{},{},{}\n", self.grid[k], self.phi_hat[k], self.lower[k], self.upper[k]));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSettings {
    pub resamples: usize,
    pub seed: u64,
    pub level: f64,
    pub threads: usize,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self { resamples: 1000, seed: 0, level: 0.95, threads: 1 }
    }
}

/// Nonparametric bootstrap: subjects resampled with replacement, full nested
/// refit on each resample, pointwise percentiles of `phi_hat` on `grid`.
pub fn bootstrap_band(
    ds: &Dataset,
    link: LinkSpec,
    grid: &[f64],
    settings: &BootstrapSettings,
    options: &FitOptions,
) -> Result<Band> {
    let n = ds.len();
    let seed = settings.seed;
    bootstrap_band_with(ds, link, grid, settings, options, |b| {
        let mut rng = stream(seed, b as u64, Purpose::Bootstrap);
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    })
}

/// As [`bootstrap_band`] with caller-supplied resample indices.
pub fn bootstrap_band_with<F>(
    ds: &Dataset,
    link: LinkSpec,
    grid: &[f64],
    settings: &BootstrapSettings,
    options: &FitOptions,
    indices: F,
) -> Result<Band>
where
    F: Fn(usize) -> Vec<usize> + Sync,
{
    if settings.resamples < 2 {
        return Err(Error::Domain(format!("need at least 2 resamples, got {}", settings.resamples)));
    }
    if !(settings.level > 0.0 && settings.level < 1.0) {
        return Err(Error::Domain(format!("level must lie in (0, 1), got {}", settings.level)));
    }
    let times = ds.pooled_times();
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if grid.iter().any(|&t| !(t >= lo && t <= hi)) {
        return Err(Error::Domain(format!("grid must lie within the observed time range [{lo}, {hi}]")));
    }
    let full = fit(ds, link, options)?;
    let phi_hat: Vec<f64> = grid.iter().map(|&t| full.phi(t)).collect();

    let refit = |b: usize| -> Option<Vec<f64>> {
        let sample = ds.resample(&indices(b)).ok()?;
        let res = fit(&sample, link, options).ok()?;
        Some(grid.iter().map(|&t| res.phi(t)).collect())
    };
    let curves: Vec<Option<Vec<f64>>> =
        crate::parallel::map_indexed(settings.threads, settings.resamples, refit)?;

    let kept: Vec<&Vec<f64>> = curves.iter().flatten().collect();
    let failures = settings.resamples - kept.len();
    if failures as f64 > MAX_BOOTSTRAP_FAILURE * settings.resamples as f64 || kept.is_empty() {
        return Err(Error::BootstrapFailures { failed: failures, total: settings.resamples });
    }
    let tail = 0.5 * (1.0 - settings.level);
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let column: Vec<f64> = kept.iter().map(|c| c[k]).collect();
        lower.push(quantile(&column, tail));
        upper.push(quantile(&column, 1.0 - tail));
    }
    Ok(Band { grid: grid.to_vec(), phi_hat, lower, upper, resamples: settings.resamples, failures })
}
