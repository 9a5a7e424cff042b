//! Smoothing-parameter selection by the generalized Fellner-Schall update,
//! alternated with EM fits at fixed `lambda`.
//!
//! The penalty is `rho/2 * gamma' D'D gamma` with `rho = lambda^2`, and the
//! update is applied to `rho`:
//!
//! ```text
//! rho_new = rho * [tr(S_rho^- S) - tr(J^- S)] / (theta' S theta)
//! ```
//!
//! with `S = blockdiag(0, D'D)`, `S_rho = rho S` and `J` the negative Hessian
//! of the observed penalized log-likelihood at the current EM solution.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::em::{EmSettings, Model, ParamState};
use crate::error::{Error, Result};
use crate::inference::{estimate_info_for_model, wald_ci, WaldInterval};
use crate::link::LinkSpec;
use crate::spline::{make_knots, SplineBasis};
use crate::stats::pinv_symmetric;

pub const LAMBDA_MIN: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 1e6;
/// Relative eigenvalue cutoff for generalized inverses.
pub const PINV_CUTOFF: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaStatus {
    Updated,
    /// The proposal fell outside `[LAMBDA_MIN, LAMBDA_MAX]`.
    Clamped,
    /// `theta' S theta` vanished (affine `gamma`); `lambda` left unchanged.
    AffineGamma,
    /// The trace difference was negative; `lambda` pushed to `LAMBDA_MIN`.
    NegativeNumerator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaUpdate {
    pub lambda: f64,
    /// `tr(S_rho^- S) - tr(J^- S)`.
    pub numerator: f64,
    /// `theta' S theta`.
    pub denominator: f64,
    pub status: LambdaStatus,
}

/// One Fellner-Schall step from the converged EM iterate `theta` at `lambda`.
pub fn update_lambda(model: &Model, theta: &ParamState, lambda: f64) -> Result<LambdaUpdate> {
    let d = model.d();
    let q = model.q();
    let p = model.dim();
    let rho = lambda * lambda;
    let gram = &model.penalty().gram;

    let denominator = model.penalty().norm_sq(&theta.gamma);
    let j = model.neg_hessian(theta, lambda)?;
    let (j_inv, _) = pinv_symmetric(&j, PINV_CUTOFF);
    // tr(J^- S) only involves the gamma block of J^-
    let mut tr_js = 0.0;
    for a in 0..q {
        for b in 0..q {
            tr_js += j_inv[(d + a, d + b)] * gram[(b, a)];
        }
    }
    debug_assert_eq!(j_inv.nrows(), p);
    let tr_s = model.penalty().rank() as f64 / rho;
    let numerator = tr_s - tr_js;

    if denominator < 1e-14 {
        return Ok(LambdaUpdate { lambda, numerator, denominator, status: LambdaStatus::AffineGamma });
    }
    if numerator < 0.0 {
        return Ok(LambdaUpdate {
            lambda: LAMBDA_MIN,
            numerator,
            denominator,
            status: LambdaStatus::NegativeNumerator,
        });
    }
    let proposal = (numerator / denominator * rho).sqrt();
    let clamped = proposal.clamp(LAMBDA_MIN, LAMBDA_MAX);
    let status = if clamped == proposal { LambdaStatus::Updated } else { LambdaStatus::Clamped };
    Ok(LambdaUpdate { lambda: clamped, numerator, denominator, status })
}

/// `tr(S^- S)` for the block penalty of a `q`-dimensional spline, i.e. `rank(D'D)`.
pub fn penalty_trace(q: usize) -> Result<f64> {
    let pm = crate::spline::penalty_matrix(q)?;
    let (pinv, _) = pinv_symmetric(&pm.gram, PINV_CUTOFF);
    Ok((&pinv * &pm.gram).trace())
}

/// An evaluated Fellner-Schall step in `x = log(rho)`: `r = log(rho_fs) - x`.
#[derive(Debug, Clone, Copy)]
struct FsPoint {
    x: f64,
    r: f64,
}

/// Next `log(rho)` for the fixed point `r(x) = 0`. With residuals of both
/// signs on record the root is bracketed and refined by secant or bisection;
/// in the monotone linearly convergent regime a capped secant step is taken;
/// otherwise the plain Fellner-Schall step.
fn next_log_rho(points: &[FsPoint]) -> f64 {
    let last = *points.last().expect("at least one point");
    let plain = last.x + last.r;
    if last.r == 0.0 {
        return last.x;
    }
    let partner = points
        .iter()
        .filter(|p| p.r * last.r < 0.0)
        .min_by(|a, b| (a.x - last.x).abs().partial_cmp(&(b.x - last.x).abs()).unwrap());
    if let Some(p) = partner {
        let (lo, hi) = (p.x.min(last.x), p.x.max(last.x));
        let secant = last.x - last.r * (last.x - p.x) / (last.r - p.r);
        let margin = 0.1 * (hi - lo);
        return if secant > lo + margin && secant < hi - margin { secant } else { 0.5 * (lo + hi) };
    }
    if points.len() >= 2 {
        let prev = points[points.len() - 2];
        let dx = last.x - prev.x;
        if dx.abs() > 1e-12 {
            // slope of G(x) = x + r(x)
            let slope = 1.0 + (last.r - prev.r) / dx;
            if slope > 0.0 && slope < 1.0 - 1e-3 {
                let step = last.r / (1.0 - slope);
                let cap = (50.0 * last.r.abs()).min(100f64.ln());
                return last.x + step.clamp(-cap, cap);
            }
        }
    }
    plain
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lambda_init: f64,
    pub em: EmSettings,
    /// Outer stopping rule on `||theta(lambda_new) - theta(lambda)||`.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Overrides the `ceil(n^(1/3))` interior-knot rule.
    pub interior_knots: Option<usize>,
    /// Safeguarded root finding on the Fellner-Schall fixed point in
    /// `log(rho)` instead of plain fixed-point iteration.
    pub extrapolate: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { lambda_init: 1.0, em: EmSettings::default(), outer_tol: 1e-6, max_outer: 50, interior_knots: None, extrapolate: true }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_init > 0.0 && self.lambda_init.is_finite()) {
            return Err(Error::Domain(format!("lambda_init must be positive, got {}", self.lambda_init)));
        }
        if !(self.outer_tol > 0.0 && self.em.tol > 0.0 && self.em.optimizer_tol > 0.0) {
            return Err(Error::Domain("tolerances must be positive".into()));
        }
        if self.max_outer == 0 || self.em.max_iter == 0 {
            return Err(Error::Domain("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Fellner-Schall numerators, one per outer iteration.
    pub fs_numerators: Vec<f64>,
    pub lambda_path: Vec<f64>,
    /// Plain Fellner-Schall proposals, one per outer iteration.
    pub fs_proposals: Vec<f64>,
    pub lambda_statuses: Vec<LambdaStatus>,
    /// Smallest change of the observed penalized log-likelihood between
    /// consecutive EM iterates over the whole fit (negative means a decrease).
    pub em_min_increment: f64,
    /// Inner EM runs that stopped at the iteration cap.
    pub em_unconverged_runs: usize,
    /// Outer iterations that used a root-finding step instead of the plain update.
    pub extrapolated_steps: usize,
    /// Final `||theta(lambda_new) - theta(lambda)||`.
    pub final_step: f64,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: ParamState,
    pub lambda: f64,
    pub basis: SplineBasis,
    pub link: LinkSpec,
    pub covariate_names: Vec<String>,
    pub info_matrix: Vec<Vec<f64>>,
    pub std_errors: Option<Vec<f64>>,
    pub penloglik: f64,
    pub em_iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    pub fn beta(&self) -> &[f64] {
        &self.theta.beta
    }

    /// `phi_hat(t)`, constant beyond the boundary knots.
    pub fn phi(&self, t: f64) -> f64 {
        self.basis.eval_row(t).dot(&self.theta.gamma)
    }

    pub fn info(&self) -> DMatrix<f64> {
        let d = self.info_matrix.len();
        DMatrix::from_fn(d, d, |i, j| self.info_matrix[i][j])
    }

    /// Wald intervals at the given level; `None` without standard errors.
    pub fn wald_intervals(&self, level: f64) -> Option<Vec<WaldInterval>> {
        let se = self.std_errors.as_ref()?;
        Some(self.theta.beta.iter().zip(se).map(|(&b, &s)| wald_ci(b, s, level)).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit result serializes")
    }

    pub fn summary_csv(&self, level: f64) -> String {
        let mut out = String::from("covariate,estimate,std_error,ci_lower,ci_upper,lambda,penloglik,converged\n");
        let cis = self.wald_intervals(level);
        for (k, name) in self.covariate_names.iter().enumerate() {
            let b = self.theta.beta[k];
            let (se, lo, hi) = match (&self.std_errors, &cis) {
                (Some(se), Some(ci)) => (se[k].to_string(), ci[k].lower.to_string(), ci[k].upper.to_string()),
                _ => ("NA".into(), "NA".into(), "NA".into()),
            };
            out.push_str(&format!(
                "{name},{b},{se},{lo},{hi},{},{},{}\n",
                self.lambda, self.penloglik, self.converged
            ));
        }
        out
    }
}

/// Full nested fit: knots, EM at the current `lambda`, Fellner-Schall update,
/// repeat until the EM solutions at successive `lambda` agree to `outer_tol`,
/// then the efficient-score information.
pub fn fit(ds: &Dataset, link: LinkSpec, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    let times = ds.pooled_times();
    let basis = make_knots(&times, ds.len(), options.interior_knots)?;
    let model = Model::new(ds, &basis, link)?;
    fit_model(&model, ds.covariate_names().to_vec(), options)
}

pub fn fit_model(model: &Model, covariate_names: Vec<String>, options: &FitOptions) -> Result<FitResult> {
    let mut diag = FitDiagnostics { em_min_increment: f64::INFINITY, ..Default::default() };
    let mut em_iterations = 0usize;
    let mut lambda = options.lambda_init;

    let mut run_em = |lambda: f64, start: &ParamState, diag: &mut FitDiagnostics| -> Result<ParamState> {
        let out = model.em_fixed_lambda(lambda, start, &options.em)?;
        em_iterations += out.iterations;
        if !out.converged {
            diag.em_unconverged_runs += 1;
        }
        for w in out.trace.windows(2) {
            diag.em_min_increment = diag.em_min_increment.min(w[1] - w[0]);
        }
        Ok(out.theta)
    };

    let mut theta = run_em(lambda, &model.initial_state(), &mut diag)?;
    diag.lambda_path.push(lambda);
    let mut outer_converged = false;
    let mut outer_iterations = 0;
    let mut points: Vec<FsPoint> = Vec::new();
    for _ in 0..options.max_outer {
        outer_iterations += 1;
        let upd = update_lambda(model, &theta, lambda)?;
        diag.fs_numerators.push(upd.numerator);
        diag.lambda_statuses.push(upd.status);
        diag.fs_proposals.push(upd.lambda);
        let mut proposal = upd.lambda;
        if options.extrapolate && matches!(upd.status, LambdaStatus::Updated | LambdaStatus::Clamped) {
            let x = 2.0 * lambda.ln();
            points.push(FsPoint { x, r: 2.0 * upd.lambda.ln() - x });
            let next = next_log_rho(&points);
            if (next - 2.0 * upd.lambda.ln()).abs() > 1e-12 {
                diag.extrapolated_steps += 1;
            }
            proposal = (0.5 * next).exp().clamp(LAMBDA_MIN, LAMBDA_MAX);
        }
        let next = run_em(proposal, &theta, &mut diag)?;
        let step = next.distance(&theta);
        theta = next;
        lambda = proposal;
        diag.lambda_path.push(lambda);
        diag.final_step = step;
        if step < options.outer_tol {
            outer_converged = true;
            break;
        }
    }

    let penloglik = model.observed_penloglik(&theta, lambda)?;
    let (info_matrix, std_errors, info_ok) = match estimate_info_for_model(model, &theta) {
        Ok(info) => {
            let m = info.matrix;
            let rows = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
            (rows, Some(info.std_errors), true)
        }
        Err(Error::SingularInformation(msg)) => {
            diag.messages.push(format!("singular information: {msg}"));
            let d = model.d();
            (vec![vec![f64::NAN; d]; d], None, false)
        }
        Err(e) => return Err(e),
    };
    if diag.lambda_statuses.contains(&LambdaStatus::Clamped) {
        diag.messages.push("lambda was clamped to its admissible range".into());
    }

    let result = FitResult {
        theta,
        lambda,
        basis: model.basis().clone(),
        link: model.link(),
        covariate_names,
        info_matrix,
        std_errors,
        penloglik,
        em_iterations,
        outer_iterations,
        converged: outer_converged && info_ok,
        diagnostics: diag,
    };
    if !outer_converged {
        return Err(Error::OuterNonConvergence { iterations: outer_iterations, best: Box::new(result) });
    }
    Ok(result)
}
