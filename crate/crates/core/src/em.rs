//! Likelihood, latent-Poisson EM and the observed-information Hessian for a
//! fixed smoothing parameter.
//!
//! Each subject's failure time is the first jump of a Poisson process with
//! mean function `H_i(t) = H(phi(t) + z_i' beta)`. The latent counts at the
//! examination times have zero-truncated Poisson conditional laws, which
//! gives closed-form E-steps; the M-step maximizes the expected complete-data
//! log-likelihood under the ordering constraints on the spline coefficients.
//!
//! Parameter vectors are laid out as `[beta_1..beta_d, gamma_1..gamma_q]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Censoring, Dataset};
use crate::error::{Error, Result};
use crate::link::LinkSpec;
use crate::optim::{barrier_maximize_warm, BarrierSettings, ConstrainedProblem, MonotoneConstraints, WarmStart};
use crate::spline::{BasisRow, PenaltyMatrix, SplineBasis};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl ParamState {
    pub fn new(beta: Vec<f64>, gamma: Vec<f64>) -> Self {
        Self { beta, gamma }
    }

    pub fn from_slice(d: usize, theta: &[f64]) -> Self {
        Self { beta: theta[..d].to_vec(), gamma: theta[d..].to_vec() }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.extend_from_slice(&self.gamma);
        v
    }

    pub fn dim(&self) -> usize {
        self.beta.len() + self.gamma.len()
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.gamma.windows(2).all(|w| w[1] >= w[0] - slack)
    }

    pub fn distance(&self, other: &ParamState) -> f64 {
        self.to_vec().iter().zip(other.to_vec()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

/// Conditional means of the latent Poisson counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentExpectations {
    pub e_y: Vec<f64>,
    pub e_w: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

/// Mean of a zero-truncated Poisson with rate `x`: `x / (1 - e^{-x})`.
#[inline]
pub fn zero_truncated_mean(x: f64) -> f64 {
    if x < 1e-8 {
        1.0 + 0.5 * x
    } else {
        x / -(-x).exp_m1()
    }
}

#[derive(Debug, Clone)]
struct Subject {
    status: Censoring,
    left: f64,
    right: f64,
    z: Vec<f64>,
    at_left: BasisRow,
    at_right: BasisRow,
}

/// Per-subject log-likelihood with its derivatives in the two linear predictors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectTerm {
    pub loglik: f64,
    pub d_eta_left: f64,
    pub d_eta_right: f64,
}

/// Settings for the inner EM loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub optimizer_tol: f64,
    /// Squared-extrapolation (SQUAREM) cycles around the EM map.
    pub accelerate: bool,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 1000, optimizer_tol: 1e-7, accelerate: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOutcome {
    pub theta: ParamState,
    pub iterations: usize,
    pub converged: bool,
    /// Observed penalized log-likelihood at the start and after every iteration.
    pub trace: Vec<f64>,
}

/// A dataset bound to a basis and a link, with basis rows precomputed.
#[derive(Debug, Clone)]
pub struct Model {
    link: LinkSpec,
    basis: SplineBasis,
    penalty: PenaltyMatrix,
    subjects: Vec<Subject>,
    d: usize,
}

impl Model {
    pub fn new(ds: &Dataset, basis: &SplineBasis, link: LinkSpec) -> Result<Self> {
        let penalty = PenaltyMatrix::new(basis.dim())?;
        let subjects = ds
            .observations()
            .iter()
            .map(|o| Subject {
                status: o.status(),
                left: o.left(),
                right: o.right(),
                z: o.covariates().to_vec(),
                at_left: basis.eval_row(o.left()),
                at_right: basis.eval_row(o.right()),
            })
            .collect();
        Ok(Self { link, basis: basis.clone(), penalty, subjects, d: ds.dim() })
    }

    pub fn link(&self) -> LinkSpec {
        self.link
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn penalty(&self) -> &PenaltyMatrix {
        &self.penalty
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Covariate dimension `d`.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Spline dimension `q_n`.
    pub fn q(&self) -> usize {
        self.basis.dim()
    }

    pub fn dim(&self) -> usize {
        self.d + self.q()
    }

    pub fn constraints(&self) -> MonotoneConstraints {
        MonotoneConstraints { offset: self.d, len: self.q() }
    }

    fn check(&self, theta: &ParamState) -> Result<()> {
        if theta.beta.len() != self.d {
            return Err(Error::Dimension { expected: self.d, got: theta.beta.len() });
        }
        if theta.gamma.len() != self.q() {
            return Err(Error::Dimension { expected: self.q(), got: theta.gamma.len() });
        }
        Ok(())
    }

    /// Starting values: `beta = 0` and `gamma` evenly spaced from `g(0.05)` to `g(0.95)`.
    pub fn initial_state(&self) -> ParamState {
        let q = self.q();
        let lo = self.link.eval(0.05);
        let hi = self.link.eval(0.95);
        let gamma = (0..q).map(|j| lo + (hi - lo) * j as f64 / (q - 1) as f64).collect();
        ParamState::new(vec![0.0; self.d], gamma)
    }

    #[inline]
    fn predictors(&self, s: &Subject, x: &[f64]) -> (f64, f64) {
        let (beta, gamma) = x.split_at(self.d);
        let zb: f64 = s.z.iter().zip(beta).map(|(z, b)| z * b).sum();
        let left = if s.status == Censoring::Left { f64::NEG_INFINITY } else { s.at_left.dot(gamma) + zb };
        let right = if s.status == Censoring::Right { f64::INFINITY } else { s.at_right.dot(gamma) + zb };
        (left, right)
    }

    /// Scatters `d/deta_left` and `d/deta_right` into a gradient over `(beta, gamma)`.
    #[inline]
    fn scatter(&self, s: &Subject, dl: f64, dr: f64, grad: &mut [f64]) {
        let (gb, gg) = grad.split_at_mut(self.d);
        let total = dl + dr;
        for (g, z) in gb.iter_mut().zip(&s.z) {
            *g += total * z;
        }
        if dl != 0.0 {
            s.at_left.axpy(dl, gg);
        }
        if dr != 0.0 {
            s.at_right.axpy(dr, gg);
        }
    }

    fn subject_term_at(&self, s: &Subject, x: &[f64]) -> SubjectTerm {
        let (eta_l, eta_r) = self.predictors(s, x);
        let link = self.link;
        let lo = PROB_EPS;
        let hi = 1.0 - PROB_EPS;
        match s.status {
            Censoring::Left => {
                let (h, dh) = link.rate(eta_r);
                let surv = (-h).exp();
                let f = -(-h).exp_m1();
                if f < lo {
                    SubjectTerm { loglik: lo.ln(), d_eta_left: 0.0, d_eta_right: 0.0 }
                } else if f > hi {
                    SubjectTerm { loglik: hi.ln(), d_eta_left: 0.0, d_eta_right: 0.0 }
                } else {
                    SubjectTerm { loglik: f.ln(), d_eta_left: 0.0, d_eta_right: surv * dh / f }
                }
            }
            Censoring::Interval => {
                let (hl, dhl) = link.rate(eta_l);
                let (hr, dhr) = link.rate(eta_r);
                let sl = (-hl).exp();
                let sr = (-hr).exp();
                let p = sl * -(-(hr - hl)).exp_m1();
                if !(p >= lo) {
                    SubjectTerm { loglik: lo.ln(), d_eta_left: 0.0, d_eta_right: 0.0 }
                } else if p > hi {
                    SubjectTerm { loglik: hi.ln(), d_eta_left: 0.0, d_eta_right: 0.0 }
                } else {
                    SubjectTerm { loglik: p.ln(), d_eta_left: -sl * dhl / p, d_eta_right: sr * dhr / p }
                }
            }
            Censoring::Right => {
                let (h, dh) = link.rate(eta_l);
                let surv = (-h).exp();
                if surv < lo {
                    SubjectTerm { loglik: lo.ln(), d_eta_left: 0.0, d_eta_right: 0.0 }
                } else if surv > hi {
                    SubjectTerm { loglik: hi.ln(), d_eta_left: 0.0, d_eta_right: 0.0 }
                } else {
                    SubjectTerm { loglik: -h, d_eta_left: -dh, d_eta_right: 0.0 }
                }
            }
        }
    }

    /// Log-likelihood contribution of subject `i` and its derivatives in
    /// `zeta_1 = phi(L) + z'beta` and `zeta_2 = phi(R) + z'beta`.
    pub fn subject_term(&self, theta: &ParamState, i: usize) -> SubjectTerm {
        self.subject_term_at(&self.subjects[i], &theta.to_vec())
    }

    /// Basis rows at the subject's left and right endpoints.
    pub fn subject_rows(&self, i: usize) -> (Censoring, &[f64], BasisRow, BasisRow) {
        let s = &self.subjects[i];
        (s.status, &s.z, s.at_left, s.at_right)
    }

    /// Observed penalized log-likelihood with optional analytic gradient.
    pub fn penloglik_at(&self, x: &[f64], lambda: f64, grad: Option<&mut [f64]>) -> f64 {
        let gamma = &x[self.d..];
        let rho = lambda * lambda;
        let mut value = -0.5 * rho * self.penalty.norm_sq(gamma);
        match grad {
            Some(g) => {
                g.iter_mut().for_each(|v| *v = 0.0);
                self.penalty.add_gram_times(gamma, -rho, &mut g[self.d..]);
                for s in &self.subjects {
                    let t = self.subject_term_at(s, x);
                    value += t.loglik;
                    self.scatter(s, t.d_eta_left, t.d_eta_right, g);
                }
            }
            None => {
                for s in &self.subjects {
                    value += self.subject_term_at(s, x).loglik;
                }
            }
        }
        value
    }

    pub fn observed_penloglik(&self, theta: &ParamState, lambda: f64) -> Result<f64> {
        self.check(theta)?;
        let v = self.penloglik_at(&theta.to_vec(), lambda, None);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteLikelihood(format!("observed penalized log-likelihood is {v}")))
        }
    }

    /// Analytic gradient of the observed penalized log-likelihood.
    pub fn observed_gradient(&self, theta: &ParamState, lambda: f64) -> Result<Vec<f64>> {
        self.check(theta)?;
        let mut g = vec![0.0; self.dim()];
        self.penloglik_at(&theta.to_vec(), lambda, Some(&mut g));
        Ok(g)
    }

    pub fn e_step(&self, theta: &ParamState) -> Result<LatentExpectations> {
        self.check(theta)?;
        let x = theta.to_vec();
        let n = self.n();
        let mut ex = LatentExpectations {
            e_y: vec![0.0; n],
            e_w: vec![0.0; n],
            u1: vec![0.0; n],
            u2: vec![0.0; n],
        };
        for (i, s) in self.subjects.iter().enumerate() {
            let (eta_l, eta_r) = self.predictors(s, &x);
            match s.status {
                Censoring::Left => {
                    ex.e_y[i] = zero_truncated_mean(self.link.cum_rate(eta_r));
                    ex.u1[i] = s.right;
                }
                Censoring::Interval => {
                    let gap = self.link.cum_rate(eta_r) - self.link.cum_rate(eta_l);
                    if gap < 0.0 {
                        return Err(Error::Infeasible(format!(
                            "H(R) < H(L) for interval-censored subject {}",
                            i + 1
                        )));
                    }
                    ex.e_w[i] = zero_truncated_mean(gap);
                    ex.u1[i] = s.left;
                    ex.u2[i] = s.right;
                }
                Censoring::Right => {
                    ex.u1[i] = s.left;
                    ex.u2[i] = s.left;
                }
            }
        }
        Ok(ex)
    }

    /// Expected complete-data penalized log-likelihood and its gradient.
    /// Returns `-inf` where a Poisson mean is not positive.
    pub fn q_value_at(&self, x: &[f64], ex: &LatentExpectations, lambda: f64, grad: &mut [f64]) -> f64 {
        let gamma = &x[self.d..];
        let rho = lambda * lambda;
        grad.iter_mut().for_each(|v| *v = 0.0);
        let mut value = -0.5 * rho * self.penalty.norm_sq(gamma);
        self.penalty.add_gram_times(gamma, -rho, &mut grad[self.d..]);
        for (i, s) in self.subjects.iter().enumerate() {
            let (eta_l, eta_r) = self.predictors(s, x);
            match s.status {
                Censoring::Left => {
                    let (h, dh) = self.link.rate(eta_r);
                    if !(h > 0.0) {
                        return f64::NEG_INFINITY;
                    }
                    let ey = ex.e_y[i];
                    value += ey * h.ln() - h;
                    self.scatter(s, 0.0, dh * (ey / h - 1.0), grad);
                }
                Censoring::Interval => {
                    let (hl, dhl) = self.link.rate(eta_l);
                    let (hr, dhr) = self.link.rate(eta_r);
                    let gap = hr - hl;
                    if !(gap > 0.0) {
                        return f64::NEG_INFINITY;
                    }
                    let ew = ex.e_w[i];
                    // -lambda_1 - lambda_2 = -H(R)
                    value += ew * gap.ln() - hr;
                    let r = ew / gap;
                    self.scatter(s, -r * dhl, dhr * (r - 1.0), grad);
                }
                Censoring::Right => {
                    let (h, dh) = self.link.rate(eta_l);
                    value -= h;
                    self.scatter(s, -dh, 0.0, grad);
                }
            }
        }
        value
    }

    pub fn q_objective(&self, theta: &ParamState, ex: &LatentExpectations, lambda: f64) -> Result<(f64, Vec<f64>)> {
        self.check(theta)?;
        if ex.e_y.len() != self.n() || ex.e_w.len() != self.n() {
            return Err(Error::Dimension { expected: self.n(), got: ex.e_y.len() });
        }
        let mut g = vec![0.0; self.dim()];
        let v = self.q_value_at(&theta.to_vec(), ex, lambda, &mut g);
        if v.is_finite() {
            Ok((v, g))
        } else {
            Err(Error::Infeasible("a latent Poisson mean is not positive".into()))
        }
    }

    pub fn m_step(&self, ex: &LatentExpectations, start: &ParamState, lambda: f64, optimizer_tol: f64) -> Result<ParamState> {
        self.m_step_warm(ex, start, lambda, optimizer_tol, &mut WarmStart::default())
    }

    fn m_step_warm(
        &self,
        ex: &LatentExpectations,
        start: &ParamState,
        lambda: f64,
        optimizer_tol: f64,
        warm: &mut WarmStart,
    ) -> Result<ParamState> {
        self.check(start)?;
        let settings = BarrierSettings { tol: optimizer_tol, ..BarrierSettings::default() };
        let problem = ConstrainedProblem {
            objective: |x: &[f64], g: &mut [f64]| self.q_value_at(x, ex, lambda, g),
            constraints: self.constraints(),
            start: start.to_vec(),
        };
        let out = barrier_maximize_warm(problem, &settings, warm)?;
        Ok(ParamState::from_slice(self.d, &out.theta))
    }

    /// One EM update: E-step at `theta`, then the constrained M-step.
    pub fn em_map(&self, theta: &ParamState, lambda: f64, optimizer_tol: f64) -> Result<ParamState> {
        self.em_map_warm(theta, lambda, optimizer_tol, &mut WarmStart::default())
    }

    fn em_map_warm(&self, theta: &ParamState, lambda: f64, optimizer_tol: f64, warm: &mut WarmStart) -> Result<ParamState> {
        let ex = self.e_step(theta)?;
        self.m_step_warm(&ex, theta, lambda, optimizer_tol, warm)
    }

    /// EM iterations at fixed `lambda` until successive iterates are within `tol`.
    ///
    /// `iterations` counts EM-map evaluations. With acceleration every cycle
    /// takes two EM steps, extrapolates along them and applies one more EM
    /// step; the cycle falls back to the second plain step whenever the
    /// extrapolated point does not improve on it, so the trace never decreases.
    pub fn em_fixed_lambda(&self, lambda: f64, init: &ParamState, settings: &EmSettings) -> Result<EmOutcome> {
        self.check(init)?;
        let mut theta = init.clone();
        let mut ll = self.observed_penloglik(&theta, lambda)?;
        let mut trace = vec![ll];
        let mut evals = 0usize;
        let tol = settings.optimizer_tol;
        let mut warm = WarmStart::default();
        while evals < settings.max_iter {
            let t1 = self.em_map_warm(&theta, lambda, tol, &mut warm)?;
            evals += 1;
            let step = t1.distance(&theta);
            let ll1 = self.observed_penloglik(&t1, lambda)?;
            if step < settings.tol || !settings.accelerate || evals + 2 > settings.max_iter {
                trace.push(ll1);
                theta = t1;
                ll = ll1;
                if step < settings.tol {
                    return Ok(EmOutcome { theta, iterations: evals, converged: true, trace });
                }
                continue;
            }
            let t2 = self.em_map_warm(&t1, lambda, tol, &mut warm)?;
            evals += 1;
            let ll2 = self.observed_penloglik(&t2, lambda)?;
            let x0 = theta.to_vec();
            let x1 = t1.to_vec();
            let x2 = t2.to_vec();
            let r: Vec<f64> = x1.iter().zip(&x0).map(|(a, b)| a - b).collect();
            let v: Vec<f64> = (0..x0.len()).map(|k| x2[k] - 2.0 * x1[k] + x0[k]).collect();
            let rr: f64 = r.iter().map(|a| a * a).sum();
            let vv: f64 = v.iter().map(|a| a * a).sum();
            let mut next = (t2.clone(), ll2);
            if vv > 0.0 {
                let mut alpha = -(rr / vv).sqrt();
                while alpha < -1.0 {
                    let x: Vec<f64> = (0..x0.len()).map(|k| x0[k] - 2.0 * alpha * r[k] + alpha * alpha * v[k]).collect();
                    let cand = ParamState::from_slice(self.d, &x);
                    if cand.is_monotone(0.0) && self.penloglik_at(&x, lambda, None).is_finite() {
                        let t3 = self.em_map_warm(&cand, lambda, tol, &mut warm)?;
                        evals += 1;
                        let ll3 = self.observed_penloglik(&t3, lambda)?;
                        if ll3 >= ll2 {
                            next = (t3, ll3);
                        }
                        break;
                    }
                    alpha = 0.5 * (alpha - 1.0);
                }
            }
            debug_assert!(next.1 >= ll || !ll.is_finite());
            trace.push(next.1);
            theta = next.0;
            ll = next.1;
        }
        Ok(EmOutcome { theta, iterations: evals, converged: false, trace })
    }

    /// Negative Hessian of the observed penalized log-likelihood by central
    /// differences of the analytic gradient, symmetrized.
    pub fn neg_hessian(&self, theta: &ParamState, lambda: f64) -> Result<DMatrix<f64>> {
        let raw = self.neg_hessian_raw(theta, lambda)?;
        Ok((&raw + raw.transpose()) * 0.5)
    }

    /// The finite-difference matrix before symmetrization.
    pub fn neg_hessian_raw(&self, theta: &ParamState, lambda: f64) -> Result<DMatrix<f64>> {
        self.check(theta)?;
        let p = self.dim();
        let x = theta.to_vec();
        let mut m = DMatrix::zeros(p, p);
        let mut xp = x.clone();
        let mut gp = vec![0.0; p];
        let mut gm = vec![0.0; p];
        for k in 0..p {
            let h = 1e-5 * x[k].abs().max(1.0);
            xp[k] = x[k] + h;
            self.penloglik_at(&xp, lambda, Some(&mut gp));
            xp[k] = x[k] - h;
            self.penloglik_at(&xp, lambda, Some(&mut gm));
            xp[k] = x[k];
            for r in 0..p {
                m[(r, k)] = -(gp[r] - gm[r]) / (2.0 * h);
            }
        }
        if m.iter().all(|v| v.is_finite()) {
            Ok(m)
        } else {
            Err(Error::NonFiniteLikelihood("negative Hessian has non-finite entries".into()))
        }
    }

    /// `phi(t)` for the given coefficients.
    pub fn phi(&self, gamma: &[f64], t: f64) -> f64 {
        self.basis.eval_row(t).dot(gamma)
    }
}
