//! Maximization under the ordering constraints `x[o] <= x[o+1] <= ... <= x[o+q-1]`.
//!
//! A logarithmic barrier `mu * sum log(x[o+j+1] - x[o+j])` is added to the
//! objective and `mu` is driven down geometrically; each barrier subproblem is
//! solved by BFGS with a backtracking line search that never leaves the
//! strict interior. The inverse-Hessian approximation is carried from one
//! barrier weight to the next.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// The block `x[offset..offset+len]` must be nondecreasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonotoneConstraints {
    pub offset: usize,
    pub len: usize,
}

impl MonotoneConstraints {
    pub fn count(&self) -> usize {
        self.len.saturating_sub(1)
    }

    #[inline]
    pub fn slack(&self, x: &[f64], j: usize) -> f64 {
        x[self.offset + j + 1] - x[self.offset + j]
    }

    pub fn slacks(&self, x: &[f64]) -> Vec<f64> {
        (0..self.count()).map(|j| self.slack(x, j)).collect()
    }

    pub fn min_slack(&self, x: &[f64]) -> f64 {
        (0..self.count()).map(|j| self.slack(x, j)).fold(f64::INFINITY, f64::min)
    }

    /// Constraint rows `A` with `A x >= 0`, for a parameter vector of length `dim`.
    pub fn matrix(&self, dim: usize) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.count(), dim);
        for j in 0..self.count() {
            a[(j, self.offset + j)] = -1.0;
            a[(j, self.offset + j + 1)] = 1.0;
        }
        a
    }

    /// Raises every slack below `eps` to `eps`, shifting later entries up.
    pub fn make_interior(&self, x: &mut [f64], eps: f64) {
        for j in 0..self.count() {
            if self.slack(x, j) < eps {
                let base = x[self.offset + j];
                x[self.offset + j + 1] = base + eps;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierSettings {
    /// Inner stopping rule: barrier-gradient sup-norm `< tol * max(1, |objective|)`.
    pub tol: f64,
    pub mu_start: f64,
    pub mu_factor: f64,
    /// The last stage is the first one with `mu < mu_min`.
    pub mu_min: f64,
    pub max_inner_iter: usize,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self { tol: 1e-7, mu_start: 1e-2, mu_factor: 0.2, mu_min: 1e-8, max_inner_iter: 2000 }
    }
}

pub struct ConstrainedProblem<F> {
    /// Writes the gradient into the second argument and returns the value.
    /// Points outside the objective's domain should return `-inf` or NaN.
    pub objective: F,
    pub constraints: MonotoneConstraints,
    pub start: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierOutcome {
    pub theta: Vec<f64>,
    pub objective: f64,
    /// Objective (without barrier) at the end of each barrier weight.
    pub stage_objectives: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    /// Stationarity reached at the last barrier weight.
    pub stationary: bool,
}

struct Barrier<'a, F> {
    objective: &'a mut F,
    cons: MonotoneConstraints,
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Barrier<'_, F> {
    /// Negated barrier objective (to minimize) and its gradient; also returns the raw objective.
    fn eval(&mut self, x: &[f64], mu: f64, grad: &mut [f64]) -> (f64, f64) {
        self.evaluations += 1;
        let c = self.cons;
        for j in 0..c.count() {
            if c.slack(x, j) <= 0.0 {
                return (f64::INFINITY, f64::NEG_INFINITY);
            }
        }
        let obj = (self.objective)(x, grad);
        if !obj.is_finite() {
            return (f64::INFINITY, obj);
        }
        let mut barrier = 0.0;
        for g in grad.iter_mut() {
            *g = -*g;
        }
        for j in 0..c.count() {
            let s = c.slack(x, j);
            barrier += s.ln();
            grad[c.offset + j + 1] -= mu / s;
            grad[c.offset + j] += mu / s;
        }
        (-(obj + mu * barrier), obj)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Dense row-major inverse-Hessian approximation.
struct InverseHessian {
    n: usize,
    h: Vec<f64>,
    fresh: bool,
}

impl InverseHessian {
    fn identity(n: usize, scale: f64) -> Self {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = scale;
        }
        Self { n, h, fresh: true }
    }

    fn reset(&mut self, scale: f64) {
        *self = Self::identity(self.n, scale);
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            out[i] = dot(&self.h[i * n..(i + 1) * n], v);
        }
    }

    /// Standard BFGS update of the inverse with step `s` and gradient change `y`.
    fn update(&mut self, s: &[f64], y: &[f64]) {
        let sy = dot(s, y);
        if !(sy > 1e-12 * dot(s, s).sqrt() * dot(y, y).sqrt()) {
            return;
        }
        let n = self.n;
        if self.fresh {
            // Shanno-Phua scaling before the first update
            let scale = sy / dot(y, y);
            for v in self.h.iter_mut() {
                *v *= scale;
            }
            self.fresh = false;
        }
        let rho = 1.0 / sy;
        let mut hy = vec![0.0; n];
        self.apply(y, &mut hy);
        let yhy = dot(y, &hy);
        let c = rho * rho * yhy + rho;
        for i in 0..n {
            for j in 0..n {
                self.h[i * n + j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
            }
        }
    }
}

/// Maximizes `problem.objective` subject to the ordering constraints.
///
/// The returned point is feasible and its objective is never below the
/// objective at `problem.start`.
pub fn barrier_maximize<F>(problem: ConstrainedProblem<F>, settings: &BarrierSettings) -> Result<BarrierOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    barrier_maximize_warm(problem, settings, &mut WarmStart::default())
}

/// Curvature carried between related maximizations (successive M-steps).
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    inverse_hessian: Option<Vec<f64>>,
}

/// As [`barrier_maximize`], seeding the quasi-Newton matrix from `warm` and
/// leaving the final one there.
pub fn barrier_maximize_warm<F>(
    mut problem: ConstrainedProblem<F>,
    settings: &BarrierSettings,
    warm: &mut WarmStart,
) -> Result<BarrierOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = problem.start.len();
    let cons = problem.constraints;
    if cons.offset + cons.len > n {
        return Err(Error::Dimension { expected: cons.offset + cons.len, got: n });
    }
    if !(settings.tol > 0.0) {
        return Err(Error::Domain(format!("optimizer tolerance must be positive, got {}", settings.tol)));
    }

    let mut scratch = vec![0.0; n];
    let start_obj = (problem.objective)(&problem.start, &mut scratch);

    let mut x = problem.start.clone();
    let block = &x[cons.offset..cons.offset + cons.len];
    let scale = block.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    cons.make_interior(&mut x, 1e-6 * scale);

    let mut barrier = Barrier { objective: &mut problem.objective, cons, evaluations: 0 };
    let mut grad = vec![0.0; n];
    let mut mu = settings.mu_start;
    let (mut f, mut obj) = barrier.eval(&x, mu, &mut grad);
    if !f.is_finite() {
        return Err(Error::Infeasible("objective is not finite at the starting point".into()));
    }

    let mut hinv = match warm.inverse_hessian.take() {
        Some(h) if h.len() == n * n && h.iter().all(|v| v.is_finite()) => InverseHessian { n, h, fresh: false },
        _ => InverseHessian::identity(n, 1.0 / sup_norm(&grad).max(1.0)),
    };
    let mut stage_objectives = Vec::new();
    let mut iterations = 0usize;
    let mut stationary;

    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut step = vec![0.0; n];
    let mut dgrad = vec![0.0; n];

    loop {
        stationary = false;
        let mut inner = 0usize;
        // accepted steps in a row that did not lower the barrier objective
        let mut flat = 0usize;
        loop {
            if sup_norm(&grad) < settings.tol * obj.abs().max(1.0) {
                stationary = true;
                break;
            }
            if flat >= 10 {
                break;
            }
            if inner >= settings.max_inner_iter {
                return Err(Error::MaxIterations { iterations, best: x });
            }
            inner += 1;
            iterations += 1;

            let mut accepted = false;
            let mut any_finite = false;
            for attempt in 0..2 {
                hinv.apply(&grad, &mut dir);
                dir.iter_mut().for_each(|d| *d = -*d);
                let mut slope = dot(&grad, &dir);
                if !(slope < 0.0) {
                    hinv.reset(1.0 / sup_norm(&grad).max(1.0));
                    hinv.apply(&grad, &mut dir);
                    dir.iter_mut().for_each(|d| *d = -*d);
                    slope = dot(&grad, &dir);
                }
                // fraction-to-boundary rule keeps every slack positive
                let mut alpha: f64 = 1.0;
                for j in 0..cons.count() {
                    let ds = dir[cons.offset + j + 1] - dir[cons.offset + j];
                    if ds < 0.0 {
                        alpha = alpha.min(-0.99 * cons.slack(&x, j) / ds);
                    }
                }
                for _ in 0..60 {
                    for i in 0..n {
                        trial[i] = x[i] + alpha * dir[i];
                    }
                    let (ft, ot) = barrier.eval(&trial, mu, &mut trial_grad);
                    any_finite |= ft.is_finite();
                    if ft.is_finite() && ft <= f + 1e-4 * alpha * slope {
                        flat = if ft < f { 0 } else { flat + 1 };
                        for i in 0..n {
                            step[i] = trial[i] - x[i];
                            dgrad[i] = trial_grad[i] - grad[i];
                        }
                        hinv.update(&step, &dgrad);
                        x.copy_from_slice(&trial);
                        grad.copy_from_slice(&trial_grad);
                        f = ft;
                        obj = ot;
                        accepted = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                if accepted || attempt == 1 {
                    break;
                }
                hinv.reset(1.0 / sup_norm(&grad).max(1.0));
            }
            if !accepted {
                if iterations == 1 && !any_finite {
                    return Err(Error::LineSearchFailure(format!(
                        "no descent from the starting point (gradient sup-norm {:e})",
                        sup_norm(&grad)
                    )));
                }
                // no representable decrease: solved to working precision
                break;
            }
        }
        stage_objectives.push(obj);
        if mu < settings.mu_min {
            break;
        }
        mu *= settings.mu_factor;
        let (fm, om) = barrier.eval(&x, mu, &mut grad);
        f = fm;
        obj = om;
    }

    let evaluations = barrier.evaluations;
    warm.inverse_hessian = Some(hinv.h);
    if !(obj >= start_obj) && start_obj.is_finite() {
        return Ok(BarrierOutcome {
            theta: problem.start,
            objective: start_obj,
            stage_objectives,
            iterations,
            evaluations,
            stationary,
        });
    }
    Ok(BarrierOutcome { theta: x, objective: obj, stage_objectives, iterations, evaluations, stationary })
}
