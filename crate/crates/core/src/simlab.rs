//! Simulation designs, the Monte Carlo replication engine and Wald-test
//! power curves.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Exp, Open01, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, IntervalObservation};
use crate::error::{Error, Result};
use crate::inference::wald_ci;
use crate::link::LinkSpec;
use crate::nested::{fit, FitOptions, FitResult};
use crate::parallel::map_indexed;
use crate::rng::{stream, Purpose};
use crate::stats::{mean, normal_quantile, sample_sd};

/// Mean of the exponential gaps between examinations.
pub const GAP_MEAN: f64 = 0.5;
/// Mean of the Poisson number of extra examinations.
pub const EXTRA_EXAMS_MEAN: f64 = 1.0;
/// A Monte Carlo summary is flagged above this failure fraction.
pub const MAX_MC_FAILURE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    C1,
    C2,
    C3,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::C1, Scenario::C2, Scenario::C3];

    pub fn default_beta(&self) -> [f64; 2] {
        match self {
            Scenario::C1 => [-1.0, -1.0],
            Scenario::C2 => [-1.0, 1.0],
            Scenario::C3 => [1.0, -1.0],
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::C1 => "C1",
            Scenario::C2 => "C2",
            Scenario::C3 => "C3",
        };
        f.write_str(s)
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "C1" | "1" => Ok(Scenario::C1),
            "C2" | "2" => Ok(Scenario::C2),
            "C3" | "3" => Ok(Scenario::C3),
            other => Err(Error::Domain(format!("unknown configuration '{other}' (expected C1, C2 or C3)"))),
        }
    }
}

fn c3_inner(t: f64) -> f64 {
    (3.0 * t).ln_1p() + t / 3.0
}

/// True baseline transformation of a configuration.
pub fn phi_true(sc: Scenario, t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("phi is defined for finite t > 0, got {t}")));
    }
    Ok(match sc {
        Scenario::C1 => ((t * t + t) / 5.0).ln(),
        Scenario::C2 => t.ln(),
        Scenario::C3 => c3_inner(t).ln(),
    })
}

/// Solves `phi(t) = v`.
pub fn phi_inverse(sc: Scenario, v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::Domain(format!("phi inverse needs a finite value, got {v}")));
    }
    Ok(match sc {
        Scenario::C1 => {
            // t^2 + t = 5 e^v, written to avoid cancellation for small e^v
            let c = 5.0 * v.exp();
            2.0 * c / (1.0 + (1.0 + 4.0 * c).sqrt())
        }
        Scenario::C2 => v.exp(),
        Scenario::C3 => c3_inverse(v.exp()),
    })
}

/// Root of `log(1 + 3t) + t/3 = target` by safeguarded Newton.
fn c3_inverse(target: f64) -> f64 {
    let mut lo = 1e-12;
    if c3_inner(lo) >= target {
        return lo;
    }
    let mut hi = 1.0;
    while c3_inner(hi) < target {
        lo = hi;
        hi *= 2.0;
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = c3_inner(t) - target;
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let deriv = 3.0 / (1.0 + 3.0 * t) + 1.0 / 3.0;
        let mut next = t - f / deriv;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-12 * t.max(1e-12) || hi - lo <= 1e-15 * hi {
            return next;
        }
        t = next;
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub config: Scenario,
    pub alpha: f64,
    pub n: usize,
    pub seed: u64,
    pub beta_true: Vec<f64>,
}

impl SimConfig {
    pub fn new(config: Scenario, alpha: f64, n: usize, seed: u64) -> Self {
        Self { config, alpha, n, seed, beta_true: config.default_beta().to_vec() }
    }

    pub fn validate(&self) -> Result<LinkSpec> {
        if self.n == 0 {
            return Err(Error::Domain("sample size must be positive".into()));
        }
        if self.beta_true.len() != 2 || self.beta_true.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("beta_true must hold two finite values".into()));
        }
        LinkSpec::new(self.alpha)
    }
}

/// Inverse-CDF draw of the failure time: `T = phi^{-1}(g(u) - z'beta)`.
pub fn failure_time(sc: &SimConfig, link: LinkSpec, z: &[f64], u: f64) -> Result<f64> {
    let zb: f64 = z.iter().zip(&sc.beta_true).map(|(z, b)| z * b).sum();
    phi_inverse(sc.config, link.eval(u) - zb)
}

/// Draws one subject: covariates, failure time and the examination schedule.
fn draw_subject<R: Rng>(rng: &mut R, sc: &SimConfig, link: LinkSpec) -> Result<IntervalObservation> {
    let z1 = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
    let z2: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.sample(Open01);
    let t = failure_time(sc, link, &[z1, z2], u)?;

    let extra: f64 = rng.sample(Poisson::new(EXTRA_EXAMS_MEAN).expect("valid Poisson mean"));
    let k = 1 + extra as usize;
    let gap = Exp::new(1.0 / GAP_MEAN).expect("valid exponential rate");
    let mut prev = 0.0;
    let mut exam = 0.0;
    for j in 0..k {
        exam += rng.sample::<f64, _>(gap);
        if t <= exam {
            let z = vec![z1, z2];
            return if j == 0 {
                IntervalObservation::left_censored(exam, z)
            } else {
                IntervalObservation::interval_censored(prev, exam, z)
            };
        }
        prev = exam;
    }
    IntervalObservation::right_censored(prev, vec![z1, z2])
}

fn simulate_replicate(sc: &SimConfig, replicate: u64) -> Result<Dataset> {
    let link = sc.validate()?;
    let mut rng = stream(sc.seed, replicate, Purpose::Simulate);
    let obs = (0..sc.n).map(|_| draw_subject(&mut rng, sc, link)).collect::<Result<Vec<_>>>()?;
    Dataset::new(obs, vec!["z1".into(), "z2".into()])
}

/// One simulated dataset; identical to replicate 0 of [`mc_replicate`].
pub fn simulate_dataset(sc: &SimConfig) -> Result<Dataset> {
    simulate_replicate(sc, 0)
}

/// Dataset for replicate `r` of a Monte Carlo run.
pub fn simulate_replicate_dataset(sc: &SimConfig, r: u64) -> Result<Dataset> {
    simulate_replicate(sc, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub reps: usize,
    pub knots: Option<usize>,
    /// Link used for fitting; the generating link when `None`.
    pub fit_alpha: Option<f64>,
    pub threads: usize,
    pub level: f64,
    pub fit: FitOptions,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { reps: 1000, knots: None, fit_alpha: None, threads: 1, level: 0.95, fit: FitOptions::default() }
    }
}

/// What one replicate contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub right_censor_rate: f64,
    pub beta_hat: Option<Vec<f64>>,
    pub std_errors: Option<Vec<f64>>,
    pub lambda: Option<f64>,
    pub min_fs_numerator: Option<f64>,
    pub em_min_increment: Option<f64>,
    /// `phi_hat` nondecreasing on a 200-point grid over the boundary knots.
    pub phi_monotone: Option<bool>,
    pub failure: Option<String>,
}

impl ReplicateRecord {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefSummary {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    /// Missing with fewer than two successful replicates.
    pub sd: Option<f64>,
    pub ase: f64,
    pub mse: f64,
    /// Coverage of the Wald interval, in percent.
    pub cp95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCSummary {
    pub config: SimConfig,
    pub fit_alpha: f64,
    pub knots: Option<usize>,
    pub coefficients: Vec<CoefSummary>,
    pub replications: usize,
    pub failures: usize,
    /// Mean right-censored fraction over all generated datasets.
    pub right_censor_rate: f64,
    /// Failure fraction above [`MAX_MC_FAILURE`].
    pub flagged: bool,
    pub records: Vec<ReplicateRecord>,
}

fn phi_is_monotone(res: &FitResult) -> bool {
    let (lo, hi) = res.basis.boundary_knots();
    let mut prev = f64::NEG_INFINITY;
    for k in 0..200 {
        let t = lo + (hi - lo) * k as f64 / 199.0;
        let v = res.phi(t);
        if v < prev - 1e-10 {
            return false;
        }
        prev = v;
    }
    true
}

fn run_replicate(sc: &SimConfig, link: LinkSpec, opts: &FitOptions, r: usize) -> ReplicateRecord {
    let mut rec = ReplicateRecord {
        replicate: r,
        right_censor_rate: f64::NAN,
        beta_hat: None,
        std_errors: None,
        lambda: None,
        min_fs_numerator: None,
        em_min_increment: None,
        phi_monotone: None,
        failure: None,
    };
    let ds = match simulate_replicate(sc, r as u64) {
        Ok(ds) => ds,
        Err(e) => {
            rec.failure = Some(e.to_string());
            return rec;
        }
    };
    rec.right_censor_rate = ds.right_censored_fraction();
    let res = match fit(&ds, link, opts) {
        Ok(res) => res,
        Err(Error::OuterNonConvergence { best, .. }) => {
            rec.failure = Some("smoothing-parameter loop did not converge".into());
            *best
        }
        Err(e) => {
            rec.failure = Some(e.to_string());
            return rec;
        }
    };
    if rec.failure.is_none() && !res.converged {
        rec.failure = Some(res.diagnostics.messages.join("; "));
    }
    rec.beta_hat = Some(res.theta.beta.clone());
    rec.std_errors = res.std_errors.clone();
    rec.lambda = Some(res.lambda);
    rec.min_fs_numerator = res.diagnostics.fs_numerators.iter().copied().reduce(f64::min);
    rec.em_min_increment = Some(res.diagnostics.em_min_increment);
    rec.phi_monotone = Some(phi_is_monotone(&res));
    rec
}

/// Runs `reps` independent simulate, fit and Wald pipelines and aggregates
/// bias, SD, ASE, MSE and coverage over the successful replicates.
pub fn mc_replicate(sc: &SimConfig, options: &McOptions) -> Result<MCSummary> {
    sc.validate()?;
    if options.reps == 0 {
        return Err(Error::Domain("need at least one replication".into()));
    }
    let fit_alpha = options.fit_alpha.unwrap_or(sc.alpha);
    let link = LinkSpec::new(fit_alpha)?;
    let mut fit_opts = options.fit;
    if options.knots.is_some() {
        fit_opts.interior_knots = options.knots;
    }
    fit_opts.validate()?;

    let records = map_indexed(options.threads, options.reps, |r| run_replicate(sc, link, &fit_opts, r))?;
    Ok(summarize(sc, fit_alpha, options, records))
}

fn summarize(sc: &SimConfig, fit_alpha: f64, options: &McOptions, records: Vec<ReplicateRecord>) -> MCSummary {
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.succeeded()).collect();
    let failures = records.len() - ok.len();
    let rates: Vec<f64> = records.iter().map(|r| r.right_censor_rate).filter(|v| v.is_finite()).collect();
    let right_censor_rate = if rates.is_empty() { f64::NAN } else { mean(&rates) };
    let z = normal_quantile(0.5 * (1.0 + options.level));

    let coefficients = (0..sc.beta_true.len())
        .map(|k| {
            let truth = sc.beta_true[k];
            let est: Vec<f64> = ok.iter().map(|r| r.beta_hat.as_ref().unwrap()[k]).collect();
            let se: Vec<f64> = ok.iter().map(|r| r.std_errors.as_ref().unwrap()[k]).collect();
            let covered = est.iter().zip(&se).filter(|(b, s)| (*b - truth).abs() <= z * *s).count();
            let m = est.len() as f64;
            CoefSummary {
                name: format!("beta{}", k + 1),
                truth,
                bias: mean(&est) - truth,
                sd: sample_sd(&est),
                ase: mean(&se),
                mse: est.iter().map(|b| (b - truth).powi(2)).sum::<f64>() / m,
                cp95: 100.0 * covered as f64 / m,
            }
        })
        .collect();
    MCSummary {
        config: sc.clone(),
        fit_alpha,
        knots: options.knots,
        coefficients,
        replications: records.len(),
        failures,
        right_censor_rate,
        flagged: failures as f64 > MAX_MC_FAILURE * records.len() as f64,
        records,
    }
}

impl MCSummary {
    pub const CSV_HEADER: &'static str =
        "config,alpha,fit_alpha,n,knots,reps,failures,right_censor_rate,coefficient,truth,bias,sd,mse,ase,cp95\n";

    pub fn csv_rows(&self) -> String {
        let knots = self.knots.map(|k| k.to_string()).unwrap_or_else(|| "auto".into());
        let mut out = String::new();
        for c in &self.coefficients {
            let sd = c.sd.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                self.config.config,
                self.config.alpha,
                self.fit_alpha,
                self.config.n,
                knots,
                self.replications,
                self.failures,
                self.right_censor_rate,
                c.name,
                c.truth,
                c.bias,
                sd,
                c.mse,
                c.ase,
                c.cp95
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}{}", Self::CSV_HEADER, self.csv_rows())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub beta1: f64,
    pub rejection_rate: f64,
    pub replications: usize,
    pub failures: usize,
}

/// Rejection rate of the level-0.05 Wald test of `beta_1 = 0` for each value
/// of the true `beta_1` in `grid`. Every grid point reuses the same replicate
/// seeds, so the curve is computed with common random numbers.
pub fn power_curve(template: &SimConfig, grid: &[f64], options: &McOptions) -> Result<Vec<PowerPoint>> {
    if grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::Domain("power grid values must be finite".into()));
    }
    grid.iter()
        .map(|&b1| {
            let mut sc = template.clone();
            sc.beta_true[0] = b1;
            let summary = mc_replicate(&sc, options)?;
            let ok: Vec<&ReplicateRecord> = summary.records.iter().filter(|r| r.succeeded()).collect();
            let rejected = ok
                .iter()
                .filter(|r| {
                    let ci = wald_ci(r.beta_hat.as_ref().unwrap()[0], r.std_errors.as_ref().unwrap()[0], 0.95);
                    ci.lower > 0.0 || ci.upper < 0.0
                })
                .count();
            Ok(PowerPoint {
                beta1: b1,
                rejection_rate: rejected as f64 / ok.len().max(1) as f64,
                replications: summary.replications,
                failures: summary.failures,
            })
        })
        .collect()
}

pub fn power_csv(config: &SimConfig, points: &[PowerPoint]) -> String {
    let mut out = String::from("config,alpha,n,beta1,rejection_rate,reps,failures\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            config.config, config.alpha, config.n, p.beta1, p.rejection_rate, p.replications, p.failures
        ));
    }
    out
}
