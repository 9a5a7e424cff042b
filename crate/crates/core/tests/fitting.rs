use proptest::prelude::*;

use transfit::inference::{
    bootstrap_band, bootstrap_band_with, efficient_residuals, estimate_info, score_beta, score_phi_basis, score_rows,
    wald_ci, BootstrapSettings,
};
use transfit::nested::{penalty_trace, LambdaStatus};
use transfit::{
    breast_cosmesis, fit, make_knots, simulate_dataset, update_lambda, Censoring, Dataset, EmSettings, Error,
    FitOptions, IntervalObservation, LinkSpec, Model, ParamState, Scenario, SimConfig,
};

fn sim(config: Scenario, alpha: f64, n: usize, seed: u64) -> Dataset {
    simulate_dataset(&SimConfig::new(config, alpha, n, seed)).unwrap()
}

fn random_state(model: &Model, raw: &[f64]) -> ParamState {
    let d = model.d();
    let q = model.q();
    let mut gamma = vec![raw[d] - 1.5];
    for k in 1..q {
        gamma.push(gamma[k - 1] + 0.4 * raw[d + k].abs() + 0.05);
    }
    ParamState::new(raw[..d].to_vec(), gamma)
}

fn unclamped(model: &Model, theta: &ParamState) -> bool {
    (0..model.n()).all(|i| {
        let l = model.subject_term(theta, i).loglik;
        l > 1e-12f64.ln() + 1.0 && l < (1.0 - 1e-10f64).ln()
    })
}

fn fd_subject(model: &Model, theta: &ParamState, i: usize, k: usize) -> f64 {
    let x = theta.to_vec();
    let h = 1e-6 * x[k].abs().max(1.0);
    let at = |v: f64| {
        let mut y = x.clone();
        y[k] = v;
        model.subject_term(&ParamState::from_slice(model.d(), &y), i).loglik
    };
    (at(x[k] + h) - at(x[k] - h)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn scores_match_per_subject_finite_differences(
        raw in prop::collection::vec(-1.0f64..1.0, 14),
        alpha in prop::sample::select(vec![0.0, 1.0, 2.5]),
        seed in 0u64..5,
    ) {
        let ds = sim(Scenario::C2, alpha, 25, seed);
        let basis = make_knots(&ds.pooled_times(), ds.len(), None).unwrap();
        let model = Model::new(&ds, &basis, LinkSpec::new(alpha).unwrap()).unwrap();
        let theta = random_state(&model, &raw);
        prop_assume!(unclamped(&model, &theta));
        let d = model.d();
        for i in 0..model.n() {
            let sb = score_beta(&model, &theta, i);
            for k in 0..d {
                let fd = fd_subject(&model, &theta, i, k);
                prop_assert!((sb[k] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "beta {i},{k}: {} vs {fd}", sb[k]);
            }
            let sp = score_phi_basis(&model, &theta, i);
            for j in 0..model.q() {
                let fd = fd_subject(&model, &theta, i, d + j);
                prop_assert!((sp[j] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "phi {i},{j}: {} vs {fd}", sp[j]);
            }
            // h = 1 is a location shift of phi
            let shift: f64 = sp.iter().sum();
            let x = theta.to_vec();
            let h = 1e-6;
            let moved = |t: f64| {
                let y: Vec<f64> = x.iter().enumerate().map(|(k, v)| if k >= d { v + t } else { *v }).collect();
                model.subject_term(&ParamState::from_slice(d, &y), i).loglik
            };
            let fd = (moved(h) - moved(-h)) / (2.0 * h);
            prop_assert!((shift - fd).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }
}

#[test]
fn zero_covariates_give_zero_beta_scores() {
    let ds = sim(Scenario::C1, 0.0, 40, 2);
    let obs: Vec<IntervalObservation> = ds
        .observations()
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let z = if i % 3 == 0 { vec![0.0, 0.0] } else { o.covariates().to_vec() };
            IntervalObservation::new(o.status(), o.left(), o.right(), z).unwrap()
        })
        .collect();
    let ds = Dataset::new(obs, ds.covariate_names().to_vec()).unwrap();
    let basis = make_knots(&ds.pooled_times(), ds.len(), None).unwrap();
    let model = Model::new(&ds, &basis, LinkSpec::PH).unwrap();
    let theta = model.initial_state();
    for i in (0..model.n()).step_by(3) {
        assert_eq!(score_beta(&model, &theta, i), vec![0.0, 0.0]);
    }
}

#[test]
fn right_censored_rows_only_use_the_left_endpoint() {
    let ds = sim(Scenario::C1, 0.0, 60, 8);
    let basis = make_knots(&ds.pooled_times(), ds.len(), None).unwrap();
    let model = Model::new(&ds, &basis, LinkSpec::PH).unwrap();
    let theta = model.initial_state();
    let t = |i: usize| model.subject_term(&theta, i);
    for (i, o) in ds.observations().iter().enumerate() {
        let row = score_phi_basis(&model, &theta, i);
        let expect: Vec<f64> = match o.status() {
            Censoring::Right => basis.eval(o.left()).iter().map(|b| b * t(i).d_eta_left).collect(),
            Censoring::Left => basis.eval(o.right()).iter().map(|b| b * t(i).d_eta_right).collect(),
            Censoring::Interval => basis
                .eval(o.left())
                .iter()
                .zip(basis.eval(o.right()))
                .map(|(l, r)| l * t(i).d_eta_left + r * t(i).d_eta_right)
                .collect(),
        };
        for (a, b) in row.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn scores_are_centered_at_an_unpenalized_maximizer() {
    let ds = sim(Scenario::C3, 1.0, 60, 4);
    let basis = make_knots(&ds.pooled_times(), ds.len(), Some(2)).unwrap();
    let model = Model::new(&ds, &basis, LinkSpec::PO).unwrap();
    let settings = EmSettings { tol: 1e-10, max_iter: 50_000, optimizer_tol: 1e-10, ..EmSettings::default() };
    let out = model.em_fixed_lambda(0.0, &model.initial_state(), &settings).unwrap();
    let rows = score_rows(&model, &out.theta);
    let n = model.n() as f64;
    for k in 0..model.d() {
        let col = rows.beta_scores.column(k);
        let sum: f64 = col.iter().sum();
        assert!(sum.abs() < 1e-4, "beta column {k} sums to {sum}");
        let mean = sum / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() <= 1e-3 * sd);
    }
    // shifting every gamma_j keeps monotonicity, so this direction is stationary too
    let shift: f64 = rows.phi_scores.iter().sum();
    assert!(shift.abs() < 1e-4, "{shift}");
}

#[test]
fn efficient_residuals_are_orthogonal_and_information_is_psd() {
    let ds = sim(Scenario::C1, 0.0, 100, 3);
    let res = fit(&ds, LinkSpec::PH, &FitOptions::default()).unwrap();
    let model = Model::new(&ds, &res.basis, res.link).unwrap();
    let rows = score_rows(&model, &res.theta);
    let (r, _) = efficient_residuals(&rows);
    let cross = rows.phi_scores.transpose() * &r;
    assert!(cross.amax() / 100.0 < 1e-8, "{}", cross.amax());

    let info = estimate_info(&res, &ds).unwrap();
    assert!((&info.matrix - info.matrix.transpose()).amax() == 0.0);
    assert!(info.matrix.clone().symmetric_eigen().eigenvalues.min() > 0.0);
    assert!(info.std_errors.iter().all(|s| *s > 0.0));
    assert_eq!(Some(info.std_errors), res.std_errors);
}

#[test]
fn breast_cosmesis_fits() {
    let ds = breast_cosmesis();
    let start = std::time::Instant::now();
    let ph = fit(&ds, LinkSpec::PH, &FitOptions::default()).unwrap();
    let po = fit(&ds, LinkSpec::PO, &FitOptions::default()).unwrap();
    assert!(start.elapsed().as_secs_f64() < 10.0);
    assert!(ph.converged && po.converged);
    let (b, se) = (ph.beta()[0], ph.std_errors.as_ref().unwrap()[0]);
    assert!((0.82..=1.02).contains(&b), "{b}");
    assert!((0.23..=0.34).contains(&se), "{se}");
    let ci = wald_ci(b, se, 0.95);
    assert!((ci.lower - 0.358).abs() < 0.05 && (ci.upper - 1.476).abs() < 0.05, "{ci:?}");
    assert!((0.94..=1.15).contains(&po.beta()[0]), "{}", po.beta()[0]);
}

#[test]
fn duplicated_covariate_is_reported_as_singular() {
    let ds = breast_cosmesis();
    let obs: Vec<IntervalObservation> = ds
        .observations()
        .iter()
        .map(|o| {
            let z = o.covariates()[0];
            IntervalObservation::new(o.status(), o.left(), o.right(), vec![z, z]).unwrap()
        })
        .collect();
    let ds = Dataset::new(obs, vec!["a".into(), "b".into()]).unwrap();
    match fit(&ds, LinkSpec::PH, &FitOptions::default()) {
        Ok(res) => {
            assert!(!res.converged);
            assert!(res.std_errors.is_none());
            assert!(res.diagnostics.messages.iter().any(|m| m.contains("singular")));
            // the two coefficients are only identified through their sum
            assert!((res.beta()[0] + res.beta()[1] - 0.92).abs() < 0.15);
        }
        Err(Error::OuterNonConvergence { best, .. }) => {
            assert!(!best.converged && best.std_errors.is_none());
        }
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn fits_are_deterministic_and_meet_the_outer_rule() {
    for seed in 0..6 {
        let ds = sim(Scenario::C1, 0.0, 100, seed);
        let a = fit(&ds, LinkSpec::PH, &FitOptions::default()).unwrap();
        let b = fit(&ds, LinkSpec::PH, &FitOptions::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.converged);
        assert!(a.diagnostics.final_step < 1e-6);
        assert!(a.diagnostics.fs_numerators.iter().all(|v| *v >= 0.0), "{:?}", a.diagnostics.fs_numerators);
        assert!(a.std_errors.as_ref().unwrap().iter().all(|s| *s > 0.0));
        assert!(a.info().symmetric_eigen().eigenvalues.min() > 0.0);
        assert!(a.theta.is_monotone(1e-10));
        let path = &a.diagnostics.lambda_path;
        let ratio = path[path.len() - 1] / path[path.len() - 2];
        let stable = (0.99..=1.01).contains(&ratio);
        // otherwise the update has no finite fixed point and lambda grows until
        // gamma is affine to within the outer tolerance
        let gram_norm = transfit::penalty_matrix(a.basis.dim()).unwrap().norm_sq(&a.theta.gamma);
        assert!(stable || (ratio > 1.0 && a.lambda > 1e3 && gram_norm < 1e-6), "seed {seed}: {path:?}");
    }
}

#[test]
fn lambda_stabilizes_on_seeded_data() {
    let ds = sim(Scenario::C1, 0.0, 100, 1);
    let res = fit(&ds, LinkSpec::PH, &FitOptions::default()).unwrap();
    let path = &res.diagnostics.lambda_path;
    let ratio = path[path.len() - 1] / path[path.len() - 2];
    assert!((0.99..=1.01).contains(&ratio), "{path:?}");
}

#[test]
fn plain_fellner_schall_iteration_reaches_the_same_fixed_point() {
    let ds = sim(Scenario::C1, 0.0, 100, 1);
    let fast = fit(&ds, LinkSpec::PH, &FitOptions::default()).unwrap();
    let plain = FitOptions { extrapolate: false, max_outer: 500, ..FitOptions::default() };
    let slow = match fit(&ds, LinkSpec::PH, &plain) {
        Ok(r) => r,
        Err(Error::OuterNonConvergence { best, .. }) => *best,
        Err(e) => panic!("{e}"),
    };
    let rel = (fast.lambda.ln() - slow.lambda.ln()).abs();
    assert!(rel < 0.05, "{} vs {}", fast.lambda, slow.lambda);
    assert!((fast.beta()[0] - slow.beta()[0]).abs() < 1e-3);
}

#[test]
fn fellner_schall_update_cases() {
    assert!((penalty_trace(6).unwrap() - 4.0).abs() < 1e-9);

    let ds = sim(Scenario::C1, 0.0, 80, 6);
    let basis = make_knots(&ds.pooled_times(), ds.len(), None).unwrap();
    let model = Model::new(&ds, &basis, LinkSpec::PH).unwrap();

    let affine = ParamState::new(vec![0.0, 0.0], (0..basis.dim()).map(|j| -2.0 + 0.5 * j as f64).collect());
    let upd = update_lambda(&model, &affine, 2.0).unwrap();
    assert_eq!(upd.status, LambdaStatus::AffineGamma);
    assert_eq!(upd.lambda, 2.0);

    let theta = model.em_fixed_lambda(1.0, &model.initial_state(), &EmSettings::default()).unwrap().theta;
    let upd = update_lambda(&model, &theta, 1.0).unwrap();
    assert!(upd.numerator >= 0.0);
    assert!(upd.denominator > 0.0);
    assert!(matches!(upd.status, LambdaStatus::Updated));
    let expect = (upd.numerator / upd.denominator).sqrt();
    assert!((upd.lambda - expect).abs() < 1e-12 * expect);
}

#[test]
fn invalid_fit_options_are_rejected() {
    let ds = breast_cosmesis();
    for bad in [
        FitOptions { lambda_init: 0.0, ..FitOptions::default() },
        FitOptions { outer_tol: -1.0, ..FitOptions::default() },
        FitOptions { max_outer: 0, ..FitOptions::default() },
    ] {
        assert!(matches!(fit(&ds, LinkSpec::PH, &bad), Err(Error::Domain(_))));
    }
}

#[test]
fn bootstrap_with_identical_resamples_collapses_the_band() {
    let ds = breast_cosmesis();
    let n = ds.len();
    let indices: Vec<usize> = (0..n).map(|i| (i * 7) % n).collect();
    let grid = [10.0, 20.0, 30.0];
    let settings = BootstrapSettings { resamples: 2, seed: 0, level: 0.95, threads: 1 };
    let band =
        bootstrap_band_with(&ds, LinkSpec::PH, &grid, &settings, &FitOptions::default(), |_| indices.clone()).unwrap();
    let refit = fit(&ds.resample(&indices).unwrap(), LinkSpec::PH, &FitOptions::default()).unwrap();
    for (k, &t) in grid.iter().enumerate() {
        assert_eq!(band.lower[k], band.upper[k]);
        assert!((band.lower[k] - refit.phi(t)).abs() < 1e-12);
    }
    assert_eq!(band.failures, 0);
}

#[test]
fn bootstrap_is_deterministic_and_brackets_the_estimate() {
    let ds = sim(Scenario::C1, 0.0, 100, 12);
    let times = ds.pooled_times();
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(0.0, f64::max);
    let grid: Vec<f64> = (0..20).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / 20.0).collect();
    let settings = BootstrapSettings { resamples: 60, seed: 5, level: 0.95, threads: 1 };
    let a = bootstrap_band(&ds, LinkSpec::PH, &grid, &settings, &FitOptions::default()).unwrap();
    let b = bootstrap_band(&ds, LinkSpec::PH, &grid, &BootstrapSettings { threads: 3, ..settings }, &FitOptions::default())
        .unwrap();
    assert_eq!(a, b);
    let inside = (0..grid.len()).filter(|&k| a.lower[k] <= a.phi_hat[k] && a.phi_hat[k] <= a.upper[k]).count();
    assert!(inside as f64 >= 0.9 * grid.len() as f64, "{inside} of {}", grid.len());
    assert!(a.to_csv().starts_with("t,phi_hat,lower,upper\n"));
}

#[test]
fn breast_cosmesis_band_is_monotone() {
    let ds = breast_cosmesis();
    let grid: Vec<f64> = (0..15).map(|k| 5.0 + 3.0 * k as f64).collect();
    let settings = BootstrapSettings { resamples: 200, seed: 2024, level: 0.95, threads: 1 };
    let band = bootstrap_band(&ds, LinkSpec::PH, &grid, &settings, &FitOptions::default()).unwrap();
    assert!(band.failures as f64 <= 0.2 * 200.0);
    for w in band.lower.windows(2).chain(band.upper.windows(2)) {
        assert!(w[1] >= w[0] - 1e-9, "{w:?}");
    }
}

#[test]
fn bootstrap_preconditions() {
    let ds = breast_cosmesis();
    let one = BootstrapSettings { resamples: 1, ..BootstrapSettings::default() };
    assert!(matches!(
        bootstrap_band(&ds, LinkSpec::PH, &[10.0], &one, &FitOptions::default()),
        Err(Error::Domain(_))
    ));
    let ok = BootstrapSettings { resamples: 2, ..BootstrapSettings::default() };
    assert!(matches!(
        bootstrap_band(&ds, LinkSpec::PH, &[1e6], &ok, &FitOptions::default()),
        Err(Error::Domain(_))
    ));
}
