use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use levy_gqic::criteria::{scale_criterion, ScaleStats};
use levy_gqic::estimator::{self, fit_drift, fit_scale, from_rows, nu_hats};
use levy_gqic::experiment::Case;
use levy_gqic::model::registry;
use levy_gqic::sde::{euler_path, TrueModelSpec, DEFAULT_REFINE};
use levy_gqic::{CandidateModel, OptConfig, RngStream, SamplePath, ScaleCriterionKind};

const ALPHA0: f64 = 0.5;
const GAMMA0: f64 = 3.0;

fn benchmark_path(case: Case, n: usize, h: f64, seed: u64, stream: u64) -> SamplePath {
    let truth = TrueModelSpec::benchmark().build().unwrap();
    euler_path(&truth, &case.noise(), n, h, DEFAULT_REFINE, &RngStream::new(seed, stream)).unwrap()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[test]
fn optimizer_matches_closed_forms() {
    let cfg = OptConfig::default();
    let model = CandidateModel::from_names("Scale2", "Drift2").unwrap();
    let scale1 = registry("Scale1").unwrap();
    for r in 0..100 {
        let path = benchmark_path(Case::I, 500, 0.01, 77, r);

        let ss: f64 = path.steps().map(|(_, d)| d * d).sum();
        let closed = (ss / path.t_end()).sqrt();
        let fitted = fit_scale(&path, &scale1, &cfg).unwrap().gamma_hat[0];
        assert!((fitted - closed).abs() <= 1e-6 * closed, "path {r}: Scale1 {fitted} vs {closed}");

        // weighted least squares for a(x) = -alpha x under a fixed scale
        let gamma = fit_scale(&path, &model.scale, &cfg).unwrap().gamma_hat;
        let (mut num, mut den) = (0.0, 0.0);
        for (x, dx) in path.steps() {
            let s = model.scale.eval(x, &gamma).powi(2);
            num += x * dx / s;
            den += x * x / s;
        }
        let closed = -num / (path.h() * den);
        if closed.abs() < 9.0 {
            let fitted = fit_drift(&path, &model, &gamma, &cfg).unwrap().alpha_hat[0];
            assert!((fitted - closed).abs() <= 1e-6 * (1.0 + closed.abs()), "path {r}: Drift2 {fitted} vs {closed}");
        }
    }
}

fn mean_nu4(case: Case, n: usize, h: f64, reps: u64) -> f64 {
    let scale = registry("Scale2").unwrap();
    let nu4: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| nu_hats(&benchmark_path(case, n, h, 5, r), &scale, &[GAMMA0]).unwrap().1)
        .collect();
    mean(&nu4)
}

#[test]
fn fourth_moment_estimate_nig() {
    // the estimate carries a 3h Gaussian term, kept small by a fine step
    let m = mean_nu4(Case::I, 10_000, 0.001, 100);
    assert!((m - 0.03).abs() <= 0.2 * 0.03, "mean nu4 {m}");
}

#[test]
fn fourth_moment_estimate_bilateral_gamma() {
    // Raw increments carry the drift: after a large jump |x| ~ 10 and
    // (h a / c)^4 per step is ~8 at h = 0.01, so a fine step is needed. The
    // eighth Levy moment (~630 per unit time) calls for a long pooled horizon.
    let m = mean_nu4(Case::Ii, 100_000, 0.001, 200);
    assert!((m - 3.0).abs() <= 0.2 * 3.0, "mean nu4 {m}");
}

#[test]
fn sandwich_and_scalar_penalties_agree() {
    let model = CandidateModel::from_names("Scale2", "Drift2").unwrap();
    for r in 0..5 {
        let path = benchmark_path(Case::I, 10_000, 0.01, 19, r);
        let fit = estimator::fit(&path, &model, &OptConfig::default()).unwrap();
        let stats = ScaleStats::from(&fit);
        let base = -2.0 * fit.h1_value;
        let sandwich = scale_criterion(&stats, ScaleCriterionKind::GQAIC1, 0.2).unwrap().value - base;
        let scalar = scale_criterion(&stats, ScaleCriterionKind::GQAIC1_SCALAR, 0.2).unwrap().value - base;
        assert!((sandwich - scalar).abs() <= 0.05 * scalar, "path {r}: {sandwich} vs {scalar}");
    }
}

#[test]
fn second_moment_settles_on_long_paths() {
    let path = benchmark_path(Case::Gaussian, 50_000, 0.01, 23, 0);
    let v = path.values();
    let half = v.len() / 2;
    let m1 = v[..half].iter().map(|x| x * x).sum::<f64>() / half as f64;
    let m2 = v[half..].iter().map(|x| x * x).sum::<f64>() / (v.len() - half) as f64;
    assert!((m1 - m2).abs() / m1.max(m2) < 0.10, "halves {m1} and {m2}");
}

#[test]
fn studentized_estimates_look_normal() {
    let (n, h) = (5_000, 0.01);
    let model = CandidateModel::from_names("Scale2", "Drift2").unwrap();
    let theta0 = DVector::from_vec(vec![ALPHA0, GAMMA0]);
    let z: Vec<DVector<f64>> = (0..500u64)
        .into_par_iter()
        .filter_map(|r| {
            let path = benchmark_path(Case::Gaussian, n, h, 41, r);
            let fit = estimator::fit(&path, &model, &OptConfig::default()).ok()?;
            let v = from_rows(fit.v_hat.as_ref()?).ok()?;
            let eig = SymmetricEigen::new(v);
            if eig.eigenvalues.iter().any(|l| *l <= 0.0) {
                return None;
            }
            let inv_sqrt = &eig.eigenvectors
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
                * eig.eigenvectors.transpose();
            let err = DVector::from_vec(fit.theta_hat()) - &theta0;
            Some(inv_sqrt * err * path.t_end().sqrt())
        })
        .collect();
    assert!(z.len() >= 495, "only {} usable replications", z.len());
    for k in 0..2 {
        let x: Vec<f64> = z.iter().map(|v| v[k]).collect();
        let m = mean(&x);
        let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64;
        let skew = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / x.len() as f64 / m2.powf(1.5);
        let kurt = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / x.len() as f64 / (m2 * m2) - 3.0;
        assert!(skew.abs() < 0.3 && kurt.abs() < 0.6, "component {k}: skew {skew:.3}, excess kurtosis {kurt:.3}");
    }
}
