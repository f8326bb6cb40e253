//! Two-stage GQMLE: scale by maximizing `h1`, then drift by maximizing `h2`
//! at the scale estimate; plus the empirical information, noise and
//! sandwich-variance quantities built from the fitted residuals.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gqlf::{self, DriftObjective};
use crate::model::{CandidateModel, Coefficient, CoefficientInfo};
use crate::optim::{self, OptConfig};
use crate::sde::{PathMeta, SamplePath};

/// Condition number above which a matrix is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Row-major dense matrix as serialized in reports.
pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFit {
    pub gamma_hat: Vec<f64>,
    pub h1_value: f64,
    pub converged: bool,
    pub boundary_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftFit {
    pub alpha_hat: Vec<f64>,
    pub h2_value: f64,
    pub converged: bool,
    pub boundary_hit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFlags {
    pub scale: bool,
    pub drift: bool,
}

/// Full two-stage fit of one candidate. Parameter ordering in `sigma_hat`
/// and `v_hat` is alpha first, then gamma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub scale: CoefficientInfo,
    pub drift: CoefficientInfo,
    pub meta: PathMeta,
    pub gamma_hat: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub h1_value: f64,
    pub h2_value: f64,
    pub gamma_gamma_hat: Matrix,
    pub gamma_alpha_hat: Matrix,
    pub w_gamma_hat: Matrix,
    pub w_alphagamma_hat: Matrix,
    pub sigma_hat: Matrix,
    /// `None` when the information matrix is singular; see `v_hat_error`.
    pub v_hat: Option<Matrix>,
    pub v_hat_error: Option<String>,
    pub nu2_hat: f64,
    pub nu4_hat: f64,
    pub converged: StageFlags,
    pub boundary_hit: StageFlags,
}

impl FitResult {
    pub fn p_gamma(&self) -> usize {
        self.gamma_hat.len()
    }

    pub fn p_alpha(&self) -> usize {
        self.alpha_hat.len()
    }

    /// Estimates in `v_hat` order (alpha, then gamma).
    pub fn theta_hat(&self) -> Vec<f64> {
        self.alpha_hat.iter().chain(&self.gamma_hat).copied().collect()
    }
}

/// Empirical information and noise matrices at a fitted parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMatrices {
    pub gamma_gamma: DMatrix<f64>,
    pub gamma_alpha: DMatrix<f64>,
    pub w_gamma: DMatrix<f64>,
    /// `p_alpha x p_gamma`.
    pub w_alphagamma: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

pub fn fit_scale(path: &SamplePath, scale: &Coefficient, cfg: &OptConfig) -> Result<ScaleFit> {
    let f = |g: &[f64]| gqlf::h1(path, scale, g);
    let out = optim::maximize(&f, scale.bounds(), cfg)
        .map_err(|e| relabel(e, scale.name()))?;
    Ok(ScaleFit { gamma_hat: out.x, h1_value: out.value, converged: out.converged, boundary_hit: out.boundary_hit })
}

pub fn fit_drift(path: &SamplePath, model: &CandidateModel, gamma_hat: &[f64], cfg: &OptConfig) -> Result<DriftFit> {
    if model.p_alpha() == 0 {
        return Err(Error::Precondition("drift candidates need at least one parameter".into()));
    }
    let obj = DriftObjective::new(path, &model.scale, gamma_hat)?;
    let f = |a: &[f64]| obj.h2(&model.drift, a);
    let out = optim::maximize(&f, model.drift.bounds(), cfg)
        .map_err(|e| relabel(e, model.drift.name()))?;
    Ok(DriftFit { alpha_hat: out.x, h2_value: out.value, converged: out.converged, boundary_hit: out.boundary_hit })
}

fn relabel(e: Error, name: &str) -> Error {
    match e {
        Error::AllStartsFailed(msg) => Error::AllStartsFailed(format!("{name} ({msg})")),
        other => other,
    }
}

/// Two-stage fit with all empirical quantities. A singular information
/// matrix leaves `v_hat` empty instead of failing the fit.
pub fn fit(path: &SamplePath, model: &CandidateModel, cfg: &OptConfig) -> Result<FitResult> {
    let sf = fit_scale(path, &model.scale, cfg)?;
    let df = fit_drift(path, model, &sf.gamma_hat, cfg)?;
    assemble(path, model, &sf, &df)
}

/// Build a `FitResult` from already computed stage fits.
pub fn assemble(path: &SamplePath, model: &CandidateModel, sf: &ScaleFit, df: &DriftFit) -> Result<FitResult> {
    let (gg, ga, wg, wag) = information_blocks(path, model, &sf.gamma_hat, &df.alpha_hat)?;
    let sigma = assemble_sigma(&ga, &wg, &wag);
    let (v_hat, v_hat_error) = match sandwich(&ga, &gg, &sigma) {
        Ok(v) => (Some(to_rows(&v)), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (nu2_hat, nu4_hat) = nu_hats(path, &model.scale, &sf.gamma_hat)?;
    Ok(FitResult {
        scale: model.scale.info(),
        drift: model.drift.info(),
        meta: path.meta(),
        gamma_hat: sf.gamma_hat.clone(),
        alpha_hat: df.alpha_hat.clone(),
        h1_value: sf.h1_value,
        h2_value: df.h2_value,
        gamma_gamma_hat: to_rows(&gg),
        gamma_alpha_hat: to_rows(&ga),
        w_gamma_hat: to_rows(&wg),
        w_alphagamma_hat: to_rows(&wag),
        sigma_hat: to_rows(&sigma),
        v_hat,
        v_hat_error,
        nu2_hat,
        nu4_hat,
        converged: StageFlags { scale: sf.converged, drift: df.converged },
        boundary_hit: StageFlags { scale: sf.boundary_hit, drift: df.boundary_hit },
    })
}

/// Drift residuals `chi_j = Delta_j X - h a(X_{t_{j-1}}, alpha)`.
pub fn residuals(path: &SamplePath, drift: &Coefficient, alpha: &[f64]) -> Vec<f64> {
    let h = path.h();
    path.steps().map(|(x, dx)| dx - h * drift.eval(x, alpha)).collect()
}

/// `(Gamma_gamma, W_gamma)` of the scale stage given drift residuals `chi`.
pub fn scale_information(
    path: &SamplePath,
    scale: &Coefficient,
    gamma_hat: &[f64],
    chi: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if chi.len() != path.n() {
        return Err(Error::ShapeMismatch(format!("{} residuals for {} increments", chi.len(), path.n())));
    }
    let p = gamma_hat.len();
    let mut gg = DMatrix::zeros(p, p);
    let mut wg = DMatrix::zeros(p, p);
    let mut dc = vec![0.0; p];
    let mut u = nalgebra::DVector::zeros(p);
    for (j, ((x, _), &r)) in path.steps().zip(chi).enumerate() {
        let c = scale.eval(x, gamma_hat);
        let s = checked(c, j)?;
        scale.grad_into(x, gamma_hat, &mut dc)?;
        for k in 0..p {
            // dS / S with dS = 2 c dc
            u[k] = 2.0 * c * dc[k] / s;
        }
        gg.ger(1.0, &u, &u, 1.0);
        let w = r * r / s;
        wg.ger(w * w, &u, &u, 1.0);
    }
    let n = path.n() as f64;
    gg /= 2.0 * n;
    wg /= 4.0 * path.t_end();
    Ok((gg, wg))
}

fn checked(c: f64, j: usize) -> Result<f64> {
    let s = c * c;
    if s >= gqlf::S_MIN && s.is_finite() {
        Ok(s)
    } else {
        Err(Error::DegenerateScale { index: j + 1, value: s, guard: gqlf::S_MIN })
    }
}

type Blocks = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

/// `(Gamma_gamma, Gamma_alpha, W_gamma, W_alphagamma)` at `(gamma_hat, alpha_hat)`.
pub fn information_blocks(path: &SamplePath, model: &CandidateModel, gamma_hat: &[f64], alpha_hat: &[f64]) -> Result<Blocks> {
    let chi = residuals(path, &model.drift, alpha_hat);
    let (gg, wg) = scale_information(path, &model.scale, gamma_hat, &chi)?;
    let (pa, pg) = (alpha_hat.len(), gamma_hat.len());
    let mut ga = DMatrix::zeros(pa, pa);
    let mut wag = DMatrix::zeros(pa, pg);
    let mut dc = vec![0.0; pg];
    let mut da = vec![0.0; pa];
    let mut u = nalgebra::DVector::zeros(pg);
    let mut v = nalgebra::DVector::zeros(pa);
    for (j, ((x, _), &r)) in path.steps().zip(&chi).enumerate() {
        let c = model.scale.eval(x, gamma_hat);
        let s = checked(c, j)?;
        model.scale.grad_into(x, gamma_hat, &mut dc)?;
        model.drift.grad_into(x, alpha_hat, &mut da)?;
        for k in 0..pg {
            u[k] = 2.0 * c * dc[k] / (s * s) * r * r;
        }
        for k in 0..pa {
            v[k] = da[k];
        }
        ga.ger(1.0 / s, &v, &v, 1.0);
        wag.ger(r / s, &v, &u, 1.0);
    }
    ga /= path.n() as f64;
    wag /= 2.0 * path.t_end();
    Ok((gg, ga, wg, wag))
}

fn assemble_sigma(ga: &DMatrix<f64>, wg: &DMatrix<f64>, wag: &DMatrix<f64>) -> DMatrix<f64> {
    let (pa, pg) = (ga.nrows(), wg.nrows());
    let mut sigma = DMatrix::zeros(pa + pg, pa + pg);
    sigma.view_mut((0, 0), (pa, pa)).copy_from(ga);
    sigma.view_mut((0, pa), (pa, pg)).copy_from(wag);
    sigma.view_mut((pa, 0), (pg, pa)).copy_from(&wag.transpose());
    sigma.view_mut((pa, pa), (pg, pg)).copy_from(wg);
    sigma
}

/// Inverse of a symmetric positive definite matrix, rejecting condition
/// numbers above [`SINGULAR_CONDITION`].
pub fn spd_inverse(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= SINGULAR_CONDITION) {
        return Err(Error::Singular { name: name.to_string(), condition, hint: String::new() });
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    Ok(&eig.eigenvectors * inv_diag * eig.eigenvectors.transpose())
}

/// `V = Gamma^-1 Sigma Gamma^-1` with `Gamma = diag(Gamma_alpha, Gamma_gamma)`.
pub fn sandwich(ga: &DMatrix<f64>, gg: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (pa, pg) = (ga.nrows(), gg.nrows());
    let mut inv = DMatrix::zeros(pa + pg, pa + pg);
    inv.view_mut((0, 0), (pa, pa)).copy_from(&spd_inverse(ga, "Gamma_alpha")?);
    inv.view_mut((pa, pa), (pg, pg)).copy_from(&spd_inverse(gg, "Gamma_gamma")?);
    let v = &inv * sigma * &inv;
    Ok((&v + v.transpose()) * 0.5)
}

/// All empirical matrices at `(gamma_hat, alpha_hat)`; singular information is an error.
pub fn empirical_matrices(
    path: &SamplePath,
    model: &CandidateModel,
    gamma_hat: &[f64],
    alpha_hat: &[f64],
) -> Result<EmpiricalMatrices> {
    let (gg, ga, wg, wag) = information_blocks(path, model, gamma_hat, alpha_hat)?;
    let sigma = assemble_sigma(&ga, &wg, &wag);
    let v = sandwich(&ga, &gg, &sigma)?;
    Ok(EmpiricalMatrices { gamma_gamma: gg, gamma_alpha: ga, w_gamma: wg, w_alphagamma: wag, sigma, v })
}

/// `(nu2_hat, nu4_hat)`: `T^-1 sum (Delta X / c)^2` and `T^-1 sum (Delta X / c)^4` at `gamma_hat`.
pub fn nu_hats(path: &SamplePath, scale: &Coefficient, gamma_hat: &[f64]) -> Result<(f64, f64)> {
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for (j, (x, dx)) in path.steps().enumerate() {
        let s = checked(scale.eval(x, gamma_hat), j)?;
        let e2 = dx * dx / s;
        m2 += e2;
        m4 += e2 * e2;
    }
    let t = path.t_end();
    Ok((m2 / t, m4 / t))
}

pub fn to_rows(m: &DMatrix<f64>) -> Matrix {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &Matrix) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::ShapeMismatch("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

/// Wald interval for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub parameter: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// Zero estimated variance, so the interval has width zero.
    pub degenerate: bool,
}

/// Two-sided standard normal quantile for coverage `level`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Precondition(format!("confidence level must be in (0, 1), got {level}")));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    Ok(z)
}

/// `theta_k +- z sqrt(V_kk / T)` for every parameter, alpha first.
pub fn confidence_interval(fit: &FitResult, level: f64) -> Result<Vec<Interval>> {
    let z = normal_quantile(level)?;
    let v = fit
        .v_hat
        .as_ref()
        .ok_or_else(|| Error::Singular {
            name: "V_hat".into(),
            condition: f64::INFINITY,
            hint: fit.v_hat_error.clone().map(|e| format!(" ({e})")).unwrap_or_default(),
        })?;
    let vm = from_rows(v)?;
    let eig = SymmetricEigen::new(vm.clone());
    let scale = eig.eigenvalues.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
        return Err(Error::NotPsd("V_hat".into()));
    }
    let names = fit
        .alpha_hat
        .iter()
        .enumerate()
        .map(|(k, _)| format!("alpha[{k}]"))
        .chain(fit.gamma_hat.iter().enumerate().map(|(k, _)| format!("gamma[{k}]")));
    let t = fit.meta.t_end;
    Ok(fit
        .theta_hat()
        .into_iter()
        .zip(names)
        .enumerate()
        .map(|(k, (est, parameter))| {
            let var = vm[(k, k)].max(0.0);
            let half = z * (var / t).sqrt();
            Interval { parameter, estimate: est, lower: est - half, upper: est + half, degenerate: var == 0.0 }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{LevySpec, RngStream};
    use crate::model::registry;
    use crate::sde::{euler_path, TrueModelSpec};

    fn case_i_path(n: usize, h: f64, seed: u64) -> SamplePath {
        let spec = LevySpec::nig(10.0, 0.0, 10.0, 0.0).unwrap();
        let truth = TrueModelSpec::benchmark().build().unwrap();
        euler_path(&truth, &spec, n, h, 10, &RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn scale1_closed_form() {
        let path = case_i_path(2000, 0.01, 3);
        let fit = fit_scale(&path, &registry("Scale1").unwrap(), &OptConfig::default()).unwrap();
        let closed = (path.steps().map(|(_, d)| d * d).sum::<f64>() / path.t_end()).sqrt();
        assert!((fit.gamma_hat[0] - closed).abs() <= 1e-6 * closed, "{} vs {closed}", fit.gamma_hat[0]);
    }

    #[test]
    fn constant_path_hits_lower_bound() {
        let path = SamplePath::new(0.01, vec![1.0; 50]).unwrap();
        let fit = fit_scale(&path, &registry("Scale1").unwrap(), &OptConfig::default()).unwrap();
        assert_eq!(fit.gamma_hat, vec![0.01]);
        assert!(fit.boundary_hit);
    }

    #[test]
    fn drift2_weighted_least_squares() {
        let path = case_i_path(3000, 0.01, 5);
        let model = CandidateModel::from_names("Scale2", "Drift2").unwrap();
        let gamma = [2.9];
        let fit = fit_drift(&path, &model, &gamma, &OptConfig::default()).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for (x, dx) in path.steps() {
            let w = 1.0 / model.scale.eval(x, &gamma).powi(2);
            num += w * x * dx;
            den += w * x * x;
        }
        let closed = -num / (path.h() * den);
        assert!((fit.alpha_hat[0] - closed).abs() <= 1e-6 * closed.abs().max(1.0));
    }

    #[test]
    fn scale1_information_is_two_over_gamma_squared() {
        let path = case_i_path(500, 0.01, 9);
        let model = CandidateModel::from_names("Scale1", "Drift1").unwrap();
        let m = empirical_matrices(&path, &model, &[1.7], &[0.2]).unwrap();
        assert!((m.gamma_gamma[(0, 0)] - 2.0 / 1.7_f64.powi(2)).abs() < 1e-12);
        assert!((m.gamma_alpha[(0, 0)] - 1.0 / 1.7_f64.powi(2)).abs() < 1e-12);
        assert!(m.w_gamma[(0, 0)] >= 0.0);
    }

    #[test]
    fn nu_hats_constant_increments() {
        let h: f64 = 0.01;
        let values: Vec<f64> = (0..=100).map(|j| j as f64 * h.sqrt()).collect();
        let path = SamplePath::new(h, values).unwrap();
        let (nu2, nu4) = nu_hats(&path, &registry("Scale1").unwrap(), &[1.0]).unwrap();
        assert!((nu2 - 1.0).abs() < 1e-12);
        assert!((nu4 - h).abs() < 1e-12);
    }

    #[test]
    fn quantile_at_95() {
        assert!((normal_quantile(0.95).unwrap() - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn zero_variance_interval_is_degenerate() {
        let path = case_i_path(500, 0.01, 11);
        let model = CandidateModel::from_names("Scale2", "Drift2").unwrap();
        let mut fit = fit(&path, &model, &OptConfig::default()).unwrap();
        let mut v = fit.v_hat.clone().unwrap();
        v[0] = vec![0.0, 0.0];
        v[1][0] = 0.0;
        fit.v_hat = Some(v);
        let ci = confidence_interval(&fit, 0.95).unwrap();
        assert!(ci[0].degenerate && ci[0].lower == ci[0].upper);
        assert!(!ci[1].degenerate && ci[1].lower < ci[1].upper);
    }

    #[test]
    fn case_one_fit_is_sensible() {
        let path = case_i_path(5000, 0.01, 21);
        let model = CandidateModel::from_names("Scale2", "Drift2").unwrap();
        let fit = fit(&path, &model, &OptConfig::default()).unwrap();
        assert!((fit.gamma_hat[0] - 3.0).abs() < 0.3, "{:?}", fit.gamma_hat);
        assert!((fit.alpha_hat[0] - 0.5).abs() < 0.5, "{:?}", fit.alpha_hat);
        assert!(fit.converged.scale && fit.converged.drift);
        let g = gqlf::gradient_h1(&path, &model.scale, &fit.gamma_hat).unwrap();
        assert!(g[0].abs() < 1e-3, "{g:?}");
        assert!(fit.v_hat.is_some());
    }
}
