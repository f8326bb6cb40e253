//! Gaussian quasi-log-likelihoods of the Euler-type local Gaussian approximation
//! `X_{t_j} | X_{t_{j-1}} = x ~ N(x + a(x, alpha) h, h c(x, gamma)^2)`, split into
//! the scale part `h1` and the drift part `h2`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{CandidateModel, Coefficient};
use crate::sde::SamplePath;

/// Default lower guard on `S = c^2`.
pub const S_MIN: f64 = 1e-12;

#[inline]
fn checked_s(c: f64, j: usize) -> Result<f64> {
    let s = c * c;
    if s >= S_MIN && s.is_finite() {
        Ok(s)
    } else {
        Err(Error::DegenerateScale { index: j, value: s, guard: S_MIN })
    }
}

/// `S_{j-1}(gamma)` for every step, 1-based index in errors.
pub fn scale_squares(path: &SamplePath, scale: &Coefficient, gamma: &[f64]) -> Result<Vec<f64>> {
    path.steps()
        .enumerate()
        .map(|(j, (x, _))| checked_s(scale.eval(x, gamma), j + 1))
        .collect()
}

/// First-stage GQLF `-1/2 sum [log(2 pi h S_{j-1}) + (Delta_j X)^2 / (h S_{j-1})]`.
pub fn h1(path: &SamplePath, scale: &Coefficient, gamma: &[f64]) -> Result<f64> {
    let h = path.h();
    let mut log_s = 0.0;
    let mut quad = 0.0;
    for (j, (x, dx)) in path.steps().enumerate() {
        let s = checked_s(scale.eval(x, gamma), j + 1)?;
        log_s += s.ln();
        quad += dx * dx / s;
    }
    let n = path.n() as f64;
    Ok(-0.5 * (n * (2.0 * PI * h).ln() + log_s + quad / h))
}

/// Second-stage GQLF with the scale frozen at `gamma`:
/// `sum [S^-1 Delta_j X a_{j-1} - (h/2) S^-1 a_{j-1}^2]`.
pub fn h2(path: &SamplePath, model: &CandidateModel, alpha: &[f64], gamma: &[f64]) -> Result<f64> {
    DriftObjective::new(path, &model.scale, gamma)?.h2(&model.drift, alpha)
}

/// `sum log phi(X_{t_j}; X_{t_{j-1}} + a h, h S)`, equal to `h1 + h2` identically.
pub fn h2_star(path: &SamplePath, model: &CandidateModel, alpha: &[f64], gamma: &[f64]) -> Result<f64> {
    let h = path.h();
    let mut acc = 0.0;
    for (j, (x, dx)) in path.steps().enumerate() {
        let s = checked_s(model.scale.eval(x, gamma), j + 1)?;
        let r = dx - h * model.drift.eval(x, alpha);
        acc += (2.0 * PI * h * s).ln() + r * r / (h * s);
    }
    Ok(-0.5 * acc)
}

/// Path data with `S^{-1}` precomputed at a fixed scale parameter; evaluates
/// `h2` and its gradient cheaply for repeated drift queries.
#[derive(Debug, Clone)]
pub struct DriftObjective {
    h: f64,
    x_prev: Vec<f64>,
    dx: Vec<f64>,
    inv_s: Vec<f64>,
}

impl DriftObjective {
    pub fn new(path: &SamplePath, scale: &Coefficient, gamma: &[f64]) -> Result<Self> {
        let s = scale_squares(path, scale, gamma)?;
        let (x_prev, dx) = path.steps().unzip();
        Ok(Self { h: path.h(), x_prev, dx, inv_s: s.into_iter().map(|v| 1.0 / v).collect() })
    }

    pub fn h2(&self, drift: &Coefficient, alpha: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for ((&x, &dx), &w) in self.x_prev.iter().zip(&self.dx).zip(&self.inv_s) {
            let a = drift.eval(x, alpha);
            acc += w * a * (dx - 0.5 * self.h * a);
        }
        if acc.is_finite() {
            Ok(acc)
        } else {
            Err(Error::NonFinite(format!("h2 at alpha = {alpha:?}")))
        }
    }

    pub fn gradient(&self, drift: &Coefficient, alpha: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; alpha.len()];
        let mut da = vec![0.0; alpha.len()];
        for ((&x, &dx), &w) in self.x_prev.iter().zip(&self.dx).zip(&self.inv_s) {
            drift.grad_into(x, alpha, &mut da)?;
            let r = w * (dx - self.h * drift.eval(x, alpha));
            for (gk, dk) in g.iter_mut().zip(&da) {
                *gk += r * dk;
            }
        }
        Ok(g)
    }
}

/// Central-difference gradient of a scalar function, stencil clamped to the box.
fn fd_gradient<F>(f: F, theta: &[f64], bounds: &crate::model::ParamBox) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let step0 = f64::EPSILON.cbrt();
    let mut probe = theta.to_vec();
    let mut out = vec![0.0; theta.len()];
    for k in 0..theta.len() {
        let b = bounds.0[k];
        let step = step0 * theta[k].abs().max(1.0);
        let up = b.clamp(theta[k] + step);
        let down = b.clamp(theta[k] - step);
        probe[k] = up;
        let fu = f(&probe)?;
        probe[k] = down;
        let fd = f(&probe)?;
        probe[k] = theta[k];
        out[k] = (fu - fd) / (up - down);
    }
    Ok(out)
}

/// Gradient of `h1` in `gamma`: chain rule on the closed form when the scale
/// has an analytic gradient, otherwise central differences of `h1`.
pub fn gradient_h1(path: &SamplePath, scale: &Coefficient, gamma: &[f64]) -> Result<Vec<f64>> {
    if !scale.has_analytic_grad() {
        return fd_gradient(|g| h1(path, scale, g), gamma, scale.bounds());
    }
    let h = path.h();
    let mut g = vec![0.0; gamma.len()];
    let mut dc = vec![0.0; gamma.len()];
    for (j, (x, dx)) in path.steps().enumerate() {
        let c = scale.eval(x, gamma);
        let s = checked_s(c, j + 1)?;
        scale.grad_into(x, gamma, &mut dc)?;
        // dS = 2 c dc ; d/dgamma of -1/2 [log S + dx^2/(hS)] = -1/2 dS/S (1 - dx^2/(hS))
        let factor = -(c / s) * (1.0 - dx * dx / (h * s));
        for (gk, dk) in g.iter_mut().zip(&dc) {
            *gk += factor * dk;
        }
    }
    Ok(g)
}

/// Gradient of `h2` in `alpha` at fixed `gamma`.
pub fn gradient_h2(path: &SamplePath, model: &CandidateModel, alpha: &[f64], gamma: &[f64]) -> Result<Vec<f64>> {
    if !model.drift.has_analytic_grad() {
        let obj = DriftObjective::new(path, &model.scale, gamma)?;
        return fd_gradient(|a| obj.h2(&model.drift, a), alpha, model.drift.bounds());
    }
    DriftObjective::new(path, &model.scale, gamma)?.gradient(&model.drift, alpha)
}

/// Symmetrized central-difference Jacobian of a gradient.
fn fd_hessian<G>(grad: G, theta: &[f64], bounds: &crate::model::ParamBox) -> Result<Vec<Vec<f64>>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let p = theta.len();
    let step0 = f64::EPSILON.cbrt();
    let mut probe = theta.to_vec();
    let mut hess = vec![vec![0.0; p]; p];
    for k in 0..p {
        let b = bounds.0[k];
        let step = step0 * theta[k].abs().max(1.0);
        let up = b.clamp(theta[k] + step);
        let down = b.clamp(theta[k] - step);
        probe[k] = up;
        let gu = grad(&probe)?;
        probe[k] = down;
        let gd = grad(&probe)?;
        probe[k] = theta[k];
        for l in 0..p {
            hess[l][k] = (gu[l] - gd[l]) / (up - down);
        }
    }
    for k in 0..p {
        for l in 0..k {
            let m = 0.5 * (hess[k][l] + hess[l][k]);
            hess[k][l] = m;
            hess[l][k] = m;
        }
    }
    Ok(hess)
}

pub fn hessian_h1(path: &SamplePath, scale: &Coefficient, gamma: &[f64]) -> Result<Vec<Vec<f64>>> {
    fd_hessian(|g| gradient_h1(path, scale, g), gamma, scale.bounds())
}

pub fn hessian_h2(
    path: &SamplePath,
    model: &CandidateModel,
    alpha: &[f64],
    gamma: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let obj = DriftObjective::new(path, &model.scale, gamma)?;
    if model.drift.has_analytic_grad() {
        fd_hessian(|a| obj.gradient(&model.drift, a), alpha, model.drift.bounds())
    } else {
        fd_hessian(
            |a| fd_gradient(|b| obj.h2(&model.drift, b), a, model.drift.bounds()),
            alpha,
            model.drift.bounds(),
        )
    }
}
