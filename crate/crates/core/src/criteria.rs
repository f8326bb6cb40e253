//! Scale- and drift-stage information criteria and numerical free energies.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, FitResult, Matrix};
use crate::gqlf::{self, DriftObjective};
use crate::model::{CandidateModel, Coefficient, Interval, ParamBox};
use crate::optim::{self, OptConfig};
use crate::quadrature;
use crate::sde::{PathMeta, SamplePath};

/// Default exponent in the truncation level `b_n = T^{-(1 - kappa)/2}`.
pub const DEFAULT_TRUNC_KAPPA: f64 = 0.2;

#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScaleCriterionKind {
    GQAIC1,
    GQAIC1_SCALAR,
    GQAIC1_TRUNC,
    GQAIC1_MOD,
    GQBIC1,
    GQBIC1_SHARP,
    FAIC1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DriftCriterionKind {
    GQAIC2,
    GQBIC2,
    FAIC2,
}

impl ScaleCriterionKind {
    pub const ALL: [ScaleCriterionKind; 7] = [
        Self::GQAIC1,
        Self::GQAIC1_SCALAR,
        Self::GQAIC1_TRUNC,
        Self::GQAIC1_MOD,
        Self::GQBIC1,
        Self::GQBIC1_SHARP,
        Self::FAIC1,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::GQAIC1 => "GQAIC1",
            Self::GQAIC1_SCALAR => "GQAIC1_SCALAR",
            Self::GQAIC1_TRUNC => "GQAIC1_TRUNC",
            Self::GQAIC1_MOD => "GQAIC1_MOD",
            Self::GQBIC1 => "GQBIC1",
            Self::GQBIC1_SHARP => "GQBIC1_SHARP",
            Self::FAIC1 => "FAIC1",
        }
    }
}

impl DriftCriterionKind {
    pub const ALL: [DriftCriterionKind; 3] = [Self::GQAIC2, Self::GQBIC2, Self::FAIC2];

    pub fn label(self) -> &'static str {
        match self {
            Self::GQAIC2 => "GQAIC2",
            Self::GQBIC2 => "GQBIC2",
            Self::FAIC2 => "FAIC2",
        }
    }
}

impl fmt::Display for ScaleCriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl fmt::Display for DriftCriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScaleCriterionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Precondition(format!("unknown scale criterion {s:?}")))
    }
}

impl FromStr for DriftCriterionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Precondition(format!("unknown drift criterion {s:?}")))
    }
}

/// What a scale criterion needs from a first-stage fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub h1_value: f64,
    pub p_gamma: usize,
    pub gamma_gamma_hat: Matrix,
    pub w_gamma_hat: Matrix,
    pub nu2_hat: f64,
    pub nu4_hat: f64,
    pub meta: PathMeta,
}

impl From<&FitResult> for ScaleStats {
    fn from(fit: &FitResult) -> Self {
        Self {
            h1_value: fit.h1_value,
            p_gamma: fit.p_gamma(),
            gamma_gamma_hat: fit.gamma_gamma_hat.clone(),
            w_gamma_hat: fit.w_gamma_hat.clone(),
            nu2_hat: fit.nu2_hat,
            nu4_hat: fit.nu4_hat,
            meta: fit.meta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub value: f64,
    /// The truncation indicator was zero, so the penalty was dropped.
    pub truncated: bool,
}

fn trace_inv_product(gamma: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<f64> {
    let inv = estimator::spd_inverse(gamma, "Gamma_gamma").map_err(|e| match e {
        Error::Singular { name, condition, .. } => Error::Singular {
            name,
            condition,
            hint: "; use GQAIC1_TRUNC instead".into(),
        },
        other => other,
    })?;
    Ok((inv * w).trace())
}

/// Scale-stage criterion; `trunc_kappa` only matters for `GQAIC1_TRUNC`.
pub fn scale_criterion(stats: &ScaleStats, kind: ScaleCriterionKind, trunc_kappa: f64) -> Result<CriterionValue> {
    let PathMeta { n, h, t_end } = stats.meta;
    let base = -2.0 * stats.h1_value;
    let p = stats.p_gamma as f64;
    let mut truncated = false;
    let penalty = match kind {
        ScaleCriterionKind::GQAIC1 => {
            let g = estimator::from_rows(&stats.gamma_gamma_hat)?;
            let w = estimator::from_rows(&stats.w_gamma_hat)?;
            2.0 / h * trace_inv_product(&g, &w)?
        }
        ScaleCriterionKind::GQAIC1_SCALAR => p / h * stats.nu4_hat,
        ScaleCriterionKind::GQAIC1_TRUNC => {
            if !(trunc_kappa > 0.0 && trunc_kappa < 1.0) {
                return Err(Error::Precondition(format!("truncation kappa must be in (0, 1), got {trunc_kappa}")));
            }
            let g = estimator::from_rows(&stats.gamma_gamma_hat)?;
            let w = estimator::from_rows(&stats.w_gamma_hat)?;
            let b_n = t_end.powf(-(1.0 - trunc_kappa) / 2.0);
            let lambda_min = SymmetricEigen::new(g.clone()).eigenvalues.min();
            if lambda_min >= b_n {
                2.0 / h * trace_inv_product(&g, &w)?
            } else {
                truncated = true;
                0.0
            }
        }
        ScaleCriterionKind::GQAIC1_MOD => p * (stats.nu4_hat / h - stats.nu2_hat * stats.nu2_hat),
        ScaleCriterionKind::GQBIC1 => p / h * t_end.ln(),
        ScaleCriterionKind::GQBIC1_SHARP => p * (n as f64).ln(),
        ScaleCriterionKind::FAIC1 => 2.0 * p,
    };
    let value = base + penalty;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{kind} value")));
    }
    Ok(CriterionValue { value, truncated })
}

/// Drift-stage criterion from the maximized `h2` value.
pub fn drift_criterion_value(h2_value: f64, p_alpha: usize, meta: PathMeta, kind: DriftCriterionKind) -> f64 {
    let p = p_alpha as f64;
    let penalty = match kind {
        DriftCriterionKind::GQAIC2 | DriftCriterionKind::FAIC2 => 2.0 * p,
        DriftCriterionKind::GQBIC2 => p * meta.t_end.ln(),
    };
    -2.0 * h2_value + penalty
}

pub fn drift_criterion(fit: &FitResult, kind: DriftCriterionKind) -> f64 {
    drift_criterion_value(fit.h2_value, fit.p_alpha(), fit.meta, kind)
}

type LogDensity = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Prior on a bounded box: uniform unless a log-density is supplied.
#[derive(Clone)]
pub struct Prior {
    support: ParamBox,
    log_density: Option<Arc<LogDensity>>,
}

impl fmt::Debug for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Prior")
            .field("support", &self.support)
            .field("uniform", &self.log_density.is_none())
            .finish()
    }
}

impl Prior {
    pub fn uniform(support: ParamBox) -> Self {
        Self { support, log_density: None }
    }

    /// `log_density` must integrate to one over `support`.
    pub fn with_log_density<F>(support: ParamBox, log_density: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { support, log_density: Some(Arc::new(log_density)) }
    }

    pub fn support(&self) -> &ParamBox {
        &self.support
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if !self.support.contains(theta) {
            return f64::NEG_INFINITY;
        }
        match &self.log_density {
            Some(f) => f(theta),
            None => -self.support.volume().ln(),
        }
    }
}

/// Half-width of the integration window in posterior standard deviations.
const WINDOW_SDS: f64 = 10.0;

/// Integration window `mode +- 10 sd` from the curvature of `b * objective`,
/// clipped to the prior support; the whole support when the curvature is unusable.
fn laplace_window(mode: &[f64], neg_hess: &DMatrix<f64>, support: &ParamBox) -> Vec<Interval> {
    let inv = estimator::spd_inverse(neg_hess, "curvature").ok();
    support
        .0
        .iter()
        .enumerate()
        .map(|(k, b)| match &inv {
            Some(inv) if inv[(k, k)] > 0.0 => {
                let half = WINDOW_SDS * inv[(k, k)].sqrt();
                let lo = (mode[k] - half).max(b.lo);
                let hi = (mode[k] + half).min(b.hi);
                if lo < hi { Interval { lo, hi } } else { *b }
            }
            _ => *b,
        })
        .collect()
}

fn check_quadrature_dim(p: usize) -> Result<()> {
    if p > 2 {
        return Err(Error::Precondition(format!("free energy needs at most 2 parameters, got {p}")));
    }
    Ok(())
}

/// `-(n b)^-1 log int exp(b h1(gamma)) prior(gamma) d gamma`.
pub fn free_energy_scale(
    path: &SamplePath,
    scale: &Coefficient,
    inverse_temperature: f64,
    prior: &Prior,
    nodes: usize,
) -> Result<f64> {
    let b = inverse_temperature;
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::Precondition(format!("inverse temperature must be positive, got {b}")));
    }
    if prior.support().dim() != scale.dim() {
        return Err(Error::ShapeMismatch("prior and scale dimensions differ".into()));
    }
    check_quadrature_dim(scale.dim())?;
    let log_post = |g: &[f64]| Ok(b * gqlf::h1(path, scale, g)? + prior.log_density(g));
    let mode = optim::maximize(&log_post, prior.support(), &OptConfig::default())?.x;
    let inner = scale.clone().with_bounds(prior.support().clone())?;
    let hess = gqlf::hessian_h1(path, &inner, &mode)
        .map(|m| -b * DMatrix::from_fn(m.len(), m.len(), |i, j| m[i][j]))
        .unwrap_or_else(|_| DMatrix::zeros(mode.len(), mode.len()));
    let window = laplace_window(&mode, &hess, prior.support());
    let log_z = quadrature::log_integral(log_post, &window, nodes)?;
    Ok(-log_z / (path.n() as f64 * b))
}

/// `-T^-1 log int exp(h2(alpha; gamma_hat)) prior(alpha) d alpha`.
pub fn free_energy_drift(
    path: &SamplePath,
    model: &CandidateModel,
    gamma_hat: &[f64],
    prior: &Prior,
    nodes: usize,
) -> Result<f64> {
    if prior.support().dim() != model.p_alpha() {
        return Err(Error::ShapeMismatch("prior and drift dimensions differ".into()));
    }
    check_quadrature_dim(model.p_alpha())?;
    let obj = DriftObjective::new(path, &model.scale, gamma_hat)?;
    let log_post = |a: &[f64]| Ok(obj.h2(&model.drift, a)? + prior.log_density(a));
    let mode = optim::maximize(&log_post, prior.support(), &OptConfig::default())?.x;
    let inner = CandidateModel::new(model.scale.clone(), model.drift.clone().with_bounds(prior.support().clone())?);
    let hess = gqlf::hessian_h2(path, &inner, &mode, gamma_hat)
        .map(|m| -DMatrix::from_fn(m.len(), m.len(), |i, j| m[i][j]))
        .unwrap_or_else(|_| DMatrix::zeros(mode.len(), mode.len()));
    let window = laplace_window(&mode, &hess, prior.support());
    let log_z = quadrature::log_integral(log_post, &window, nodes)?;
    Ok(-log_z / path.t_end())
}
