//! Asymptotic selection probabilities between nested candidates: weighted
//! chi-square tails with weights from the nesting geometry.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{from_rows, spd_inverse, Matrix};
use crate::levy::RngStream;

/// Minimum Monte Carlo size for tail estimates.
pub const MIN_MC: usize = 10_000;
const CHUNK: usize = 50_000;

/// Affine embedding `theta_large = F theta_small + c` with orthonormal columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestingMap {
    /// `p_large x p_small`, row-major.
    pub f: Matrix,
    pub c: Vec<f64>,
}

impl NestingMap {
    /// Embedding that keeps the listed coordinates of the large model and pins the rest to `c`.
    pub fn coordinates(p_large: usize, kept: &[usize], c: Vec<f64>) -> Result<Self> {
        let mut f = vec![vec![0.0; kept.len()]; p_large];
        for (col, &row) in kept.iter().enumerate() {
            if row >= p_large {
                return Err(Error::ShapeMismatch(format!("coordinate {row} outside a {p_large}-dim model")));
            }
            f[row][col] = 1.0;
        }
        let map = Self { f, c };
        map.validate()?;
        Ok(map)
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        from_rows(&self.f)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.matrix()?;
        if self.c.len() != f.nrows() {
            return Err(Error::ShapeMismatch(format!("offset of length {} for {} rows", self.c.len(), f.nrows())));
        }
        if f.ncols() > f.nrows() {
            return Err(Error::ShapeMismatch("nesting map has more columns than rows".into()));
        }
        let gram = f.transpose() * &f;
        let off = (gram - DMatrix::identity(f.ncols(), f.ncols())).amax();
        if off > 1e-12 {
            return Err(Error::Precondition(format!("nesting map columns not orthonormal (max deviation {off:e})")));
        }
        Ok(())
    }
}

/// Population (or long-run average) `Gamma`, `W` of the larger model and the
/// penalty difference the statistic must exceed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitInputs {
    pub gamma: Matrix,
    pub w: Matrix,
    pub penalty_threshold: f64,
}

fn symmetric_psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!("{name} is not square")));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::Precondition(format!("{name} is not symmetric")));
    }
    let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(Error::NotPsd(name.to_string()));
    }
    Ok(())
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Eigenvalues (descending) of `W^{1/2} G W^{1/2}`, `G = Gamma^-1 - F (F' Gamma F)^-1 F'`.
pub fn nesting_eigenvalues(inputs: &LimitInputs, map: &NestingMap) -> Result<Vec<f64>> {
    map.validate()?;
    let gamma = from_rows(&inputs.gamma)?;
    let w = from_rows(&inputs.w)?;
    let f = map.matrix()?;
    if gamma.nrows() != f.nrows() || w.shape() != gamma.shape() {
        return Err(Error::ShapeMismatch(format!(
            "Gamma {:?}, W {:?}, F {:?}",
            gamma.shape(),
            w.shape(),
            f.shape()
        )));
    }
    symmetric_psd(&gamma, "Gamma")?;
    symmetric_psd(&w, "W")?;
    let mut g = spd_inverse(&gamma, "Gamma")?;
    if f.ncols() > 0 {
        let small = f.transpose() * &gamma * &f;
        g -= &f * spd_inverse(&small, "F' Gamma F")? * f.transpose();
    }
    let root = psd_sqrt(&w);
    let m = &root * g * &root;
    let m = (&m + m.transpose()) * 0.5;
    let scale = m.amax().max(1e-300);
    let mut lambda: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    for l in lambda.iter_mut() {
        if *l < -1e-10 * scale.max(1.0) {
            return Err(Error::NotPsd(format!("W^1/2 G W^1/2 (eigenvalue {l:e})")));
        }
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    lambda.sort_by(|a, b| b.total_cmp(a));
    Ok(lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub n_mc: usize,
}

/// Monte Carlo estimate of `P(sum_j lambda_j chi2_{1,j} > threshold)`.
///
/// Weights are sorted before sampling, so the estimate is invariant to their order,
/// and for a fixed stream it is monotone in `threshold`.
pub fn weighted_chisq_tail(lambda: &[f64], threshold: f64, n_mc: usize, stream: &RngStream) -> Result<TailEstimate> {
    if n_mc < MIN_MC {
        return Err(Error::Precondition(format!("need at least {MIN_MC} Monte Carlo draws, got {n_mc}")));
    }
    if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::Precondition(format!("weights must be finite and nonnegative: {lambda:?}")));
    }
    let mut weights: Vec<f64> = lambda.iter().copied().filter(|l| *l > 0.0).collect();
    weights.sort_by(|a, b| b.total_cmp(a));
    let chunks = n_mc.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n_mc - c * CHUNK);
            let mut rng = RngStream::new(stream.seed, stream.stream_id.wrapping_add((c as u64) << 32)).rng();
            let mut count = 0usize;
            for _ in 0..len {
                let q: f64 = weights
                    .iter()
                    .map(|l| {
                        let z: f64 = rng.sample(StandardNormal);
                        l * z * z
                    })
                    .sum();
                if q > threshold {
                    count += 1;
                }
            }
            count
        })
        .sum();
    let p = hits as f64 / n_mc as f64;
    Ok(TailEstimate { probability: p, std_error: (p * (1.0 - p) / n_mc as f64).sqrt(), n_mc })
}

/// Which penalty difference applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitKind {
    Scale,
    Drift,
}

/// `2 (p_large - p_small)`: the drift-stage GQAIC penalty difference.
pub fn drift_threshold(map: &NestingMap) -> f64 {
    2.0 * (map.f.len() as f64 - map.f.first().map_or(0, Vec::len) as f64)
}

/// `2 tr(Gamma_L^-1 W_L) - 2 tr(Gamma_S^-1 W_S)` with the small model's
/// matrices obtained through the nesting map.
pub fn scale_threshold(gamma: &Matrix, w: &Matrix, map: &NestingMap) -> Result<f64> {
    let g = from_rows(gamma)?;
    let w = from_rows(w)?;
    let f = map.matrix()?;
    let large = (spd_inverse(&g, "Gamma")? * &w).trace();
    let small = if f.ncols() == 0 {
        0.0
    } else {
        let gs = f.transpose() * &g * &f;
        let ws = f.transpose() * &w * &f;
        (spd_inverse(&gs, "F' Gamma F")? * ws).trace()
    };
    Ok(2.0 * large - 2.0 * small)
}

/// Limit probability that the larger model beats the smaller one.
pub fn asymptotic_selection_prob(
    inputs: &LimitInputs,
    map: &NestingMap,
    n_mc: usize,
    stream: &RngStream,
) -> Result<TailEstimate> {
    let lambda = nesting_eigenvalues(inputs, map)?;
    weighted_chisq_tail(&lambda, inputs.penalty_threshold, n_mc, stream)
}

/// Inputs with the kind's threshold filled in. `w` is ignored for the drift
/// kind, which uses `W = Gamma`.
pub fn limit_inputs(kind: LimitKind, gamma: Matrix, w: Matrix, map: &NestingMap) -> Result<LimitInputs> {
    Ok(match kind {
        LimitKind::Drift => LimitInputs { penalty_threshold: drift_threshold(map), w: gamma.clone(), gamma },
        LimitKind::Scale => LimitInputs { penalty_threshold: scale_threshold(&gamma, &w, map)?, gamma, w },
    })
}
