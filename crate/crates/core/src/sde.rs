//! Euler-Maruyama simulation of `dX = A(X) dt + C(X-) dZ` on a refined grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{LevySpec, RngStream};
use crate::model::{registry, Coefficient};

pub const DEFAULT_REFINE: usize = 10;
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Equi-spaced observations `X_{t_0}, ..., X_{t_n}` with `t_j = j h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    h: f64,
    values: Vec<f64>,
}

impl SamplePath {
    pub fn new(h: f64, values: Vec<f64>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Precondition(format!("stepsize must be positive, got {h}")));
        }
        if values.len() < 2 {
            return Err(Error::Precondition(format!("a path needs at least 2 values, got {}", values.len())));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("path value at index {j}")));
        }
        Ok(Self { h, values })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of increments.
    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        self.n() as f64 * self.h
    }

    /// `(X_{t_{j-1}}, Delta_j X)` pairs for `j = 1..=n`.
    pub fn steps(&self) -> impl ExactSizeIterator<Item = (f64, f64)> + '_ {
        self.values.windows(2).map(|w| (w[0], w[1] - w[0]))
    }

    pub fn meta(&self) -> PathMeta {
        PathMeta { n: self.n(), h: self.h, t_end: self.t_end() }
    }
}

/// Sampling design of a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMeta {
    pub n: usize,
    pub h: f64,
    pub t_end: f64,
}

/// A registry coefficient frozen at a parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedCoefficient {
    pub name: String,
    pub params: Vec<f64>,
}

/// Serializable description of the data-generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueModelSpec {
    pub drift: FixedCoefficient,
    pub scale: FixedCoefficient,
    #[serde(default)]
    pub x0: f64,
}

impl TrueModelSpec {
    /// `dX = -X/2 dt + 3/(1+X^2) dZ`, `X_0 = 0`.
    pub fn benchmark() -> Self {
        Self {
            drift: FixedCoefficient { name: "Drift2".into(), params: vec![0.5] },
            scale: FixedCoefficient { name: "Scale2".into(), params: vec![3.0] },
            x0: 0.0,
        }
    }

    pub fn build(&self) -> Result<TrueModel> {
        let drift = registry(&self.drift.name)?;
        let scale = registry(&self.scale.name)?;
        TrueModel::new(drift, self.drift.params.clone(), scale, self.scale.params.clone(), self.x0)
    }
}

/// Data-generating coefficients `A(x)`, `C(x)` and initial value.
#[derive(Debug, Clone)]
pub struct TrueModel {
    drift: Coefficient,
    drift_params: Vec<f64>,
    scale: Coefficient,
    scale_params: Vec<f64>,
    pub x0: f64,
}

impl TrueModel {
    pub fn new(
        drift: Coefficient,
        drift_params: Vec<f64>,
        scale: Coefficient,
        scale_params: Vec<f64>,
        x0: f64,
    ) -> Result<Self> {
        if drift_params.len() != drift.dim() || scale_params.len() != scale.dim() {
            return Err(Error::ShapeMismatch("true model parameters do not match coefficient dimensions".into()));
        }
        if !x0.is_finite() {
            return Err(Error::Precondition("initial value must be finite".into()));
        }
        Ok(Self { drift, drift_params, scale, scale_params, x0 })
    }

    #[inline]
    pub fn drift_at(&self, x: f64) -> f64 {
        self.drift.eval(x, &self.drift_params)
    }

    #[inline]
    pub fn scale_at(&self, x: f64) -> f64 {
        self.scale.eval(x, &self.scale_params)
    }
}

/// Simulates on the fine grid `h / refine` and records every `refine`-th point.
pub fn euler_path(
    model: &TrueModel,
    spec: &LevySpec,
    n: usize,
    h: f64,
    refine: usize,
    stream: &RngStream,
) -> Result<SamplePath> {
    if n == 0 {
        return Err(Error::Precondition("number of observations must be at least 1".into()));
    }
    if refine == 0 {
        return Err(Error::Precondition("refine must be at least 1".into()));
    }
    let dt = h / refine as f64;
    let sampler = spec.sampler(dt)?;
    let mut rng = stream.rng();
    let mut values = Vec::with_capacity(n + 1);
    let mut x = model.x0;
    values.push(x);
    let mut step = 0usize;
    for _ in 0..n {
        for _ in 0..refine {
            let dz = sampler.sample(&mut rng)?;
            x += model.drift_at(x) * dt + model.scale_at(x) * dz;
            step += 1;
            if !(x.abs() <= OVERFLOW_GUARD) {
                return Err(Error::Explosion { step, value: x });
            }
        }
        values.push(x);
    }
    SamplePath::new(h, values)
}
