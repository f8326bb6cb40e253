//! Candidate coefficients with parameter boxes, and the built-in registry of
//! the four scale and three drift candidates used by the experiment presets.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type EvalFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Closed interval for one parameter coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Bounded box `[lo_1, hi_1] x ... x [lo_p, hi_p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox(pub Vec<Interval>);

impl ParamBox {
    pub fn new(bounds: &[(f64, f64)]) -> Result<Self> {
        let mut out = Vec::with_capacity(bounds.len());
        for &(lo, hi) in bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Precondition(format!("parameter box needs finite lo < hi, got [{lo}, {hi}]")));
            }
            out.push(Interval { lo, hi });
        }
        Ok(ParamBox(out))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && self.0.iter().zip(theta).all(|(b, v)| *v >= b.lo && *v <= b.hi)
    }

    pub fn project(&self, theta: &mut [f64]) {
        for (b, v) in self.0.iter().zip(theta.iter_mut()) {
            *v = b.clamp(*v);
        }
    }

    /// Coordinates within `rel * width` of a bound.
    pub fn near_boundary(&self, theta: &[f64], rel: f64) -> bool {
        self.0
            .iter()
            .zip(theta)
            .any(|(b, v)| (v - b.lo).abs() <= rel * b.width() || (b.hi - v).abs() <= rel * b.width())
    }

    pub fn volume(&self) -> f64 {
        self.0.iter().map(Interval::width).product()
    }

    /// Full tensor grid of `levels` interior points per coordinate, at
    /// fractions `k / (levels + 1)` of each interval.
    pub fn interior_grid(&self, levels: usize) -> Vec<Vec<f64>> {
        let mut points = vec![Vec::new()];
        for b in &self.0 {
            let mut next = Vec::with_capacity(points.len() * levels);
            for p in &points {
                for k in 1..=levels {
                    let mut q = p.clone();
                    q.push(b.lo + b.width() * k as f64 / (levels + 1) as f64);
                    next.push(q);
                }
            }
            points = next;
        }
        points
    }
}

/// A parametric coefficient `x -> f(x, theta)` with an optional analytic gradient in `theta`.
#[derive(Clone)]
pub struct Coefficient {
    name: String,
    bounds: ParamBox,
    eval: Arc<EvalFn>,
    grad: Option<Arc<GradFn>>,
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coefficient")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .field("analytic_grad", &self.grad.is_some())
            .finish()
    }
}

/// Serializable description of a coefficient, used in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientInfo {
    pub name: String,
    pub dim: usize,
    pub bounds: ParamBox,
}

impl Coefficient {
    pub fn new<F>(name: impl Into<String>, bounds: ParamBox, eval: F) -> Result<Self>
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        let name = name.into();
        if bounds.dim() == 0 {
            return Err(Error::Precondition(format!(
                "coefficient {name} must have at least one parameter"
            )));
        }
        Ok(Self { name, bounds, eval: Arc::new(eval), grad: None })
    }

    pub fn with_grad<G>(mut self, grad: G) -> Self
    where
        G: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(grad));
        self
    }

    /// Same coefficient restricted to a different box.
    pub fn with_bounds(mut self, bounds: ParamBox) -> Result<Self> {
        if bounds.dim() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "box of dimension {} for coefficient {} of dimension {}",
                bounds.dim(),
                self.name,
                self.dim()
            )));
        }
        self.bounds = bounds;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &ParamBox {
        &self.bounds
    }

    pub fn has_analytic_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn info(&self) -> CoefficientInfo {
        CoefficientInfo { name: self.name.clone(), dim: self.dim(), bounds: self.bounds.clone() }
    }

    #[inline]
    pub fn eval(&self, x: f64, theta: &[f64]) -> f64 {
        (self.eval)(x, theta)
    }

    /// Analytic gradient into `out` when available, otherwise central differences.
    pub fn grad_into(&self, x: f64, theta: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.grad {
            Some(g) => g(x, theta, out),
            None => self.fd_grad_into(x, theta, out),
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("gradient of {} at x = {x}, theta = {theta:?}", self.name)))
        }
    }

    pub fn grad_or_fd(&self, x: f64, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.grad_into(x, theta, &mut out)?;
        Ok(out)
    }

    /// Central differences with step `eps^(1/3) * max(1, |theta_k|)`, stencil clamped to the box.
    pub fn fd_grad_into(&self, x: f64, theta: &[f64], out: &mut [f64]) {
        let step0 = f64::EPSILON.cbrt();
        let mut probe = theta.to_vec();
        for k in 0..theta.len() {
            let b = self.bounds.0[k];
            let step = step0 * theta[k].abs().max(1.0);
            let up = b.clamp(theta[k] + step);
            let down = b.clamp(theta[k] - step);
            probe[k] = up;
            let f_up = self.eval(x, &probe);
            probe[k] = down;
            let f_down = self.eval(x, &probe);
            probe[k] = theta[k];
            out[k] = (f_up - f_down) / (up - down);
        }
    }
}

/// One candidate SDE model: a scale coefficient (parameter gamma) and a drift coefficient (parameter alpha).
#[derive(Debug, Clone)]
pub struct CandidateModel {
    pub scale: Coefficient,
    pub drift: Coefficient,
}

impl CandidateModel {
    pub fn new(scale: Coefficient, drift: Coefficient) -> Self {
        Self { scale, drift }
    }

    pub fn from_names(scale: &str, drift: &str) -> Result<Self> {
        Ok(Self { scale: registry(scale)?, drift: registry(drift)? })
    }

    pub fn p_gamma(&self) -> usize {
        self.scale.dim()
    }

    pub fn p_alpha(&self) -> usize {
        self.drift.dim()
    }

    pub fn p(&self) -> usize {
        self.p_alpha() + self.p_gamma()
    }

    pub fn label(&self) -> String {
        format!("{}+{}", self.scale.name(), self.drift.name())
    }
}

pub const SCALE_NAMES: [&str; 4] = ["Scale1", "Scale2", "Scale3", "Scale4"];
pub const DRIFT_NAMES: [&str; 3] = ["Drift1", "Drift2", "Drift3"];

const SCALE_LEVEL: (f64, f64) = (0.01, 20.0);
const SCALE_SHAPE: (f64, f64) = (-20.0, 20.0);
const DRIFT_BOX: (f64, f64) = (-10.0, 10.0);

/// Built-in coefficients by name.
///
/// Scale level parameters live in `[0.01, 20]`; the shape parameters of
/// Scale3 and Scale4 (which vanish at the true model) live in `[-20, 20]`;
/// drift parameters live in `[-10, 10]`.
pub fn registry(name: &str) -> Result<Coefficient> {
    let coef = match name {
        "Scale1" => Coefficient::new(name, ParamBox::new(&[SCALE_LEVEL])?, |_, g| g[0])?
            .with_grad(|_, _, out| out[0] = 1.0),
        "Scale2" => Coefficient::new(name, ParamBox::new(&[SCALE_LEVEL])?, |x, g| g[0] / (1.0 + x * x))?
            .with_grad(|x, _, out| out[0] = 1.0 / (1.0 + x * x)),
        "Scale3" => Coefficient::new(name, ParamBox::new(&[SCALE_LEVEL, SCALE_SHAPE])?, |x, g| {
            let x2 = x * x;
            (g[0] + g[1] * x2) / (1.0 + x2)
        })?
        .with_grad(|x, _, out| {
            let x2 = x * x;
            out[0] = 1.0 / (1.0 + x2);
            out[1] = x2 / (1.0 + x2);
        }),
        "Scale4" => Coefficient::new(name, ParamBox::new(&[SCALE_LEVEL, SCALE_SHAPE, SCALE_SHAPE])?, |x, g| {
            let x2 = x * x;
            (g[0] + g[1] * x + g[2] * x2) / (1.0 + x2)
        })?
        .with_grad(|x, _, out| {
            let x2 = x * x;
            let d = 1.0 + x2;
            out[0] = 1.0 / d;
            out[1] = x / d;
            out[2] = x2 / d;
        }),
        "Drift1" => Coefficient::new(name, ParamBox::new(&[DRIFT_BOX])?, |_, a| -a[0])?
            .with_grad(|_, _, out| out[0] = -1.0),
        "Drift2" => Coefficient::new(name, ParamBox::new(&[DRIFT_BOX])?, |x, a| -a[0] * x)?
            .with_grad(|x, _, out| out[0] = -x),
        "Drift3" => Coefficient::new(name, ParamBox::new(&[DRIFT_BOX, DRIFT_BOX])?, |x, a| -a[0] * x - a[1])?
            .with_grad(|x, _, out| {
                out[0] = -x;
                out[1] = -1.0;
            }),
        other => return Err(Error::UnknownCoefficient(other.to_string())),
    };
    Ok(coef)
}

/// Registry lookup for a list of names.
pub fn registry_list<S: AsRef<str>>(names: &[S]) -> Result<Vec<Coefficient>> {
    names.iter().map(|n| registry(n.as_ref())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_values() {
        assert_eq!(registry("Scale2").unwrap().eval(1.0, &[3.0]), 1.5);
        assert_eq!(registry("Drift2").unwrap().eval(2.0, &[0.5]), -1.0);
        assert_eq!(registry("Scale4").unwrap().eval(0.0, &[1.25, 7.0, -3.0]), 1.25);
        assert_eq!(registry("Scale1").unwrap().eval(-4.0, &[2.5]), 2.5);
        assert_eq!(registry("Drift1").unwrap().eval(9.0, &[0.3]), -0.3);
        assert_eq!(registry("Scale3").unwrap().eval(1.0, &[1.0, 3.0]), 2.0);
    }

    #[test]
    fn registry_gradients() {
        assert_eq!(registry("Scale2").unwrap().grad_or_fd(1.0, &[3.0]).unwrap(), vec![0.5]);
        for x in [-3.0, 0.0, 2.5] {
            assert_eq!(registry("Drift3").unwrap().grad_or_fd(x, &[0.1, 0.2]).unwrap(), vec![-x, -1.0]);
        }
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(registry("Scale9"), Err(Error::UnknownCoefficient(_))));
    }

    #[test]
    fn zero_dimensional_coefficient_rejected() {
        let err = Coefficient::new("NoDrift", ParamBox(vec![]), |_, _| 0.0).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn default_boxes_contain_truth_in_interior() {
        let s2 = registry("Scale2").unwrap();
        assert!(s2.bounds().contains(&[3.0]) && !s2.bounds().near_boundary(&[3.0], 0.05));
        let s3 = registry("Scale3").unwrap();
        assert!(!s3.bounds().near_boundary(&[3.0, 0.0], 0.05));
        let s4 = registry("Scale4").unwrap();
        assert!(!s4.bounds().near_boundary(&[3.0, 0.0, 0.0], 0.05));
        let d3 = registry("Drift3").unwrap();
        assert!(!d3.bounds().near_boundary(&[0.5, 0.0], 0.05));
    }

    #[test]
    fn fd_matches_analytic_on_scale3() {
        let c = registry("Scale3").unwrap();
        for x in [-2.0, -0.3, 0.0, 1.7, 5.0] {
            for g in [[0.5, 0.1], [3.0, -2.0], [10.0, 4.0]] {
                let analytic = c.grad_or_fd(x, &g).unwrap();
                let mut fd = vec![0.0; 2];
                c.fd_grad_into(x, &g, &mut fd);
                for (a, f) in analytic.iter().zip(&fd) {
                    assert!((a - f).abs() <= 1e-6 * a.abs().max(1.0), "x={x} g={g:?}: {a} vs {f}");
                }
            }
        }
    }

    #[test]
    fn fd_fallback_used_without_analytic() {
        let c = Coefficient::new("quad", ParamBox::new(&[(-5.0, 5.0)]).unwrap(), |x, t| t[0] * t[0] * x).unwrap();
        let g = c.grad_or_fd(2.0, &[1.5]).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn fd_stencil_clamped_at_bound() {
        let c = Coefficient::new("lin", ParamBox::new(&[(0.0, 1.0)]).unwrap(), |_, t| 3.0 * t[0]).unwrap();
        let g = c.grad_or_fd(0.0, &[0.0]).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn grid_has_three_to_the_p_points() {
        let b = registry("Scale4").unwrap().bounds().clone();
        let grid = b.interior_grid(3);
        assert_eq!(grid.len(), 27);
        assert!(grid.iter().all(|p| b.contains(p)));
    }

    #[test]
    fn registry_scale_positivity_for_level_families() {
        for name in ["Scale1", "Scale2"] {
            let c = registry(name).unwrap();
            for g in c.bounds().interior_grid(5).into_iter().chain([vec![0.01], vec![20.0]]) {
                for k in -100..=100 {
                    assert!(c.eval(k as f64, &g) > 0.0);
                }
            }
        }
    }
}
