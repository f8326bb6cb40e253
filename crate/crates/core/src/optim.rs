//! Box-constrained Nelder-Mead maximization with a multi-start grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamBox;

/// Relative distance to a bound below which a maximizer is flagged as on the boundary.
pub const BOUNDARY_REL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct OptConfig {
    /// Grid levels per coordinate; `levels^p` starts. `None` means 3.
    pub grid_levels: Option<usize>,
    /// Simplex iterations per start.
    pub max_iter: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    /// Fresh-simplex restarts from the incumbent after convergence.
    pub restarts: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self { grid_levels: None, max_iter: 4000, f_tol: 1e-10, x_tol: 1e-8, restarts: 2 }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_levels == Some(0) || self.max_iter == 0 || !(self.f_tol > 0.0) || !(self.x_tol > 0.0) {
            return Err(Error::Precondition(format!("optimizer settings must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn starts(&self, bounds: &ParamBox) -> Vec<Vec<f64>> {
        bounds.interior_grid(self.grid_levels.unwrap_or(3))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub boundary_hit: bool,
    pub evaluations: usize,
}

struct Counted<'a, F> {
    f: &'a F,
    evals: usize,
}

impl<F: Fn(&[f64]) -> Result<f64>> Counted<'_, F> {
    /// Negated objective; failures and non-finite values become `+inf`.
    fn cost(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        match (self.f)(x) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    }
}

/// Maximize `f` over `bounds` from the configured start grid; ties between
/// starts go to the lexicographically smallest maximizer.
pub fn maximize<F>(f: &F, bounds: &ParamBox, cfg: &OptConfig) -> Result<OptOutcome>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    maximize_from(f, bounds, cfg, &cfg.starts(bounds))
}

pub fn maximize_from<F>(f: &F, bounds: &ParamBox, cfg: &OptConfig, starts: &[Vec<f64>]) -> Result<OptOutcome>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if starts.is_empty() {
        return Err(Error::Precondition("no optimizer starts".into()));
    }
    let mut counted = Counted { f, evals: 0 };
    let mut results: Vec<(Vec<f64>, f64, bool)> = Vec::with_capacity(starts.len());
    for s in starts {
        if s.len() != bounds.dim() {
            return Err(Error::ShapeMismatch(format!("start of length {} for a {}-dim box", s.len(), bounds.dim())));
        }
        let mut x0 = s.clone();
        bounds.project(&mut x0);
        let (mut x, mut c, mut conv) = nelder_mead(&mut counted, bounds, &x0, 0.1, cfg);
        for _ in 0..cfg.restarts {
            if !c.is_finite() {
                break;
            }
            let (x2, c2, conv2) = nelder_mead(&mut counted, bounds, &x, 0.02, cfg);
            let improved = c - c2 > cfg.f_tol * (1.0 + c.abs());
            if c2 <= c {
                x = x2;
                c = c2;
                conv = conv2;
            }
            if !improved {
                break;
            }
        }
        if c.is_finite() {
            results.push((x, -c, conv));
        }
    }
    let best = results
        .iter()
        .map(|r| r.1)
        .fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return Err(Error::AllStartsFailed(format!("{} starts", starts.len())));
    }
    let tol = cfg.f_tol * (1.0 + best.abs());
    let (x, value, converged) = results
        .into_iter()
        .filter(|r| r.1 >= best - tol)
        .min_by(|a, b| lexicographic(&a.0, &b.0))
        .expect("at least one finite start");
    let boundary_hit = bounds.near_boundary(&x, BOUNDARY_REL);
    Ok(OptOutcome { x, value, converged, boundary_hit, evaluations: counted.evals })
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (u, v) in a.iter().zip(b) {
        match u.total_cmp(v) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// One Nelder-Mead run minimizing `cost`, every trial point projected onto the box.
/// Returns (argmin, min, converged).
fn nelder_mead<F>(
    cost: &mut Counted<'_, F>,
    bounds: &ParamBox,
    x0: &[f64],
    rel_step: f64,
    cfg: &OptConfig,
) -> (Vec<f64>, f64, bool)
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let p = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(p + 1);
    simplex.push((x0.to_vec(), cost.cost(x0)));
    for k in 0..p {
        let b = bounds.0[k];
        let step = rel_step * b.width();
        let mut v = x0.to_vec();
        // step inward when the forward vertex would leave the box
        v[k] = if x0[k] + step <= b.hi { x0[k] + step } else { x0[k] - step };
        bounds.project(&mut v);
        let c = cost.cost(&v);
        simplex.push((v, c));
    }

    let project = |mut v: Vec<f64>| {
        bounds.project(&mut v);
        v
    };
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let worst_c = simplex[p].1;
        let x_scale = 1.0 + best.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|(v, _)| v.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max);
        let f_spread = worst_c - best.1;
        if best.1.is_finite() && x_spread <= cfg.x_tol * x_scale && f_spread <= cfg.f_tol * (1.0 + best.1.abs()) {
            converged = true;
            break;
        }
        if x_spread == 0.0 {
            // fully collapsed onto one point (e.g. projected against a corner)
            converged = best.1.is_finite();
            break;
        }

        let mut centroid = vec![0.0; p];
        for (v, _) in &simplex[..p] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / p as f64;
            }
        }
        let worst = simplex[p].0.clone();
        let along = |t: f64| -> Vec<f64> {
            project(centroid.iter().zip(&worst).map(|(c, w)| c + t * (c - w)).collect())
        };

        let xr = along(1.0);
        let cr = cost.cost(&xr);
        if cr < simplex[0].1 {
            let xe = along(2.0);
            let ce = cost.cost(&xe);
            simplex[p] = if ce < cr { (xe, ce) } else { (xr, cr) };
            continue;
        }
        if cr < simplex[p - 1].1 {
            simplex[p] = (xr, cr);
            continue;
        }
        let outside = cr < worst_c;
        let xc = along(if outside { 0.5 } else { -0.5 });
        let cc = cost.cost(&xc);
        if (outside && cc <= cr) || (!outside && cc < worst_c) {
            simplex[p] = (xc, cc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for (v, c) in simplex[1..].iter_mut() {
            let shrunk = project(anchor.iter().zip(v.iter()).map(|(a, x)| a + 0.5 * (x - a)).collect());
            *c = cost.cost(&shrunk);
            *v = shrunk;
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, c) = simplex.swap_remove(0);
    (x, c, converged)
}
