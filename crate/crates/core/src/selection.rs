//! Stepwise selection: choose the scale coefficient by a first-stage
//! criterion, then the drift coefficient under the chosen scale.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{self, DriftCriterionKind, ScaleCriterionKind, ScaleStats};
use crate::error::{Error, Result};
use crate::estimator::{self, DriftFit, FitResult, ScaleFit};
use crate::model::{CandidateModel, Coefficient};
use crate::optim::OptConfig;
use crate::sde::SamplePath;

/// Relative gap below which two criterion values count as tied.
pub const TIE_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub opt: OptConfig,
    pub trunc_kappa: f64,
    /// Also fit every drift under every scale (diagnostic only).
    pub full_grid: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { opt: OptConfig::default(), trunc_kappa: criteria::DEFAULT_TRUNC_KAPPA, full_grid: false }
    }
}

/// First-stage fit of one scale candidate with what its criteria need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCandidate {
    pub name: String,
    pub fit: ScaleFit,
    pub stats: ScaleStats,
    /// Drift used to form the residuals inside `W_gamma`.
    pub pilot_drift: Option<String>,
}

/// Whether `kind` uses `Gamma_gamma` / `W_gamma`.
pub fn needs_information(kind: ScaleCriterionKind) -> bool {
    matches!(kind, ScaleCriterionKind::GQAIC1 | ScaleCriterionKind::GQAIC1_TRUNC)
}

/// The largest drift candidate (first among equals), used as pilot when
/// scale-stage matrices need drift-compensated residuals.
pub fn pilot_drift(drifts: &[Coefficient]) -> Option<&Coefficient> {
    drifts.iter().rev().max_by_key(|d| d.dim())
}

/// Fit one scale candidate. With `pilot` set, `Gamma_gamma` and `W_gamma`
/// are computed from residuals of the pilot drift fitted under this scale.
pub fn fit_scale_candidate(
    path: &SamplePath,
    scale: &Coefficient,
    pilot: Option<&Coefficient>,
    cfg: &OptConfig,
) -> Result<ScaleCandidate> {
    let fit = estimator::fit_scale(path, scale, cfg)?;
    let (nu2_hat, nu4_hat) = estimator::nu_hats(path, scale, &fit.gamma_hat)?;
    let p = fit.gamma_hat.len();
    let (gg, wg) = match pilot {
        Some(drift) => {
            let model = CandidateModel::new(scale.clone(), drift.clone());
            let df = estimator::fit_drift(path, &model, &fit.gamma_hat, cfg)?;
            let chi = estimator::residuals(path, drift, &df.alpha_hat);
            let (gg, wg) = estimator::scale_information(path, scale, &fit.gamma_hat, &chi)?;
            (estimator::to_rows(&gg), estimator::to_rows(&wg))
        }
        None => (vec![vec![f64::NAN; p]; p], vec![vec![f64::NAN; p]; p]),
    };
    Ok(ScaleCandidate {
        name: scale.name().to_string(),
        stats: ScaleStats {
            h1_value: fit.h1_value,
            p_gamma: p,
            gamma_gamma_hat: gg,
            w_gamma_hat: wg,
            nu2_hat,
            nu4_hat,
            meta: path.meta(),
        },
        fit,
        pilot_drift: pilot.map(|d| d.name().to_string()),
    })
}

/// Index of the smallest finite value (smallest index among ties) and whether a tie occurred.
pub fn argmin(values: &[Option<f64>]) -> Option<(usize, bool)> {
    let best = values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let tol = TIE_REL * best.abs().max(1.0);
    let mut hits = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_some_and(|v| v - best <= tol))
        .map(|(i, _)| i);
    let first = hits.next()?;
    Some((first, hits.next().is_some()))
}

fn error_text<T>(r: &Result<T>) -> Option<String> {
    r.as_ref().err().map(ToString::to_string)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleStep {
    pub kind: ScaleCriterionKind,
    pub names: Vec<String>,
    /// `None` marks a failed candidate (treated as `+inf`).
    pub values: Vec<Option<f64>>,
    pub errors: Vec<Option<String>>,
    pub truncated: Vec<bool>,
    pub chosen: usize,
    pub tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftStep {
    pub kind: DriftCriterionKind,
    pub names: Vec<String>,
    pub values: Vec<Option<f64>>,
    pub errors: Vec<Option<String>>,
    pub chosen: usize,
    pub tie: bool,
}

/// Score already-fitted scale candidates.
pub fn score_scales(
    candidates: &[Result<ScaleCandidate>],
    names: &[String],
    kind: ScaleCriterionKind,
    trunc_kappa: f64,
) -> Result<ScaleStep> {
    let scored: Vec<Result<criteria::CriterionValue>> = candidates
        .iter()
        .map(|c| match c {
            Ok(c) => criteria::scale_criterion(&c.stats, kind, trunc_kappa),
            Err(e) => Err(Error::Precondition(format!("fit failed: {e}"))),
        })
        .collect();
    let values: Vec<Option<f64>> = scored.iter().map(|r| r.as_ref().ok().map(|v| v.value)).collect();
    let (chosen, tie) = argmin(&values)
        .ok_or_else(|| Error::AllStartsFailed(format!("every scale candidate failed under {kind}")))?;
    Ok(ScaleStep {
        kind,
        names: names.to_vec(),
        truncated: scored.iter().map(|r| r.as_ref().is_ok_and(|v| v.truncated)).collect(),
        errors: scored.iter().map(error_text).collect(),
        values,
        chosen,
        tie,
    })
}

/// Score already-fitted drift candidates.
pub fn score_drifts(
    fits: &[Result<DriftFit>],
    names: &[String],
    p_alpha: &[usize],
    meta: crate::sde::PathMeta,
    kind: DriftCriterionKind,
) -> Result<DriftStep> {
    let values: Vec<Option<f64>> = fits
        .iter()
        .zip(p_alpha)
        .map(|(f, &p)| f.as_ref().ok().map(|f| criteria::drift_criterion_value(f.h2_value, p, meta, kind)))
        .collect();
    let (chosen, tie) = argmin(&values)
        .ok_or_else(|| Error::AllStartsFailed(format!("every drift candidate failed under {kind}")))?;
    Ok(DriftStep {
        kind,
        names: names.to_vec(),
        errors: fits.iter().map(error_text).collect(),
        values,
        chosen,
        tie,
    })
}

pub fn fit_scales(
    path: &SamplePath,
    scales: &[Coefficient],
    pilot: Option<&Coefficient>,
    cfg: &OptConfig,
) -> Vec<Result<ScaleCandidate>> {
    scales.par_iter().map(|s| fit_scale_candidate(path, s, pilot, cfg)).collect()
}

pub fn fit_drifts(
    path: &SamplePath,
    scale: &Coefficient,
    gamma_hat: &[f64],
    drifts: &[Coefficient],
    cfg: &OptConfig,
) -> Vec<Result<DriftFit>> {
    drifts
        .par_iter()
        .map(|d| estimator::fit_drift(path, &CandidateModel::new(scale.clone(), d.clone()), gamma_hat, cfg))
        .collect()
}

fn names(cs: &[Coefficient]) -> Vec<String> {
    cs.iter().map(|c| c.name().to_string()).collect()
}

fn nonempty(cs: &[Coefficient], what: &str) -> Result<()> {
    if cs.is_empty() {
        return Err(Error::Precondition(format!("no {what} candidates")));
    }
    Ok(())
}

/// Fit each scale candidate and return the criterion-minimizing index with all values.
/// `drifts` supplies the pilot drift for criteria that need `W_gamma`.
pub fn select_scale(
    path: &SamplePath,
    scales: &[Coefficient],
    drifts: &[Coefficient],
    kind: ScaleCriterionKind,
    cfg: &SelectionConfig,
) -> Result<(ScaleStep, Vec<Result<ScaleCandidate>>)> {
    nonempty(scales, "scale")?;
    let pilot = if needs_information(kind) { pilot_drift(drifts) } else { None };
    let fits = fit_scales(path, scales, pilot, &cfg.opt);
    let step = score_scales(&fits, &names(scales), kind, cfg.trunc_kappa)?;
    Ok((step, fits))
}

/// Fit each drift candidate under the chosen scale estimate and pick the minimizer.
pub fn select_drift(
    path: &SamplePath,
    drifts: &[Coefficient],
    scale: &Coefficient,
    gamma_hat: &[f64],
    kind: DriftCriterionKind,
    cfg: &SelectionConfig,
) -> Result<(DriftStep, Vec<Result<DriftFit>>)> {
    nonempty(drifts, "drift")?;
    let fits = fit_drifts(path, scale, gamma_hat, drifts, &cfg.opt);
    let dims: Vec<usize> = drifts.iter().map(Coefficient::dim).collect();
    let step = score_drifts(&fits, &names(drifts), &dims, path.meta(), kind)?;
    Ok((step, fits))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub scale: ScaleStep,
    pub drift: DriftStep,
    pub scale_fits: Vec<Option<ScaleCandidate>>,
    pub drift_fits: Vec<Option<DriftFit>>,
    /// Full fit of the selected pair.
    pub selected: FitResult,
    /// Number of criterion evaluations: scale candidates plus drift candidates.
    pub evaluations: usize,
    /// Drift criterion values under every scale (rows) when requested.
    pub full_grid: Option<Vec<Vec<Option<f64>>>>,
}

impl SelectionOutcome {
    pub fn chosen_scale(&self) -> usize {
        self.scale.chosen
    }

    pub fn chosen_drift(&self) -> usize {
        self.drift.chosen
    }
}

pub fn stepwise_select(
    path: &SamplePath,
    scales: &[Coefficient],
    drifts: &[Coefficient],
    scale_kind: ScaleCriterionKind,
    drift_kind: DriftCriterionKind,
    cfg: &SelectionConfig,
) -> Result<SelectionOutcome> {
    nonempty(drifts, "drift")?;
    let (scale_step, scale_fits) = select_scale(path, scales, drifts, scale_kind, cfg)?;
    let chosen = scale_step.chosen;
    let gamma_hat = match &scale_fits[chosen] {
        Ok(c) => c.fit.gamma_hat.clone(),
        Err(_) => unreachable!("argmin skips failed candidates"),
    };
    let (drift_step, drift_fits) = select_drift(path, drifts, &scales[chosen], &gamma_hat, drift_kind, cfg)?;
    let model = CandidateModel::new(scales[chosen].clone(), drifts[drift_step.chosen].clone());
    let selected = {
        let sf = scale_fits[chosen].as_ref().map(|c| c.fit.clone()).map_err(|e| Error::Precondition(e.to_string()))?;
        let df = drift_fits[drift_step.chosen].as_ref().map_err(|e| Error::Precondition(e.to_string()))?;
        estimator::assemble(path, &model, &sf, df)?
    };
    let full_grid = if cfg.full_grid {
        let dims: Vec<usize> = drifts.iter().map(Coefficient::dim).collect();
        Some(
            scales
                .iter()
                .zip(&scale_fits)
                .map(|(s, f)| match f {
                    Ok(c) => fit_drifts(path, s, &c.fit.gamma_hat, drifts, &cfg.opt)
                        .iter()
                        .zip(&dims)
                        .map(|(r, &p)| {
                            r.as_ref()
                                .ok()
                                .map(|d| criteria::drift_criterion_value(d.h2_value, p, path.meta(), drift_kind))
                        })
                        .collect(),
                    Err(_) => vec![None; drifts.len()],
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(SelectionOutcome {
        evaluations: scales.len() + drifts.len(),
        scale: scale_step,
        drift: drift_step,
        scale_fits: scale_fits.into_iter().map(Result::ok).collect(),
        drift_fits: drift_fits.into_iter().map(Result::ok).collect(),
        selected,
        full_grid,
    })
}
