//! Monte Carlo selection-frequency experiments over a grid of sampling designs.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{DriftCriterionKind, ScaleCriterionKind, DEFAULT_TRUNC_KAPPA};
use crate::error::{Error, Result};
use crate::estimator::DriftFit;
use crate::levy::{LevySpec, RngStream};
use crate::model::{registry_list, Coefficient, DRIFT_NAMES, SCALE_NAMES};
use crate::optim::OptConfig;
use crate::sde::{euler_path, SamplePath, TrueModelSpec, DEFAULT_REFINE};
use crate::selection::{self, needs_information};

/// One sampling design: step `h` over horizon `t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Design {
    pub h: f64,
    pub t_end: f64,
}

impl Design {
    pub fn n(&self) -> usize {
        (self.t_end / self.h).round() as usize
    }

    /// `n h^2`, which should be small for the local Gaussian approximation.
    pub fn nh2(&self) -> f64 {
        self.n() as f64 * self.h * self.h
    }
}

/// Scale criterion used in step one and drift criterion used in step two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionPair {
    pub scale: ScaleCriterionKind,
    pub drift: DriftCriterionKind,
}

impl CriterionPair {
    pub const PRESET_NAMES: [&'static str; 4] = ["faic", "gqaic", "gqbic", "gqbic_sharp"];

    /// Named pairs matching the reference table blocks.
    pub fn preset(name: &str) -> Result<Self> {
        use DriftCriterionKind as D;
        use ScaleCriterionKind as S;
        let (scale, drift) = match name.to_ascii_lowercase().as_str() {
            "faic" => (S::FAIC1, D::FAIC2),
            "gqaic" => (S::GQAIC1, D::GQAIC2),
            "gqbic" => (S::GQBIC1, D::GQBIC2),
            "gqbic_sharp" => (S::GQBIC1_SHARP, D::GQBIC2),
            other => return Err(Error::Precondition(format!("unknown criterion preset {other:?}"))),
        };
        Ok(Self { scale, drift })
    }

    pub fn preset_name(&self) -> Option<&'static str> {
        Self::PRESET_NAMES.into_iter().find(|n| Self::preset(n).ok().as_ref() == Some(self))
    }

    pub fn label(&self) -> String {
        format!("{}+{}", self.scale, self.drift)
    }
}

/// Built-in noise settings; all share the benchmark true model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    /// Symmetric NIG(10, 0, 10t, 0).
    I,
    /// Bilateral gamma bGamma(t, sqrt 2, t, sqrt 2).
    Ii,
    /// Skewed NIG(25/3, 20/3, 9t/5, -12t/5).
    Iii,
    /// Standard Wiener process.
    Gaussian,
}

impl Case {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(Case::I),
            "ii" | "2" => Ok(Case::Ii),
            "iii" | "3" => Ok(Case::Iii),
            "gaussian" | "wiener" => Ok(Case::Gaussian),
            other => Err(Error::Precondition(format!("unknown case {other:?} (expected i, ii, iii or gaussian)"))),
        }
    }

    pub fn noise(self) -> LevySpec {
        match self {
            Case::I => LevySpec::Nig { alpha: 10.0, beta: 0.0, delta_rate: 10.0, mu_rate: 0.0 },
            Case::Ii => LevySpec::BilateralGamma {
                shape_pos_rate: 1.0,
                rate_pos: std::f64::consts::SQRT_2,
                shape_neg_rate: 1.0,
                rate_neg: std::f64::consts::SQRT_2,
            },
            Case::Iii => LevySpec::Nig { alpha: 25.0 / 3.0, beta: 20.0 / 3.0, delta_rate: 9.0 / 5.0, mu_rate: -12.0 / 5.0 },
            Case::Gaussian => LevySpec::Gaussian,
        }
    }
}

/// The four reference designs `(T, h)`.
pub fn standard_designs() -> Vec<Design> {
    vec![
        Design { h: 0.01, t_end: 10.0 },
        Design { h: 0.005, t_end: 10.0 },
        Design { h: 0.01, t_end: 50.0 },
        Design { h: 0.005, t_end: 50.0 },
    ]
}

fn default_refine() -> usize {
    DEFAULT_REFINE
}

fn default_kappa() -> f64 {
    DEFAULT_TRUNC_KAPPA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub noise: LevySpec,
    pub truth: TrueModelSpec,
    pub grid: Vec<Design>,
    pub replications: usize,
    pub scales: Vec<String>,
    pub drifts: Vec<String>,
    pub criteria: Vec<CriterionPair>,
    pub base_seed: u64,
    #[serde(default = "default_refine")]
    pub refine: usize,
    #[serde(default = "default_kappa")]
    pub trunc_kappa: f64,
    #[serde(default)]
    pub opt: OptConfig,
}

impl ExperimentConfig {
    /// Benchmark model, full candidate grid, all four criterion presets.
    pub fn preset(case: Case, grid: Vec<Design>, replications: usize, base_seed: u64) -> Self {
        Self {
            noise: case.noise(),
            truth: TrueModelSpec::benchmark(),
            grid,
            replications,
            scales: SCALE_NAMES.iter().map(|s| s.to_string()).collect(),
            drifts: DRIFT_NAMES.iter().map(|s| s.to_string()).collect(),
            criteria: CriterionPair::PRESET_NAMES.iter().map(|n| CriterionPair::preset(n).unwrap()).collect(),
            base_seed,
            refine: DEFAULT_REFINE,
            trunc_kappa: DEFAULT_TRUNC_KAPPA,
            opt: OptConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Precondition("replications must be at least 1".into()));
        }
        if self.grid.is_empty() || self.criteria.is_empty() || self.scales.is_empty() || self.drifts.is_empty() {
            return Err(Error::Precondition("grid, criteria and candidate lists must be nonempty".into()));
        }
        for d in &self.grid {
            if !(d.h > 0.0 && d.t_end > 0.0 && d.n() >= 1) {
                return Err(Error::Precondition(format!("invalid design {d:?}")));
            }
        }
        if self.refine == 0 {
            return Err(Error::Precondition("refine must be at least 1".into()));
        }
        self.noise.validate()?;
        self.truth.build()?;
        registry_list(&self.scales)?;
        registry_list(&self.drifts)?;
        self.opt.validate()
    }
}

/// Counts for one criterion pair under one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableBlock {
    pub design: Design,
    pub n: usize,
    pub criterion: CriterionPair,
    /// `counts[drift_idx][scale_idx]`.
    pub counts: Vec<Vec<u64>>,
    pub failed: u64,
    /// Replications where either step had a tie (resolved to the smaller index).
    pub ties: u64,
    /// Replications where the truncated criterion dropped its penalty for the chosen scale.
    pub truncated: u64,
}

impl TableBlock {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.failed
    }

    pub fn frequency(&self, drift_idx: usize, scale_idx: usize) -> f64 {
        self.counts[drift_idx][scale_idx] as f64 / self.total() as f64
    }

    /// Column sums: how often each scale was chosen.
    pub fn scale_marginal(&self) -> Vec<u64> {
        (0..self.counts[0].len()).map(|s| self.counts.iter().map(|row| row[s]).sum()).collect()
    }

    pub fn drift_marginal(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub config: ExperimentConfig,
    pub blocks: Vec<TableBlock>,
    pub runtime_secs: f64,
    /// Messages about designs with large `n h^2` and similar caveats.
    pub warnings: Vec<String>,
}

impl FrequencyTable {
    pub fn block(&self, design: Design, criterion: CriterionPair) -> Option<&TableBlock> {
        self.blocks
            .iter()
            .find(|b| b.criterion == criterion && same_design(b.design, design))
    }

    /// Rows `criterion,h,t_end,scale_idx,drift_idx,count`; failures use index -1.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
        w.write_record(["criterion", "h", "t_end", "scale_idx", "drift_idx", "count"]).map_err(io)?;
        for b in &self.blocks {
            let label = b.criterion.label();
            let (h, t) = (b.design.h.to_string(), b.design.t_end.to_string());
            for (d, row) in b.counts.iter().enumerate() {
                for (s, c) in row.iter().enumerate() {
                    w.write_record([&label, &h, &t, &s.to_string(), &d.to_string(), &c.to_string()]).map_err(io)?;
                }
            }
            w.write_record([&label, &h, &t, "-1", "-1", &b.failed.to_string()]).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn same_design(a: Design, b: Design) -> bool {
    (a.h - b.h).abs() <= 1e-12 * a.h.max(b.h) && (a.t_end - b.t_end).abs() <= 1e-9 * a.t_end.max(b.t_end)
}

/// Per-replication outcome: `(scale_idx, drift_idx, tie, truncated)` per criterion pair.
type RepOutcome = Vec<Option<(usize, usize, bool, bool)>>;

fn one_replication(
    path: &SamplePath,
    scales: &[Coefficient],
    drifts: &[Coefficient],
    cfg: &ExperimentConfig,
) -> RepOutcome {
    let need_info = cfg.criteria.iter().any(|c| needs_information(c.scale));
    let pilot = if need_info { selection::pilot_drift(drifts) } else { None };
    let fits = selection::fit_scales(path, scales, pilot, &cfg.opt);
    let scale_names: Vec<String> = scales.iter().map(|s| s.name().to_string()).collect();
    let drift_names: Vec<String> = drifts.iter().map(|s| s.name().to_string()).collect();
    let dims: Vec<usize> = drifts.iter().map(Coefficient::dim).collect();
    let mut drift_cache: HashMap<usize, Vec<Result<DriftFit>>> = HashMap::new();
    cfg.criteria
        .iter()
        .map(|pair| {
            let step = selection::score_scales(&fits, &scale_names, pair.scale, cfg.trunc_kappa).ok()?;
            let gamma_hat = fits[step.chosen].as_ref().ok()?.fit.gamma_hat.clone();
            let dfits = drift_cache
                .entry(step.chosen)
                .or_insert_with(|| selection::fit_drifts(path, &scales[step.chosen], &gamma_hat, drifts, &cfg.opt));
            let dstep = selection::score_drifts(dfits, &drift_names, &dims, path.meta(), pair.drift).ok()?;
            Some((step.chosen, dstep.chosen, step.tie || dstep.tie, step.truncated[step.chosen]))
        })
        .collect()
}

/// Simulate `replications` paths per design (replication `r` uses stream
/// `base_seed ^ r`) and tally the stepwise choice of every criterion pair.
/// The result does not depend on the number of worker threads.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<FrequencyTable> {
    cfg.validate()?;
    let started = Instant::now();
    let truth = cfg.truth.build()?;
    let scales = registry_list(&cfg.scales)?;
    let drifts = registry_list(&cfg.drifts)?;
    let mut warnings = Vec::new();
    let mut blocks = Vec::new();
    for &design in &cfg.grid {
        let n = design.n();
        if design.nh2() >= 0.5 {
            let msg = format!("design h = {}, T = {}: n h^2 = {:.3} is not small", design.h, design.t_end, design.nh2());
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let outcomes: Vec<RepOutcome> = (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let stream = RngStream::for_replication(cfg.base_seed, r as u64);
                match euler_path(&truth, &cfg.noise, n, design.h, cfg.refine, &stream) {
                    Ok(path) => one_replication(&path, &scales, &drifts, cfg),
                    Err(e) => {
                        log::warn!("replication {r}: {e}");
                        vec![None; cfg.criteria.len()]
                    }
                }
            })
            .collect();
        for (k, &pair) in cfg.criteria.iter().enumerate() {
            let mut block = TableBlock {
                design,
                n,
                criterion: pair,
                counts: vec![vec![0; scales.len()]; drifts.len()],
                failed: 0,
                ties: 0,
                truncated: 0,
            };
            for o in &outcomes {
                match o[k] {
                    Some((s, d, tie, trunc)) => {
                        block.counts[d][s] += 1;
                        block.ties += u64::from(tie);
                        block.truncated += u64::from(trunc);
                    }
                    None => block.failed += 1,
                }
            }
            blocks.push(block);
        }
    }
    Ok(FrequencyTable { config: cfg.clone(), blocks, runtime_secs: started.elapsed().as_secs_f64(), warnings })
}
