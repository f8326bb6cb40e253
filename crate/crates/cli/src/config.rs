//! Resolved configurations of each subcommand; these are what `--config`
//! files contain and what every output embeds.

use serde::{Deserialize, Serialize};

use levy_gqic::criteria::{DriftCriterionKind, ScaleCriterionKind, DEFAULT_TRUNC_KAPPA};
use levy_gqic::levy::LevySpec;
use levy_gqic::model::{DRIFT_NAMES, SCALE_NAMES};
use levy_gqic::optim::OptConfig;
use levy_gqic::sde::{TrueModelSpec, DEFAULT_REFINE};

fn default_refine() -> usize {
    DEFAULT_REFINE
}

fn default_kappa() -> f64 {
    DEFAULT_TRUNC_KAPPA
}

fn default_level() -> f64 {
    0.95
}

pub fn default_scales() -> Vec<String> {
    SCALE_NAMES.iter().map(|s| s.to_string()).collect()
}

pub fn default_drifts() -> Vec<String> {
    DRIFT_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub noise: LevySpec,
    pub truth: TrueModelSpec,
    pub n: usize,
    pub h: f64,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    #[serde(default = "default_refine")]
    pub refine: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: String,
    pub h: f64,
    pub scale: String,
    pub drift: String,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub opt: OptConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriteriaConfig {
    pub data: String,
    pub h: f64,
    #[serde(default = "default_scales")]
    pub scales: Vec<String>,
    #[serde(default = "default_drifts")]
    pub drifts: Vec<String>,
    #[serde(default = "default_kappa")]
    pub trunc_kappa: f64,
    #[serde(default)]
    pub opt: OptConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    pub data: String,
    pub h: f64,
    #[serde(default = "default_scales")]
    pub scales: Vec<String>,
    #[serde(default = "default_drifts")]
    pub drifts: Vec<String>,
    pub scale_criterion: ScaleCriterionKind,
    pub drift_criterion: DriftCriterionKind,
    #[serde(default = "default_kappa")]
    pub trunc_kappa: f64,
    #[serde(default)]
    pub full_grid: bool,
    #[serde(default)]
    pub opt: OptConfig,
}
