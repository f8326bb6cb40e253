//! Two-stage Gaussian quasi-likelihood estimation and information-criterion
//! model selection for ergodic SDEs driven by Lévy noise, sampled at high frequency.

pub mod criteria;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod gqlf;
pub mod io;
pub mod levy;
pub mod limit;
pub mod model;
pub mod optim;
pub mod quadrature;
pub mod reference;
pub mod sde;
pub mod selection;

pub use criteria::{DriftCriterionKind, ScaleCriterionKind};
pub use error::{Error, Result};
pub use estimator::{fit, FitResult};
pub use experiment::{run_experiment, Case, CriterionPair, Design, ExperimentConfig, FrequencyTable};
pub use levy::{LevySpec, RngStream};
pub use model::{CandidateModel, Coefficient, ParamBox};
pub use optim::OptConfig;
pub use sde::{SamplePath, TrueModel};
pub use selection::{stepwise_select, SelectionOutcome};
