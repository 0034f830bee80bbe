//! Principal stratification with a finite-mixture likelihood.
//!
//! Cases are observed in one arm at one institutionalization level, while
//! the estimand concerns latent strata defined by the level a case would
//! reach under each arm. The observed data are therefore a mixture over
//! compatible strata, fitted by EM from every labeling of cell-wise warm
//! starts.

pub mod data;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod model;
pub mod normal;
pub mod simulation;

pub use data::{effective_sample_size, Case, Dataset};
pub use error::{Result, StratError};
pub use estimation::{fit, FitConfig, FitResult, StartStrategy};
pub use model::{Arm, ComponentFamily, MeanStructure, ModelParams, ModelSpec, StrataGrid, Stratum};
