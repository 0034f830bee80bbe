//! Error type shared by every module of the crate.

use thiserror::Error;

use crate::model::Arm;

/// Errors returned by validation, fitting, inference and simulation.
#[derive(Debug, Error)]
pub enum StratError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid case {index}: {reason}")]
    InvalidCase { index: usize, reason: String },
    #[error("negative outcome under censored family (case {index}, y = {y})")]
    NegativeCensoredOutcome { index: usize, y: f64 },
    #[error("empty arm: {0:?} has no positive weight")]
    EmptyArm(Arm),
    #[error("empty cells (arm, z_obs): {0:?}")]
    EmptyCells(Vec<(Arm, usize)>),
    #[error("cell ({arm:?}, z_obs = {z_obs}) too small for warm start: {cases} cases for {components} components")]
    CellTooSmall {
        arm: Arm,
        z_obs: usize,
        cases: usize,
        components: usize,
    },
    #[error("grid mismatch: dataset has {dataset} levels, model has {model}")]
    GridMismatch { dataset: usize, model: usize },
    #[error("degenerate mixture at case {0}")]
    DegenerateMixture(usize),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no starting mapping converged ({} starts tried)", .0.len())]
    NoConvergence(Vec<crate::estimation::StartTrace>),
    #[error("not at an interior maximum: {reason}")]
    NotInterior { reason: String, eigenvalues: Vec<f64> },
    #[error("sandwich estimator needs at least 2 clusters, found {0}")]
    TooFewClusters(usize),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = StratError> = std::result::Result<T, E>;
