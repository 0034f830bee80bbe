//! Likelihood, EM and starting values.

mod em;
mod likelihood;
mod mapping;
mod mstep;
mod tobit;
mod warmstart;

pub use em::{fit, fit_from_starts, run_em, EmRun, FitConfig, FitResult, StartTrace, TIE_TOLERANCE};
pub use likelihood::{case_log_likelihoods, e_step, log_likelihood, PosteriorMatrix};
pub use mapping::{
    enumerate_mappings, mapping_count, nine_strata_starts, select_starts, MappingSpace, StartStrategy,
    StartingMapping,
};
pub use mstep::{m_step, MStepFlags, FROZEN_WEIGHT, SCALE_FLOOR_FRACTION};
pub use warmstart::{warm_start_cells, CellWarmStart, WarmStarts};
