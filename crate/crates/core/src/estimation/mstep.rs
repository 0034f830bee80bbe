//! M-step of the EM algorithm.
//!
//! Everything the M-step needs is a handful of posterior-weighted sums per
//! (stratum, arm), so the EM loop accumulates them during the E-step pass and
//! never materializes the posterior matrix.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::likelihood::PosteriorMatrix;
use super::tobit::{self, TobitTerm};
use crate::data::Dataset;
use crate::error::{Result, StratError};
use crate::model::{linear_design, Arm, ComponentFamily, MeanStructure, ModelParams, LINEAR_TERMS};

/// Strata whose posterior weight in an arm falls below this keep their
/// previous location.
pub const FROZEN_WEIGHT: f64 = 1e-8;

/// Arm scales are bounded below by this fraction of the arm's weighted SD.
pub const SCALE_FLOOR_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CellStats {
    pub weight: f64,
    /// Sums of `y - shift[arm]` and its square.
    pub sum_dev: f64,
    pub sum_dev2: f64,
    pub weight_zero: f64,
    pub weight_pos: f64,
    pub sum_pos: f64,
    pub sum_pos2: f64,
}

/// Posterior-weighted sums indexed `[stratum][arm]`.
#[derive(Debug, Clone)]
pub(crate) struct SufficientStats {
    shift: [f64; 2],
    cells: Vec<[CellStats; 2]>,
}

impl SufficientStats {
    pub(crate) fn new(n_strata: usize, shift: [f64; 2]) -> Self {
        Self {
            shift,
            cells: vec![[CellStats::default(); 2]; n_strata],
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, stratum: usize, arm: Arm, y: f64, r: f64) {
        let t = arm.index();
        let c = &mut self.cells[stratum][t];
        let dev = y - self.shift[t];
        c.weight += r;
        c.sum_dev += r * dev;
        c.sum_dev2 += r * dev * dev;
        if y == 0.0 {
            c.weight_zero += r;
        } else {
            c.weight_pos += r;
            c.sum_pos += r * y;
            c.sum_pos2 += r * y * y;
        }
    }
}

/// Dataset-level constants shared by every M-step of a fit.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MStepContext {
    pub shift: [f64; 2],
    pub floor: [f64; 2],
}

impl MStepContext {
    pub(crate) fn new(dataset: &Dataset) -> Result<Self> {
        let mut shift = [0.0; 2];
        let mut floor = [0.0; 2];
        for arm in Arm::BOTH {
            let (mean, sd) = dataset.arm_moments(arm)?;
            shift[arm.index()] = mean;
            floor[arm.index()] = SCALE_FLOOR_FRACTION * sd;
        }
        Ok(Self { shift, floor })
    }
}

/// What the M-step had to constrain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MStepFlags {
    pub floor_active: [bool; 2],
    /// `(stratum, arm)` pairs whose location was frozen. For the linear
    /// structure a frozen arm is reported with stratum `usize::MAX`.
    pub frozen: Vec<(usize, Arm)>,
}

pub(crate) fn m_step_from_stats(
    stats: &SufficientStats,
    ctx: &MStepContext,
    previous: &ModelParams,
) -> (ModelParams, MStepFlags) {
    let spec = *previous.spec();
    let n_strata = spec.grid.len();
    let mut flags = MStepFlags::default();

    let stratum_weight: Vec<f64> = stats.cells.iter().map(|c| c[0].weight + c[1].weight).collect();
    let total: f64 = stratum_weight.iter().sum();
    let probs: Vec<f64> = stratum_weight.iter().map(|w| w / total).collect();

    let mut locations = previous.location_params().to_vec();
    let mut scales = previous.scales();
    for arm in Arm::BOTH {
        let t = arm.index();
        let floor = ctx.floor[t];
        match (spec.family, spec.mean_structure) {
            (ComponentFamily::Normal, MeanStructure::Saturated) => {
                let mut rss = 0.0;
                let mut arm_weight = 0.0;
                for s in 0..n_strata {
                    let c = &stats.cells[s][t];
                    if c.weight < FROZEN_WEIGHT {
                        flags.frozen.push((s, arm));
                    } else {
                        locations[s][t] = stats.shift[t] + c.sum_dev / c.weight;
                    }
                    let d = locations[s][t] - stats.shift[t];
                    rss += c.sum_dev2 - 2.0 * d * c.sum_dev + d * d * c.weight;
                    arm_weight += c.weight;
                }
                let sd = (rss.max(0.0) / arm_weight).sqrt();
                flags.floor_active[t] = sd < floor;
                scales[t] = sd.max(floor);
            }
            (ComponentFamily::Normal, MeanStructure::LinearInZ) => {
                // Weighted least squares in shifted coordinates.
                let mut xtx = Matrix4::<f64>::zeros();
                let mut xty = Vector4::<f64>::zeros();
                for s in 0..n_strata {
                    let c = &stats.cells[s][t];
                    let x = Vector4::from(linear_design(spec.grid.stratum(s)));
                    xtx += x * x.transpose() * c.weight;
                    xty += x * c.sum_dev;
                }
                let mut coef: [f64; LINEAR_TERMS] = std::array::from_fn(|j| locations[j][t]);
                coef[0] -= stats.shift[t];
                match xtx.cholesky() {
                    Some(chol) => {
                        let beta = chol.solve(&xty);
                        coef = std::array::from_fn(|j| beta[j]);
                    }
                    None => flags.frozen.push((usize::MAX, arm)),
                }
                let mut rss = 0.0;
                let mut arm_weight = 0.0;
                for s in 0..n_strata {
                    let c = &stats.cells[s][t];
                    let x = linear_design(spec.grid.stratum(s));
                    let d: f64 = x.iter().zip(&coef).map(|(a, b)| a * b).sum();
                    rss += c.sum_dev2 - 2.0 * d * c.sum_dev + d * d * c.weight;
                    arm_weight += c.weight;
                }
                for (j, value) in coef.iter().enumerate() {
                    locations[j][t] = *value + if j == 0 { stats.shift[t] } else { 0.0 };
                }
                let sd = (rss.max(0.0) / arm_weight).sqrt();
                flags.floor_active[t] = sd < floor;
                scales[t] = sd.max(floor);
            }
            (ComponentFamily::Tobit, MeanStructure::Saturated) => {
                let active: Vec<usize> = (0..n_strata)
                    .filter(|&s| stats.cells[s][t].weight >= FROZEN_WEIGHT)
                    .collect();
                flags
                    .frozen
                    .extend((0..n_strata).filter(|s| !active.contains(s)).map(|s| (s, arm)));
                let terms: Vec<TobitTerm> = active
                    .iter()
                    .enumerate()
                    .map(|(j, &s)| {
                        let mut design = vec![0.0; active.len()];
                        design[j] = 1.0;
                        tobit_term(design, &stats.cells[s][t])
                    })
                    .collect();
                let start: Vec<f64> = active.iter().map(|&s| locations[s][t]).collect();
                let sol = tobit::maximize(&terms, &start, scales[t], floor);
                for (j, &s) in active.iter().enumerate() {
                    locations[s][t] = sol.coef[j];
                }
                scales[t] = sol.scale;
                flags.floor_active[t] = sol.floor_active;
            }
            (ComponentFamily::Tobit, MeanStructure::LinearInZ) => {
                let terms: Vec<TobitTerm> = (0..n_strata)
                    .map(|s| tobit_term(linear_design(spec.grid.stratum(s)).to_vec(), &stats.cells[s][t]))
                    .collect();
                let start: Vec<f64> = (0..LINEAR_TERMS).map(|j| locations[j][t]).collect();
                let sol = tobit::maximize(&terms, &start, scales[t], floor);
                for j in 0..LINEAR_TERMS {
                    locations[j][t] = sol.coef[j];
                }
                scales[t] = sol.scale;
                flags.floor_active[t] = sol.floor_active;
            }
        }
    }
    (ModelParams::from_parts_unchecked(spec, probs, locations, scales), flags)
}

fn tobit_term(design: Vec<f64>, c: &CellStats) -> TobitTerm {
    TobitTerm {
        design,
        weight_zero: c.weight_zero,
        weight_pos: c.weight_pos,
        sum_y: c.sum_pos,
        sum_y2: c.sum_pos2,
    }
}

/// Maximize the expected complete-data log-likelihood given posteriors.
///
/// Probabilities pool both arms; normal locations are posterior-weighted
/// means (or weighted least squares on `(1, z₁, z₀, z₁z₀)`) with a pooled
/// per-arm scale; tobit components are fitted per arm by damped Newton
/// starting from `previous`. Strata with posterior weight below
/// [`FROZEN_WEIGHT`] keep their previous location.
pub fn m_step(
    posterior: &PosteriorMatrix,
    dataset: &Dataset,
    previous: &ModelParams,
) -> Result<(ModelParams, MStepFlags)> {
    if posterior.n_cases() != dataset.len() || posterior.n_strata() != previous.grid().len() {
        return Err(StratError::InvalidParams(format!(
            "posterior is {}x{}, dataset has {} cases and model {} strata",
            posterior.n_cases(),
            posterior.n_strata(),
            dataset.len(),
            previous.grid().len()
        )));
    }
    let ctx = MStepContext::new(dataset)?;
    let mut stats = SufficientStats::new(previous.grid().len(), ctx.shift);
    for i in 0..dataset.len() {
        let c = dataset.case(i);
        for (s, &p) in posterior.row(i).iter().enumerate() {
            if p > 0.0 {
                stats.add(s, c.arm, c.y, c.weight * p);
            }
        }
    }
    Ok(m_step_from_stats(&stats, &ctx, previous))
}
