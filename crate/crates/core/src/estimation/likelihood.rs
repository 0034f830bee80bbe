//! Weighted observed-data likelihood and stratum posteriors.
//!
//! A treated case observed at `z1` mixes over every stratum `(z0, z1)`; a
//! control case observed at `z0` mixes over every `(z0, z1)`. Each case's
//! log mixture density is multiplied by its weight.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::{normal_log_density, tobit_log_zero_mass};
use crate::error::{Result, StratError};
use crate::model::{Arm, ComponentFamily, ModelParams, MAX_LEVELS};

/// Per-component constants for fast repeated density evaluation.
pub(crate) struct ComponentTable {
    k: usize,
    family: ComponentFamily,
    /// Compatible strata per cell, indexed `[arm][z_obs]`.
    compatible: [Vec<Vec<usize>>; 2],
    log_prob: Vec<f64>,
    /// `[stratum][arm]`
    location: Vec<[f64; 2]>,
    scale: [f64; 2],
    /// `ln Φ(-η/ζ)` per `[stratum][arm]`; unused for normal components.
    log_zero: Vec<[f64; 2]>,
}

impl ComponentTable {
    pub(crate) fn new(params: &ModelParams) -> Self {
        let grid = *params.grid();
        let k = grid.k_levels();
        let location = params.expanded_locations();
        let scale = params.scales();
        let log_zero = match params.family() {
            ComponentFamily::Normal => Vec::new(),
            ComponentFamily::Tobit => location
                .iter()
                .map(|row| {
                    [
                        tobit_log_zero_mass(row[0], scale[0]),
                        tobit_log_zero_mass(row[1], scale[1]),
                    ]
                })
                .collect(),
        };
        Self {
            k,
            family: params.family(),
            compatible: [
                (0..k).map(|z| grid.compatible(Arm::Control, z)).collect(),
                (0..k).map(|z| grid.compatible(Arm::Treated, z)).collect(),
            ],
            log_prob: params.probs().iter().map(|p| p.ln()).collect(),
            location,
            scale,
            log_zero,
        }
    }

    #[inline]
    pub(crate) fn compatible(&self, arm: Arm, z_obs: usize) -> &[usize] {
        &self.compatible[arm.index()][z_obs]
    }

    /// `ln p_s + ln f(y; θ_{s,arm})` for each compatible stratum.
    #[inline]
    fn log_terms(&self, y: f64, arm: Arm, z_obs: usize, out: &mut [f64; MAX_LEVELS]) {
        let t = arm.index();
        let scale = self.scale[t];
        for (slot, &s) in out.iter_mut().zip(&self.compatible[t][z_obs]) {
            let lf = match self.family {
                ComponentFamily::Tobit if y == 0.0 => self.log_zero[s][t],
                _ => normal_log_density(y, self.location[s][t], scale),
            };
            *slot = self.log_prob[s] + lf;
        }
    }
}

/// Visit every case with its normalized posterior over compatible strata.
/// Returns the weighted log-likelihood.
#[inline]
pub(crate) fn for_each_posterior<F>(table: &ComponentTable, dataset: &Dataset, mut visit: F) -> Result<f64>
where
    F: FnMut(usize, &[usize], &[f64]),
{
    let k = table.k;
    let mut terms = [0.0; MAX_LEVELS];
    let mut loglik = 0.0;
    let (y, arms, zs, ws) = (dataset.y(), dataset.arms(), dataset.z_obs(), dataset.weights());
    for i in 0..dataset.len() {
        table.log_terms(y[i], arms[i], zs[i], &mut terms);
        let max = terms[..k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(StratError::DegenerateMixture(i));
        }
        let mut sum = 0.0;
        for t in &mut terms[..k] {
            *t = (*t - max).exp();
            sum += *t;
        }
        loglik += ws[i] * (max + sum.ln());
        let inv = 1.0 / sum;
        for t in &mut terms[..k] {
            *t *= inv;
        }
        visit(i, table.compatible(arms[i], zs[i]), &terms[..k]);
    }
    Ok(loglik)
}

fn check_grid(params: &ModelParams, dataset: &Dataset) -> Result<()> {
    if params.grid().k_levels() != dataset.k_levels() {
        return Err(StratError::GridMismatch {
            dataset: dataset.k_levels(),
            model: params.grid().k_levels(),
        });
    }
    if params.family() == ComponentFamily::Tobit {
        if let Some(index) = dataset.y().iter().position(|&y| y < 0.0) {
            return Err(StratError::NegativeCensoredOutcome {
                index,
                y: dataset.y()[index],
            });
        }
    }
    Ok(())
}

/// `Σᵢ wᵢ ln Σ_{s compatible} p_s f(yᵢ; θ_{s,tᵢ})`.
pub fn log_likelihood(params: &ModelParams, dataset: &Dataset) -> Result<f64> {
    check_grid(params, dataset)?;
    for_each_posterior(&ComponentTable::new(params), dataset, |_, _, _| {})
}

/// Unweighted per-case log mixture densities.
pub fn case_log_likelihoods(params: &ModelParams, dataset: &Dataset) -> Result<Vec<f64>> {
    check_grid(params, dataset)?;
    let table = ComponentTable::new(params);
    let mut terms = [0.0; MAX_LEVELS];
    let k = table.k;
    (0..dataset.len())
        .map(|i| {
            let c = dataset.case(i);
            table.log_terms(c.y, c.arm, c.z_obs, &mut terms);
            let max = terms[..k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(StratError::DegenerateMixture(i));
            }
            Ok(max + terms[..k].iter().map(|t| (t - max).exp()).sum::<f64>().ln())
        })
        .collect()
}

/// Posterior stratum membership, one row per case and one column per stratum.
/// Incompatible strata hold exact zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMatrix {
    n_strata: usize,
    values: Vec<f64>,
}

impl PosteriorMatrix {
    /// Row-major `cases × n_strata` values; every row must sum to 1.
    pub fn from_values(n_strata: usize, values: Vec<f64>) -> Result<Self> {
        if n_strata == 0 || !values.len().is_multiple_of(n_strata) {
            return Err(StratError::InvalidParams(format!(
                "{} values do not form rows of {n_strata}",
                values.len()
            )));
        }
        for (i, row) in values.chunks(n_strata).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-10 {
                return Err(StratError::InvalidParams(format!("posterior row {i} is not a distribution")));
            }
        }
        Ok(Self { n_strata, values })
    }

    #[must_use]
    pub fn n_cases(&self) -> usize {
        self.values.len().checked_div(self.n_strata).unwrap_or(0)
    }

    #[must_use]
    pub fn n_strata(&self) -> usize {
        self.n_strata
    }

    #[must_use]
    pub fn row(&self, case: usize) -> &[f64] {
        &self.values[case * self.n_strata..(case + 1) * self.n_strata]
    }

    #[must_use]
    pub fn get(&self, case: usize, stratum: usize) -> f64 {
        self.values[case * self.n_strata + stratum]
    }
}

pub(crate) fn e_step_with_loglik(params: &ModelParams, dataset: &Dataset) -> Result<(PosteriorMatrix, f64)> {
    check_grid(params, dataset)?;
    let n_strata = params.grid().len();
    let mut values = vec![0.0; dataset.len() * n_strata];
    let loglik = for_each_posterior(&ComponentTable::new(params), dataset, |i, strata, post| {
        let row = &mut values[i * n_strata..(i + 1) * n_strata];
        for (&s, &p) in strata.iter().zip(post) {
            row[s] = p;
        }
    })?;
    Ok((PosteriorMatrix { n_strata, values }, loglik))
}

/// Posterior `p_s f(yᵢ; θ_{s,t}) / Σ_{s'} p_{s'} f(yᵢ; θ_{s',t})`, computed in
/// log space with max subtraction.
pub fn e_step(params: &ModelParams, dataset: &Dataset) -> Result<PosteriorMatrix> {
    e_step_with_loglik(params, dataset).map(|(p, _)| p)
}
