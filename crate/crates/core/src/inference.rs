//! Stratum treatment effects and their standard errors.
//!
//! Derivatives are central finite differences of the weighted
//! log-likelihood in the packed (unconstrained) parameterization, so one
//! code path covers both families and both mean structures. Effect standard
//! errors follow by the delta method with analytic effect gradients.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::censored_mean;
use crate::error::{Result, StratError};
use crate::estimation::{case_log_likelihoods, log_likelihood, FitResult, MStepFlags};
use crate::model::{linear_design, Arm, ComponentFamily, MeanStructure, ModelParams, Stratum};
use crate::normal;

/// Two-sided 5% critical value of the standard normal.
pub const Z_CRIT_5PCT: f64 = 1.959_963_984_540_054;

/// Probabilities closer than this to 0 or 1 are on the simplex boundary.
pub const BOUNDARY_MARGIN: f64 = 1e-6;

fn step(x: f64) -> f64 {
    1e-5_f64.max(1e-5 * x.abs())
}

fn loglik_at(params: &ModelParams, dataset: &Dataset, theta: &[f64]) -> Result<f64> {
    log_likelihood(&params.spec().unpack(theta)?, dataset)
}

/// Central-difference gradient of the weighted log-likelihood in packed space.
pub fn numerical_gradient(params: &ModelParams, dataset: &Dataset) -> Result<Vec<f64>> {
    let theta = params.pack();
    (0..theta.len())
        .into_par_iter()
        .map(|i| {
            let h = step(theta[i]);
            let mut t = theta.clone();
            t[i] = theta[i] + h;
            let up = loglik_at(params, dataset, &t)?;
            t[i] = theta[i] - h;
            let down = loglik_at(params, dataset, &t)?;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Central-difference Hessian of the weighted log-likelihood in packed space.
pub fn numerical_hessian(params: &ModelParams, dataset: &Dataset) -> Result<DMatrix<f64>> {
    let theta = params.pack();
    let p = theta.len();
    let h: Vec<f64> = theta.iter().map(|&x| step(x)).collect();
    let f0 = log_likelihood(params, dataset)?;
    let eval = |moves: &[(usize, f64)]| {
        let mut t = theta.clone();
        for &(i, d) in moves {
            t[i] += d;
        }
        loglik_at(params, dataset, &t)
    };
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| (i..p).map(move |j| (i, j))).collect();
    let entries: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if i == j {
                let up = eval(&[(i, h[i])])?;
                let down = eval(&[(i, -h[i])])?;
                Ok((up - 2.0 * f0 + down) / (h[i] * h[i]))
            } else {
                let pp = eval(&[(i, h[i]), (j, h[j])])?;
                let pm = eval(&[(i, h[i]), (j, -h[j])])?;
                let mp = eval(&[(i, -h[i]), (j, h[j])])?;
                let mm = eval(&[(i, -h[i]), (j, -h[j])])?;
                Ok((pp - pm - mp + mm) / (4.0 * h[i] * h[j]))
            }
        })
        .collect::<Result<_>>()?;
    let mut hess = DMatrix::zeros(p, p);
    for (&(i, j), v) in pairs.iter().zip(entries) {
        hess[(i, j)] = v;
        hess[(j, i)] = v;
    }
    Ok(hess)
}

/// Per-case (unweighted) score vectors, one row per case.
pub fn case_scores(params: &ModelParams, dataset: &Dataset) -> Result<DMatrix<f64>> {
    let theta = params.pack();
    let columns: Vec<Vec<f64>> = (0..theta.len())
        .into_par_iter()
        .map(|j| {
            let h = step(theta[j]);
            let mut t = theta.clone();
            t[j] = theta[j] + h;
            let up = case_log_likelihoods(&params.spec().unpack(&t)?, dataset)?;
            t[j] = theta[j] - h;
            let down = case_log_likelihoods(&params.spec().unpack(&t)?, dataset)?;
            Ok(up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(dataset.len(), theta.len(), |i, j| columns[j][i]))
}

/// Reject fits on the boundary of the parameter space, where the
/// information-matrix asymptotics do not apply.
pub fn check_interior(params: &ModelParams, flags: &MStepFlags) -> Result<()> {
    let reason = if flags.floor_active.iter().any(|&a| a) {
        Some("a scale sits on its floor".to_string())
    } else if let Some(s) = params
        .probs()
        .iter()
        .position(|&p| !(BOUNDARY_MARGIN..=1.0 - BOUNDARY_MARGIN).contains(&p))
        .filter(|_| params.grid().len() > 1)
    {
        Some(format!("stratum {s} probability {} is on the simplex boundary", params.probs()[s]))
    } else {
        None
    };
    match reason {
        Some(reason) => Err(StratError::NotInterior {
            reason,
            eigenvalues: Vec::new(),
        }),
        None => Ok(()),
    }
}

/// `(-H)⁻¹`, provided `-H` is positive definite.
fn bread(hessian: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let neg = -hessian;
    let eigen = SymmetricEigen::new(neg.clone());
    if eigen.eigenvalues.iter().any(|&e| !(e > 0.0)) {
        let mut eigenvalues: Vec<f64> = eigen.eigenvalues.iter().map(|e| -e).collect();
        eigenvalues.sort_by(f64::total_cmp);
        return Err(StratError::NotInterior {
            reason: "Hessian is not negative definite".into(),
            eigenvalues,
        });
    }
    neg.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| StratError::NotInterior {
            reason: "Hessian is numerically singular".into(),
            eigenvalues: eigen.eigenvalues.iter().map(|e| -e).collect(),
        })
}

/// Which variance estimator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceKind {
    /// Inverse observed information.
    Naive,
    /// Huber-White sandwich with one score sum per case.
    Robust,
    /// Sandwich with score sums per cluster.
    Cluster,
}

/// Covariance of the packed parameters.
pub fn parameter_covariance(
    params: &ModelParams,
    flags: &MStepFlags,
    dataset: &Dataset,
    kind: VarianceKind,
) -> Result<DMatrix<f64>> {
    check_interior(params, flags)?;
    let b = bread(&numerical_hessian(params, dataset)?)?;
    if kind == VarianceKind::Naive {
        return Ok(b);
    }
    let groups: Vec<usize> = match kind {
        VarianceKind::Robust => (0..dataset.len()).collect(),
        _ => dataset.clusters().to_vec(),
    };
    let meat = clustered_meat(&case_scores(params, dataset)?, dataset.weights(), &groups)?;
    Ok(&b * meat * &b)
}

/// `G/(G-1) Σ_g (Σ_{i∈g} wᵢ sᵢ)(Σ_{i∈g} wᵢ sᵢ)ᵀ`.
fn clustered_meat(scores: &DMatrix<f64>, weights: &[f64], groups: &[usize]) -> Result<DMatrix<f64>> {
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let g = ids.len();
    if g < 2 {
        return Err(StratError::TooFewClusters(g));
    }
    let p = scores.ncols();
    let mut sums = DMatrix::<f64>::zeros(g, p);
    for (i, group) in groups.iter().enumerate() {
        let row = ids.binary_search(group).unwrap();
        for j in 0..p {
            sums[(row, j)] += weights[i] * scores[(i, j)];
        }
    }
    Ok(sums.transpose() * sums * (g as f64 / (g as f64 - 1.0)))
}

fn standard_errors(cov: &DMatrix<f64>) -> Vec<f64> {
    cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
}

/// Standard errors of the packed parameters from the observed information.
pub fn observed_information_se(fit: &FitResult, dataset: &Dataset) -> Result<Vec<f64>> {
    parameter_covariance(&fit.params, &fit.flags, dataset, VarianceKind::Naive).map(|c| standard_errors(&c))
}

/// Cluster-adjusted sandwich standard errors of the packed parameters.
pub fn cluster_sandwich_se(fit: &FitResult, dataset: &Dataset) -> Result<Vec<f64>> {
    parameter_covariance(&fit.params, &fit.flags, dataset, VarianceKind::Cluster).map(|c| standard_errors(&c))
}

/// Effect of stratum `s` on the location scale with its packed-space gradient.
fn latent_effect(params: &ModelParams, s: usize) -> (f64, DVector<f64>) {
    let spec = params.spec();
    let mut grad = DVector::zeros(spec.packed_len());
    match spec.mean_structure {
        MeanStructure::Saturated => {
            grad[spec.location_index(s, Arm::Treated)] = 1.0;
            grad[spec.location_index(s, Arm::Control)] = -1.0;
        }
        MeanStructure::LinearInZ => {
            for (j, x) in linear_design(spec.grid.stratum(s)).into_iter().enumerate() {
                grad[spec.location_index(j, Arm::Treated)] = x;
                grad[spec.location_index(j, Arm::Control)] = -x;
            }
        }
    }
    let effect = params.location(s, Arm::Treated) - params.location(s, Arm::Control);
    (effect, grad)
}

/// Difference of observed-scale means `E[Y | s, t]`, with gradient.
fn observed_effect(params: &ModelParams, s: usize) -> (f64, DVector<f64>) {
    let (latent, latent_grad) = latent_effect(params, s);
    if params.family() == ComponentFamily::Normal {
        return (latent, latent_grad);
    }
    let spec = params.spec();
    let mut grad = DVector::zeros(spec.packed_len());
    let mut effect = 0.0;
    for arm in Arm::BOTH {
        let sign = if arm == Arm::Treated { 1.0 } else { -1.0 };
        let (eta, zeta) = (params.location(s, arm), params.scale(arm));
        let u = eta / zeta;
        effect += sign * censored_mean(eta, zeta);
        // ∂m/∂η = Φ(η/ζ) and ∂m/∂ln ζ = ζ φ(η/ζ); the latent gradient
        // already carries the arm sign and the design weights.
        for row in 0..spec.location_rows() {
            let i = spec.location_index(row, arm);
            grad[i] = latent_grad[i] * normal::cdf(u);
        }
        grad[spec.log_scale_index(arm)] = sign * zeta * normal::pdf(u);
    }
    (effect, grad)
}

/// One stratum's treatment effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub stratum: Stratum,
    pub index: usize,
    /// `z0 == z1`: the estimand the model identifies.
    pub diagonal: bool,
    /// Difference of component locations (μ or η).
    pub effect: f64,
    pub se_naive: Option<f64>,
    pub se_cluster: Option<f64>,
    /// Difference of observed-scale means; equals `effect` for normal components.
    pub observed_effect: f64,
    pub observed_se_naive: Option<f64>,
    pub observed_se_cluster: Option<f64>,
}

impl EffectRow {
    #[must_use]
    pub fn significant_naive(&self) -> Option<bool> {
        self.se_naive.map(|se| is_significant(self.effect, se))
    }

    #[must_use]
    pub fn significant_cluster(&self) -> Option<bool> {
        self.se_cluster.map(|se| is_significant(self.effect, se))
    }
}

/// Two-sided 5% test against a normal reference.
#[must_use]
pub fn is_significant(effect: f64, se: f64) -> bool {
    se > 0.0 && (effect / se).abs() > Z_CRIT_5PCT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub rows: Vec<EffectRow>,
    /// Why standard errors are missing, when they are.
    pub se_error: Option<String>,
}

impl EffectTable {
    pub fn diagonal(&self) -> impl Iterator<Item = &EffectRow> {
        self.rows.iter().filter(|r| r.diagonal)
    }
}

/// Point effects for every stratum, without standard errors.
#[must_use]
pub fn treatment_effects(fit: &FitResult) -> EffectTable {
    effects_for(&fit.params)
}

fn effects_for(params: &ModelParams) -> EffectTable {
    let grid = params.grid();
    let rows = (0..grid.len())
        .map(|s| {
            let stratum = grid.stratum(s);
            EffectRow {
                stratum,
                index: s,
                diagonal: stratum.is_diagonal(),
                effect: latent_effect(params, s).0,
                se_naive: None,
                se_cluster: None,
                observed_effect: observed_effect(params, s).0,
                observed_se_naive: None,
                observed_se_cluster: None,
            }
        })
        .collect();
    EffectTable { rows, se_error: None }
}

fn delta_se(grad: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    (grad.transpose() * cov * grad)[(0, 0)].max(0.0).sqrt()
}

/// Effects with naive and cluster-robust delta-method standard errors.
pub fn effect_table(fit: &FitResult, dataset: &Dataset) -> Result<EffectTable> {
    effect_table_for(&fit.params, &fit.flags, dataset)
}

pub fn effect_table_for(params: &ModelParams, flags: &MStepFlags, dataset: &Dataset) -> Result<EffectTable> {
    let naive = parameter_covariance(params, flags, dataset, VarianceKind::Naive)?;
    let cluster = parameter_covariance(params, flags, dataset, VarianceKind::Cluster)?;
    let mut table = effects_for(params);
    for row in &mut table.rows {
        let (_, g) = latent_effect(params, row.index);
        let (_, og) = observed_effect(params, row.index);
        row.se_naive = Some(delta_se(&g, &naive));
        row.se_cluster = Some(delta_se(&g, &cluster));
        row.observed_se_naive = Some(delta_se(&og, &naive));
        row.observed_se_cluster = Some(delta_se(&og, &cluster));
    }
    Ok(table)
}

/// Like [`effect_table`], but falls back to point effects when the standard
/// errors cannot be computed and records why.
#[must_use]
pub fn effect_table_or_points(fit: &FitResult, dataset: &Dataset) -> EffectTable {
    effect_table(fit, dataset).unwrap_or_else(|e| EffectTable {
        se_error: Some(e.to_string()),
        ..treatment_effects(fit)
    })
}
