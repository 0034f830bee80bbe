//! EM iterations and the multi-start fit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::likelihood::{e_step, for_each_posterior, ComponentTable, PosteriorMatrix};
use super::mapping::{select_starts, StartStrategy, StartingMapping};
use super::mstep::{m_step_from_stats, MStepContext, MStepFlags, SufficientStats};
use super::warmstart::warm_start_cells;
use crate::data::Dataset;
use crate::error::{Result, StratError};
use crate::model::{ComponentFamily, MeanStructure, ModelParams, ModelSpec, StrataGrid};

/// Starts whose final log-likelihoods differ by less than this are tied.
pub const TIE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Stop when `|Δℓ| / |ℓ|` falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub starts: StartStrategy,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 2000,
            starts: StartStrategy::All,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(StratError::InvalidConfig(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(StratError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if let StartStrategy::TopK(0) | StartStrategy::SpreadK(0) = self.starts {
            return Err(StratError::InvalidConfig("at least one start is required".into()));
        }
        Ok(())
    }
}

/// One EM run from a fixed initialization.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub params: ModelParams,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood at the start and after every iteration.
    pub history: Vec<f64>,
    pub flags: MStepFlags,
}

/// E-step pass that returns the log-likelihood and the M-step statistics.
fn accumulate(params: &ModelParams, dataset: &Dataset, ctx: &MStepContext) -> Result<(f64, SufficientStats)> {
    let table = ComponentTable::new(params);
    let mut stats = SufficientStats::new(params.grid().len(), ctx.shift);
    let (y, arms, w) = (dataset.y(), dataset.arms(), dataset.weights());
    let ll = for_each_posterior(&table, dataset, |i, strata, post| {
        if w[i] > 0.0 {
            for (&s, &p) in strata.iter().zip(post) {
                stats.add(s, arms[i], y[i], w[i] * p);
            }
        }
    })?;
    Ok((ll, stats))
}

/// Alternate E and M steps from `start` until the relative log-likelihood
/// change drops below `tol` or `max_iter` iterations have run.
pub fn run_em(start: &ModelParams, dataset: &Dataset, tol: f64, max_iter: usize) -> Result<EmRun> {
    if start.grid().k_levels() != dataset.k_levels() {
        return Err(StratError::GridMismatch {
            dataset: dataset.k_levels(),
            model: start.grid().k_levels(),
        });
    }
    let ctx = MStepContext::new(dataset)?;
    let mut params = start.clone();
    let (mut loglik, mut stats) = accumulate(&params, dataset, &ctx)?;
    let mut history = vec![loglik];
    let mut flags = MStepFlags::default();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let (next, next_flags) = m_step_from_stats(&stats, &ctx, &params);
        let (next_ll, next_stats) = accumulate(&next, dataset, &ctx)?;
        iterations += 1;
        let change = (next_ll - loglik).abs();
        params = next;
        flags = next_flags;
        stats = next_stats;
        loglik = next_ll;
        history.push(loglik);
        if change <= tol * loglik.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(EmRun {
        params,
        loglik,
        iterations,
        converged,
        history,
        flags,
    })
}

/// Outcome of EM from one starting mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub mapping_id: usize,
    pub loglik: Option<f64>,
    pub params: Option<ModelParams>,
    pub iterations: usize,
    pub converged: bool,
    /// Within [`TIE_TOLERANCE`] of the winning log-likelihood.
    pub tied: bool,
    pub flags: MStepFlags,
    pub error: Option<String>,
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl StartTrace {
    fn from_run(mapping_id: usize, run: Result<EmRun>) -> Self {
        match run {
            Ok(run) => Self {
                mapping_id,
                loglik: Some(run.loglik),
                params: Some(run.params),
                iterations: run.iterations,
                converged: run.converged,
                tied: false,
                flags: run.flags,
                error: None,
                history: run.history,
            },
            Err(e) => Self {
                mapping_id,
                loglik: None,
                params: None,
                iterations: 0,
                converged: false,
                tied: false,
                flags: MStepFlags::default(),
                error: Some(e.to_string()),
                history: Vec::new(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub loglik: f64,
    /// Filled by [`fit`]; empty after deserialization until
    /// [`FitResult::refresh_posterior`] runs.
    #[serde(skip)]
    pub posterior: PosteriorMatrix,
    pub mapping_id: usize,
    pub iterations: usize,
    pub converged: bool,
    pub flags: MStepFlags,
    /// Mapping ids tied with the winner, the winner included.
    pub ties: Vec<usize>,
    pub config: FitConfig,
    pub trace: Vec<StartTrace>,
}

impl FitResult {
    #[must_use]
    pub fn spec(&self) -> &ModelSpec {
        self.params.spec()
    }

    /// Recompute the posterior at the fitted parameters.
    pub fn refresh_posterior(&mut self, dataset: &Dataset) -> Result<()> {
        self.posterior = e_step(&self.params, dataset)?;
        Ok(())
    }

    /// Starts that finished with a log-likelihood.
    pub fn finished_starts(&self) -> impl Iterator<Item = (&StartTrace, f64, &ModelParams)> {
        self.trace
            .iter()
            .filter_map(|t| Some((t, t.loglik?, t.params.as_ref()?)))
    }
}

/// Run EM from each start (in parallel) and keep the best converged solution.
///
/// Ties within [`TIE_TOLERANCE`] go to the lowest mapping id and are
/// recorded in the trace.
pub fn fit_from_starts(dataset: &Dataset, starts: &[StartingMapping], config: FitConfig) -> Result<FitResult> {
    config.validate()?;
    if starts.is_empty() {
        return Err(StratError::InvalidConfig("no starting mappings".into()));
    }
    let mut trace: Vec<StartTrace> = starts
        .par_iter()
        .map(|s| StartTrace::from_run(s.id, run_em(&s.params, dataset, config.tol, config.max_iter)))
        .collect();

    let best_ll = trace
        .iter()
        .filter(|t| t.converged)
        .filter_map(|t| t.loglik)
        .fold(f64::NEG_INFINITY, f64::max);
    if !best_ll.is_finite() {
        return Err(StratError::NoConvergence(trace));
    }
    let mut ties = Vec::new();
    for t in &mut trace {
        if let Some(ll) = t.loglik {
            t.tied = t.converged && best_ll - ll <= TIE_TOLERANCE;
            if t.tied {
                ties.push(t.mapping_id);
            }
        }
    }
    ties.sort_unstable();
    let winner = trace.iter().find(|t| t.mapping_id == ties[0]).unwrap();
    let params = winner.params.clone().unwrap();
    let posterior = e_step(&params, dataset)?;
    Ok(FitResult {
        loglik: winner.loglik.unwrap(),
        mapping_id: winner.mapping_id,
        iterations: winner.iterations,
        converged: true,
        flags: winner.flags.clone(),
        params,
        posterior,
        ties,
        config,
        trace,
    })
}

/// Fit the principal-strata mixture: warm starts per cell, starting mappings,
/// then EM from each selected start.
pub fn fit(
    dataset: &Dataset,
    family: ComponentFamily,
    mean_structure: MeanStructure,
    config: FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    dataset.require_nonempty_cells()?;
    let prepared;
    let dataset = if family == ComponentFamily::Tobit {
        prepared = dataset.clone().prepared_for(family)?;
        &prepared
    } else {
        dataset
    };
    let spec = ModelSpec::new(StrataGrid::new(dataset.k_levels())?, family, mean_structure)?;
    let warm = warm_start_cells(dataset, family)?;
    let starts = select_starts(&warm, spec, dataset, config.starts)?;
    fit_from_starts(dataset, &starts, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Case;
    use crate::estimation::likelihood::log_likelihood;
    use crate::model::Arm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Four strata at least 2.5 SD apart within every cell; control shifted by 1.
    fn simulated(n: usize, seed: u64) -> (Dataset, Vec<[f64; 2]>) {
        let grid = StrataGrid::new(2).unwrap();
        let probs = [0.4, 0.3, 0.2, 0.1];
        let means: Vec<[f64; 2]> = (0..4)
            .map(|s| {
                let st = grid.stratum(s);
                let (z0, z1) = (st.z0 as f64, st.z1 as f64);
                let base = 5.0 * (z0 - z1) + 2.5 * z0 * z1;
                [base, base + 1.0]
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cases = Vec::new();
        for arm in Arm::BOTH {
            for _ in 0..n {
                let u: f64 = rng.random();
                let mut s = 0;
                let mut acc = probs[0];
                while u > acc && s < 3 {
                    s += 1;
                    acc += probs[s];
                }
                let e: f64 = rng.sample(StandardNormal);
                cases.push(Case {
                    y: means[s][arm.index()] + e,
                    arm,
                    z_obs: grid.stratum(s).observed_level(arm),
                    weight: 1.0,
                    cluster: cases.len(),
                });
            }
        }
        (Dataset::new(&cases, 2).unwrap(), means)
    }

    #[test]
    fn fit_reports_consistent_best_solution() {
        let (d, truth) = simulated(3000, 5);
        let f = fit(&d, ComponentFamily::Normal, MeanStructure::Saturated, FitConfig::default()).unwrap();
        assert_eq!(f.trace.len(), 16);
        let recomputed = log_likelihood(&f.params, &d).unwrap();
        assert!(((recomputed - f.loglik) / f.loglik).abs() < 1e-8);
        for (t, ll, _) in f.finished_starts() {
            assert!(ll <= f.loglik + TIE_TOLERANCE, "start {} beats winner", t.mapping_id);
        }
        for s in 0..4 {
            for arm in Arm::BOTH {
                let err = (f.params.location(s, arm) - truth[s][arm.index()]).abs();
                assert!(err < 0.2, "stratum {s} {arm:?}: {err}");
            }
        }
        assert_eq!(f.posterior.n_cases(), d.len());
        assert!(f.ties.contains(&f.mapping_id));
    }

    #[test]
    fn history_is_monotone() {
        let (d, _) = simulated(300, 9);
        let f = fit(&d, ComponentFamily::Normal, MeanStructure::Saturated, FitConfig::default()).unwrap();
        for t in &f.trace {
            for w in t.history.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "start {}: {} -> {}", t.mapping_id, w[0], w[1]);
            }
        }
    }

    #[test]
    fn weight_scaling_leaves_argmax() {
        let (d, _) = simulated(400, 13);
        let cfg = FitConfig::default();
        let a = fit(&d, ComponentFamily::Normal, MeanStructure::Saturated, cfg).unwrap();
        let b = fit(&d.with_scaled_weights(3.0), ComponentFamily::Normal, MeanStructure::Saturated, cfg).unwrap();
        assert_eq!(a.mapping_id, b.mapping_id);
        assert!((b.loglik - 3.0 * a.loglik).abs() < 1e-6 * a.loglik.abs());
        for (x, y) in a.params.pack().iter().zip(b.params.pack()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn no_convergence_carries_traces() {
        let (d, _) = simulated(300, 2);
        let cfg = FitConfig {
            tol: 1e-300,
            max_iter: 2,
            ..FitConfig::default()
        };
        match fit(&d, ComponentFamily::Normal, MeanStructure::Saturated, cfg) {
            Err(StratError::NoConvergence(traces)) => {
                assert_eq!(traces.len(), 16);
                assert!(traces.iter().all(|t| t.iterations == 2 && !t.converged));
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn parallel_and_serial_agree_bitwise() {
        let (d, _) = simulated(500, 21);
        let cfg = FitConfig::default();
        let a = fit(&d, ComponentFamily::Tobit, MeanStructure::Saturated, cfg);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| fit(&d, ComponentFamily::Tobit, MeanStructure::Saturated, cfg));
        match (a, b) {
            (Ok(a), Ok(b)) => assert_eq!(a, b),
            (Err(a), Err(b)) => assert_eq!(a.to_string(), b.to_string()),
            _ => panic!("parallel and serial fits disagree"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let (d, _) = simulated(100, 1);
        for cfg in [
            FitConfig { tol: 0.0, ..FitConfig::default() },
            FitConfig { max_iter: 0, ..FitConfig::default() },
            FitConfig { starts: StartStrategy::TopK(0), ..FitConfig::default() },
        ] {
            assert!(matches!(
                fit(&d, ComponentFamily::Normal, MeanStructure::Saturated, cfg),
                Err(StratError::InvalidConfig(_))
            ));
        }
    }
}
