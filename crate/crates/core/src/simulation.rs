//! Monte Carlo parameter-recovery studies.
//!
//! True locations follow `base + d·σ·(z0 - z1) + t·effect`, so the strata
//! mixed in any observed cell sit `d` standard deviations apart. Within the
//! control cells the higher-index stratum has the lower mean, so the
//! canonical starting mapping is not the correct one and a tie broken
//! towards the lowest mapping id cannot pass as recovery.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Case, Dataset};
use crate::distributions::{ComponentParams, Shape, ShapeSampler};
use crate::error::{Result, StratError};
use crate::estimation::{fit, FitConfig, FitResult};
use crate::model::{Arm, ComponentFamily, MeanStructure, ModelParams, ModelSpec, StrataGrid};

/// Relative log-likelihood gap under which a distinct solution counts as a
/// near tie with the winner.
pub const NEAR_TIE_RELATIVE: f64 = 1e-4;

/// Strata probability vectors, in stratum order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProbScenario {
    /// Proportional to `S, S-1, …, 1`; `(0.4, 0.3, 0.2, 0.1)` for four strata.
    Unequal,
    /// Last stratum at 0.05; `(0.45, 0.30, 0.20, 0.05)` for four strata.
    OneSmall,
    Uniform,
    Custom(Vec<f64>),
}

impl ProbScenario {
    pub fn probs(&self, grid: &StrataGrid) -> Result<Vec<f64>> {
        let n = grid.len();
        let probs = match self {
            ProbScenario::Unequal => {
                let total = (n * (n + 1) / 2) as f64;
                (0..n).map(|j| (n - j) as f64 / total).collect()
            }
            ProbScenario::OneSmall if n == 4 => vec![0.45, 0.30, 0.20, 0.05],
            ProbScenario::OneSmall => {
                let mut p = ProbScenario::Unequal.probs(&StrataGrid::new(grid.k_levels())?)?;
                let head: f64 = p[..n - 1].iter().sum();
                p[..n - 1].iter_mut().for_each(|x| *x *= 0.95 / head);
                p[n - 1] = 0.05;
                p
            }
            ProbScenario::Uniform => vec![1.0 / n as f64; n],
            ProbScenario::Custom(p) => {
                if p.len() != n {
                    return Err(StratError::InvalidConfig(format!(
                        "custom probabilities have {} entries for {n} strata",
                        p.len()
                    )));
                }
                p.clone()
            }
        };
        Ok(probs)
    }
}

impl std::fmt::Display for ProbScenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProbScenario::Unequal => write!(f, "unequal"),
            ProbScenario::OneSmall => write!(f, "one_small"),
            ProbScenario::Uniform => write!(f, "uniform"),
            ProbScenario::Custom(p) => {
                let parts: Vec<String> = p.iter().map(|x| x.to_string()).collect();
                write!(f, "custom:{}", parts.join("/"))
            }
        }
    }
}

impl std::str::FromStr for ProbScenario {
    type Err = StratError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "unequal" => Ok(ProbScenario::Unequal),
            "one_small" => Ok(ProbScenario::OneSmall),
            "uniform" => Ok(ProbScenario::Uniform),
            other => {
                let list = other
                    .strip_prefix("custom:")
                    .ok_or_else(|| StratError::InvalidConfig(format!("unknown probability scenario {other:?}")))?;
                list.split('/')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|_| StratError::InvalidConfig(format!("bad probability {x:?}")))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(ProbScenario::Custom)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_per_arm: usize,
    /// Separation of adjacent strata means within a cell, in SD units.
    pub dispersion_sd: f64,
    pub prob_scenario: ProbScenario,
    /// Component family used both to generate and to fit.
    pub family: ComponentFamily,
    /// Error law of the generated outcomes.
    pub shape: Shape,
    pub k_levels: usize,
    pub mean_structure: MeanStructure,
    /// Added to every treated location.
    pub effect: f64,
    pub base_location: f64,
    /// Component SD in both arms.
    pub scale: f64,
    /// Replaces the constructed truth when present.
    pub true_params: Option<ModelParams>,
    pub replicates: usize,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_per_arm: 1000,
            dispersion_sd: 1.6,
            prob_scenario: ProbScenario::Unequal,
            family: ComponentFamily::Normal,
            shape: Shape::Normal,
            k_levels: 2,
            mean_structure: MeanStructure::Saturated,
            effect: 0.0,
            base_location: 0.0,
            scale: 1.0,
            true_params: None,
            replicates: 100,
            seed: 0,
            fit: FitConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(StratError::InvalidConfig(m));
        let grid = StrataGrid::new(self.k_levels)?;
        if self.n_per_arm < 2 * grid.len() {
            return bad(format!("n_per_arm must be at least {}", 2 * grid.len()));
        }
        if !(self.dispersion_sd >= 0.0 && self.dispersion_sd.is_finite()) {
            return bad(format!("dispersion_sd must be finite and >= 0, got {}", self.dispersion_sd));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if !(self.effect.is_finite() && self.base_location.is_finite()) {
            return bad("effect and base_location must be finite".into());
        }
        ShapeSampler::new(self.shape)?;
        self.fit.validate()?;
        self.truth().map(|_| ())
    }

    /// The generating parameters.
    pub fn truth(&self) -> Result<ModelParams> {
        if let Some(p) = &self.true_params {
            if p.grid().k_levels() != self.k_levels {
                return Err(StratError::InvalidConfig("true_params grid does not match k_levels".into()));
            }
            return Ok(p.clone());
        }
        let grid = StrataGrid::new(self.k_levels)?;
        let spec = ModelSpec::new(grid, self.family, MeanStructure::Saturated)?;
        let locations = grid
            .strata()
            .iter()
            .map(|st| {
                let control =
                    self.base_location + self.dispersion_sd * self.scale * (st.z0 as f64 - st.z1 as f64);
                [control, control + self.effect]
            })
            .collect();
        ModelParams::new(spec, self.prob_scenario.probs(&grid)?, locations, [self.scale; 2])
    }
}

/// Draw a dataset from `truth` with `n_per_arm` cases in each arm.
pub fn generate_from<R: Rng + ?Sized>(
    truth: &ModelParams,
    n_per_arm: usize,
    shape: Shape,
    rng: &mut R,
) -> Result<Dataset> {
    let grid = *truth.grid();
    let sampler = ShapeSampler::new(shape)?;
    let cdf: Vec<f64> = truth
        .probs()
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let mut cases = Vec::with_capacity(2 * n_per_arm);
    for arm in Arm::BOTH {
        for _ in 0..n_per_arm {
            let u: f64 = rng.random();
            let s = cdf.iter().position(|&c| u < c).unwrap_or(grid.len() - 1);
            let cp = ComponentParams {
                location: truth.location(s, arm),
                scale: truth.scale(arm),
                family: truth.family(),
            };
            cases.push(Case {
                y: sampler.draw(&cp, rng),
                arm,
                z_obs: grid.stratum(s).observed_level(arm),
                weight: 1.0,
                cluster: cases.len(),
            });
        }
    }
    Dataset::new(&cases, grid.k_levels())
}

/// One replicate's dataset and the truth behind it.
pub fn generate<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<(Dataset, ModelParams)> {
    config.validate()?;
    let truth = config.truth()?;
    Ok((generate_from(&truth, config.n_per_arm, config.shape, rng)?, truth))
}

/// Replicate `r` draws from ChaCha8 stream `r` of the configured seed.
#[must_use]
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Half the smallest gap between true locations mixed in a cell, per cell.
fn cell_thresholds(truth: &ModelParams) -> Vec<f64> {
    let grid = truth.grid();
    grid.cells()
        .into_iter()
        .map(|(arm, z)| {
            let mut locs: Vec<f64> = grid.compatible(arm, z).iter().map(|&s| truth.location(s, arm)).collect();
            locs.sort_by(f64::total_cmp);
            let gap = locs.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            if gap.is_finite() {
                0.5 * gap
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// Whether each cell's fitted locations match the truth one-to-one (`exact`)
/// or up to a permutation within the cell (`permuted`).
fn label_status(fitted: &ModelParams, truth: &ModelParams) -> (bool, bool) {
    let grid = truth.grid();
    let thresholds = cell_thresholds(truth);
    let mut exact = true;
    let mut permuted = true;
    for ((arm, z), thr) in grid.cells().into_iter().zip(thresholds) {
        let strata = grid.compatible(arm, z);
        let close = |a: usize, b: usize| (fitted.location(a, arm) - truth.location(b, arm)).abs() < thr;
        exact &= strata.iter().all(|&s| close(s, s));
        permuted &= permutation_matches(&strata, &close);
    }
    (exact, permuted)
}

fn permutation_matches(strata: &[usize], close: &dyn Fn(usize, usize) -> bool) -> bool {
    fn search(i: usize, strata: &[usize], used: &mut Vec<bool>, close: &dyn Fn(usize, usize) -> bool) -> bool {
        if i == strata.len() {
            return true;
        }
        for j in 0..strata.len() {
            if !used[j] && close(strata[i], strata[j]) {
                used[j] = true;
                if search(i + 1, strata, used, close) {
                    return true;
                }
                used[j] = false;
            }
        }
        false
    }
    search(0, strata, &mut vec![false; strata.len()], close)
}

/// Converged starts within [`NEAR_TIE_RELATIVE`] of the winner whose
/// solution differs from the winner's, counting each distinct solution once.
#[must_use]
pub fn distinct_near_ties(fit: &FitResult, min_separation: f64) -> usize {
    let mut solutions: Vec<Vec<[f64; 2]>> = vec![fit.params.expanded_locations()];
    for (t, ll, params) in fit.finished_starts() {
        if !t.converged || (fit.loglik - ll) > NEAR_TIE_RELATIVE * fit.loglik.abs() {
            continue;
        }
        let locs = params.expanded_locations();
        let distinct = solutions.iter().all(|other| {
            other
                .iter()
                .zip(&locs)
                .any(|(a, b)| (a[0] - b[0]).abs() > min_separation || (a[1] - b[1]).abs() > min_separation)
        });
        if distinct {
            solutions.push(locs);
        }
    }
    solutions.len() - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub error: Option<String>,
    pub loglik: Option<f64>,
    pub mapping_id: Option<usize>,
    pub iterations: usize,
    /// Every fitted location within half the true within-cell gap of its own truth.
    pub label_correct: bool,
    /// Not correct, but correct after relabeling strata within cells.
    pub swapped: bool,
    /// Distinct solutions within the near-tie band of the winner.
    pub near_ties: usize,
    /// `(fitted - true) / σ_t`, `[stratum][arm]`.
    pub location_errors: Vec<[f64; 2]>,
    pub prob_errors: Vec<f64>,
    pub fitted: Option<ModelParams>,
}

impl ReplicateResult {
    #[must_use]
    pub fn max_abs_location_error(&self) -> Option<f64> {
        if self.error.is_some() {
            return None;
        }
        Some(self.location_errors.iter().flatten().fold(0.0_f64, |m, e| m.max(e.abs())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub config: SimConfig,
    pub truth: ModelParams,
    pub replicates: Vec<ReplicateResult>,
    pub n_failed: usize,
    /// Over all replicates; failed fits count as incorrect.
    pub fraction_label_correct: f64,
    pub fraction_swapped: f64,
    /// Replicates with at least one distinct near-tie solution.
    pub fraction_near_tie: f64,
    /// Per `[stratum][arm]`, SD units, over successful replicates.
    pub location_rmse: Vec<[f64; 2]>,
    pub overall_location_rmse: f64,
    pub mean_abs_prob_error: f64,
    /// At least half of the replicates show a distinct near-tie.
    pub under_identified: bool,
}

fn score(replicate: usize, truth: &ModelParams, result: Result<FitResult>) -> ReplicateResult {
    let failed = |error: String| ReplicateResult {
        replicate,
        error: Some(error),
        loglik: None,
        mapping_id: None,
        iterations: 0,
        label_correct: false,
        swapped: false,
        near_ties: 0,
        location_errors: Vec::new(),
        prob_errors: Vec::new(),
        fitted: None,
    };
    let fit = match result {
        Ok(f) => f,
        Err(e) => return failed(e.to_string()),
    };
    let fitted = &fit.params;
    let (exact, permuted) = label_status(fitted, truth);
    let truth_locs = truth.expanded_locations();
    let scales = truth.scales();
    let location_errors = fitted
        .expanded_locations()
        .iter()
        .zip(&truth_locs)
        .map(|(f, t)| [(f[0] - t[0]) / scales[0], (f[1] - t[1]) / scales[1]])
        .collect();
    let min_threshold = cell_thresholds(truth).into_iter().fold(f64::INFINITY, f64::min);
    let separation = if min_threshold.is_finite() {
        min_threshold
    } else {
        0.5 * scales[0].min(scales[1])
    };
    ReplicateResult {
        replicate,
        error: None,
        loglik: Some(fit.loglik),
        mapping_id: Some(fit.mapping_id),
        iterations: fit.iterations,
        label_correct: exact,
        swapped: !exact && permuted,
        near_ties: distinct_near_ties(&fit, separation),
        location_errors,
        prob_errors: fitted.probs().iter().zip(truth.probs()).map(|(a, b)| a - b).collect(),
        fitted: Some(fit.params),
    }
}

/// Generate, fit and score one replicate.
pub fn run_replicate(config: &SimConfig, truth: &ModelParams, replicate: usize) -> ReplicateResult {
    let mut rng = replicate_rng(config.seed, replicate);
    let result = generate_from(truth, config.n_per_arm, config.shape, &mut rng)
        .and_then(|d| fit(&d, config.family, config.mean_structure, config.fit));
    score(replicate, truth, result)
}

/// All replicates of one configuration, aggregated in replicate order.
pub fn run_config(config: &SimConfig) -> Result<RecoveryReport> {
    config.validate()?;
    let truth = config.truth()?;
    let replicates: Vec<ReplicateResult> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, &truth, r))
        .collect();
    Ok(aggregate(config.clone(), truth, replicates))
}

fn aggregate(config: SimConfig, truth: ModelParams, replicates: Vec<ReplicateResult>) -> RecoveryReport {
    let total = replicates.len() as f64;
    let ok: Vec<&ReplicateResult> = replicates.iter().filter(|r| r.error.is_none()).collect();
    let n_strata = truth.grid().len();
    let mut sq = vec![[0.0; 2]; n_strata];
    let mut prob_abs = 0.0;
    for r in &ok {
        for (acc, e) in sq.iter_mut().zip(&r.location_errors) {
            acc[0] += e[0] * e[0];
            acc[1] += e[1] * e[1];
        }
        prob_abs += r.prob_errors.iter().map(|e| e.abs()).sum::<f64>() / n_strata as f64;
    }
    let m = ok.len() as f64;
    let (location_rmse, overall, mean_abs_prob_error) = if ok.is_empty() {
        (vec![[f64::NAN; 2]; n_strata], f64::NAN, f64::NAN)
    } else {
        let rmse: Vec<[f64; 2]> = sq.iter().map(|s| [(s[0] / m).sqrt(), (s[1] / m).sqrt()]).collect();
        let overall = (sq.iter().map(|s| s[0] + s[1]).sum::<f64>() / (2.0 * n_strata as f64 * m)).sqrt();
        (rmse, overall, prob_abs / m)
    };
    let frac = |f: &dyn Fn(&ReplicateResult) -> bool| replicates.iter().filter(|r| f(r)).count() as f64 / total;
    let fraction_near_tie = frac(&|r| r.near_ties > 0);
    RecoveryReport {
        n_failed: replicates.len() - ok.len(),
        fraction_label_correct: frac(&|r| r.label_correct),
        fraction_swapped: frac(&|r| r.swapped),
        fraction_near_tie,
        location_rmse,
        overall_location_rmse: overall,
        mean_abs_prob_error,
        under_identified: fraction_near_tie >= 0.5,
        config,
        truth,
        replicates,
    }
}

/// Run each configuration in turn.
pub fn run_grid(configs: &[SimConfig]) -> Result<Vec<RecoveryReport>> {
    configs.iter().map(run_config).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeComparison {
    pub shape: Shape,
    pub report: RecoveryReport,
    /// Baseline label-correct fraction minus this shape's.
    pub degradation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisspecificationReport {
    pub baseline: RecoveryReport,
    pub shapes: Vec<ShapeComparison>,
}

/// Generate under each shape, always fit the normal model, and compare
/// with normal generation at the same configuration and seed.
pub fn misspecification_study(base: &SimConfig, shapes: &[Shape]) -> Result<MisspecificationReport> {
    if base.family != ComponentFamily::Normal {
        return Err(StratError::InvalidConfig(
            "misspecification studies fit the normal family".into(),
        ));
    }
    let baseline = run_config(&SimConfig {
        shape: Shape::Normal,
        ..base.clone()
    })?;
    let shapes = shapes
        .iter()
        .map(|&shape| {
            let report = run_config(&SimConfig { shape, ..base.clone() })?;
            Ok(ShapeComparison {
                shape,
                degradation: baseline.fraction_label_correct - report.fraction_label_correct,
                report,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MisspecificationReport { baseline, shapes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_vectors() {
        let g2 = StrataGrid::new(2).unwrap();
        assert_eq!(ProbScenario::Unequal.probs(&g2).unwrap(), vec![0.4, 0.3, 0.2, 0.1]);
        assert_eq!(ProbScenario::OneSmall.probs(&g2).unwrap(), vec![0.45, 0.30, 0.20, 0.05]);
        assert_eq!(ProbScenario::Uniform.probs(&g2).unwrap(), vec![0.25; 4]);
        let g3 = StrataGrid::new(3).unwrap();
        for sc in [ProbScenario::Unequal, ProbScenario::OneSmall, ProbScenario::Uniform] {
            let p = sc.probs(&g3).unwrap();
            assert_eq!(p.len(), 9);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(ProbScenario::OneSmall.probs(&g3).unwrap()[8], 0.05);
        for text in ["unequal", "one_small", "uniform", "custom:0.1/0.2/0.3/0.4"] {
            let sc: ProbScenario = text.parse().unwrap();
            assert_eq!(sc.to_string(), text);
        }
        assert!("nope".parse::<ProbScenario>().is_err());
    }

    #[test]
    fn truth_separates_cells_by_dispersion() {
        let cfg = SimConfig {
            dispersion_sd: 2.0,
            scale: 1.5,
            effect: 0.7,
            ..SimConfig::default()
        };
        let truth = cfg.truth().unwrap();
        for thr in cell_thresholds(&truth) {
            assert!((thr - 1.5).abs() < 1e-12);
        }
        let grid = truth.grid();
        // Control cells put the higher-index stratum lower.
        let cc = grid.compatible(Arm::Control, 0);
        assert!(truth.location(cc[1], Arm::Control) < truth.location(cc[0], Arm::Control));
        for s in 0..4 {
            assert!((truth.location(s, Arm::Treated) - truth.location(s, Arm::Control) - 0.7).abs() < 1e-12);
        }
        let flat = SimConfig {
            dispersion_sd: 0.0,
            ..SimConfig::default()
        };
        let t = flat.truth().unwrap();
        assert!(t.expanded_locations().iter().all(|l| l[0] == 0.0 && l[1] == 0.0));
    }

    #[test]
    fn generation_matches_margins_and_is_reproducible() {
        let cfg = SimConfig {
            n_per_arm: 50_000,
            ..SimConfig::default()
        };
        let (d, truth) = generate(&cfg, &mut replicate_rng(7, 0)).unwrap();
        let (d2, _) = generate(&cfg, &mut replicate_rng(7, 0)).unwrap();
        assert_eq!(d, d2);
        let (d3, _) = generate(&cfg, &mut replicate_rng(7, 1)).unwrap();
        assert_ne!(d, d3);
        let w = d.cell_weights();
        let p = truth.probs();
        // Treated z1 = 0 share is p00 + p10; control z0 = 0 share is p00 + p01.
        assert!((w[1][0] / 50_000.0 - (p[0] + p[1])).abs() < 0.01);
        assert!((w[0][0] / 50_000.0 - (p[0] + p[2])).abs() < 0.01);
    }

    #[test]
    fn label_scoring_is_permutation_aware() {
        let cfg = SimConfig::default();
        let truth = cfg.truth().unwrap();
        let (exact, permuted) = label_status(&truth, &truth);
        assert!(exact && permuted);
        // Swap treated locations of the two strata in treated cell z1 = 0.
        let mut locs = truth.expanded_locations();
        let tmp = locs[0][1];
        locs[0][1] = locs[1][1];
        locs[1][1] = tmp;
        let swapped = ModelParams::new(*truth.spec(), truth.probs().to_vec(), locs, truth.scales()).unwrap();
        assert_eq!(label_status(&swapped, &truth), (false, true));
        let mut far = truth.expanded_locations();
        far[3][0] += 10.0;
        let far = ModelParams::new(*truth.spec(), truth.probs().to_vec(), far, truth.scales()).unwrap();
        assert_eq!(label_status(&far, &truth), (false, false));
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SimConfig { n_per_arm: 3, ..SimConfig::default() },
            SimConfig { dispersion_sd: -1.0, ..SimConfig::default() },
            SimConfig { replicates: 0, ..SimConfig::default() },
            SimConfig { shape: Shape::HeavyTail { df: 2.0 }, ..SimConfig::default() },
            SimConfig { prob_scenario: ProbScenario::Custom(vec![0.5, 0.5]), ..SimConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn small_run_is_deterministic() {
        let cfg = SimConfig {
            n_per_arm: 300,
            dispersion_sd: 3.0,
            replicates: 3,
            seed: 42,
            ..SimConfig::default()
        };
        let a = run_config(&cfg).unwrap();
        let b = run_config(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replicates.len(), 3);
        assert!((0.0..=1.0).contains(&a.fraction_label_correct));
        assert!(a.overall_location_rmse >= 0.0);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        // Tiny samples with a rare stratum leave some cells too small.
        let cfg = SimConfig {
            n_per_arm: 8,
            prob_scenario: ProbScenario::Custom(vec![0.97, 0.01, 0.01, 0.01]),
            replicates: 5,
            seed: 1,
            ..SimConfig::default()
        };
        let r = run_config(&cfg).unwrap();
        assert!(r.n_failed > 0);
        assert!(r.replicates.iter().filter(|x| x.error.is_some()).all(|x| !x.label_correct));
    }
}
