//! Starting mappings from warm-start components to latent strata.
//!
//! Within each observed cell the warm-start components carry no stratum
//! labels, so every cell contributes a permutation. A mapping id is a
//! mixed-radix number with one `k!`-valued digit per cell, cells in
//! [`StrataGrid::cells`] order; digit `0` is the identity permutation, which
//! sends the lowest-mean component to the lowest-index compatible stratum.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::likelihood::log_likelihood;
use super::mstep::SCALE_FLOOR_FRACTION;
use super::warmstart::WarmStarts;
use crate::data::Dataset;
use crate::error::{Result, StratError};
use crate::model::{linear_design, Arm, MeanStructure, ModelParams, ModelSpec, StrataGrid};

/// Seed cells below this are lifted before proportional fitting.
const IPF_SEED_FLOOR: f64 = 1e-6;
const IPF_SWEEPS: usize = 50;

/// One EM initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartingMapping {
    pub id: usize,
    /// Per cell: component `j` (ascending mean) → stratum index.
    pub assignment: Vec<Vec<usize>>,
    pub params: ModelParams,
}

/// How many starts to run EM from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartStrategy {
    All,
    /// The `k` mappings with the highest initial log-likelihood.
    TopK(usize),
    /// `k` mappings spread over the initial log-likelihood range by
    /// farthest-point selection.
    SpreadK(usize),
}

impl std::fmt::Display for StartStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StartStrategy::All => write!(f, "all"),
            StartStrategy::TopK(k) => write!(f, "topk:{k}"),
            StartStrategy::SpreadK(k) => write!(f, "spread:{k}"),
        }
    }
}

/// Parses `all`, `topk:N` or `spread:N`.
impl std::str::FromStr for StartStrategy {
    type Err = StratError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || StratError::InvalidConfig(format!("start strategy must be all, topk:N or spread:N, got {s:?}"));
        let s = s.trim();
        if s == "all" {
            return Ok(StartStrategy::All);
        }
        let (name, count) = s.split_once(':').ok_or_else(bad)?;
        let count: usize = count.trim().parse().map_err(|_| bad())?;
        match name.trim() {
            "topk" => Ok(StartStrategy::TopK(count)),
            "spread" => Ok(StartStrategy::SpreadK(count)),
            _ => Err(bad()),
        }
    }
}

/// All permutations of `0..k` in lexicographic order.
fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..k).collect();
    let mut out = vec![current.clone()];
    loop {
        let Some(i) = (0..k.saturating_sub(1)).rev().find(|&i| current[i] < current[i + 1]) else {
            return out;
        };
        let j = (i + 1..k).rev().find(|&j| current[j] > current[i]).unwrap();
        current.swap(i, j);
        current[i + 1..].reverse();
        out.push(current.clone());
    }
}

/// `(k!)^(2k)` mappings for a `k`-level grid.
#[must_use]
pub fn mapping_count(grid: &StrataGrid) -> usize {
    let k = grid.k_levels();
    let fact: usize = (1..=k).product();
    fact.pow(2 * k as u32)
}

/// Enumerator that materializes mappings on demand.
pub struct MappingSpace<'a> {
    warm: &'a WarmStarts,
    spec: ModelSpec,
    perms: Vec<Vec<usize>>,
    floors: [f64; 2],
}

impl<'a> MappingSpace<'a> {
    pub fn new(warm: &'a WarmStarts, spec: ModelSpec) -> Result<Self> {
        if warm.grid != spec.grid {
            return Err(StratError::GridMismatch {
                dataset: warm.grid.k_levels(),
                model: spec.grid.k_levels(),
            });
        }
        Ok(Self {
            warm,
            spec,
            perms: permutations(spec.grid.k_levels()),
            floors: [SCALE_FLOOR_FRACTION * warm.arm_sd[0], SCALE_FLOOR_FRACTION * warm.arm_sd[1]],
        })
    }

    #[must_use]
    pub fn len(&self) -> usize {
        mapping_count(&self.spec.grid)
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-cell assignment for mapping `id`.
    #[must_use]
    pub fn assignment(&self, id: usize) -> Vec<Vec<usize>> {
        let grid = self.spec.grid;
        let radix = self.perms.len();
        let mut rest = id;
        grid.cells()
            .into_iter()
            .map(|(arm, z)| {
                let digit = rest % radix;
                rest /= radix;
                let compatible = grid.compatible(arm, z);
                self.perms[digit].iter().map(|&j| compatible[j]).collect()
            })
            .collect()
    }

    pub fn materialize(&self, id: usize) -> Result<StartingMapping> {
        if id >= self.len() {
            return Err(StratError::InvalidParams(format!("mapping id {id} out of range")));
        }
        let grid = self.spec.grid;
        let n = grid.len();
        let k = grid.k_levels();
        let assignment = self.assignment(id);

        let mut saturated = vec![[0.0; 2]; n];
        let mut implied = [vec![0.0; n], vec![0.0; n]];
        let mut pooled_var = [0.0; 2];
        for (cell, strata) in self.warm.cells.iter().zip(&assignment) {
            let t = cell.arm.index();
            for (j, &s) in strata.iter().enumerate() {
                saturated[s][t] = cell.means[j];
                implied[t][s] = cell.cell_share * cell.proportions[j];
            }
            pooled_var[t] += cell.cell_share * cell.sd * cell.sd;
        }

        // Average the two arms' implied joint tables, then rake to the
        // observed margins: z1 from the treated arm, z0 from the control arm.
        let mut probs: Vec<f64> = (0..n)
            .map(|s| (0.5 * (implied[0][s] + implied[1][s])).max(IPF_SEED_FLOOR))
            .collect();
        let z1_margin: Vec<f64> = (0..k).map(|z| self.warm.cell(Arm::Treated, z).cell_share).collect();
        let z0_margin: Vec<f64> = (0..k).map(|z| self.warm.cell(Arm::Control, z).cell_share).collect();
        for _ in 0..IPF_SWEEPS {
            for z1 in 0..k {
                let row: f64 = (0..k).map(|z0| probs[grid.index(z0, z1)]).sum();
                (0..k).for_each(|z0| probs[grid.index(z0, z1)] *= z1_margin[z1] / row);
            }
            for z0 in 0..k {
                let col: f64 = (0..k).map(|z1| probs[grid.index(z0, z1)]).sum();
                (0..k).for_each(|z1| probs[grid.index(z0, z1)] *= z0_margin[z0] / col);
            }
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);

        let mut scales = [0.0; 2];
        for t in 0..2 {
            let mut sd = pooled_var[t].sqrt();
            if !(sd > 0.0) {
                sd = if self.warm.arm_sd[t] > 0.0 { self.warm.arm_sd[t] } else { 1.0 };
            }
            scales[t] = sd.max(self.floors[t]);
        }

        let locations = match self.spec.mean_structure {
            MeanStructure::Saturated => saturated,
            MeanStructure::LinearInZ => linear_from_table(&grid, &saturated)?,
        };
        let params = ModelParams::new(self.spec, probs, locations, scales)?;
        Ok(StartingMapping { id, assignment, params })
    }
}

/// Least-squares projection of a saturated location table onto `(1, z1, z0, z1 z0)`.
fn linear_from_table(grid: &StrataGrid, table: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let n = grid.len();
    let x = DMatrix::from_fn(n, 4, |s, j| linear_design(grid.stratum(s))[j]);
    let xtx = x.transpose() * &x;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| StratError::InvalidParams("linear design is rank deficient".into()))?;
    let mut out = vec![[0.0; 2]; 4];
    for t in 0..2 {
        let y = DVector::from_fn(n, |s, _| table[s][t]);
        let beta = chol.solve(&(x.transpose() * y));
        for j in 0..4 {
            out[j][t] = beta[j];
        }
    }
    Ok(out)
}

/// Every mapping, materialized.
pub fn enumerate_mappings(warm: &WarmStarts, spec: ModelSpec) -> Result<Vec<StartingMapping>> {
    let space = MappingSpace::new(warm, spec)?;
    (0..space.len()).map(|id| space.materialize(id)).collect()
}

/// Rank all mappings by the log-likelihood of their initial parameters (no
/// EM) and keep `k` of them per `strategy`.
pub fn nine_strata_starts(
    warm: &WarmStarts,
    spec: ModelSpec,
    dataset: &Dataset,
    strategy: StartStrategy,
) -> Result<Vec<StartingMapping>> {
    let space = MappingSpace::new(warm, spec)?;
    let k = match strategy {
        StartStrategy::All => return enumerate_mappings(warm, spec),
        StartStrategy::TopK(k) | StartStrategy::SpreadK(k) => k,
    };
    let scored: Vec<(usize, f64)> = (0..space.len())
        .into_par_iter()
        .map(|id| {
            let ll = space
                .materialize(id)
                .and_then(|m| log_likelihood(&m.params, dataset))
                .unwrap_or(f64::NEG_INFINITY);
            (id, ll)
        })
        .collect();
    let chosen = match strategy {
        StartStrategy::TopK(_) => top_k(&scored, k),
        StartStrategy::SpreadK(_) => spread_k(&scored, k),
        StartStrategy::All => unreachable!(),
    };
    chosen.into_iter().map(|id| space.materialize(id)).collect()
}

fn top_k(scored: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut order: Vec<&(usize, f64)> = scored.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().take(k).map(|(id, _)| *id).collect()
}

fn spread_k(scored: &[(usize, f64)], k: usize) -> Vec<usize> {
    let finite: Vec<(usize, f64)> = scored.iter().copied().filter(|(_, ll)| ll.is_finite()).collect();
    if finite.len() <= k {
        return top_k(scored, k);
    }
    let mut chosen = top_k(&finite, 1);
    let mut distance: Vec<f64> = finite.iter().map(|(_, ll)| (ll - finite_ll(&finite, chosen[0])).abs()).collect();
    while chosen.len() < k {
        let (pos, _) = distance
            .iter()
            .enumerate()
            .fold((usize::MAX, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        let (id, ll) = finite[pos];
        chosen.push(id);
        for (d, (_, other)) in distance.iter_mut().zip(&finite) {
            *d = d.min((other - ll).abs());
        }
    }
    chosen
}

fn finite_ll(finite: &[(usize, f64)], id: usize) -> f64 {
    finite.iter().find(|(i, _)| *i == id).map(|(_, ll)| *ll).unwrap()
}

/// Starts for a fit: the full enumeration, or a ranked subset of it.
pub fn select_starts(
    warm: &WarmStarts,
    spec: ModelSpec,
    dataset: &Dataset,
    strategy: StartStrategy,
) -> Result<Vec<StartingMapping>> {
    match strategy {
        StartStrategy::All => enumerate_mappings(warm, spec),
        _ => nine_strata_starts(warm, spec, dataset, strategy),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::warmstart::CellWarmStart;
    use crate::model::ComponentFamily;

    fn warm(k: usize) -> WarmStarts {
        let grid = StrataGrid::new(k).unwrap();
        let cells = grid
            .cells()
            .into_iter()
            .enumerate()
            .map(|(c, (arm, z_obs))| CellWarmStart {
                arm,
                z_obs,
                means: (0..k).map(|j| (10 * c + j) as f64).collect(),
                sd: 1.0 + c as f64 * 0.1,
                proportions: (0..k).map(|j| (j + 1) as f64 / (k * (k + 1) / 2) as f64).collect(),
                cell_share: 1.0 / k as f64,
                degenerate: false,
            })
            .collect();
        WarmStarts {
            grid,
            cells,
            arm_sd: [2.0, 2.0],
        }
    }

    fn spec(k: usize) -> ModelSpec {
        ModelSpec::new(StrataGrid::new(k).unwrap(), ComponentFamily::Normal, MeanStructure::Saturated).unwrap()
    }

    #[test]
    fn permutation_counts() {
        assert_eq!(permutations(1), vec![vec![0]]);
        assert_eq!(permutations(2), vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(3)[0], vec![0, 1, 2]);
        assert_eq!(mapping_count(&StrataGrid::new(2).unwrap()), 16);
        assert_eq!(mapping_count(&StrataGrid::new(3).unwrap()), 216 * 216);
    }

    #[test]
    fn four_strata_has_sixteen_distinct_mappings() {
        let maps = enumerate_mappings(&warm(2), spec(2)).unwrap();
        assert_eq!(maps.len(), 16);
        for (i, a) in maps.iter().enumerate() {
            assert_eq!(a.id, i);
            for b in &maps[i + 1..] {
                assert_ne!(a.assignment, b.assignment);
                assert_ne!(a.params.location_params(), b.params.location_params());
            }
            assert!((a.params.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_mapping_sends_low_mean_to_low_index() {
        let m = &enumerate_mappings(&warm(2), spec(2)).unwrap()[0];
        let grid = StrataGrid::new(2).unwrap();
        for (cell, strata) in grid.cells().into_iter().zip(&m.assignment) {
            assert_eq!(strata, &grid.compatible(cell.0, cell.1));
        }
        // treated z1 = 0: lower component → stratum (0,0)
        assert_eq!(m.params.location(0, Arm::Treated), 0.0);
        assert_eq!(m.params.location(1, Arm::Treated), 1.0);
    }

    #[test]
    fn every_assignment_is_a_bijection_onto_compatible_strata() {
        let space_warm = warm(3);
        let space = MappingSpace::new(&space_warm, spec(3)).unwrap();
        let grid = StrataGrid::new(3).unwrap();
        for id in [0, 1, 5, 6, 215, 216, 46655] {
            for ((arm, z), strata) in grid.cells().into_iter().zip(space.assignment(id)) {
                let mut sorted = strata.clone();
                sorted.sort_unstable();
                assert_eq!(sorted, grid.compatible(arm, z));
            }
        }
        let m = space.materialize(46655).unwrap();
        assert!((m.params.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(space.materialize(46656).is_err());
    }

    #[test]
    fn initial_probs_match_observed_margins() {
        let w = warm(2);
        for m in enumerate_mappings(&w, spec(2)).unwrap() {
            let p = m.params.probs();
            // z1 margin (treated cell shares) and z0 margin (control shares).
            assert!((p[0] + p[1] - 0.5).abs() < 1e-6);
            assert!((p[0] + p[2] - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_starts_project_table() {
        let s = ModelSpec::new(StrataGrid::new(2).unwrap(), ComponentFamily::Normal, MeanStructure::LinearInZ).unwrap();
        let sat = enumerate_mappings(&warm(2), spec(2)).unwrap();
        let lin = enumerate_mappings(&warm(2), s).unwrap();
        for (a, b) in sat.iter().zip(&lin) {
            // Four strata: the linear design is a reparameterization.
            for (x, y) in a.params.expanded_locations().iter().zip(b.params.expanded_locations()) {
                assert!((x[0] - y[0]).abs() < 1e-9 && (x[1] - y[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn top_k_and_spread() {
        let scored: Vec<(usize, f64)> = (0..100).map(|i| (i, -((i as f64) - 40.0).abs())).collect();
        let top = top_k(&scored, 5);
        assert_eq!(top[0], 40);
        assert!(top.iter().all(|&i| (38..=42).contains(&i)));
        let all = top_k(&scored, 1000);
        assert_eq!(all.len(), 100);
        assert!(top.iter().all(|i| all.contains(i)));
        let spread = spread_k(&scored, 3);
        assert_eq!(spread[0], 40);
        // farthest from 40 is 99 (distance 59), then something midway
        assert_eq!(spread[1], 99);
        assert_eq!(spread.len(), 3);
    }

    #[test]
    fn strategy_round_trips_through_text() {
        for s in [StartStrategy::All, StartStrategy::TopK(5), StartStrategy::SpreadK(12)] {
            assert_eq!(s.to_string().parse::<StartStrategy>().unwrap(), s);
        }
        assert_eq!(" topk: 3 ".parse::<StartStrategy>().unwrap(), StartStrategy::TopK(3));
        for bad in ["", "top:3", "topk", "spread:x", "all:1"] {
            assert!(bad.parse::<StartStrategy>().is_err(), "{bad}");
        }
    }
}
