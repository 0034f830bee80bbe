//! Cell-wise warm starts.
//!
//! Each observed `(arm, z_obs)` cell is a mixture of `k` strata, so a plain
//! `k`-component normal mixture fitted to the cell gives candidate locations
//! and mixing proportions for those strata, with unknown labels. Under the
//! tobit family only the positive outcomes enter the cell mixture.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, StratError};
use crate::model::{Arm, ComponentFamily, StrataGrid};

const MAX_ITER: usize = 500;
const TOL: f64 = 1e-10;
const VAR_FLOOR_FRACTION: f64 = 1e-6;

/// Fitted cell mixture, components sorted by ascending mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellWarmStart {
    pub arm: Arm,
    pub z_obs: usize,
    pub means: Vec<f64>,
    /// Common within-component SD.
    pub sd: f64,
    pub proportions: Vec<f64>,
    /// Share of the arm's total weight observed in this cell.
    pub cell_share: f64,
    /// The cell had no spread; every component sits on the single value.
    pub degenerate: bool,
}

/// Warm starts for every cell in [`StrataGrid::cells`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStarts {
    pub grid: StrataGrid,
    pub cells: Vec<CellWarmStart>,
    /// Weighted outcome SD per arm, used when a cell collapses.
    pub arm_sd: [f64; 2],
}

impl WarmStarts {
    #[must_use]
    pub fn cell(&self, arm: Arm, z_obs: usize) -> &CellWarmStart {
        &self.cells[self.grid.cell_index(arm, z_obs)]
    }
}

/// Fit a `k_levels`-component mixture in every observed cell.
pub fn warm_start_cells(dataset: &Dataset, family: ComponentFamily) -> Result<WarmStarts> {
    let grid = StrataGrid::new(dataset.k_levels())?;
    let k = grid.k_levels();
    let cell_weights = dataset.cell_weights();
    let mut arm_sd = [0.0; 2];
    for arm in Arm::BOTH {
        arm_sd[arm.index()] = dataset.arm_moments(arm)?.1;
    }
    let cells = grid
        .cells()
        .into_iter()
        .map(|(arm, z_obs)| {
            let values: Vec<(f64, f64)> = dataset
                .cases()
                .filter(|c| c.arm == arm && c.z_obs == z_obs && c.weight > 0.0)
                .filter(|c| family == ComponentFamily::Normal || c.y > 0.0)
                .map(|c| (c.y, c.weight))
                .collect();
            if values.len() < k {
                return Err(StratError::CellTooSmall {
                    arm,
                    z_obs,
                    cases: values.len(),
                    components: k,
                });
            }
            let arm_total: f64 = cell_weights[arm.index()].iter().sum();
            let fit = fit_mixture(values, k);
            Ok(CellWarmStart {
                arm,
                z_obs,
                means: fit.means,
                sd: fit.sd,
                proportions: fit.proportions,
                cell_share: cell_weights[arm.index()][z_obs] / arm_total,
                degenerate: fit.degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WarmStarts { grid, cells, arm_sd })
}

struct MixtureFit {
    means: Vec<f64>,
    sd: f64,
    proportions: Vec<f64>,
    degenerate: bool,
}

/// Weighted `k`-component normal mixture with a common variance, started
/// from equal-weight quantile groups.
fn fit_mixture(mut values: Vec<(f64, f64)>, k: usize) -> MixtureFit {
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = values.iter().map(|v| v.1).sum();
    let mean = values.iter().map(|(y, w)| w * y).sum::<f64>() / total;
    let var = values.iter().map(|(y, w)| w * (y - mean).powi(2)).sum::<f64>() / total;
    if var <= 0.0 {
        return MixtureFit {
            means: vec![mean; k],
            sd: 0.0,
            proportions: vec![1.0 / k as f64; k],
            degenerate: true,
        };
    }
    let var_floor = VAR_FLOOR_FRACTION * var;

    // Quantile split: case goes to the group holding the midpoint of its weight.
    let mut sw = vec![0.0; k];
    let mut swy = vec![0.0; k];
    let mut group = Vec::with_capacity(values.len());
    let mut cum = 0.0;
    for &(y, w) in &values {
        let g = (((cum + 0.5 * w) / total * k as f64) as usize).min(k - 1);
        cum += w;
        sw[g] += w;
        swy[g] += w * y;
        group.push(g);
    }
    let mut means: Vec<f64> = (0..k)
        .map(|g| if sw[g] > 0.0 { swy[g] / sw[g] } else { mean })
        .collect();
    let mut proportions: Vec<f64> = sw.iter().map(|w| w / total).collect();
    let within = values
        .iter()
        .zip(&group)
        .map(|((y, w), &g)| w * (y - means[g]).powi(2))
        .sum::<f64>()
        / total;
    let mut sigma2 = within.max(var_floor);

    let mut resp = vec![0.0; k];
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..MAX_ITER {
        let mut nw = vec![0.0; k];
        let mut nwy = vec![0.0; k];
        let mut ll = 0.0;
        let log_props: Vec<f64> = proportions.iter().map(|p| p.ln()).collect();
        for &(y, w) in &values {
            let mut max = f64::NEG_INFINITY;
            for j in 0..k {
                resp[j] = log_props[j] - 0.5 * (y - means[j]).powi(2) / sigma2;
                max = max.max(resp[j]);
            }
            let mut sum = 0.0;
            for r in &mut resp {
                *r = (*r - max).exp();
                sum += *r;
            }
            ll += w * (max + sum.ln());
            for j in 0..k {
                let r = w * resp[j] / sum;
                nw[j] += r;
                nwy[j] += r * y;
            }
        }
        ll -= 0.5 * total * sigma2.ln();
        for j in 0..k {
            if nw[j] > 0.0 {
                means[j] = nwy[j] / nw[j];
            }
            proportions[j] = (nw[j] / total).max(1e-12);
        }
        let norm: f64 = proportions.iter().sum();
        proportions.iter_mut().for_each(|p| *p /= norm);
        // Second pass for the pooled variance at the new means.
        let log_props: Vec<f64> = proportions.iter().map(|p| p.ln()).collect();
        let mut ss = 0.0;
        for &(y, w) in &values {
            let mut max = f64::NEG_INFINITY;
            for j in 0..k {
                resp[j] = log_props[j] - 0.5 * (y - means[j]).powi(2) / sigma2;
                max = max.max(resp[j]);
            }
            let mut sum = 0.0;
            for r in &mut resp {
                *r = (*r - max).exp();
                sum += *r;
            }
            for j in 0..k {
                ss += w * resp[j] / sum * (y - means[j]).powi(2);
            }
        }
        sigma2 = (ss / total).max(var_floor);
        if (ll - prev_ll).abs() <= TOL * ll.abs() {
            break;
        }
        prev_ll = ll;
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
    MixtureFit {
        means: order.iter().map(|&j| means[j]).collect(),
        sd: sigma2.sqrt(),
        proportions: order.iter().map(|&j| proportions[j]).collect(),
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Case;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn four_cells(make: impl Fn(Arm, usize, usize) -> f64, n: usize) -> Dataset {
        let mut cases = Vec::new();
        for arm in Arm::BOTH {
            for z in 0..2 {
                for i in 0..n {
                    cases.push(Case {
                        y: make(arm, z, i),
                        arm,
                        z_obs: z,
                        weight: 1.0,
                        cluster: cases.len(),
                    });
                }
            }
        }
        Dataset::new(&cases, 2).unwrap()
    }

    #[test]
    fn recovers_well_separated_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = four_cells(|_, _, i| draws[i] + if i % 2 == 0 { 0.0 } else { 5.0 }, 2000);
        let ws = warm_start_cells(&d, ComponentFamily::Normal).unwrap();
        assert_eq!(ws.cells.len(), 4);
        for cell in &ws.cells {
            assert_eq!(cell.means.len(), 2);
            assert!((cell.means[0] - 0.0).abs() < 0.15, "{:?}", cell.means);
            assert!((cell.means[1] - 5.0).abs() < 0.15, "{:?}", cell.means);
            assert!((cell.proportions[0] - 0.5).abs() < 0.05);
            assert!((cell.cell_share - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_cell_collapses() {
        let d = four_cells(|arm, z, i| if arm == Arm::Treated && z == 1 { 3.0 } else { i as f64 }, 10);
        let ws = warm_start_cells(&d, ComponentFamily::Normal).unwrap();
        let cell = ws.cell(Arm::Treated, 1);
        assert!(cell.degenerate);
        assert_eq!(cell.means, vec![3.0, 3.0]);
        assert!(!ws.cell(Arm::Control, 0).degenerate);
    }

    #[test]
    fn cell_too_small() {
        let d = four_cells(|_, _, i| i as f64, 1);
        assert!(matches!(
            warm_start_cells(&d, ComponentFamily::Normal),
            Err(StratError::CellTooSmall { .. })
        ));
    }

    #[test]
    fn tobit_uses_positive_part() {
        let d = four_cells(|_, _, i| if i % 3 == 0 { 0.0 } else { (i % 7) as f64 + 1.0 }, 30);
        let ws = warm_start_cells(&d, ComponentFamily::Tobit).unwrap();
        for cell in &ws.cells {
            assert!(cell.means.iter().all(|m| *m >= 1.0));
        }
    }
}
