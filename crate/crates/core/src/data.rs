//! Observed cases and their validation.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StratError};
use crate::model::{Arm, ComponentFamily, StrataGrid};

/// Outcomes below this are treated as exact zeros under the tobit family.
pub const TOBIT_ZERO: f64 = 1e-12;

/// One observed case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub y: f64,
    pub arm: Arm,
    pub z_obs: usize,
    pub weight: f64,
    pub cluster: usize,
}

/// Validated cases for a grid with a fixed number of levels.
///
/// Stored column-wise; the likelihood loops only touch `y`, `arm`, `z_obs`
/// and `weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    k_levels: usize,
    y: Vec<f64>,
    arm: Vec<Arm>,
    z_obs: Vec<usize>,
    weight: Vec<f64>,
    cluster: Vec<usize>,
}

impl Dataset {
    pub fn new(cases: &[Case], k_levels: usize) -> Result<Self> {
        StrataGrid::new(k_levels)?;
        for (index, c) in cases.iter().enumerate() {
            let reason = if !c.y.is_finite() {
                Some(format!("outcome {} is not finite", c.y))
            } else if c.z_obs >= k_levels {
                Some(format!("z_obs = {} outside [0, {k_levels})", c.z_obs))
            } else if !(c.weight.is_finite() && c.weight >= 0.0) {
                Some(format!("weight {} must be finite and >= 0", c.weight))
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(StratError::InvalidCase { index, reason });
            }
        }
        Ok(Self {
            k_levels,
            y: cases.iter().map(|c| c.y).collect(),
            arm: cases.iter().map(|c| c.arm).collect(),
            z_obs: cases.iter().map(|c| c.z_obs).collect(),
            weight: cases.iter().map(|c| c.weight).collect(),
            cluster: cases.iter().map(|c| c.cluster).collect(),
        })
    }

    /// Family-specific ingestion: under tobit negative outcomes are rejected
    /// and outcomes below [`TOBIT_ZERO`] become exact zeros.
    pub fn prepared_for(mut self, family: ComponentFamily) -> Result<Self> {
        if family == ComponentFamily::Tobit {
            for (index, y) in self.y.iter_mut().enumerate() {
                if *y < 0.0 {
                    return Err(StratError::NegativeCensoredOutcome { index, y: *y });
                }
                if *y < TOBIT_ZERO {
                    *y = 0.0;
                }
            }
        }
        Ok(self)
    }

    #[must_use]
    pub fn k_levels(&self) -> usize {
        self.k_levels
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.y.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[must_use]
    pub fn case(&self, i: usize) -> Case {
        Case {
            y: self.y[i],
            arm: self.arm[i],
            z_obs: self.z_obs[i],
            weight: self.weight[i],
            cluster: self.cluster[i],
        }
    }

    pub fn cases(&self) -> impl Iterator<Item = Case> + '_ {
        (0..self.len()).map(|i| self.case(i))
    }

    #[must_use]
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    #[must_use]
    pub fn arms(&self) -> &[Arm] {
        &self.arm
    }

    #[must_use]
    pub fn z_obs(&self) -> &[usize] {
        &self.z_obs
    }

    #[must_use]
    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    #[must_use]
    pub fn clusters(&self) -> &[usize] {
        &self.cluster
    }

    /// Number of distinct cluster ids.
    #[must_use]
    pub fn n_clusters(&self) -> usize {
        let mut ids = self.cluster.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Copy with every weight multiplied by `factor`.
    #[must_use]
    pub fn with_scaled_weights(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.weight.iter_mut().for_each(|w| *w *= factor);
        out
    }

    /// Copy with arm labels exchanged (z_obs keeps its value).
    #[must_use]
    pub fn with_arms_swapped(&self) -> Self {
        let mut out = self.clone();
        out.arm.iter_mut().for_each(|a| {
            *a = match a {
                Arm::Control => Arm::Treated,
                Arm::Treated => Arm::Control,
            }
        });
        out
    }

    /// Total weight per `(arm, z_obs)` cell, indexed `[arm][z]`.
    #[must_use]
    pub fn cell_weights(&self) -> [Vec<f64>; 2] {
        let mut out = [vec![0.0; self.k_levels], vec![0.0; self.k_levels]];
        for i in 0..self.len() {
            out[self.arm[i].index()][self.z_obs[i]] += self.weight[i];
        }
        out
    }

    /// Cells without any positive-weight case.
    #[must_use]
    pub fn empty_cells(&self) -> Vec<(Arm, usize)> {
        let mut positive = [vec![false; self.k_levels], vec![false; self.k_levels]];
        for i in 0..self.len() {
            if self.weight[i] > 0.0 {
                positive[self.arm[i].index()][self.z_obs[i]] = true;
            }
        }
        Arm::BOTH
            .iter()
            .rev()
            .flat_map(|&arm| (0..self.k_levels).map(move |z| (arm, z)))
            .filter(|(arm, z)| !positive[arm.index()][*z])
            .collect()
    }

    pub fn require_nonempty_cells(&self) -> Result<()> {
        let empty = self.empty_cells();
        if empty.is_empty() {
            Ok(())
        } else {
            Err(StratError::EmptyCells(empty))
        }
    }

    /// Total weight in `arm`.
    #[must_use]
    pub fn arm_weight(&self, arm: Arm) -> f64 {
        self.arm_indices(arm).map(|i| self.weight[i]).sum()
    }

    pub(crate) fn arm_indices(&self, arm: Arm) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.arm[i] == arm)
    }

    /// Weighted mean and standard deviation of the outcome in `arm`.
    pub fn arm_moments(&self, arm: Arm) -> Result<(f64, f64)> {
        let total = self.arm_weight(arm);
        if total <= 0.0 {
            return Err(StratError::EmptyArm(arm));
        }
        let mean = self.arm_indices(arm).map(|i| self.weight[i] * self.y[i]).sum::<f64>() / total;
        let var = self
            .arm_indices(arm)
            .map(|i| self.weight[i] * (self.y[i] - mean).powi(2))
            .sum::<f64>()
            / total;
        Ok((mean, var.sqrt()))
    }
}

/// Kish effective sample size `(Σw)² / Σw²` of one arm.
pub fn effective_sample_size(dataset: &Dataset, arm: Arm) -> Result<f64> {
    let (sum, sum_sq) = dataset
        .arm_indices(arm)
        .map(|i| dataset.weights()[i])
        .fold((0.0, 0.0), |(s, s2), w| (s + w, s2 + w * w));
    if sum <= 0.0 {
        return Err(StratError::EmptyArm(arm));
    }
    Ok(sum * sum / sum_sq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(y: f64, arm: Arm, z: usize, w: f64) -> Case {
        Case {
            y,
            arm,
            z_obs: z,
            weight: w,
            cluster: 0,
        }
    }

    #[test]
    fn ess_unit_weights_is_n() {
        let cases: Vec<Case> = (0..17).map(|i| case(i as f64, Arm::Control, 0, 1.0)).collect();
        let d = Dataset::new(&cases, 2).unwrap();
        assert!((effective_sample_size(&d, Arm::Control).unwrap() - 17.0).abs() < 1e-12);
    }

    #[test]
    fn ess_single_effective_case() {
        let cases = [case(1.0, Arm::Treated, 0, 2.0), case(2.0, Arm::Treated, 1, 0.0)];
        let d = Dataset::new(&cases, 2).unwrap();
        assert_eq!(effective_sample_size(&d, Arm::Treated).unwrap(), 1.0);
        assert!(matches!(
            effective_sample_size(&d, Arm::Control),
            Err(StratError::EmptyArm(Arm::Control))
        ));
    }

    #[test]
    fn rejects_out_of_range_level_and_negative_weight() {
        assert!(Dataset::new(&[case(0.0, Arm::Control, 2, 1.0)], 2).is_err());
        assert!(Dataset::new(&[case(0.0, Arm::Control, 0, -1.0)], 2).is_err());
        assert!(Dataset::new(&[case(f64::NAN, Arm::Control, 0, 1.0)], 2).is_err());
    }

    #[test]
    fn tobit_ingestion_zeroes_tiny_and_rejects_negative() {
        let d = Dataset::new(&[case(5e-13, Arm::Control, 0, 1.0), case(3.0, Arm::Control, 0, 1.0)], 2)
            .unwrap()
            .prepared_for(ComponentFamily::Tobit)
            .unwrap();
        assert_eq!(d.y(), &[0.0, 3.0]);
        let neg = Dataset::new(&[case(-0.5, Arm::Treated, 0, 1.0)], 2).unwrap();
        assert!(matches!(
            neg.clone().prepared_for(ComponentFamily::Tobit),
            Err(StratError::NegativeCensoredOutcome { index: 0, .. })
        ));
        assert!(neg.prepared_for(ComponentFamily::Normal).is_ok());
    }

    #[test]
    fn empty_cells_flagged() {
        let cases = [
            case(1.0, Arm::Treated, 0, 1.0),
            case(1.0, Arm::Treated, 1, 0.0),
            case(1.0, Arm::Control, 0, 1.0),
            case(1.0, Arm::Control, 1, 1.0),
        ];
        let d = Dataset::new(&cases, 2).unwrap();
        assert_eq!(d.empty_cells(), vec![(Arm::Treated, 1)]);
        assert!(matches!(d.require_nonempty_cells(), Err(StratError::EmptyCells(_))));
    }
}
