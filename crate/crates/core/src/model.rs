//! Principal-strata parameter space.
//!
//! A stratum is a pair `(z0, z1)` of potential institutionalization levels
//! under control and treatment. Strata are indexed row-major with `z1` as the
//! row: `index(z0, z1) = z1 * k + z0`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StratError};

/// Largest number of institutionalization levels accepted.
pub const MAX_LEVELS: usize = 8;

const PROB_SUM_TOL: f64 = 1e-12;

/// Treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    #[inline]
    #[must_use]
    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn from_index(t: usize) -> Option<Arm> {
        match t {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }
}

/// One principal stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stratum {
    pub z0: usize,
    pub z1: usize,
}

impl Stratum {
    /// The level observed for a case of this stratum assigned to `arm`.
    #[inline]
    #[must_use]
    pub fn observed_level(self, arm: Arm) -> usize {
        match arm {
            Arm::Control => self.z0,
            Arm::Treated => self.z1,
        }
    }

    #[must_use]
    pub fn is_diagonal(self) -> bool {
        self.z0 == self.z1
    }
}

/// Grid of principal strata for `k_levels` institutionalization levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrataGrid {
    k_levels: usize,
}

impl StrataGrid {
    pub fn new(k_levels: usize) -> Result<Self> {
        if k_levels == 0 || k_levels > MAX_LEVELS {
            return Err(StratError::InvalidGrid(format!(
                "k_levels must be in 1..={MAX_LEVELS}, got {k_levels}"
            )));
        }
        Ok(Self { k_levels })
    }

    #[inline]
    #[must_use]
    pub fn k_levels(&self) -> usize {
        self.k_levels
    }

    /// Number of strata, `k²`.
    #[inline]
    #[must_use]
    pub fn len(&self) -> usize {
        self.k_levels * self.k_levels
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    #[must_use]
    pub fn index(&self, z0: usize, z1: usize) -> usize {
        debug_assert!(z0 < self.k_levels && z1 < self.k_levels);
        z1 * self.k_levels + z0
    }

    #[inline]
    #[must_use]
    pub fn stratum(&self, index: usize) -> Stratum {
        Stratum {
            z0: index % self.k_levels,
            z1: index / self.k_levels,
        }
    }

    #[must_use]
    pub fn strata(&self) -> Vec<Stratum> {
        (0..self.len()).map(|s| self.stratum(s)).collect()
    }

    /// Strata a case observed in `(arm, z_obs)` can belong to, ascending by index.
    ///
    /// A treated case with `z1 = z_obs` mixes over every `z0`; a control case
    /// with `z0 = z_obs` mixes over every `z1`.
    #[must_use]
    pub fn compatible(&self, arm: Arm, z_obs: usize) -> Vec<usize> {
        (0..self.k_levels)
            .map(|j| match arm {
                Arm::Treated => self.index(j, z_obs),
                Arm::Control => self.index(z_obs, j),
            })
            .collect()
    }

    /// Observed cells in canonical order: treated `z = 0..k`, then control `z = 0..k`.
    #[must_use]
    pub fn cells(&self) -> Vec<(Arm, usize)> {
        let k = self.k_levels;
        (0..k)
            .map(|z| (Arm::Treated, z))
            .chain((0..k).map(|z| (Arm::Control, z)))
            .collect()
    }

    /// Position of `(arm, z_obs)` in [`StrataGrid::cells`].
    #[inline]
    #[must_use]
    pub fn cell_index(&self, arm: Arm, z_obs: usize) -> usize {
        match arm {
            Arm::Treated => z_obs,
            Arm::Control => self.k_levels + z_obs,
        }
    }
}

/// Within-stratum outcome distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComponentFamily {
    /// `N(μ, σ²)`.
    Normal,
    /// Normal latent variable censored at zero: mass `Φ(-η/ζ)` at `y = 0`.
    Tobit,
}

/// How component locations depend on the stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeanStructure {
    /// One free location per (stratum, arm).
    Saturated,
    /// Per arm, `location = μ + β₁ z₁ + β₀ z₀ + γ z₁ z₀`.
    LinearInZ,
}

/// Number of coefficients in the [`MeanStructure::LinearInZ`] design.
pub const LINEAR_TERMS: usize = 4;

/// Design row `(1, z1, z0, z1 z0)` of a stratum.
#[inline]
#[must_use]
pub fn linear_design(stratum: Stratum) -> [f64; LINEAR_TERMS] {
    let z0 = stratum.z0 as f64;
    let z1 = stratum.z1 as f64;
    [1.0, z1, z0, z1 * z0]
}

/// Structural choices that fix the shape of a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub grid: StrataGrid,
    pub family: ComponentFamily,
    pub mean_structure: MeanStructure,
}

impl ModelSpec {
    pub fn new(grid: StrataGrid, family: ComponentFamily, mean_structure: MeanStructure) -> Result<Self> {
        if mean_structure == MeanStructure::LinearInZ && grid.k_levels() < 2 {
            return Err(StratError::InvalidParams(
                "linear mean structure needs at least 2 levels".into(),
            ));
        }
        Ok(Self {
            grid,
            family,
            mean_structure,
        })
    }

    /// Rows of the location table: strata (saturated) or linear coefficients.
    #[must_use]
    pub fn location_rows(&self) -> usize {
        match self.mean_structure {
            MeanStructure::Saturated => self.grid.len(),
            MeanStructure::LinearInZ => LINEAR_TERMS,
        }
    }

    /// Length of the packed parameter vector.
    #[must_use]
    pub fn packed_len(&self) -> usize {
        (self.grid.len() - 1) + 2 * self.location_rows() + 2
    }

    /// Packed index of location row `row` for `arm`.
    #[inline]
    #[must_use]
    pub fn location_index(&self, row: usize, arm: Arm) -> usize {
        (self.grid.len() - 1) + 2 * row + arm.index()
    }

    /// Packed index of `ln scale` for `arm`.
    #[inline]
    #[must_use]
    pub fn log_scale_index(&self, arm: Arm) -> usize {
        (self.grid.len() - 1) + 2 * self.location_rows() + arm.index()
    }

    /// Inverse of [`ModelParams::pack`]. Any finite vector maps into the simplex.
    pub fn unpack(&self, flat: &[f64]) -> Result<ModelParams> {
        if flat.len() != self.packed_len() {
            return Err(StratError::InvalidParams(format!(
                "packed vector has length {}, expected {}",
                flat.len(),
                self.packed_len()
            )));
        }
        let n_strata = self.grid.len();
        let logits = &flat[..n_strata - 1];
        let max = logits.iter().copied().fold(0.0_f64, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        probs.push((-max).exp());
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);

        let rows = self.location_rows();
        let locations = (0..rows)
            .map(|r| {
                [
                    flat[self.location_index(r, Arm::Control)],
                    flat[self.location_index(r, Arm::Treated)],
                ]
            })
            .collect();
        let scales = [
            flat[self.log_scale_index(Arm::Control)].exp(),
            flat[self.log_scale_index(Arm::Treated)].exp(),
        ];
        Ok(ModelParams {
            spec: *self,
            probs,
            locations,
            scales,
        })
    }
}

/// Strata probabilities plus per-arm component parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    spec: ModelSpec,
    probs: Vec<f64>,
    /// `[row][arm]`, rows per [`ModelSpec::location_rows`].
    locations: Vec<[f64; 2]>,
    /// Per-arm scale, shared across strata.
    scales: [f64; 2],
}

impl ModelParams {
    pub fn new(spec: ModelSpec, probs: Vec<f64>, locations: Vec<[f64; 2]>, scales: [f64; 2]) -> Result<Self> {
        let params = Self {
            spec,
            probs,
            locations,
            scales,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks every invariant; used after deserialization too.
    pub fn validate(&self) -> Result<()> {
        let spec = ModelSpec::new(self.spec.grid, self.spec.family, self.spec.mean_structure)?;
        StrataGrid::new(spec.grid.k_levels())?;
        if self.probs.len() != spec.grid.len() {
            return Err(StratError::InvalidParams(format!(
                "expected {} strata probabilities, got {}",
                spec.grid.len(),
                self.probs.len()
            )));
        }
        if self.probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(StratError::InvalidParams("probabilities must be finite and >= 0".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(StratError::InvalidParams(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        if self.locations.len() != spec.location_rows() {
            return Err(StratError::InvalidParams(format!(
                "expected {} location rows, got {}",
                spec.location_rows(),
                self.locations.len()
            )));
        }
        if self.locations.iter().flatten().any(|v| !v.is_finite()) {
            return Err(StratError::InvalidParams("locations must be finite".into()));
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(StratError::InvalidParams("scales must be finite and > 0".into()));
        }
        Ok(())
    }

    #[must_use]
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    #[must_use]
    pub fn grid(&self) -> &StrataGrid {
        &self.spec.grid
    }

    #[must_use]
    pub fn family(&self) -> ComponentFamily {
        self.spec.family
    }

    #[must_use]
    pub fn mean_structure(&self) -> MeanStructure {
        self.spec.mean_structure
    }

    #[must_use]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Raw location table: per-stratum for saturated, `(μ, β₁, β₀, γ)` rows for linear.
    #[must_use]
    pub fn location_params(&self) -> &[[f64; 2]] {
        &self.locations
    }

    #[must_use]
    pub fn scales(&self) -> [f64; 2] {
        self.scales
    }

    #[must_use]
    pub fn scale(&self, arm: Arm) -> f64 {
        self.scales[arm.index()]
    }

    /// Component location of `stratum` under `arm`.
    #[must_use]
    pub fn location(&self, stratum: usize, arm: Arm) -> f64 {
        match self.spec.mean_structure {
            MeanStructure::Saturated => self.locations[stratum][arm.index()],
            MeanStructure::LinearInZ => {
                let x = linear_design(self.spec.grid.stratum(stratum));
                x.iter()
                    .zip(&self.locations)
                    .map(|(xi, row)| xi * row[arm.index()])
                    .sum()
            }
        }
    }

    /// Location table expanded to one `[control, treated]` row per stratum.
    #[must_use]
    pub fn expanded_locations(&self) -> Vec<[f64; 2]> {
        (0..self.spec.grid.len())
            .map(|s| [self.location(s, Arm::Control), self.location(s, Arm::Treated)])
            .collect()
    }

    /// Unconstrained vector: log-ratios of probabilities against the last
    /// stratum, raw locations, log scales.
    #[must_use]
    pub fn pack(&self) -> Vec<f64> {
        let n = self.spec.grid.len();
        let reference = self.probs[n - 1].ln();
        let mut out = Vec::with_capacity(self.spec.packed_len());
        out.extend(self.probs[..n - 1].iter().map(|p| p.ln() - reference));
        out.extend(self.locations.iter().flatten().copied());
        out.extend(self.scales.iter().map(|s| s.ln()));
        out
    }

    pub(crate) fn from_parts_unchecked(
        spec: ModelSpec,
        probs: Vec<f64>,
        locations: Vec<[f64; 2]>,
        scales: [f64; 2],
    ) -> Self {
        Self {
            spec,
            probs,
            locations,
            scales,
        }
    }

    /// Copy with arm labels exchanged (locations and scales swap columns,
    /// strata transpose).
    #[must_use]
    pub fn with_arms_swapped(&self) -> ModelParams {
        let grid = self.spec.grid;
        let probs = (0..grid.len())
            .map(|s| {
                let st = grid.stratum(s);
                self.probs[grid.index(st.z1, st.z0)]
            })
            .collect();
        let locations = match self.spec.mean_structure {
            MeanStructure::Saturated => (0..grid.len())
                .map(|s| {
                    let st = grid.stratum(s);
                    let row = self.locations[grid.index(st.z1, st.z0)];
                    [row[1], row[0]]
                })
                .collect(),
            // (μ, β₁, β₀, γ) → (μ, β₀, β₁, γ) after transposing the strata.
            MeanStructure::LinearInZ => {
                let l = &self.locations;
                [l[0], l[2], l[1], l[3]].iter().map(|r| [r[1], r[0]]).collect()
            }
        };
        Self {
            spec: self.spec,
            probs,
            locations,
            scales: [self.scales[1], self.scales[0]],
        }
    }
}
