//! Goodness-of-fit summaries of a fitted model.
//!
//! All writers emit CSV with fixed headers; floats use Rust's shortest
//! round-trip formatting so output is byte-stable.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::ComponentParams;
use crate::error::Result;
use crate::estimation::{e_step, FitResult, PosteriorMatrix};
use crate::model::{Arm, ModelParams, Stratum};

pub const HISTOGRAM_BINS: usize = 20;

/// Posterior probabilities of one stratum for the cases of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellHistogram {
    pub arm: Arm,
    pub z_obs: usize,
    /// The lowest-index stratum compatible with the cell.
    pub stratum: Stratum,
    /// Unweighted case counts; bin `b` covers `[b/20, (b+1)/20)`, the last bin
    /// is closed at 1.
    pub counts: Vec<usize>,
}

impl CellHistogram {
    #[must_use]
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Share of cases in the first and last bins.
    #[must_use]
    pub fn outer_share(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (self.counts[0] + self.counts[HISTOGRAM_BINS - 1]) as f64 / total as f64
    }
}

fn bin(p: f64) -> usize {
    ((p * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

fn posterior_for(fit: &FitResult, dataset: &Dataset) -> Result<PosteriorMatrix> {
    if fit.posterior.n_cases() == dataset.len() && fit.posterior.n_strata() == fit.params.grid().len() {
        Ok(fit.posterior.clone())
    } else {
        e_step(&fit.params, dataset)
    }
}

/// One histogram per `(arm, z_obs)` cell.
pub fn posterior_histogram(fit: &FitResult, dataset: &Dataset) -> Result<Vec<CellHistogram>> {
    let posterior = posterior_for(fit, dataset)?;
    let grid = fit.params.grid();
    let mut out: Vec<CellHistogram> = grid
        .cells()
        .into_iter()
        .map(|(arm, z_obs)| CellHistogram {
            arm,
            z_obs,
            stratum: grid.stratum(grid.compatible(arm, z_obs)[0]),
            counts: vec![0; HISTOGRAM_BINS],
        })
        .collect();
    for i in 0..dataset.len() {
        let c = dataset.case(i);
        let cell = &mut out[grid.cell_index(c.arm, c.z_obs)];
        let s = grid.index(cell.stratum.z0, cell.stratum.z1);
        cell.counts[bin(posterior.get(i, s))] += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Mean outcome of a `(arm, z_obs)` cell.
    Mean,
    /// Share of the arm observed at a level.
    Share,
    /// Share of the arm observed above level 0.
    Institutionalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub arm: Arm,
    pub measure: Measure,
    pub z_obs: Option<usize>,
    pub predicted: f64,
    /// `None` when the arm has no positive weight.
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable {
    pub rows: Vec<MarginalRow>,
    /// Arms left without observed values because their weights are all zero.
    pub empty_arms: Vec<Arm>,
}

/// Model-implied mean of an observed cell: the probability-weighted average
/// of its compatible components' observed-scale means.
#[must_use]
pub fn predicted_cell_mean(params: &ModelParams, arm: Arm, z_obs: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for s in params.grid().compatible(arm, z_obs) {
        let p = params.probs()[s];
        let cp = ComponentParams {
            location: params.location(s, arm),
            scale: params.scale(arm),
            family: params.family(),
        };
        num += p * cp.observed_mean();
        den += p;
    }
    num / den
}

/// Predicted versus weighted observed cell means and level shares.
pub fn marginal_fit_table(fit: &FitResult, dataset: &Dataset) -> Result<MarginalTable> {
    let params = &fit.params;
    let grid = params.grid();
    let k = grid.k_levels();
    let cell_weights = dataset.cell_weights();
    let mut sums = [vec![0.0; k], vec![0.0; k]];
    for c in dataset.cases() {
        sums[c.arm.index()][c.z_obs] += c.weight * c.y;
    }
    let mut rows = Vec::new();
    let mut empty_arms = Vec::new();
    for arm in Arm::BOTH {
        let t = arm.index();
        let arm_weight: f64 = cell_weights[t].iter().sum();
        if arm_weight <= 0.0 {
            empty_arms.push(arm);
        }
        let share = |z: usize| -> f64 {
            grid.compatible(arm, z).iter().map(|&s| params.probs()[s]).sum()
        };
        for z in 0..k {
            let w = cell_weights[t][z];
            rows.push(MarginalRow {
                arm,
                measure: Measure::Mean,
                z_obs: Some(z),
                predicted: predicted_cell_mean(params, arm, z),
                observed: (w > 0.0).then(|| sums[t][z] / w),
            });
        }
        for z in 0..k {
            rows.push(MarginalRow {
                arm,
                measure: Measure::Share,
                z_obs: Some(z),
                predicted: share(z),
                observed: (arm_weight > 0.0).then(|| cell_weights[t][z] / arm_weight),
            });
        }
        rows.push(MarginalRow {
            arm,
            measure: Measure::Institutionalized,
            z_obs: None,
            predicted: 1.0 - share(0),
            observed: (arm_weight > 0.0).then(|| 1.0 - cell_weights[t][0] / arm_weight),
        });
    }
    Ok(MarginalTable { rows, empty_arms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub mapping_id: usize,
    pub converged: bool,
    pub tied: bool,
    pub winner: bool,
    pub iterations: usize,
    pub loglik: Option<f64>,
    /// `100 (ℓ_best - ℓ) / |ℓ_best|`, i.e. the percent increase in negative
    /// log-likelihood over the winner.
    pub pct_increase: Option<f64>,
    /// `[stratum][arm]`, empty when the start failed.
    pub locations: Vec<[f64; 2]>,
}

/// One row per start, in mapping order.
#[must_use]
pub fn solution_trace_table(fit: &FitResult) -> Vec<TraceRow> {
    let best = fit.loglik;
    fit.trace
        .iter()
        .map(|t| TraceRow {
            mapping_id: t.mapping_id,
            converged: t.converged,
            tied: t.tied,
            winner: t.mapping_id == fit.mapping_id,
            iterations: t.iterations,
            loglik: t.loglik,
            // Unconverged starts can end marginally above the winner; they
            // are reported as 0 rather than as a negative increase.
            pct_increase: t.loglik.map(|ll| {
                if t.mapping_id == fit.mapping_id {
                    0.0
                } else {
                    (100.0 * (best - ll) / best.abs()).max(0.0)
                }
            }),
            locations: t.params.as_ref().map(ModelParams::expanded_locations).unwrap_or_default(),
        })
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

pub fn write_histogram_csv<W: Write>(hist: &[CellHistogram], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "z_obs", "stratum_z0", "stratum_z1", "bin_lower", "bin_upper", "count"])?;
    for h in hist {
        for (b, count) in h.counts.iter().enumerate() {
            w.write_record([
                h.arm.index().to_string(),
                h.z_obs.to_string(),
                h.stratum.z0.to_string(),
                h.stratum.z1.to_string(),
                fmt(b as f64 / HISTOGRAM_BINS as f64),
                fmt((b + 1) as f64 / HISTOGRAM_BINS as f64),
                count.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_marginal_csv<W: Write>(table: &MarginalTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "measure", "z_obs", "predicted", "observed"])?;
    for r in &table.rows {
        let measure = match r.measure {
            Measure::Mean => "mean",
            Measure::Share => "share",
            Measure::Institutionalized => "institutionalized",
        };
        w.write_record([
            r.arm.index().to_string(),
            measure.to_string(),
            r.z_obs.map(|z| z.to_string()).unwrap_or_default(),
            fmt(r.predicted),
            fmt_opt(r.observed),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Location columns are named `loc_<z0><z1>_t<arm>`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], strata: &[Stratum], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["mapping_id", "converged", "tied", "winner", "iterations", "loglik", "pct_increase"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for st in strata {
        for t in 0..2 {
            header.push(format!("loc_{}{}_t{t}", st.z0, st.z1));
        }
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.mapping_id.to_string(),
            r.converged.to_string(),
            r.tied.to_string(),
            r.winner.to_string(),
            r.iterations.to_string(),
            fmt_opt(r.loglik),
            fmt_opt(r.pct_increase),
        ];
        for s in 0..strata.len() {
            for t in 0..2 {
                rec.push(r.locations.get(s).map(|l| fmt(l[t])).unwrap_or_default());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
