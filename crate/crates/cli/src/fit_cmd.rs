use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde_json::json;
use stratfit_core::estimation::StartTrace;
use stratfit_core::inference::effect_table_or_points;
use stratfit_core::{
    effective_sample_size, fit, Arm, ComponentFamily, Dataset, FitConfig, FitResult, MeanStructure, StartStrategy,
    StratError,
};

use crate::error::{CliError, CliResult};
use crate::ingest::{read_dataset, IngestOptions};
use crate::report::{self, SavedFit};

/// Starts used for grids above two levels when `--starts` is not given.
const DEFAULT_LARGE_GRID_STARTS: StartStrategy = StartStrategy::SpreadK(64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Normal,
    Tobit,
}

impl From<FamilyArg> for ComponentFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Normal => ComponentFamily::Normal,
            FamilyArg::Tobit => ComponentFamily::Tobit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeanArg {
    Saturated,
    Linear,
}

impl From<MeanArg> for MeanStructure {
    fn from(m: MeanArg) -> Self {
        match m {
            MeanArg::Saturated => MeanStructure::Saturated,
            MeanArg::Linear => MeanStructure::LinearInZ,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Case CSV with header `y,t,z[,w][,cluster]`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FamilyArg::Normal)]
    pub family: FamilyArg,
    /// Institutionalization levels per arm.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub levels: u8,
    /// Map every z > 0 to 1.
    #[arg(long)]
    pub dichotomize: bool,
    #[arg(long, value_enum, default_value_t = MeanArg::Saturated)]
    pub mean_structure: MeanArg,
    /// Relative log-likelihood change at which EM stops.
    #[arg(long, default_value_t = FitConfig::default().tol)]
    pub tol: f64,
    #[arg(long, default_value_t = FitConfig::default().max_iter)]
    pub max_iter: usize,
    /// `all`, `topk:N` or `spread:N`. Defaults to `all` for two levels and
    /// `spread:64` for three.
    #[arg(long)]
    pub starts: Option<StartStrategy>,
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn trace_json(trace: &[StartTrace]) -> serde_json::Value {
    trace
        .iter()
        .map(|t| {
            json!({
                "mapping_id": t.mapping_id,
                "converged": t.converged,
                "iterations": t.iterations,
                "loglik": t.loglik,
                "error": t.error,
            })
        })
        .collect()
}

fn dataset_json(dataset: &Dataset) -> serde_json::Value {
    let ess = |arm| effective_sample_size(dataset, arm).ok();
    json!({
        "n_cases": dataset.len(),
        "n_clusters": dataset.n_clusters(),
        "ess_control": ess(Arm::Control),
        "ess_treated": ess(Arm::Treated),
    })
}

pub fn run(args: &FitArgs) -> CliResult<()> {
    let ingest = IngestOptions {
        k_levels: usize::from(args.levels),
        dichotomize: args.dichotomize,
        family: args.family.into(),
    };
    let config = FitConfig {
        tol: args.tol,
        max_iter: args.max_iter,
        starts: args.starts.unwrap_or(if ingest.k_levels == 2 {
            StartStrategy::All
        } else {
            DEFAULT_LARGE_GRID_STARTS
        }),
    };
    config.validate()?;
    let dataset = read_dataset(&args.data, ingest)?;
    ensure_dir(&args.out)?;

    let result = match fit(&dataset, ingest.family, args.mean_structure.into(), config) {
        Ok(r) => r,
        Err(StratError::NoConvergence(trace)) => {
            let summary = json!({
                "status": "no_convergence",
                "data": dataset_json(&dataset),
                "config": config,
                "starts": trace_json(&trace),
            });
            report::write_json(&summary, &args.out, report::SUMMARY_JSON)?;
            return Err(CliError::Numerical(format!(
                "no starting mapping converged within {} iterations ({} starts)",
                config.max_iter,
                trace.len()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    write_outputs(&result, &dataset, ingest, &args.out)
}

fn write_outputs(result: &FitResult, dataset: &Dataset, ingest: IngestOptions, dir: &Path) -> CliResult<()> {
    let effects = effect_table_or_points(result, dataset);
    if let Some(reason) = &effects.se_error {
        eprintln!("warning: standard errors unavailable: {reason}");
    }
    report::write_params(&result.params, dir)?;
    report::write_effects(&effects, dir)?;
    let mut files = vec![report::PARAMS_CSV, report::EFFECTS_CSV];
    files.extend(report::write_diagnostics(result, dataset, dir)?);
    report::write_json(
        &SavedFit {
            ingest,
            fit: result.clone(),
        },
        dir,
        report::FIT_JSON,
    )?;
    files.extend([report::FIT_JSON, report::SUMMARY_JSON]);

    let grid = result.params.grid();
    let probs: Vec<_> = result
        .params
        .probs()
        .iter()
        .enumerate()
        .map(|(s, p)| {
            let st = grid.stratum(s);
            json!({ "z0": st.z0, "z1": st.z1, "prob": p })
        })
        .collect();
    let summary = json!({
        "status": "converged",
        "data": dataset_json(dataset),
        "family": result.params.family(),
        "mean_structure": result.params.mean_structure(),
        "k_levels": grid.k_levels(),
        "config": result.config,
        "loglik": result.loglik,
        "mapping_id": result.mapping_id,
        "tied_mappings": result.ties,
        "iterations": result.iterations,
        "n_starts": result.trace.len(),
        "n_converged": result.trace.iter().filter(|t| t.converged).count(),
        "flags": result.flags,
        "probs": probs,
        "scales": result.params.scales(),
        "diagonal_effects": effects.diagonal().collect::<Vec<_>>(),
        "se_error": effects.se_error,
        "files": files,
    });
    report::write_json(&summary, dir, report::SUMMARY_JSON)
}
