//! `stratfit simulate`: recovery studies over a cartesian grid.
//!
//! Every grid key accepts a single value or a list; the grid is the
//! cartesian product in the order the keys are declared in [`GridFile`].
//! The seed comes only from the command line and is shared by every grid
//! point, so cells of the grid see common random numbers.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;
use stratfit_core::distributions::Shape;
use stratfit_core::simulation::{misspecification_study, run_config, ProbScenario, RecoveryReport, SimConfig};
use stratfit_core::{ComponentFamily, FitConfig, MeanStructure, StartStrategy};

use crate::error::{CliError, CliResult};
use crate::fit_cmd::ensure_dir;
use crate::report;

pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const REPLICATES_CSV: &str = "replicates.csv";
pub const LOCATIONS_CSV: &str = "replicate_locations.csv";
pub const MISSPEC_CSV: &str = "misspecification.csv";
pub const GRID_JSON: &str = "grid_summary.json";

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML grid file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn values(field: &Option<Self>, default: T) -> Vec<T> {
        match field {
            None => vec![default],
            Some(OneOrMany::One(v)) => vec![v.clone()],
            Some(OneOrMany::Many(v)) => v.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    n_per_arm: Option<OneOrMany<usize>>,
    prob_scenario: Option<OneOrMany<String>>,
    dispersion_sd: Option<OneOrMany<f64>>,
    shape: Option<OneOrMany<String>>,
    family: Option<OneOrMany<String>>,
    k_levels: Option<OneOrMany<usize>>,
    mean_structure: Option<OneOrMany<String>>,
    effect: Option<OneOrMany<f64>>,
    base_location: Option<OneOrMany<f64>>,
    scale: Option<OneOrMany<f64>>,
    replicates: Option<usize>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    starts: Option<String>,
    /// When present, every grid point runs a misspecification study
    /// comparing these generating shapes against normal generation.
    compare_shapes: Option<Vec<String>>,
}

fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("invalid simulation config: {msg}"))
}

fn parse_family(s: &str) -> CliResult<ComponentFamily> {
    match s.trim() {
        "normal" => Ok(ComponentFamily::Normal),
        "tobit" => Ok(ComponentFamily::Tobit),
        other => Err(invalid(format!("family must be normal or tobit, got {other:?}"))),
    }
}

fn parse_mean(s: &str) -> CliResult<MeanStructure> {
    match s.trim() {
        "saturated" => Ok(MeanStructure::Saturated),
        "linear" => Ok(MeanStructure::LinearInZ),
        other => Err(invalid(format!("mean_structure must be saturated or linear, got {other:?}"))),
    }
}

fn parse_all<T>(values: Vec<String>, f: impl Fn(&str) -> CliResult<T>) -> CliResult<Vec<T>> {
    values.iter().map(|v| f(v)).collect()
}

/// Cartesian step: each existing config once per value, new axis innermost.
fn expand<T: Clone>(configs: &mut Vec<SimConfig>, values: Vec<T>, set: impl Fn(&mut SimConfig, T)) {
    *configs = configs
        .iter()
        .flat_map(|c| {
            values.iter().map(|v| {
                let mut c = c.clone();
                set(&mut c, v.clone());
                c
            })
        })
        .collect();
}

/// Expanded grid plus the shapes to compare, if any.
pub struct Grid {
    pub configs: Vec<SimConfig>,
    pub compare_shapes: Option<Vec<Shape>>,
}

pub fn parse_grid(text: &str, seed: u64) -> CliResult<Grid> {
    let file: GridFile = toml::from_str(text).map_err(invalid)?;
    let d = SimConfig::default();
    let fit_default = FitConfig::default();
    let fit = FitConfig {
        tol: file.tol.unwrap_or(fit_default.tol),
        max_iter: file.max_iter.unwrap_or(fit_default.max_iter),
        starts: match &file.starts {
            Some(s) => s.parse::<StartStrategy>().map_err(invalid)?,
            None => fit_default.starts,
        },
    };
    let scenarios = parse_all(OneOrMany::values(&file.prob_scenario, d.prob_scenario.to_string()), |s| {
        s.parse::<ProbScenario>().map_err(invalid)
    })?;
    let shapes = parse_all(OneOrMany::values(&file.shape, d.shape.to_string()), |s| {
        s.parse::<Shape>().map_err(invalid)
    })?;
    let families = parse_all(OneOrMany::values(&file.family, "normal".to_string()), parse_family)?;
    let means = parse_all(OneOrMany::values(&file.mean_structure, "saturated".to_string()), parse_mean)?;
    let compare_shapes = match &file.compare_shapes {
        None => None,
        Some(list) => {
            if file.shape.is_some() {
                return Err(invalid("compare_shapes and shape cannot be combined"));
            }
            Some(parse_all(list.clone(), |s| s.parse::<Shape>().map_err(invalid))?)
        }
    };

    let base = SimConfig {
        replicates: file.replicates.unwrap_or(d.replicates),
        seed,
        fit,
        ..d.clone()
    };
    let mut configs = vec![base];
    expand(&mut configs, OneOrMany::values(&file.n_per_arm, d.n_per_arm), |c, v| c.n_per_arm = v);
    expand(&mut configs, scenarios, |c, v| c.prob_scenario = v);
    expand(&mut configs, OneOrMany::values(&file.dispersion_sd, d.dispersion_sd), |c, v| c.dispersion_sd = v);
    expand(&mut configs, shapes, |c, v| c.shape = v);
    expand(&mut configs, families, |c, v| c.family = v);
    expand(&mut configs, OneOrMany::values(&file.k_levels, d.k_levels), |c, v| c.k_levels = v);
    expand(&mut configs, means, |c, v| c.mean_structure = v);
    expand(&mut configs, OneOrMany::values(&file.effect, d.effect), |c, v| c.effect = v);
    expand(&mut configs, OneOrMany::values(&file.base_location, d.base_location), |c, v| c.base_location = v);
    expand(&mut configs, OneOrMany::values(&file.scale, d.scale), |c, v| c.scale = v);
    if configs.is_empty() {
        return Err(invalid("the grid is empty"));
    }
    for (i, c) in configs.iter().enumerate() {
        c.validate().map_err(|e| invalid(format!("grid point {i}: {e}")))?;
        if compare_shapes.is_some() && c.family != ComponentFamily::Normal {
            return Err(invalid("compare_shapes requires the normal family"));
        }
    }
    Ok(Grid { configs, compare_shapes })
}

/// A comparison row: the baseline report id, the shape report id and the
/// drop in label-correct fraction.
#[derive(Debug, Serialize)]
struct MisspecRow {
    baseline_config_id: usize,
    config_id: usize,
    shape: String,
    degradation: f64,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_reports(reports: &[RecoveryReport], misspec: &[MisspecRow], seed: u64, dir: &Path) -> CliResult<()> {
    let csv_path = |name: &str| dir.join(name);
    let open = |name: &str| {
        let p = csv_path(name);
        csv::Writer::from_path(&p).map_err(|e| CliError::io(&p, e))
    };
    let err = |name: &'static str| move |e: csv::Error| CliError::io(&dir.join(name), e);

    let mut agg = open(AGGREGATE_CSV)?;
    agg.write_record([
        "config_id",
        "n_per_arm",
        "dispersion_sd",
        "prob_scenario",
        "shape",
        "family",
        "k_levels",
        "mean_structure",
        "effect",
        "base_location",
        "scale",
        "replicates",
        "n_failed",
        "fraction_label_correct",
        "fraction_swapped",
        "fraction_near_tie",
        "overall_location_rmse",
        "mean_abs_prob_error",
        "under_identified",
    ])
    .map_err(err(AGGREGATE_CSV))?;
    let mut reps = open(REPLICATES_CSV)?;
    reps.write_record([
        "config_id",
        "replicate",
        "error",
        "loglik",
        "mapping_id",
        "iterations",
        "label_correct",
        "swapped",
        "near_ties",
        "max_abs_location_error",
    ])
    .map_err(err(REPLICATES_CSV))?;
    let mut locs = open(LOCATIONS_CSV)?;
    locs.write_record(["config_id", "replicate", "z0", "z1", "t", "true", "fitted", "error_sd"])
        .map_err(err(LOCATIONS_CSV))?;

    for (id, r) in reports.iter().enumerate() {
        let c = &r.config;
        let mean = match c.mean_structure {
            MeanStructure::Saturated => "saturated",
            MeanStructure::LinearInZ => "linear",
        };
        let family = match c.family {
            ComponentFamily::Normal => "normal",
            ComponentFamily::Tobit => "tobit",
        };
        agg.write_record([
            id.to_string(),
            c.n_per_arm.to_string(),
            c.dispersion_sd.to_string(),
            c.prob_scenario.to_string(),
            c.shape.to_string(),
            family.to_string(),
            c.k_levels.to_string(),
            mean.to_string(),
            c.effect.to_string(),
            c.base_location.to_string(),
            c.scale.to_string(),
            c.replicates.to_string(),
            r.n_failed.to_string(),
            r.fraction_label_correct.to_string(),
            r.fraction_swapped.to_string(),
            r.fraction_near_tie.to_string(),
            r.overall_location_rmse.to_string(),
            r.mean_abs_prob_error.to_string(),
            r.under_identified.to_string(),
        ])
        .map_err(err(AGGREGATE_CSV))?;

        let grid = r.truth.grid();
        let truth = r.truth.expanded_locations();
        for rep in &r.replicates {
            reps.write_record([
                id.to_string(),
                rep.replicate.to_string(),
                rep.error.clone().unwrap_or_default(),
                opt(rep.loglik),
                opt(rep.mapping_id),
                rep.iterations.to_string(),
                rep.label_correct.to_string(),
                rep.swapped.to_string(),
                rep.near_ties.to_string(),
                opt(rep.max_abs_location_error()),
            ])
            .map_err(err(REPLICATES_CSV))?;
            let Some(fitted) = &rep.fitted else { continue };
            for (s, (f, t)) in fitted.expanded_locations().iter().zip(&truth).enumerate() {
                let st = grid.stratum(s);
                for arm in 0..2 {
                    locs.write_record([
                        id.to_string(),
                        rep.replicate.to_string(),
                        st.z0.to_string(),
                        st.z1.to_string(),
                        arm.to_string(),
                        t[arm].to_string(),
                        f[arm].to_string(),
                        rep.location_errors[s][arm].to_string(),
                    ])
                    .map_err(err(LOCATIONS_CSV))?;
                }
            }
        }
    }
    agg.flush().map_err(|e| CliError::io(&csv_path(AGGREGATE_CSV), e))?;
    reps.flush().map_err(|e| CliError::io(&csv_path(REPLICATES_CSV), e))?;
    locs.flush().map_err(|e| CliError::io(&csv_path(LOCATIONS_CSV), e))?;

    let mut files = vec![AGGREGATE_CSV, REPLICATES_CSV, LOCATIONS_CSV];
    if !misspec.is_empty() {
        let mut w = open(MISSPEC_CSV)?;
        for row in misspec {
            w.serialize(row).map_err(err(MISSPEC_CSV))?;
        }
        w.flush().map_err(|e| CliError::io(&csv_path(MISSPEC_CSV), e))?;
        files.push(MISSPEC_CSV);
    }
    files.push(GRID_JSON);

    let configs: Vec<_> = reports
        .iter()
        .enumerate()
        .map(|(id, r)| {
            json!({
                "config_id": id,
                "config": r.config,
                "truth": r.truth,
                "n_failed": r.n_failed,
                "fraction_label_correct": r.fraction_label_correct,
                "fraction_swapped": r.fraction_swapped,
                "fraction_near_tie": r.fraction_near_tie,
                "location_rmse": r.location_rmse,
                "overall_location_rmse": r.overall_location_rmse,
                "mean_abs_prob_error": r.mean_abs_prob_error,
                "under_identified": r.under_identified,
            })
        })
        .collect();
    let summary = json!({
        "seed": seed,
        "n_configs": reports.len(),
        "configs": configs,
        "misspecification": misspec,
        "files": files,
    });
    report::write_json(&summary, dir, GRID_JSON)
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let grid = parse_grid(&text, args.seed)?;
    ensure_dir(&args.out)?;

    let mut reports = Vec::new();
    let mut misspec = Vec::new();
    for config in &grid.configs {
        match &grid.compare_shapes {
            None => reports.push(run_config(config)?),
            Some(shapes) => {
                let study = misspecification_study(config, shapes)?;
                let baseline_config_id = reports.len();
                reports.push(study.baseline);
                for s in study.shapes {
                    misspec.push(MisspecRow {
                        baseline_config_id,
                        config_id: reports.len(),
                        shape: s.shape.to_string(),
                        degradation: s.degradation,
                    });
                    reports.push(s.report);
                }
            }
        }
    }
    write_reports(&reports, &misspec, args.seed, &args.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_by_three_by_three_grid_expands_to_27_points() {
        let text = r#"
            n_per_arm = [100, 1000, 5000]
            prob_scenario = ["unequal", "one_small", "uniform"]
            dispersion_sd = [0.8, 1.6, 2.4]
            replicates = 100
        "#;
        let grid = parse_grid(text, 7).unwrap();
        assert_eq!(grid.configs.len(), 27);
        assert!(grid.configs.iter().all(|c| c.seed == 7 && c.replicates == 100));
        assert_eq!(grid.configs[0].n_per_arm, 100);
        assert_eq!(grid.configs[26].n_per_arm, 5000);
        assert_eq!(grid.configs[1].dispersion_sd, 1.6);
        assert_eq!(grid.configs[3].prob_scenario, ProbScenario::OneSmall);
    }

    #[test]
    fn scalars_and_defaults() {
        let grid = parse_grid("n_per_arm = 200\nstarts = \"topk:4\"\nshape = \"heavy_tail:5\"", 1).unwrap();
        assert_eq!(grid.configs.len(), 1);
        let c = &grid.configs[0];
        assert_eq!(c.n_per_arm, 200);
        assert_eq!(c.fit.starts, StartStrategy::TopK(4));
        assert_eq!(c.shape, Shape::HeavyTail { df: 5.0 });
        assert_eq!(c.dispersion_sd, SimConfig::default().dispersion_sd);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "seed = 3",
            "n_per_arm = -5",
            "n_per_arm = 3",
            "prob_scenario = \"lopsided\"",
            "family = \"gamma\"",
            "dispersion_sd = []",
            "compare_shapes = [\"heavy_tail:3\"]\nshape = \"normal\"",
            "compare_shapes = [\"heavy_tail:3\"]\nfamily = \"tobit\"",
            "replicates = 0",
        ] {
            assert!(parse_grid(text, 0).is_err(), "{text}");
        }
    }
}
