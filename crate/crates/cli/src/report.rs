//! Files written by `fit` and `diagnose`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stratfit_core::diagnostics::{
    marginal_fit_table, posterior_histogram, solution_trace_table, write_histogram_csv, write_marginal_csv,
    write_trace_csv,
};
use stratfit_core::inference::EffectTable;
use stratfit_core::model::LINEAR_TERMS;
use stratfit_core::{Dataset, FitResult, MeanStructure, ModelParams};

use crate::error::{CliError, CliResult};
use crate::ingest::IngestOptions;

pub const PARAMS_CSV: &str = "params.csv";
pub const EFFECTS_CSV: &str = "effects.csv";
pub const TRACE_CSV: &str = "trace.csv";
pub const HISTOGRAM_CSV: &str = "posterior_hist.csv";
pub const MARGINAL_CSV: &str = "marginal_fit.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const FIT_JSON: &str = "fit.json";

const COEF_NAMES: [&str; LINEAR_TERMS] = ["coef_intercept", "coef_z1", "coef_z0", "coef_z1z0"];

/// Everything `diagnose` needs to rebuild the fit-time files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedFit {
    pub ingest: IngestOptions,
    pub fit: FitResult,
}

impl SavedFit {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let saved: SavedFit =
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: malformed fit file: {e}", path.display())))?;
        saved.check().map_err(|m| CliError::Input(format!("{}: {m}", path.display())))?;
        Ok(saved)
    }

    /// Deserialization bypasses the parameter constructors, so re-check.
    fn check(&self) -> Result<(), String> {
        let fit = &self.fit;
        fit.params.validate().map_err(|e| e.to_string())?;
        if fit.params.grid().k_levels() != self.ingest.k_levels {
            return Err("grid does not match the stored ingestion options".into());
        }
        if !fit.loglik.is_finite() {
            return Err("winning log-likelihood is not finite".into());
        }
        if !fit.trace.iter().any(|t| t.mapping_id == fit.mapping_id) {
            return Err(format!("winning mapping {} missing from the trace", fit.mapping_id));
        }
        for t in &fit.trace {
            if let Some(p) = &t.params {
                p.validate().map_err(|e| format!("start {}: {e}", t.mapping_id))?;
                if p.spec() != fit.params.spec() {
                    return Err(format!("start {} has a different model specification", t.mapping_id));
                }
            }
        }
        Ok(())
    }
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| CliError::io(&path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_err(path: PathBuf) -> impl Fn(csv::Error) -> CliError {
    move |e| CliError::io(&path, e)
}

/// Trace, posterior histogram and marginal fit: the files `diagnose`
/// regenerates. Returns the file names written.
pub fn write_diagnostics(fit: &FitResult, dataset: &Dataset, dir: &Path) -> CliResult<Vec<&'static str>> {
    let strata = fit.params.grid().strata();
    write_trace_csv(&solution_trace_table(fit), &strata, create(dir, TRACE_CSV)?)?;
    write_histogram_csv(&posterior_histogram(fit, dataset)?, create(dir, HISTOGRAM_CSV)?)?;
    write_marginal_csv(&marginal_fit_table(fit, dataset)?, create(dir, MARGINAL_CSV)?)?;
    Ok(vec![TRACE_CSV, HISTOGRAM_CSV, MARGINAL_CSV])
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_bool(v: Option<bool>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns `parameter,z0,z1,t,value`; blank where a column does not apply.
pub fn write_params(params: &ModelParams, dir: &Path) -> CliResult<()> {
    let path = dir.join(PARAMS_CSV);
    let err = csv_err(path.clone());
    let mut w = csv::Writer::from_writer(create(dir, PARAMS_CSV)?);
    w.write_record(["parameter", "z0", "z1", "t", "value"]).map_err(&err)?;
    let grid = params.grid();
    for (s, p) in params.probs().iter().enumerate() {
        let st = grid.stratum(s);
        w.write_record(["prob", &st.z0.to_string(), &st.z1.to_string(), "", &p.to_string()])
            .map_err(&err)?;
    }
    for (s, loc) in params.expanded_locations().iter().enumerate() {
        let st = grid.stratum(s);
        for (t, v) in loc.iter().enumerate() {
            w.write_record(["location", &st.z0.to_string(), &st.z1.to_string(), &t.to_string(), &v.to_string()])
                .map_err(&err)?;
        }
    }
    if params.mean_structure() == MeanStructure::LinearInZ {
        for (name, row) in COEF_NAMES.iter().zip(params.location_params()) {
            for (t, v) in row.iter().enumerate() {
                w.write_record([name, "", "", &t.to_string(), &v.to_string()]).map_err(&err)?;
            }
        }
    }
    for (t, v) in params.scales().iter().enumerate() {
        w.write_record(["scale", "", "", &t.to_string(), &v.to_string()]).map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

pub fn write_effects(table: &EffectTable, dir: &Path) -> CliResult<()> {
    let path = dir.join(EFFECTS_CSV);
    let err = csv_err(path.clone());
    let mut w = csv::Writer::from_writer(create(dir, EFFECTS_CSV)?);
    w.write_record([
        "z0",
        "z1",
        "diagonal",
        "effect",
        "se_naive",
        "se_cluster",
        "significant_naive",
        "significant_cluster",
        "observed_effect",
        "observed_se_naive",
        "observed_se_cluster",
    ])
    .map_err(&err)?;
    for r in &table.rows {
        w.write_record([
            r.stratum.z0.to_string(),
            r.stratum.z1.to_string(),
            r.diagonal.to_string(),
            r.effect.to_string(),
            opt(r.se_naive),
            opt(r.se_cluster),
            opt_bool(r.significant_naive()),
            opt_bool(r.significant_cluster()),
            r.observed_effect.to_string(),
            opt(r.observed_se_naive),
            opt(r.observed_se_cluster),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

pub fn write_json<T: Serialize>(value: &T, dir: &Path, name: &str) -> CliResult<()> {
    let path = dir.join(name);
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(&path, e))?;
    w.write_all(b"\n").map_err(|e| CliError::io(&path, e))?;
    finish(w, &path)
}
