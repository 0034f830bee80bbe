//! Case CSV ingestion.
//!
//! Required columns are `y`, `t` and `z`; `w` defaults to 1 and `cluster` to
//! the row number. Cluster labels are arbitrary strings, numbered in order of
//! first appearance. Row numbers in messages count data rows from 1.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stratfit_core::{Arm, Case, ComponentFamily, Dataset};

use crate::error::{CliError, CliResult};

/// How raw rows become a [`Dataset`]; stored with the fit so `diagnose`
/// rebuilds exactly the same cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub k_levels: usize,
    pub dichotomize: bool,
    pub family: ComponentFamily,
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

pub fn read_dataset(path: &Path, opts: IngestOptions) -> CliResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let headers = reader.headers().map_err(|e| CliError::io(path, e))?.clone();
    let required = |name: &str| {
        column(&headers, name).ok_or_else(|| {
            CliError::Input(format!(
                "{}: missing required column {name:?} (expected header y,t,z[,w][,cluster])",
                path.display()
            ))
        })
    };
    let (iy, it, iz) = (required("y")?, required("t")?, required("z")?);
    let (iw, ic) = (column(&headers, "w"), column(&headers, "cluster"));

    let mut clusters: HashMap<String, usize> = HashMap::new();
    let mut cases = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CliError::Input(format!("{}: row {row}: {e}", path.display())))?;
        let bad = |what: &str, value: &str| {
            CliError::Input(format!("{}: row {row}: invalid {what} {value:?}", path.display()))
        };
        let field = |idx: usize| record.get(idx).unwrap_or("");

        let y: f64 = field(iy).parse().map_err(|_| bad("y", field(iy)))?;
        if !y.is_finite() {
            return Err(bad("y", field(iy)));
        }
        if opts.family == ComponentFamily::Tobit && y < 0.0 {
            return Err(CliError::Input(format!(
                "{}: row {row}: negative outcome {y} is not allowed under the tobit family",
                path.display()
            )));
        }
        let arm = match field(it) {
            "0" => Arm::Control,
            "1" => Arm::Treated,
            other => return Err(bad("t (must be 0 or 1)", other)),
        };
        let z: usize = field(iz).parse().map_err(|_| bad("z", field(iz)))?;
        let z_obs = if opts.dichotomize { usize::from(z > 0) } else { z };
        if z_obs >= opts.k_levels {
            return Err(CliError::Input(format!(
                "{}: row {row}: z = {z} outside [0, {}); use --levels or --dichotomize",
                path.display(),
                opts.k_levels
            )));
        }
        let weight = match iw.map(field) {
            None | Some("") => 1.0,
            Some(w) => match w.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => v,
                _ => return Err(bad("w", w)),
            },
        };
        let label = match ic.map(field) {
            None | Some("") => format!("\u{0}row{row}"),
            Some(c) => c.to_string(),
        };
        let next = clusters.len();
        let cluster = *clusters.entry(label).or_insert(next);
        cases.push(Case {
            y,
            arm,
            z_obs,
            weight,
            cluster,
        });
    }
    if cases.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(Dataset::new(&cases, opts.k_levels)?.prepared_for(opts.family)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const OPTS: IngestOptions = IngestOptions {
        k_levels: 2,
        dichotomize: false,
        family: ComponentFamily::Normal,
    };

    #[test]
    fn defaults_weights_and_clusters() {
        let f = write("y,t,z\n1.5,0,0\n2.5,1,1\n");
        let d = read_dataset(f.path(), OPTS).unwrap();
        assert_eq!(d.weights(), &[1.0, 1.0]);
        assert_eq!(d.clusters(), &[0, 1]);
        assert_eq!(d.arms(), &[Arm::Control, Arm::Treated]);
    }

    #[test]
    fn cluster_labels_numbered_by_first_appearance() {
        let f = write("cluster,w,z,t,y\nsiteB,2,0,0,1\nsiteA,1,1,1,2\nsiteB,0.5,1,0,3\n");
        let d = read_dataset(f.path(), OPTS).unwrap();
        assert_eq!(d.clusters(), &[0, 1, 0]);
        assert_eq!(d.weights(), &[2.0, 1.0, 0.5]);
        assert_eq!(d.n_clusters(), 2);
    }

    #[test]
    fn dichotomize_collapses_positive_levels() {
        let f = write("y,t,z\n1,0,0\n1,0,7\n1,1,90\n");
        let opts = IngestOptions {
            dichotomize: true,
            ..OPTS
        };
        assert_eq!(read_dataset(f.path(), opts).unwrap().z_obs(), &[0, 1, 1]);
        assert!(read_dataset(f.path(), OPTS).is_err());
    }

    #[test]
    fn errors_name_the_row() {
        let f = write("y,t,z\n1,0,0\n1,2,0\n");
        let msg = read_dataset(f.path(), OPTS).unwrap_err().to_string();
        assert!(msg.contains("row 2"), "{msg}");

        let f = write("y,t\n1,0\n");
        let msg = read_dataset(f.path(), OPTS).unwrap_err().to_string();
        assert!(msg.contains("\"z\""), "{msg}");

        let f = write("y,t,z\n-1,0,0\n");
        let tobit = IngestOptions {
            family: ComponentFamily::Tobit,
            ..OPTS
        };
        let msg = read_dataset(f.path(), tobit).unwrap_err().to_string();
        assert!(msg.contains("row 1") && msg.contains("tobit"), "{msg}");
        assert!(read_dataset(f.path(), OPTS).is_ok());
    }

    #[test]
    fn rejects_negative_weight() {
        let f = write("y,t,z,w\n1,0,0,-1\n");
        assert!(read_dataset(f.path(), OPTS).is_err());
    }
}
