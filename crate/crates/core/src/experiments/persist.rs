//! Result tables (CSV with a fixed header) and their JSON run manifests.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::SurvivalEstimate;
use crate::error::Result;
use crate::model::ModelParams;

/// Column order of every result table.
pub const CSV_HEADER: [&str; 13] = [
    "d", "N", "lambda", "phi", "geometry", "m", "surviving", "n_trials", "point", "ci_low", "ci_high", "t_max",
    "base_seed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: u32,
    pub lambda: f64,
    /// A number or `inf`.
    pub phi: String,
    /// `sparse` or `torus:<side>`.
    pub geometry: String,
    pub m: f64,
    pub surviving: u64,
    pub n_trials: u64,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub t_max: f64,
    pub base_seed: u64,
}

impl ResultRow {
    pub fn new(params: &ModelParams, m: f64, est: &SurvivalEstimate, base_seed: u64) -> Self {
        ResultRow {
            d: params.dim,
            n: params.max_flock,
            lambda: params.lambda,
            phi: params.phi.to_string(),
            geometry: params.geometry.to_string(),
            m,
            surviving: est.surviving,
            n_trials: est.n_trials,
            point: est.point,
            ci_low: est.ci_low,
            ci_high: est.ci_high,
            t_max: est.censored_horizon,
            base_seed,
        }
    }
}

pub fn write_table<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(crate::FlockError::Io(format!("unexpected table header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub timestamp: u64,
    pub command: String,
    /// The effective configuration of the run.
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            tool: "flockcp".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp: manifest_timestamp(),
            command: command.into(),
            config,
        }
    }
}

fn manifest_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

/// Writes `<table>.manifest.json` next to a result table.
pub fn write_manifest(table: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    let mut name = table.as_os_str().to_owned();
    name.push(".manifest.json");
    let path = PathBuf::from(name);
    let mut f = File::create(&path)?;
    serde_json::to_writer_pretty(&mut f, manifest)?;
    writeln!(f)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Geometry, Phi};

    #[test]
    fn table_roundtrip() {
        let p = ModelParams::new(2, 3, 0.1 + 0.2, Phi::Infinite, Geometry::Torus { side: 9 }).unwrap();
        let est = SurvivalEstimate::from_counts(7, 13, 12.5);
        let rows = vec![ResultRow::new(&p, 1.2, &est, 42), ResultRow::new(&p.with_phi(Phi::Finite(1.0 / 3.0)), 0.0, &est, 1)];
        let mut buf = Vec::new();
        write_table(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("d,N,lambda,phi,geometry,m,surviving,n_trials,point,ci_low,ci_high,t_max,base_seed\n"));
        assert_eq!(read_table(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(read_table("a,b\n1,2\n".as_bytes()).is_err());
    }
}
