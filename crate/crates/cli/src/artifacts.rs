//! Artifact files and their readers.
//!
//! * `rho_true.json`: [`MatrixJson`] of the simulated state.
//! * `rho_est.json`: [`EstimateFile`].
//! * `metrics.json`: [`Metrics`] for reconstructions, [`FrameReport`] for `verify-frame`.
//! * `trace.csv`: `shots,fidelity,trace_distance`, one row per checkpoint.
//! * `records.csv`: measurement records, see `gtomo_core::simulate::write_records`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gtomo_core::numerics::MatrixJson;
use gtomo_core::simulate::{read_records, write_records, Checkpoint, Mode};
use gtomo_core::{ComplexMatrix, MeasurementRecord, ReconstructionResult, SchemeId};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

pub const RHO_TRUE: &str = "rho_true.json";
pub const RHO_EST: &str = "rho_est.json";
pub const METRICS: &str = "metrics.json";
pub const TRACE: &str = "trace.csv";
pub const RECORDS: &str = "records.csv";

/// Contents of `rho_est.json`. Depends only on the data, never on how it was produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateFile {
    pub scheme: String,
    pub shots: u64,
    /// Raw pattern-function sum.
    pub estimate: MatrixJson,
    /// Hermitian, positive, unit-trace projection of `estimate`.
    pub symmetrized: MatrixJson,
    pub stderr: Vec<Vec<f64>>,
}

impl EstimateFile {
    pub fn new(scheme: &str, r: &ReconstructionResult) -> Self {
        EstimateFile {
            scheme: scheme.to_string(),
            shots: r.shots,
            estimate: MatrixJson::from(&r.estimate),
            symmetrized: MatrixJson::from(r.symmetrized.matrix()),
            stderr: r.stderr.clone(),
        }
    }

    pub fn estimate(&self) -> Result<ComplexMatrix> {
        Ok(ComplexMatrix::try_from(self.estimate.clone())?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KTildeCheck {
    pub expected: f64,
    pub estimated: f64,
}

/// Contents of `metrics.json` for reconstructions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub scheme: String,
    /// `simulated` for `run`, `records` for `ingest`.
    pub source: String,
    pub mode: Mode,
    pub state: Option<String>,
    pub dim: usize,
    pub shots: u64,
    pub seed: u64,
    pub shards: usize,
    pub rng: String,
    pub fidelity: Option<f64>,
    pub trace_distance: Option<f64>,
    pub fidelity_stderr: Option<f64>,
    pub max_stderr: f64,
    pub hermitian_deviation: f64,
    pub k_tilde: Option<KTildeCheck>,
    /// Displaced counting only: largest photon count summed.
    pub photon_cutoff: Option<usize>,
}

/// One verified identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Contents of `metrics.json` for `verify-frame`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameReport {
    pub frame: String,
    pub dim: usize,
    pub elements: usize,
    pub k_tilde: KTildeCheck,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Everything a command writes, assembled before the first file is touched.
#[derive(Clone, Debug, Default)]
pub struct ArtifactSet {
    pub rho_true: Option<MatrixJson>,
    pub rho_est: Option<EstimateFile>,
    pub metrics: Option<serde_json::Value>,
    pub trace: Option<Vec<Checkpoint>>,
    pub records: Option<(SchemeId, Vec<MeasurementRecord>)>,
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

fn trace_csv(trace: &[Checkpoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["shots", "fidelity", "trace_distance"]).map_err(|e| CliError::Config(e.to_string()))?;
    for c in trace {
        w.write_record([c.shots.to_string(), c.fidelity.to_string(), c.trace_distance.to_string()])
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Config(e.to_string()))
}

impl ArtifactSet {
    /// Serializes everything first, then writes the files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut files: Vec<(&str, Vec<u8>)> = Vec::new();
        if let Some(m) = &self.rho_true {
            files.push((RHO_TRUE, pretty(m)?));
        }
        if let Some(e) = &self.rho_est {
            files.push((RHO_EST, pretty(e)?));
        }
        if let Some(m) = &self.metrics {
            files.push((METRICS, pretty(m)?));
        }
        if let Some(t) = &self.trace {
            files.push((TRACE, trace_csv(t)?));
        }
        if let Some((scheme, recs)) = &self.records {
            let mut buf = Vec::new();
            write_records(&mut buf, *scheme, recs)?;
            files.push((RECORDS, buf));
        }
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
        let mut written = Vec::with_capacity(files.len());
        for (name, bytes) in files {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|e| CliError::io(path.display(), e))?;
            f.write_all(&bytes).map_err(|e| CliError::io(path.display(), e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_estimate(path: &Path) -> Result<EstimateFile> {
    read_json(path)
}

pub fn read_metrics(path: &Path) -> Result<Metrics> {
    read_json(path)
}

pub fn read_frame_report(path: &Path) -> Result<FrameReport> {
    read_json(path)
}

pub fn read_matrix(path: &Path) -> Result<ComplexMatrix> {
    Ok(ComplexMatrix::try_from(read_json::<MatrixJson>(path)?)?)
}

pub fn read_trace(path: &Path) -> Result<Vec<Checkpoint>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?);
    }
    Ok(out)
}

pub fn read_record_file(path: &Path) -> Result<(SchemeId, Vec<MeasurementRecord>)> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    Ok(read_records(f)?)
}
