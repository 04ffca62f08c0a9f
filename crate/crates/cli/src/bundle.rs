//! On-disk result formats: the calibration file, the fixed-schema CSV
//! tables and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sepdetect::numkit::Matrix;
use sepdetect::seqdetect::Calibration;

use crate::spec::sha256_hex;
use crate::CliError;

pub const CALIBRATION_FILE: &str = "calibration.json";
pub const THRESHOLDS_FILE: &str = "thresholds.csv";
pub const MONTE_CARLO_FILE: &str = "montecarlo.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationBundle {
    pub version: String,
    pub config_hash: String,
    /// Outputs per time step in observation files.
    pub n_y: usize,
    /// Per step, the map from stacked raw outputs `y_1..y_t` to `ω^k`.
    pub observers: Vec<Option<Matrix>>,
    pub calibration: Calibration,
}

/// One `(k, j)` cell of a calibration; empty fields are cells at the cap or
/// values the scheme does not define.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub k: usize,
    pub j: usize,
    pub rho_kj: Option<f64>,
    pub rho_star_kj: Option<f64>,
    pub index: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub delta: Option<f64>,
}

/// Monte Carlo frequency of one event with its 95% Wilson interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloRow {
    /// `false_alarm` or `miss`.
    pub event: String,
    pub k: usize,
    pub j: Option<usize>,
    pub magnitude: Option<f64>,
    pub events: u64,
    pub trials: u64,
    pub frequency: f64,
    pub lower: f64,
    pub upper: f64,
    pub target: f64,
    /// Frequency at most `target` plus three standard errors.
    pub within_3se: bool,
}

/// Figure data over degrees of freedom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuCellRow {
    pub nu: String,
    pub k: usize,
    pub i: usize,
    pub rho: Option<f64>,
    pub rho_star: Option<f64>,
    pub index: Option<f64>,
}

/// Figure data over noise level and risk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub eps: f64,
    pub k: usize,
    pub i: usize,
    pub rho: Option<f64>,
    pub rho_star: Option<f64>,
    pub index: Option<f64>,
}

/// Worst unrefined index against the two-color aggregated index per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineRow {
    pub nu: String,
    pub k: usize,
    pub worst_index: Option<f64>,
    pub theta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Input(e.to_string()))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("result types serialize");
    out.push(b'\n');
    out
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Collects output files and records their digests for the manifest.
pub struct OutDir {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), entries: vec![] })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::File::create(&path).and_then(|mut f| f.write_all(bytes)).map_err(|e| CliError::io(&path, e))?;
        self.entries.push(ManifestEntry { file: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(path)
    }

    /// Writes `<command>.manifest.json` listing every file written so far.
    pub fn finish(mut self, command: &str, config_hash: &str, seed: u64) -> Result<PathBuf, CliError> {
        let manifest = Manifest {
            version: crate::VERSION.to_string(),
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            files: std::mem::take(&mut self.entries),
        };
        let name = format!("{command}.manifest.json");
        let path = self.dir.join(&name);
        fs::write(&path, json_bytes(&manifest)).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
